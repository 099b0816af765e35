import numpy as np
import pytest

from bwsembed.synth import OracleConfig, generate
from bwsembed.trial_data import Item, Trial

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return generate(OracleConfig(n_items=40, trials_per_item=6, seed=3))


def random_items(rng, n, feature_dim=5, frames=3, prefix="i"):
    return [Item(f"{prefix}{k}", rng.standard_normal((frames, feature_dim))) for k in range(n)]


def random_trials(rng, ids, n_trials, size=4, attribute="a"):
    out = []
    for k in range(n_trials):
        chosen = rng.choice(len(ids), size=size, replace=False)
        b, w = rng.choice(size, size=2, replace=False)
        out.append(Trial(attribute, tuple(ids[i] for i in chosen), int(b), int(w), f"t{k}"))
    return out
