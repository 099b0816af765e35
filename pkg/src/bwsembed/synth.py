"""Synthetic best-worst datasets driven by a known scalar latent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trial_data import Item, Trial

# independent random streams derived from the config seed
_LATENT, _BASIS, _PERTURB, _TUPLES, _JUDGE, _NUISANCE = range(6)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


@dataclass
class OracleConfig:
    n_items: int = 200
    feature_dim: int = 16
    frames: int = 10
    noise_sigma: float = 0.0
    trials_per_item: int = 8
    trial_size: int = 4
    seed: int = 0
    feature_noise: float = 0.01
    nuisance_dims: int = 4
    nuisance_scale: float = 0.5
    attribute: str = "synthetic"

    def problems(self) -> list[str]:
        out = []
        if self.trial_size < 3:
            out.append(f"trial_size must be >= 3 (got {self.trial_size})")
        if self.n_items < self.trial_size:
            out.append(f"n_items ({self.n_items}) must be >= trial_size N ({self.trial_size})")
        if self.trials_per_item < 1:
            out.append(f"trials_per_item must be >= 1 (got {self.trials_per_item})")
        if self.noise_sigma < 0 or self.feature_noise < 0 or self.nuisance_scale < 0:
            out.append("noise levels must be non-negative")
        if self.nuisance_dims < 0:
            out.append("nuisance_dims must be >= 0")
        if self.feature_dim < 1 or self.frames < 1:
            out.append("feature_dim and frames must be >= 1")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))


def latent_basis(config: OracleConfig) -> np.ndarray:
    """Fixed (3, feature_dim) map applied to [v, v^2, sin v]."""
    return _rng(config.seed, _BASIS).standard_normal((3, config.feature_dim))


def generate_items(config: OracleConfig) -> list[Item]:
    """Items with latent v ~ U[0, 1] and features ``[v, v^2, sin v] @ basis`` on every frame.

    Each item also carries ``nuisance_dims`` Gaussian factors unrelated to the
    latent (mapped through their own fixed basis and scaled by
    ``nuisance_scale``) plus per-frame noise of scale ``feature_noise``.
    """
    config.validate()
    v = _rng(config.seed, _LATENT).uniform(0.0, 1.0, size=config.n_items)
    basis = latent_basis(config)
    nuis = _rng(config.seed, _NUISANCE)
    nuisance_basis = nuis.standard_normal((config.nuisance_dims, config.feature_dim))
    nuisance = config.nuisance_scale * nuis.standard_normal((config.n_items, config.nuisance_dims)) @ nuisance_basis
    perturb = _rng(config.seed, _PERTURB)
    width = len(str(config.n_items - 1))
    items = []
    for k, value in enumerate(v):
        clean = np.array([value, value * value, np.sin(value)]) @ basis + nuisance[k]
        features = np.tile(clean, (config.frames, 1))
        features += config.feature_noise * perturb.standard_normal(features.shape)
        items.append(Item(f"s{k:0{width}d}", features, float(value)))
    return items


def _tuples(n: int, size: int, rounds: int, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for _ in range(rounds):
        perm = rng.permutation(n)
        full = len(perm) // size * size
        out.extend(perm[i : i + size] for i in range(0, full, size))
        rest = perm[full:]
        if len(rest):
            fill = rng.choice(perm[:full], size=size - len(rest), replace=False)
            out.append(np.concatenate([rest, fill]))
    return out


def simulate_trials(items: list[Item], config: OracleConfig) -> list[Trial]:
    """Judge shuffled N-tuples with noisy latent scores; best = argmax, worst = argmin.

    Every round shuffles all items into consecutive tuples (the remainder is
    topped up with other items), so each item appears at least
    ``trials_per_item`` times.
    """
    config.validate()
    n, size = len(items), config.trial_size
    if n < size:
        raise ValueError(f"n_items ({n}) must be >= trial_size N ({size})")
    latents = np.array([np.nan if it.latent is None else it.latent for it in items])
    if np.isnan(latents).any():
        raise ValueError("every item needs a latent value to simulate judgements")
    judge = _rng(config.seed, _JUDGE)
    trials = []
    for k, idx in enumerate(_tuples(n, size, config.trials_per_item, _rng(config.seed, _TUPLES))):
        scores = latents[idx] + config.noise_sigma * judge.standard_normal(size)
        best, worst = int(np.argmax(scores)), int(np.argmin(scores))
        if best == worst:  # only when every score ties
            worst = (best + 1) % size
        trials.append(Trial(config.attribute, tuple(items[i].id for i in idx), best, worst, f"t{k:05d}"))
    return trials


def generate(config: OracleConfig) -> tuple[list[Item], list[Trial]]:
    items = generate_items(config)
    return items, simulate_trials(items, config)
