"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line; the lines are
also gathered into the terminal summary by ``conftest.py``.
"""

import dataclasses
import hashlib
import json
import time

import numpy as np
import pytest

from bwsembed import autodiff as ad
from bwsembed.analysis import pca_project, spearman
from bwsembed.cli import main
from bwsembed.experiment import ExperimentConfig, load_data, run_ablation, run_training
from bwsembed.losses import batch_loss, dmc_loss, dmrc_loss, fr_loss, rc_loss
from bwsembed.model import EncoderConfig, MarginConfig, encode_pooled, init_params, margin_forward, margins
from bwsembed.synth import OracleConfig
from bwsembed.trainer import TrainConfig, embed, eval_metrics, metrics_from_embeddings
from bwsembed.trial_data import Trial, relation_index

from conftest import ACCEPTANCE_LINES, random_items, random_trials


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 9))
        mcfg = MarginConfig(hidden_dims=[5])
        params = init_params(EncoderConfig(feature_dim=5, hidden_dims=[6], d=d, seed=seed), mcfg)
        X = rng.standard_normal((12, 5))
        trials = [
            Trial("a", tuple(str(4 * t + i) for i in range(4)), *(int(x) for x in rng.choice(4, 2, replace=False)))
            for t in range(3)
        ]
        index = relation_index(trials, {str(i): i for i in range(12)})

        def loss_fn(tensors):
            H = encode_pooled(tensors, X)
            alpha = margin_forward(tensors, H, index, mcfg)
            return batch_loss(H, alpha, index, mu=1.0, lambda_dmc=1.0, lambda_fr=1.0, fr_mode="smooth")[0]

        worst = max(worst, ad.finite_diff_check(loss_fn, params, eps=1e-5))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    assert report(1, ok, f"max relative error {worst:.2e} over 100 instances (< 1e-4), {elapsed:.1f} s (< 60 s)")


def test_criterion_02_closed_form_losses():
    checks = {}
    for n, alpha in [(3, 0.5), (4, 1.0), (6, 0.3)]:
        emb = np.full((n, 4), 0.7)
        checks[f"rc coincident N={n}"] = rc_loss(emb, alpha) == pytest.approx(alpha, abs=1e-12)
        checks[f"fr coincident N={n}"] = fr_loss(emb, np.full(2 * (n - 2), alpha), "hard") == pytest.approx(
            2 * (n - 2) / n, abs=1e-12
        )
    worked = np.array([0.0, 1.0, 2.0, 0.5])
    parts = dmrc_loss(worked, np.full(4, 0.5))
    checks["worked rc"] = parts == pytest.approx(1.0, abs=1e-12)
    checks["worked n_v"] = fr_loss(worked, np.full(4, 0.5), "hard") * 4 == 2
    m = metrics_from_embeddings(
        {k: np.array([v]) for k, v in zip("bwxy", worked)}, [Trial("a", ("b", "w", "x", "y"), 0, 1)]
    )
    checks["worked FR 75"] = m.fr_percent == pytest.approx(75.0, abs=1e-12)
    checks["worked WAT 0"] = m.wat_percent == pytest.approx(0.0, abs=1e-12)
    failed = [k for k, v in checks.items() if not v]
    assert report(2, not failed, f"{len(checks) - len(failed)}/{len(checks)} closed-form values within 1e-12" + (f" failed: {failed}" if failed else ""))


def test_criterion_03_zero_delta_degeneracy():
    rng = np.random.default_rng(3)
    mismatches = 0
    for k in range(1000):
        n = int(rng.integers(3, 8))
        d = int(rng.integers(1, 6))
        mu = float(rng.uniform(0.1, 2.0))
        cfg = MarginConfig(mu=mu, delta=0.0, hidden_dims=[4])
        params = init_params(EncoderConfig(feature_dim=3, d=d, seed=k), cfg)
        emb = rng.standard_normal((n, d)) * rng.uniform(0.01, 3.0)
        if dmrc_loss(emb, margins(params, emb, cfg)) != rc_loss(emb, mu):
            mismatches += 1
    assert report(3, mismatches == 0, f"dmrc(delta=0) == rc(mu) bit-for-bit on {1000 - mismatches}/1000 trials")


def test_criterion_04_collapse_reproduction():
    # random-embedding baseline first
    rng = np.random.default_rng(4)
    ids = [f"i{k}" for k in range(200)]
    baseline = []
    for _ in range(200):
        emb = {i: rng.standard_normal(32) for i in ids}
        baseline.append(metrics_from_embeddings(emb, random_trials(rng, ids, 50)).fr_percent)
    base = float(np.mean(baseline))

    cfg = ExperimentConfig(
        name="collapse",
        train=TrainConfig(lambda_dmc=0.0, lambda_fr=0.0, max_steps=5000, eval_every=100, patience=10**6),
    )
    data = load_data(cfg)
    res = run_training(cfg, data, seed=0)
    spread = min(r.val_spread for r in res.history.records)
    final_fr = eval_metrics(res.history.last_params, res.split.eval_trials, data.items).fr_percent
    margin_end = res.history.records[-1].margin_mean
    ok_base = abs(base - 50.0) <= 2.0
    ok = ok_base and spread < 1e-3 and final_fr <= 55.0
    assert report(
        4,
        ok,
        f"random baseline FR {base:.2f} (50 +/- 2: {ok_base}); A-l min val spread {spread:.3e} (< 1e-3), "
        f"final eval FR {final_fr:.2f} (<= 55), final mean margin {margin_end:.3f}",
    )


def test_criterion_05_oracle_learning():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(name="oracle", oracle=OracleConfig(n_items=200, trials_per_item=8, trial_size=4))
    data = load_data(cfg)
    res = run_training(cfg, data, seed=0)
    elapsed = time.perf_counter() - t0
    H = embed(res.params, data.items, [it.id for it in data.items])
    rho = spearman([it.latent for it in data.items], pca_project(np.array(list(H.values()))).coords[:, 0])
    fr, wat = res.eval.fr_percent, res.eval.wat_percent
    ok = fr >= 95.0 and wat >= 85.0 and elapsed < 900 and abs(rho) >= 0.9
    assert report(
        5, ok, f"eval FR {fr:.2f} (>= 95), WAT {wat:.2f} (>= 85), |Spearman| {abs(rho):.3f} (>= 0.9), {elapsed:.0f} s (< 900 s)"
    )


def test_criterion_06_ablation_ordering():
    cfg = ExperimentConfig(
        name="ablation",
        n_seeds=5,
        oracle=OracleConfig(noise_sigma=0.1),
        train=TrainConfig(max_steps=10000, eval_every=500, patience=10),
    )
    rows = {r.cell.name: r.summary() for r in run_ablation(cfg)}
    fr = {name: s["fr_mean"] for name, s in rows.items()}
    ok = fr["A-l-d-fr"] > fr["A-l-d"] > fr["A-f"] and fr["A-l"] == min(fr.values())
    assert not any(s["failed"] for s in rows.values())
    table = ", ".join(f"{k} {v:.2f}" for k, v in fr.items())
    assert report(6, ok, f"mean eval FR over 5 seeds: {table}; need A-l-d-fr > A-l-d > A-f and A-l minimal")


def test_criterion_07_metric_oracle():
    rng = np.random.default_rng(7)
    exact = 0
    for k in range(100):
        items = random_items(rng, int(rng.integers(6, 25)), feature_dim=4, frames=int(rng.integers(1, 5)))
        ids = [it.id for it in items]
        trials = random_trials(rng, ids, int(rng.integers(1, 30)), size=int(rng.integers(3, min(7, len(ids)) + 1)))
        params = init_params(EncoderConfig(4, hidden_dims=[5], d=int(rng.integers(1, 6)), seed=k), MarginConfig())
        m = eval_metrics(params, trials, items)
        # independent recomputation from raw features and raw judgements
        by_id = {it.id: it.features.mean(axis=0) for it in items}
        h = {}
        for i, x in by_id.items():
            z = np.tanh(x @ params["enc.W0"] + params["enc.b0"])
            h[i] = z @ params["enc.W1"] + params["enc.b1"]
        fulfilled = wat = 0
        for t in trials:
            b, w = h[t.item_ids[t.best]], h[t.item_ids[t.worst]]
            far = np.sqrt(np.sum((b - w) ** 2))
            flags = [far >= np.sqrt(np.sum((a - h[t.item_ids[j]]) ** 2)) for a in (b, w) for j in t.neutrals]
            fulfilled += sum(flags)
            wat += all(flags)
        exact += (m.n_fulfilled, m.n_well_arranged) == (fulfilled, wat)
    assert report(7, exact == 100, f"fulfilled / well-arranged counts match brute force on {exact}/100 datasets")


def test_criterion_08_margin_bounds():
    rng = np.random.default_rng(8)
    out_of_range = 0
    for k in range(1000):
        mu = float(rng.uniform(0.2, 3.0))
        cfg = MarginConfig(mu=mu, delta=float(rng.uniform(0, mu)), hidden_dims=[int(rng.integers(1, 9))])
        d = int(rng.integers(1, 8))
        params = init_params(EncoderConfig(2, d=d, seed=k), cfg)
        for name in params:
            params[name] = params[name] * rng.uniform(0.5, 20.0)
        m = margins(params, rng.standard_normal((int(rng.integers(3, 8)), d)) * rng.uniform(0.1, 100), cfg)
        out_of_range += int(np.any(m < cfg.mu - cfg.delta) or np.any(m > cfg.mu + cfg.delta))
    dmc_nonzero = sum(dmc_loss(1.0 + rng.uniform(0, 2, 6), 1.0) != 0.0 for _ in range(1000))
    ok = out_of_range == 0 and dmc_nonzero == 0
    assert report(8, ok, f"{1000 - out_of_range}/1000 draws inside [mu-delta, mu+delta]; DMC == 0 in {1000 - dmc_nonzero}/1000")


def test_criterion_09_feature_pipeline():
    from bwsembed import audio

    sr, fractions = 16000, []
    for k in (20, 100, 333, 800):
        x = np.sin(2 * np.pi * k * sr / audio.FFT_SIZE * np.arange(sr) / sr)
        power = (audio.stft_magnitude(x) ** 2).sum(axis=0)
        fractions.append(power[k - 2 : k + 3].sum() / power.sum())
    counts_ok = all(
        audio.log_mel(np.zeros(n), sr).values.shape[0] == 1 + (n - 800) // 200 for n in (800, 999, 1000, 5000, 16001)
    )
    floor_ok = bool(np.all(audio.log_mel(np.zeros(3000), sr).values == np.log(1e-10)))
    ok = min(fractions) >= 0.95 and counts_ok and floor_ok
    assert report(
        9, ok, f"min energy within +/-2 bins {min(fractions):.4f} (>= 0.95); frame counts exact: {counts_ok}; zero -> floor: {floor_ok}"
    )


def test_criterion_10_determinism(tmp_path):
    config = tmp_path / "det.json"
    config.write_text(json.dumps({"oracle": {"n_items": 60}, "train": {"max_steps": 300, "eval_every": 50}}))
    for out in ("a", "b"):
        assert main(["train", "--config", str(config), "--out", str(tmp_path / out), "--seed", "11"]) == 0
    names = ("history.csv", "best.params", "last.params")
    same = [
        hashlib.sha256((tmp_path / "a" / "det" / n).read_bytes()).digest()
        == hashlib.sha256((tmp_path / "b" / "det" / n).read_bytes()).digest()
        for n in names
    ]
    assert report(10, all(same), f"byte-identical across two runs: {dict(zip(names, same))}")


def test_experiment_config_is_serialisable():
    cfg = ExperimentConfig()
    assert json.loads(json.dumps(dataclasses.asdict(cfg)))["train"]["batch_size"] == 80
