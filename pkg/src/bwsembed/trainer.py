"""Batching, ADAM, FR/WAT evaluation and the early-stopped training loop."""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Hashable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad
from .autodiff import NonFiniteError, ParameterSet
from .losses import FR_MODES, GAMMAS, batch_loss
from .model import MarginConfig, encode_pooled, margin_forward, pool
from .trial_data import DatasetSplit, Item, Trial, relation_index

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 80
    learning_rate: float = 1e-4
    lambda_dmc: float = 1.0
    lambda_fr: float = 1.0
    fixed_margin: bool = False
    max_steps: int = 20000
    eval_every: int = 500
    patience: int = 10
    seed: int = 0
    fr_mode: str = "smooth"
    temperature: float = 0.1
    gamma: str = "relu_neg"
    balance_key: str | None = None

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.fr_mode not in FR_MODES:
            raise ValueError(f"fr_mode must be one of {FR_MODES}")
        if self.gamma not in GAMMAS:
            raise ValueError(f"gamma must be one of {sorted(GAMMAS)}")
        if self.lambda_dmc < 0 or self.lambda_fr < 0:
            raise ValueError("loss weights must be non-negative")


# -- batching --------------------------------------------------------------


def make_batches(
    trials: Sequence[Trial],
    batch_size: int,
    seed,
    balance_key: str | Callable[[Trial], Hashable] | None = None,
) -> list[list[Trial]]:
    """One epoch of whole-trial batches holding ``batch_size // N`` trials each.

    With ``balance_key`` every batch draws (almost) the same number of trials
    from each group; trials left over once a group runs dry are dropped.
    """
    if not trials:
        return []
    n = max(t.size for t in trials)
    if batch_size < n:
        raise ValueError(f"batch_size ({batch_size}) is smaller than the trial size ({n})")
    per_batch = batch_size // n
    rng = np.random.default_rng(seed)

    if balance_key is None:
        order = rng.permutation(len(trials))
        return [[trials[i] for i in order[k : k + per_batch]] for k in range(0, len(order), per_batch)]

    key = (lambda t: getattr(t, balance_key)) if isinstance(balance_key, str) else balance_key
    groups: dict[Hashable, list[Trial]] = {}
    for t in trials:
        groups.setdefault(key(t), []).append(t)
    pools = [[g[i] for i in rng.permutation(len(g))] for _, g in sorted(groups.items(), key=lambda kv: str(kv[0]))]
    n_groups = len(pools)
    base, extra = divmod(per_batch, n_groups)
    cursor = [0] * n_groups
    batches = []
    while True:
        b = len(batches)
        quota = [base + (1 if (g - b) % n_groups < extra else 0) for g in range(n_groups)]
        if any(cursor[g] + quota[g] > len(pools[g]) for g in range(n_groups)):
            break
        batch = []
        for g in range(n_groups):
            batch.extend(pools[g][cursor[g] : cursor[g] + quota[g]])
            cursor[g] += quota[g]
        batches.append(batch)
    return batches


# -- optimiser -------------------------------------------------------------


@dataclass
class AdamState:
    m: ParameterSet
    v: ParameterSet
    t: int = 0

    @classmethod
    def zeros(cls, params: ParameterSet) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(
    params: ParameterSet,
    grad: ParameterSet,
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected ADAM update; returns new parameters and state."""
    if list(grad) != list(params) or list(state.m) != list(params):
        raise ValueError("gradient / optimiser state do not match the parameters")
    t = state.t + 1
    new_params, m, v = ParameterSet(), ParameterSet(), ParameterSet()
    for name, p in params.items():
        g = grad[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam:{name}", "gradient")
        m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = m[name] / (1 - beta1**t)
        v_hat = v[name] / (1 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


# -- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    fr_percent: float
    wat_percent: float
    n_relations: int
    n_trials: int
    n_fulfilled: int = 0
    n_well_arranged: int = 0


def metrics_from_embeddings(embeddings: Mapping[str, np.ndarray], trials: Sequence[Trial]) -> Metrics:
    """FR / WAT with margin-free, non-strict inequalities d(b,w) >= d(anchor,n)."""
    if not trials:
        return Metrics(0.0, 0.0, 0, 0)
    ids = sorted({i for t in trials for i in t.item_ids})
    missing = [i for i in ids if i not in embeddings]
    if missing:
        raise KeyError(f"no embedding for item(s) {missing[:5]}")
    row_of = {i: k for k, i in enumerate(ids)}
    H = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in ids])
    index = relation_index(trials, row_of)
    far = np.sqrt(((H[index.best] - H[index.worst]) ** 2).sum(axis=1))
    near = np.sqrt(((H[index.anchor] - H[index.neutral]) ** 2).sum(axis=1))
    ok = far >= near
    per_trial = np.bincount(index.trial_of, weights=~ok, minlength=index.n_trials)
    n_ok = int(ok.sum())
    n_wat = int((per_trial == 0).sum())
    return Metrics(
        fr_percent=100.0 * n_ok / len(ok),
        wat_percent=100.0 * n_wat / len(trials),
        n_relations=len(ok),
        n_trials=len(trials),
        n_fulfilled=n_ok,
        n_well_arranged=n_wat,
    )


def _item_map(items) -> dict[str, Item]:
    return dict(items) if isinstance(items, Mapping) else {it.id: it for it in items}


def embed(params: ParameterSet, items, ids=None) -> dict[str, np.ndarray]:
    items = _item_map(items)
    ids = list(items) if ids is None else list(ids)
    missing = [i for i in ids if i not in items]
    if missing:
        raise KeyError(f"trial references unknown item(s) {missing[:5]}")
    if not ids:
        return {}
    H = encode_pooled(params, np.stack([pool(items[i].features) for i in ids])).value
    return dict(zip(ids, H))


def eval_metrics(params: ParameterSet, trials: Sequence[Trial], items) -> Metrics:
    ids = sorted({i for t in trials for i in t.item_ids})
    return metrics_from_embeddings(embed(params, items, ids), trials)


def mean_pairwise_distance(embeddings: np.ndarray) -> float:
    return float(pdist(embeddings).mean()) if len(embeddings) > 1 else 0.0


# -- training --------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    step: int
    dmrc: float
    dmc: float
    fr: float
    total: float
    val: Metrics
    margin_min: float
    margin_mean: float
    margin_max: float
    val_spread: float


LOG_COLUMNS = (
    "step", "dmrc", "dmc", "fr", "total", "val_FR", "val_WAT",
    "margin_min", "margin_mean", "margin_max", "val_spread",
)  # fmt: skip


@dataclass
class TrainHistory:
    records: list[EvalRecord] = field(default_factory=list)
    best_step: int = 0
    stopped_early: bool = False
    last_params: ParameterSet | None = None

    def rows(self) -> list[list]:
        return [
            [r.step, r.dmrc, r.dmc, r.fr, r.total, r.val.fr_percent, r.val.wat_percent,
             r.margin_min, r.margin_mean, r.margin_max, r.val_spread]
            for r in self.records
        ]  # fmt: skip

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for row in self.rows():
                writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


class _Batcher:
    """Pooled features of every item, gathered per batch."""

    def __init__(self, items: Mapping[str, Item], trials: Sequence[Trial]):
        ids = sorted({i for t in trials for i in t.item_ids})
        missing = [i for i in ids if i not in items]
        if missing:
            raise KeyError(f"trial references unknown item(s) {missing[:5]}")
        self.row_of = {i: k for k, i in enumerate(ids)}
        self.X = np.stack([pool(items[i].features) for i in ids]) if ids else np.zeros((0, 0))

    def __call__(self, batch: Sequence[Trial]):
        local: dict[str, int] = {}
        for t in batch:
            for i in t.item_ids:
                local.setdefault(i, len(local))
        rows = np.fromiter((self.row_of[i] for i in local), dtype=np.intp, count=len(local))
        return self.X[rows], relation_index(batch, local)


def make_loss_fn(X, index, config: TrainConfig, margin_cfg: MarginConfig, sink: list | None = None):
    """Closure over one batch mapping parameter tensors to the mean global loss."""
    gamma = GAMMAS[config.gamma]

    def loss_fn(tensors):
        H = encode_pooled(tensors, X)
        alpha = margin_cfg.mu if config.fixed_margin else margin_forward(tensors, H, index, margin_cfg)
        total, parts = batch_loss(
            H,
            alpha,
            index,
            mu=margin_cfg.mu,
            lambda_dmc=0.0 if config.fixed_margin else config.lambda_dmc,
            lambda_fr=config.lambda_fr,
            gamma=gamma,
            fr_mode=config.fr_mode,
            temperature=config.temperature,
        )
        if sink is not None:
            sink.append((parts, alpha))
        return total

    return loss_fn


def train(
    config: TrainConfig,
    split: DatasetSplit,
    params: ParameterSet,
    items,
    margin_cfg: MarginConfig | None = None,
    on_eval: Callable[[EvalRecord], None] | None = None,
) -> tuple[ParameterSet, TrainHistory]:
    """Optimise the global loss on ``split.train_trials`` with early stopping on validation FR.

    Returns the parameters of the evaluation point with the highest
    validation FR (earliest on ties); the final parameters are kept in
    ``history.last_params``.
    """
    if not split.train_trials or not split.val_trials:
        raise ValueError("degenerate split: train and validation sets must be non-empty")
    margin_cfg = margin_cfg or MarginConfig()
    items = _item_map(items)
    train_batcher = _Batcher(items, split.train_trials)
    val_batcher = _Batcher(items, split.val_trials)
    X_train_all, index_train_all = train_batcher(split.train_trials)
    X_val, index_val = val_batcher(split.val_trials)
    val_ids = list(val_batcher.row_of)

    def evaluate(step: int, p: ParameterSet) -> EvalRecord:
        sink: list = []
        ad.forward(make_loss_fn(X_train_all, index_train_all, config, margin_cfg, sink), p)
        parts, _ = sink[0]
        H_val = encode_pooled(p, val_batcher.X).value
        if config.fixed_margin:
            alphas = np.array([margin_cfg.mu])
        else:
            H_rows = encode_pooled(p, X_val)
            alphas = margin_forward(p, H_rows, index_val, margin_cfg).value
        record = EvalRecord(
            step=step,
            dmrc=parts.dmrc,
            dmc=parts.dmc,
            fr=parts.fr,
            total=parts.total,
            val=metrics_from_embeddings(dict(zip(val_ids, H_val)), split.val_trials),
            margin_min=float(alphas.min()),
            margin_mean=float(alphas.mean()),
            margin_max=float(alphas.max()),
            val_spread=mean_pairwise_distance(H_val),
        )
        history.records.append(record)
        if on_eval is not None:
            on_eval(record)
        return record

    history = TrainHistory()
    state = AdamState.zeros(params)
    best = params.copy()
    best_fr = evaluate(0, params).val.fr_percent
    bad = 0
    step, epoch = 0, 0
    while step < config.max_steps:
        batches = make_batches(split.train_trials, config.batch_size, [config.seed, epoch], config.balance_key)
        if not batches:
            raise ValueError("no complete batch could be formed from the training trials")
        epoch += 1
        for batch in batches:
            X, index = train_batcher(batch)
            _, grad = ad.evaluate_and_grad(make_loss_fn(X, index, config, margin_cfg), params)
            params, state = adam_step(params, grad, state, config.learning_rate)
            step += 1
            last_eval = step % config.eval_every == 0 or step == config.max_steps
            if last_eval:
                fr = evaluate(step, params).val.fr_percent
                if fr > best_fr:
                    best_fr, best, bad = fr, params.copy(), 0
                    history.best_step = step
                else:
                    bad += 1
                    if bad >= config.patience:
                        history.stopped_early = True
                        log.info("early stop at step %d (best step %d, val FR %.2f)", step, history.best_step, best_fr)
                        break
            if step >= config.max_steps:
                break
        if history.stopped_early:
            break
    history.last_params = params
    return best, history
