"""Trial-wise hinge losses on best/worst distance inequalities.

For each relation with anchor ``a`` (the trial's best or worst item) and a
neutral ``n`` the hinge is ``max(d(a, n) - d(b, w) + alpha, 0)``.  Per trial:

* RC / Dm-RC: sum of hinges divided by ``n_v``, the number of positive hinges
  (0 when ``n_v == 0``).  RC uses one fixed margin, Dm-RC one margin per relation.
* DMC: ``sum(gamma(alpha - mu))``, by default ``gamma(x) = relu(-x)``.
* FR: ``n_v / N`` (hard) or ``sum(sigmoid(violation / T)) / N`` (smooth).
* total: ``dmrc + lambda_dmc * dmc + lambda_fr * fr``; batches average trials.

``n_v`` is always treated as a constant when differentiating.

The single-trial helpers (``rc_loss`` etc.) take embeddings in canonical row
order ``[best, worst, neutral_1, ..., neutral_{N-2}]`` and margins ordered
``[alpha_b1 .. alpha_b(N-2), alpha_w1 .. alpha_w(N-2)]``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import canonical_index
from .trial_data import RelationIndex

GammaFn = Callable[[Tensor], Tensor]


def gamma_relu_neg(x: Tensor) -> Tensor:
    return ad.relu(-x)


def gamma_zero(x: Tensor) -> Tensor:
    return 0.0 * x


GAMMAS: dict[str, GammaFn] = {"relu_neg": gamma_relu_neg, "zero": gamma_zero}
FR_MODES = ("hard", "smooth")


@dataclass(frozen=True)
class LossBreakdown:
    """Batch means of each term; ``n_v`` holds the per-trial counts."""

    dmrc: float
    dmc: float
    fr: float
    total: float
    n_v: np.ndarray


def distance(x: Tensor, y: Tensor) -> Tensor:
    diff = x - y
    return ad.sqrt(ad.sum(diff * diff, axis=1))


def relation_distances(H: Tensor, index: RelationIndex) -> tuple[Tensor, Tensor]:
    """(far, near) distance per relation: d(best, worst) and d(anchor, neutral)."""
    far = distance(ad.take(H, index.best), ad.take(H, index.worst))
    near = distance(ad.take(H, index.anchor), ad.take(H, index.neutral))
    return far, near


def hinge_terms(H: Tensor, alpha, index: RelationIndex) -> Tensor:
    far, near = relation_distances(H, index)
    return ad.relu(near - far + alpha)


def unfulfilled_counts(hinges: Tensor, index: RelationIndex) -> np.ndarray:
    return np.bincount(index.trial_of, weights=hinges.value > 0, minlength=index.n_trials).astype(np.int64)


def batch_loss(
    H: Tensor,
    alpha,
    index: RelationIndex,
    *,
    mu: float = 1.0,
    lambda_dmc: float = 0.0,
    lambda_fr: float = 0.0,
    gamma: GammaFn = gamma_relu_neg,
    fr_mode: str = "smooth",
    temperature: float = 0.1,
) -> tuple[Tensor, LossBreakdown]:
    """Mean global loss over the trials of ``index``.

    ``alpha`` is a scalar (fixed margin) or a per-relation tensor.  The DMC
    term is skipped when ``lambda_dmc == 0`` and the FR term contributes only
    through its smooth surrogate; the hard count is reported as a value.
    """
    if lambda_dmc < 0 or lambda_fr < 0:
        raise ValueError("loss weights must be non-negative")
    if fr_mode not in FR_MODES:
        raise ValueError(f"fr_mode must be one of {FR_MODES}")
    if fr_mode == "smooth" and temperature <= 0:
        raise ValueError("temperature must be positive in smooth mode")

    alpha = ad.as_tensor(alpha)
    if alpha.value.ndim == 0:
        alpha = ad.constant(np.full(index.n_relations, float(alpha.value)))
    far, near = relation_distances(H, index)
    violation = near - far + alpha
    hinges = ad.relu(violation)
    n_v = unfulfilled_counts(hinges, index)
    per_trial = ad.constant(index.indicator())
    n_trials = index.n_trials
    sizes = index.trial_sizes.astype(np.float64)

    dmrc_t = (per_trial @ hinges) * (1.0 / np.maximum(n_v, 1))
    total_t = dmrc_t

    dmc_t = per_trial @ gamma(alpha - mu)
    if lambda_dmc:
        total_t = total_t + lambda_dmc * dmc_t

    if fr_mode == "smooth":
        fr_t = (per_trial @ ad.sigmoid(violation / temperature)) * (1.0 / sizes)
        if lambda_fr:
            total_t = total_t + lambda_fr * fr_t
        fr_value = float(fr_t.value.mean())
    else:
        fr_value = float((n_v / sizes).mean())
        if lambda_fr:
            total_t = total_t + ad.constant(lambda_fr * n_v / sizes)

    total = ad.sum(total_t) / n_trials
    breakdown = LossBreakdown(
        dmrc=float(dmrc_t.value.mean()),
        dmc=float(dmc_t.value.mean()),
        fr=fr_value,
        total=float(total.value),
        n_v=n_v,
    )
    return total, breakdown


# -- single-trial helpers --------------------------------------------------


def _trial(trial_embeddings) -> tuple[Tensor, RelationIndex]:
    emb = np.asarray(trial_embeddings, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[:, None]
    if emb.shape[0] < 3:
        raise ValueError("a trial needs at least 3 embeddings")
    return ad.constant(emb), canonical_index(emb.shape[0])


def _margins(margin_set, index: RelationIndex) -> Tensor:
    m = np.asarray(margin_set, dtype=np.float64).ravel()
    if m.size != index.n_relations:
        raise ValueError(f"expected {index.n_relations} margins, got {m.size}")
    return ad.constant(m)


def hinges(trial_embeddings, margin_set) -> np.ndarray:
    H, index = _trial(trial_embeddings)
    return hinge_terms(H, _margins(margin_set, index), index).value


def count_unfulfilled(trial_embeddings, margin_set) -> int:
    """Relations whose hinge is strictly positive, i.e. d(b,w) < d(anchor,n) + alpha."""
    return int(np.count_nonzero(hinges(trial_embeddings, margin_set) > 0))


def dmrc_loss(trial_embeddings, margin_set) -> float:
    H, index = _trial(trial_embeddings)
    _, parts = batch_loss(H, _margins(margin_set, index), index)
    return parts.dmrc


def rc_loss(trial_embeddings, alpha: float) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    H, index = _trial(trial_embeddings)
    return dmrc_loss(trial_embeddings, np.full(index.n_relations, float(alpha)))


def dmc_loss(margin_set, mu: float, gamma_fn: GammaFn = gamma_relu_neg) -> float:
    return float(ad.sum(gamma_fn(ad.constant(np.asarray(margin_set, dtype=np.float64)) - mu)).value)


def fr_loss(trial_embeddings, margin_set, mode: str = "hard", temperature: float = 0.1) -> float:
    H, index = _trial(trial_embeddings)
    _, parts = batch_loss(H, _margins(margin_set, index), index, fr_mode=mode, temperature=temperature)
    return parts.fr


def global_loss(
    trial_embeddings,
    margin_set,
    lambda_dmc: float,
    lambda_fr: float,
    mu: float = 1.0,
    gamma: GammaFn = gamma_relu_neg,
    fr_mode: str = "hard",
    temperature: float = 0.1,
) -> LossBreakdown:
    H, index = _trial(trial_embeddings)
    _, parts = batch_loss(
        H,
        _margins(margin_set, index),
        index,
        mu=mu,
        lambda_dmc=lambda_dmc,
        lambda_fr=lambda_fr,
        gamma=gamma,
        fr_mode=fr_mode,
        temperature=temperature,
    )
    return parts
