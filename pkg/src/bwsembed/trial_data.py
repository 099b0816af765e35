"""Best-worst trials, the distance inequalities they imply, and dataset splits."""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class TrialError(ValueError):
    pass


@dataclass(eq=False)
class Item:
    id: str
    features: np.ndarray
    latent: float | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Trial:
    """One judged tuple.  ``best`` and ``worst`` index into ``item_ids``."""

    attribute: str
    item_ids: tuple[str, ...]
    best: int
    worst: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "item_ids", tuple(self.item_ids))

    @property
    def size(self) -> int:
        return len(self.item_ids)

    @property
    def neutrals(self) -> list[int]:
        return [i for i in range(self.size) if i not in (self.best, self.worst)]

    def problems(self) -> list[str]:
        out = []
        n = self.size
        if n < 3:
            out.append(f"trial has {n} items, need at least 3")
        if len(set(self.item_ids)) != n:
            out.append("duplicate item ids in trial")
        if not (0 <= self.best < n) or not (0 <= self.worst < n):
            out.append(f"judgement index out of range (best={self.best}, worst={self.worst}, N={n})")
        elif self.best == self.worst:
            out.append(f"best == worst ({self.best})")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise TrialError(f"invalid trial {self.name or self.item_ids}: " + "; ".join(problems))


class RelationKind(enum.Enum):
    BEST_NEUTRAL = "BestNeutral"
    WORST_NEUTRAL = "WorstNeutral"


@dataclass(frozen=True)
class Relation:
    """d(far) >= d(near); both pairs start at the same anchor."""

    far: tuple[str, str]
    near: tuple[str, str]
    kind: RelationKind
    trial_id: str = ""

    @property
    def anchor(self) -> str:
        return self.near[0]


def derive_relations(trial: Trial) -> list[Relation]:
    """Return the 2(N-2) inequalities of a trial, best-anchored ones first."""
    trial.validate()
    ids = trial.item_ids
    b, w = ids[trial.best], ids[trial.worst]
    neutrals = [ids[i] for i in trial.neutrals]
    rels = [Relation((b, w), (b, n), RelationKind.BEST_NEUTRAL, trial.name) for n in neutrals]
    rels += [Relation((b, w), (w, n), RelationKind.WORST_NEUTRAL, trial.name) for n in neutrals]
    return rels


@dataclass(frozen=True)
class RelationIndex:
    """Row indices of every relation of a batch of trials.

    Row numbers refer to an embedding matrix built by the caller (see
    ``row_of`` in :func:`relation_index`).  Relations of a trial are
    contiguous and ordered as in :func:`derive_relations`.
    """

    trial_of: np.ndarray
    anchor: np.ndarray
    opposite: np.ndarray
    neutral: np.ndarray
    best: np.ndarray
    worst: np.ndarray
    is_best: np.ndarray
    trial_sizes: np.ndarray

    @property
    def n_relations(self) -> int:
        return len(self.trial_of)

    @property
    def n_trials(self) -> int:
        return len(self.trial_sizes)

    def indicator(self) -> np.ndarray:
        """(n_trials, n_relations) 0/1 matrix that sums relations per trial."""
        m = np.zeros((self.n_trials, self.n_relations))
        m[self.trial_of, np.arange(self.n_relations)] = 1.0
        return m


def relation_index(trials: Sequence[Trial], row_of: Mapping[str, int]) -> RelationIndex:
    cols: dict[str, list[int]] = {k: [] for k in ("trial_of", "anchor", "opposite", "neutral", "best", "worst")}
    is_best: list[bool] = []
    sizes = []
    for t, trial in enumerate(trials):
        trial.validate()
        b = row_of[trial.item_ids[trial.best]]
        w = row_of[trial.item_ids[trial.worst]]
        neutrals = [row_of[trial.item_ids[i]] for i in trial.neutrals]
        for anchor, opposite in ((b, w), (w, b)):
            for n in neutrals:
                cols["trial_of"].append(t)
                cols["anchor"].append(anchor)
                cols["opposite"].append(opposite)
                cols["neutral"].append(n)
                cols["best"].append(b)
                cols["worst"].append(w)
                is_best.append(anchor == b)
        sizes.append(trial.size)
    arrays = {k: np.asarray(v, dtype=np.intp) for k, v in cols.items()}
    return RelationIndex(is_best=np.asarray(is_best, dtype=bool), trial_sizes=np.asarray(sizes, dtype=np.intp), **arrays)


# -- validation ------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    kind: str
    message: str
    where: str = ""


def validate_dataset(items: Sequence[Item], trials: Sequence[Trial]) -> list[Issue]:
    """Report-only consistency check; an empty list means the dataset is well formed."""
    issues: list[Issue] = []
    counts = Counter(it.id for it in items)
    for item_id, c in counts.items():
        if c > 1:
            issues.append(Issue("duplicate-id", f"item id '{item_id}' appears {c} times", item_id))
    for it in items:
        f = it.features
        if f.ndim != 2 or f.size == 0:
            issues.append(Issue("bad-features", f"features must be a non-empty 2-D matrix, got shape {f.shape}", it.id))
    known = set(counts)
    for k, trial in enumerate(trials):
        where = trial.name or f"trial[{k}]"
        for item_id in trial.item_ids:
            if item_id not in known:
                issues.append(Issue("dangling-reference", f"unknown item id '{item_id}'", where))
        for p in trial.problems():
            issues.append(Issue("invalid-judgement", p, where))
    return issues


# -- splitting -------------------------------------------------------------


@dataclass
class DatasetSplit:
    train_trials: list[Trial]
    val_trials: list[Trial]
    eval_trials: list[Trial]
    held_out_item_ids: frozenset[str]
    warnings: list[str] = field(default_factory=list)


def split_dataset(
    items: Sequence[Item],
    trials: Sequence[Trial],
    held_out_fraction: float = 0.1,
    train_fraction: float = 0.8,
    seed: int = 0,
) -> DatasetSplit:
    """Hold out a fraction of items, then split the untouched trials train/val.

    Every trial touching a held-out item goes to the evaluation set; the rest
    are shuffled and cut at ``round(train_fraction * n)``.
    """
    if not 0 < held_out_fraction < 1:
        raise ValueError(f"held_out_fraction must be in (0, 1), got {held_out_fraction}")
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    ids = [it.id for it in items]
    n_held = math.floor(held_out_fraction * len(ids) + 1e-9)
    order = rng.permutation(len(ids))
    held = frozenset(ids[i] for i in order[:n_held])

    eval_trials, kept = [], []
    for trial in trials:
        (eval_trials if held.intersection(trial.item_ids) else kept).append(trial)

    perm = rng.permutation(len(kept))
    n_train = int(round(train_fraction * len(kept)))
    train = [kept[i] for i in perm[:n_train]]
    val = [kept[i] for i in perm[n_train:]]

    warnings = []
    if not eval_trials:
        msg = "no trial touches a held-out item; evaluation set is empty"
        log.warning(msg)
        warnings.append(msg)
    return DatasetSplit(train, val, eval_trials, held, warnings)
