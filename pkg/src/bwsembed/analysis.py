"""Counting scores, 2-D PCA projection and CSV export of a latent space."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .trial_data import Item, Trial


@dataclass(frozen=True)
class ItemScore:
    item_id: str
    score: float
    n_best: int
    n_worst: int
    n_appearances: int


def count_scores(trials: Sequence[Trial]) -> list[ItemScore]:
    """(times best - times worst) / appearances, sorted by item id."""
    best: dict[str, int] = {}
    worst: dict[str, int] = {}
    seen: dict[str, int] = {}
    for t in trials:
        for i in t.item_ids:
            seen[i] = seen.get(i, 0) + 1
        b, w = t.item_ids[t.best], t.item_ids[t.worst]
        best[b] = best.get(b, 0) + 1
        worst[w] = worst.get(w, 0) + 1
    return [
        ItemScore(i, (best.get(i, 0) - worst.get(i, 0)) / n, best.get(i, 0), worst.get(i, 0), n)
        for i, n in sorted(seen.items())
    ]


@dataclass(frozen=True)
class Projection:
    coords: np.ndarray  # (n, 2)
    explained_variance: np.ndarray  # top-2 covariance eigenvalues
    explained_ratio: np.ndarray  # fraction of total variance


def pca_project(embeddings) -> Projection:
    """Project onto the top two principal directions of the sample covariance.

    Each direction's sign is fixed so that its largest-magnitude coordinate
    is positive.  Zero-variance input projects to zeros.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two embeddings")
    centred = X - X.mean(axis=0)
    cov = centred.T @ centred / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    total = vals.sum()
    k = min(2, X.shape[1])
    out_vals = np.zeros(2)
    out_vecs = np.zeros((X.shape[1], 2))
    out_vals[:k] = vals[:k]
    out_vecs[:, :k] = vecs[:, :k]
    if total <= 0:
        return Projection(np.zeros((X.shape[0], 2)), np.zeros(2), np.zeros(2))
    for j in range(2):
        v = out_vecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            out_vecs[:, j] = -v
    return Projection(centred @ out_vecs, out_vals, out_vals / total)


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


def export_space(
    items: Sequence[Item | str],
    embeddings,
    scores: Sequence[float | None],
    path,
    attributes: Sequence[str] | None = None,
) -> None:
    """CSV with item_id, h0..h{d-1}, pca_x, pca_y, score, attribute."""
    ids = [it if isinstance(it, str) else it.id for it in items]
    H = np.asarray(embeddings, dtype=np.float64).reshape(len(ids), -1)
    if len(scores) != len(ids) or (attributes is not None and len(attributes) != len(ids)):
        raise ValueError("items, embeddings, scores and attributes must be aligned")
    d = H.shape[1]
    coords = pca_project(H).coords if len(ids) >= 2 else np.zeros((len(ids), 2))
    attributes = attributes if attributes is not None else [""] * len(ids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", *(f"h{j}" for j in range(d)), "pca_x", "pca_y", "score", "attribute"])
        for k, item_id in enumerate(ids):
            score = "" if scores[k] is None else format(scores[k], ".17g")
            writer.writerow(
                [item_id, *(format(x, ".17g") for x in H[k]), *(format(x, ".17g") for x in coords[k]), score, attributes[k]]
            )


def read_space(path) -> tuple[list[str], np.ndarray, np.ndarray, list[float | None]]:
    """Inverse of :func:`export_space`: ids, embeddings, pca coords, scores."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for c in header if c.startswith("h") and c[1:].isdigit())
        ids, H, P, S = [], [], [], []
        for row in reader:
            ids.append(row[0])
            H.append([float(x) for x in row[1 : 1 + d]])
            P.append([float(x) for x in row[1 + d : 3 + d]])
            S.append(float(row[3 + d]) if row[3 + d] else None)
    return ids, np.array(H).reshape(len(ids), d), np.array(P).reshape(len(ids), 2), S


def write_scores(path, scores: Sequence[ItemScore]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "score"])
        for s in scores:
            writer.writerow([s.item_id, format(s.score, ".17g")])
