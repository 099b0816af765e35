"""Mean-pool feedforward encoder and the per-relation margin network.

Parameters live in a single :class:`ParameterSet` under the prefixes
``enc.`` and ``margin.``.  Weight matrices are stored ``(fan_in, fan_out)``
and applied as ``x @ W + b``; hidden layers use tanh, output layers are linear.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .trial_data import RelationIndex, Trial, relation_index


@dataclass
class EncoderConfig:
    feature_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64])
    d: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("embedding dimension d must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


@dataclass
class MarginConfig:
    mu: float = 1.0
    delta: float = 1.0
    hidden_dims: list[int] = field(default_factory=lambda: [32])

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if not 0 <= self.delta <= self.mu:
            raise ValueError("delta must satisfy 0 <= delta <= mu")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _add_stack(params: ParameterSet, prefix: str, dims: Sequence[int], rng: np.random.Generator) -> None:
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}.W{k}"] = _glorot(rng, fan_in, fan_out)
        params[f"{prefix}.b{k}"] = np.zeros(fan_out)


def init_params(enc_cfg: EncoderConfig, margin_cfg: MarginConfig) -> ParameterSet:
    rng = np.random.default_rng(enc_cfg.seed)
    params = ParameterSet()
    _add_stack(params, "enc", [enc_cfg.feature_dim, *enc_cfg.hidden_dims, enc_cfg.d], rng)
    _add_stack(params, "margin", [3 * enc_cfg.d, *margin_cfg.hidden_dims, 1], rng)
    return params


def n_layers(params, prefix: str) -> int:
    k = 0
    while f"{prefix}.W{k}" in params:
        k += 1
    return k


def embedding_dim(params) -> int:
    return params[f"enc.W{n_layers(params, 'enc') - 1}"].shape[1]


def _mlp(tensors, prefix: str, x: Tensor) -> Tensor:
    depth = n_layers(tensors, prefix)
    for k in range(depth):
        x = x @ tensors[f"{prefix}.W{k}"] + tensors[f"{prefix}.b{k}"]
        if k < depth - 1:
            x = ad.tanh(x)
    return x


def pool(features) -> np.ndarray:
    """Temporal mean over frames: (frames, F) -> (F,), or a stack of those."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError(f"features must be a non-empty (frames, feature_dim) matrix, got {features.shape}")
    return features.mean(axis=0)


def encode_pooled(tensors, pooled) -> Tensor:
    """Differentiable encoder applied to already pooled rows ``(n, F)``."""
    pooled = ad.as_tensor(pooled)
    expected = tensors["enc.W0"].shape[0]
    if pooled.shape[-1] != expected:
        raise ValueError(f"feature width {pooled.shape[-1]} does not match encoder input {expected}")
    return _mlp(tensors, "enc", pooled)


def encode(params: ParameterSet, features) -> np.ndarray:
    """Embedding of one item's (frames, feature_dim) matrix."""
    return encode_pooled(params, pool(features)).value


def encode_items(params: ParameterSet, items) -> np.ndarray:
    if not items:
        return np.zeros((0, embedding_dim(params)))
    pooled = np.stack([pool(it.features) for it in items])
    return encode_pooled(params, pooled).value


def margin_inputs(H: Tensor, index: RelationIndex) -> Tensor:
    """Per relation: [h_anchor, h_opposite, h_neutral]."""
    return ad.concat([ad.take(H, index.anchor), ad.take(H, index.opposite), ad.take(H, index.neutral)], axis=1)


def margin_forward(tensors, H: Tensor, index: RelationIndex, cfg: MarginConfig) -> Tensor:
    """Margins for every relation in ``index``, squashed into [mu - delta, mu + delta]."""
    raw = _mlp(tensors, "margin", margin_inputs(H, index))
    raw = ad.sum(raw, axis=1)
    return cfg.mu + cfg.delta * ad.tanh(raw)


def canonical_index(n: int) -> RelationIndex:
    """Relation index of a single trial whose rows are ordered [best, worst, neutrals...]."""
    trial = Trial("", tuple(str(i) for i in range(n)), 0, 1)
    return relation_index([trial], {str(i): i for i in range(n)})


def margins(params: ParameterSet, trial_embeddings, margin_cfg: MarginConfig) -> np.ndarray:
    """Margins of one trial given embeddings ordered [best, worst, neutrals...].

    Returns ``2(N-2)`` values: the best-anchored margins for each neutral,
    then the worst-anchored ones.
    """
    emb = np.asarray(trial_embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 3:
        raise ValueError(f"need an (N >= 3, d) embedding matrix, got {emb.shape}")
    if 3 * emb.shape[1] != params["margin.W0"].shape[0]:
        raise ValueError("embedding width does not match the margin network")
    return margin_forward(params, ad.constant(emb), canonical_index(emb.shape[0]), margin_cfg).value
