"""Importance accumulation from calibration activations and layer-wise propagation.

Activations are ``(d_in, N)`` matrices whose columns are samples (tokens).
Accumulators work in f64 and are additive: feeding two batches gives the same
result as feeding their concatenation, and independent accumulators can be
merged with ``+``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .types import QuantizedLayer, as_weight_matrix, dequantize_layer_f64

ACTIVATIONS = ("none", "relu")


def _as_batch(X, d_in: int | None = None) -> np.ndarray:
    X = np.asarray(getattr(X, "X", X))
    if X.ndim != 2:
        raise ValidationError(f"activation batch must be 2-D (d_in, N), got shape {X.shape}")
    if d_in is not None and X.shape[0] != d_in:
        raise ValidationError(f"activation batch has {X.shape[0]} channels, expected {d_in}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("activation batch contains non-finite entries")
    return X.astype(np.float64)


@dataclass(frozen=True)
class ActivationBatch:
    X: np.ndarray
    batch_id: str = ""

    @property
    def d_in(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class DiagImportance:
    """Per-input-channel importance ``h_j = sum_k x_jk**2``."""

    h: np.ndarray
    sample_count: int = 0

    @classmethod
    def zeros(cls, d_in: int) -> "DiagImportance":
        return cls(np.zeros(d_in), 0)

    def __add__(self, other: "DiagImportance") -> "DiagImportance":
        if self.h.shape != other.h.shape:
            raise ValidationError("cannot merge importance vectors of different length")
        return DiagImportance(self.h + other.h, self.sample_count + other.sample_count)


@dataclass(frozen=True)
class HessianEstimate:
    """Empirical ``sum X X^T`` with its diagonal/off-diagonal split."""

    H: np.ndarray
    sample_count: int = 0

    @classmethod
    def zeros(cls, d_in: int) -> "HessianEstimate":
        return cls(np.zeros((d_in, d_in)), 0)

    @property
    def D(self) -> np.ndarray:
        return np.diag(np.diag(self.H))

    @property
    def O(self) -> np.ndarray:  # noqa: E743
        return self.H - self.D

    def normalized(self) -> np.ndarray:
        return self.H / max(self.sample_count, 1)

    def __add__(self, other: "HessianEstimate") -> "HessianEstimate":
        if self.H.shape != other.H.shape:
            raise ValidationError("cannot merge Hessians of different shape")
        return HessianEstimate(self.H + other.H, self.sample_count + other.sample_count)


def accumulate_diag(acc: DiagImportance, batch) -> DiagImportance:
    X = _as_batch(batch, acc.h.size)
    return DiagImportance(acc.h + np.einsum("ij,ij->i", X, X), acc.sample_count + X.shape[1])


def accumulate_full(acc: HessianEstimate, batch) -> HessianEstimate:
    X = _as_batch(batch, acc.H.shape[0])
    return HessianEstimate(acc.H + X @ X.T, acc.sample_count + X.shape[1])


@dataclass(frozen=True)
class Layer:
    W: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        as_weight_matrix(self.W)
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass(frozen=True)
class LayerStack:
    layers: Sequence[Layer] = field(default_factory=tuple)

    def __post_init__(self):
        for l, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.W.shape[0] != b.W.shape[1]:
                raise ValidationError(
                    f"layer {l} outputs {a.W.shape[0]} channels but layer {l + 1} expects {b.W.shape[1]}"
                )

    def __len__(self) -> int:
        return len(self.layers)


def apply_layer(W: np.ndarray, activation: str, X: np.ndarray) -> np.ndarray:
    if W.shape[1] != X.shape[0]:
        raise ValidationError(f"layer expects {W.shape[1]} input channels, got {X.shape[0]}")
    Y = np.asarray(W, dtype=np.float64) @ X
    if activation == "relu":
        Y = np.maximum(Y, 0.0)
    return Y


def forward(stack: LayerStack, X: np.ndarray, weights: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Run ``X`` through the stack, optionally substituting the weight matrices."""
    X = _as_batch(X)
    for i, layer in enumerate(stack.layers):
        W = layer.W if weights is None else weights[i]
        X = apply_layer(W, layer.activation, X)
    return X


def propagate(stack: LayerStack, quantized_prefix: Sequence[QuantizedLayer], X0) -> ActivationBatch:
    """Activations entering layer ``len(quantized_prefix)``.

    Each prefix layer is applied with its dequantized weights followed by the
    stack's activation function for that position.
    """
    if len(quantized_prefix) >= len(stack):
        raise ValidationError("quantized prefix must be shorter than the stack")
    X = _as_batch(X0)
    for layer, q in zip(stack.layers, quantized_prefix):
        if (q.d_out, q.d_in) != layer.W.shape:
            raise ValidationError(f"quantized layer shape {(q.d_out, q.d_in)} != stack layer {layer.W.shape}")
        X = apply_layer(dequantize_layer_f64(q), layer.activation, X)
    batch_id = getattr(X0, "batch_id", "")
    return ActivationBatch(X, batch_id)
