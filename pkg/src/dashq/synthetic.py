"""Deterministic synthetic weights and activations.

Random numbers come from PCG64 (numpy's ``PCG64`` bit generator, seeded with
the run seed). Every variate is derived from its raw 64-bit outputs with a
fixed recipe so the streams can be reproduced without numpy:

* uniform in [0, 1): ``(raw >> 11) * 2**-53``
* standard normal: Box-Muller on two consecutive uniforms ``u1, u2``,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (one normal per pair)

Independent streams for the different tensors of a bundle are taken from
``PCG64(seed).jumped(k)`` with a fixed ``k`` per tensor role.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import Layer, LayerStack
from .container import TensorBundle
from .errors import ValidationError

KINDS = ("gaussian-iid", "correlated", "heavy-tailed-cols")
SALIENT_BOOST = 10.0

# stream numbers per tensor role
_WEIGHTS, _COV, _CALIB, _HELDOUT, _SALIENT = 1, 2, 3, 4, 5


class Rng:
    """Portable PCG64-based generator (see module docstring)."""

    def __init__(self, seed: int, stream: int = 0):
        bg = np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._bg = bg.jumped(stream) if stream else bg

    def raw(self, n: int) -> np.ndarray:
        return self._bg.random_raw(n).astype(np.uint64)

    def uniform(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform((n, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return (r * np.cos(2.0 * np.pi * u[:, 1])).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` driven by :meth:`uniform`."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def salient_channels(d: int, seed: int) -> np.ndarray:
    """Sorted indices of the ``max(1, d // 16)`` boosted input channels."""
    k = max(1, d // 16)
    return np.sort(Rng(seed, _SALIENT).permutation(d)[:k])


def channel_profile(kind: str, d: int, seed: int) -> np.ndarray:
    """Per-channel multiplier applied to generated activations."""
    scale = np.ones(d)
    if kind == "heavy-tailed-cols":
        scale[salient_channels(d, seed)] = SALIENT_BOOST
    return scale


def activations(kind: str, d: int, n_cols: int, seed: int, stream: int = _CALIB) -> np.ndarray:
    """``(d, n_cols)`` activations of the requested kind."""
    if kind not in KINDS:
        raise ValidationError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    if d <= 0 or n_cols < 0:
        raise ValidationError("dimensions must be positive")
    X = Rng(seed, stream).normal((d, n_cols))
    if kind == "correlated":
        A = Rng(seed, _COV).normal((d, d)) / np.sqrt(d)
        X = A @ X
    return X * channel_profile(kind, d, seed)[:, None]


def make_stack(dims: Sequence[int], seed: int, activation: str = "relu") -> LayerStack:
    """Dense stack ``dims[0] -> ... -> dims[-1]``; all but the last layer use ``activation``.

    Weights are N(0, 1/d_in), stored as f32.
    """
    dims = [int(v) for v in dims]
    if len(dims) < 2 or min(dims) <= 0:
        raise ValidationError(f"need at least two positive dims, got {dims}")
    rng = Rng(seed, _WEIGHTS)
    layers = []
    for l, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        W = (rng.normal((d_out, d_in)) / np.sqrt(d_in)).astype(np.float32)
        act = activation if l < len(dims) - 2 else "none"
        layers.append(Layer(W, act))
    return LayerStack(tuple(layers))


@dataclass(frozen=True)
class SyntheticData:
    stack: LayerStack
    calibration: np.ndarray  # (d_0, n_samples * seq_len)
    heldout: np.ndarray
    seq_len: int

    @property
    def n_samples(self) -> int:
        return self.calibration.shape[1] // self.seq_len


def gen_synthetic(
    kind: str,
    dims: Sequence[int],
    n: int,
    seed: int,
    seq_len: int = 32,
    heldout_n: int = 64,
) -> SyntheticData:
    """Weights plus ``n`` calibration samples of ``seq_len`` tokens each."""
    if n < 0 or seq_len <= 0 or heldout_n < 0:
        raise ValidationError("sample counts must be non-negative and seq_len positive")
    stack = make_stack(dims, seed)
    d0 = int(dims[0])
    calib = activations(kind, d0, n * seq_len, seed, _CALIB).astype(np.float32)
    held = activations(kind, d0, heldout_n * seq_len, seed, _HELDOUT).astype(np.float32)
    return SyntheticData(stack, calib, held, seq_len)


ACT_CODES = {"none": 0, "relu": 1}


def stack_to_entries(stack: LayerStack) -> dict[str, np.ndarray]:
    out = {}
    for l, layer in enumerate(stack.layers):
        out[f"weights/{l}"] = np.asarray(layer.W, dtype=np.float32)
        out[f"activation/{l}"] = np.array([ACT_CODES[layer.activation]], dtype=np.uint8)
    return out


def stack_from_bundle(bundle: TensorBundle) -> LayerStack:
    names = {v: k for k, v in ACT_CODES.items()}
    layers = []
    l = 0
    while f"weights/{l}" in bundle:
        code = int(bundle[f"activation/{l}"][0]) if f"activation/{l}" in bundle else 0
        layers.append(Layer(np.array(bundle[f"weights/{l}"]), names.get(code, "none")))
        l += 1
    if not layers:
        raise ValidationError("bundle contains no weights/<layer> tensors")
    return LayerStack(tuple(layers))


def data_to_bundle(data: SyntheticData) -> TensorBundle:
    entries = stack_to_entries(data.stack)
    L = data.seq_len
    for b in range(data.n_samples):
        entries[f"act/0/{b:05d}"] = data.calibration[:, b * L : (b + 1) * L]
    entries["heldout/0"] = data.heldout
    entries["meta/seq_len"] = np.array([L], dtype=np.int64)
    return TensorBundle(entries)


def calibration_from_bundle(bundle: TensorBundle, layer: int = 0) -> np.ndarray:
    """Concatenate all ``act/<layer>/<batch>`` tensors in name order."""
    prefix = f"act/{layer}/"
    names = sorted(k for k in bundle if k.startswith(prefix))
    if not names:
        raise ValidationError(f"bundle has no calibration batches under {prefix!r}")
    return np.concatenate([np.asarray(bundle[k], dtype=np.float64) for k in names], axis=1)


def data_from_bundle(bundle: TensorBundle) -> SyntheticData:
    stack = stack_from_bundle(bundle)
    calib = calibration_from_bundle(bundle)
    held = np.asarray(bundle["heldout/0"]) if "heldout/0" in bundle else np.zeros((calib.shape[0], 0))
    L = int(bundle["meta/seq_len"][0]) if "meta/seq_len" in bundle else 1
    return SyntheticData(stack, calib, held, L)
