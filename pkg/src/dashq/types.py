"""Core value types: quantization settings, per-group parameters and packed layers.

All methods share one affine convention with the offset applied before
scaling::

    q     = clip(round((w + z) / s), 0, 2**bits - 1)
    w_hat = s * q - z
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .container import TensorBundle
from .errors import NumericalError, ValidationError
from .packing import pack_codes, unpack_codes

S_FLOOR = 1e-8


@dataclass(frozen=True)
class QuantSpec:
    """Settings shared by every quantizer.

    ``alpha`` damps the coordinate-descent parameter updates (1 disables
    damping); ``s_floor`` is the smallest admissible scale.
    """

    bits: int = 4
    group_size: int = 128
    iters: int = 9
    ridge: float = 1e-2
    alpha: float = 0.5
    s_floor: float = S_FLOOR
    fp16_params: bool = False

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ValidationError(f"bits must be in [2, 8], got {self.bits}")
        if self.group_size < 1:
            raise ValidationError(f"group_size must be positive, got {self.group_size}")
        if self.iters < 0:
            raise ValidationError(f"iters must be non-negative, got {self.iters}")
        if not self.ridge >= 0:
            raise ValidationError(f"ridge must be >= 0, got {self.ridge}")
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.s_floor > 0:
            raise ValidationError(f"s_floor must be > 0, got {self.s_floor}")

    @property
    def qmax(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class GroupParams:
    s: float
    z: float
    codes: np.ndarray

    def dequantize(self) -> np.ndarray:
        return self.s * self.codes.astype(np.float64) - self.z


@dataclass(frozen=True)
class WeightedMoments:
    h_sum: float
    w_mean: float
    q_mean: float
    cov: float
    var: float


def as_weight_matrix(W) -> np.ndarray:
    """Validate a 2-D finite weight matrix (rows are output channels)."""
    W = np.asarray(W)
    if W.ndim != 2:
        raise ValidationError(f"weight matrix must be 2-D, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValidationError("weight matrix contains non-finite entries")
    return W


def group_bounds(d_in: int, group_size: int) -> list[tuple[int, int]]:
    """Column ranges of the groups in one row; the last one may be short."""
    return [(a, min(a + group_size, d_in)) for a in range(0, d_in, group_size)]


def group_index(d_in: int, group_size: int) -> np.ndarray:
    """Group number of each input column."""
    return np.arange(d_in) // group_size


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def storage_params(s: np.ndarray, z: np.ndarray, spec: QuantSpec) -> tuple[np.ndarray, np.ndarray]:
    """Round scales/offsets to the precision they will be stored at.

    f32 by default, or through half precision with ``spec.fp16_params``.
    Scales are kept strictly positive after rounding.
    """
    s = np.asarray(s, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    dt = np.float16 if spec.fp16_params else np.float32
    with np.errstate(over="ignore"):
        s_st, z_st = s.astype(dt), z.astype(dt)
    if not (np.all(np.isfinite(s_st)) and np.all(np.isfinite(z_st))):
        raise NumericalError(f"quantization parameters overflow {np.dtype(dt).name} storage")
    floor = spec.s_floor if dt is np.float32 else 0.0
    s_st = np.maximum(s_st, dt(max(floor, float(np.finfo(dt).smallest_subnormal))))
    return s_st.astype(np.float32), z_st.astype(np.float32)


@dataclass(frozen=True, eq=False)
class QuantizedLayer:
    """Packed integer codes plus one (scale, offset) pair per group.

    ``scales`` and ``zeros`` have shape ``(d_out, ceil(d_in / group_size))``.
    """

    bits: int
    group_size: int
    d_out: int
    d_in: int
    packed_codes: bytes
    scales: np.ndarray
    zeros: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_groups = math.ceil(self.d_in / self.group_size)
        want = (self.d_out, n_groups)
        if self.scales.shape != want or self.zeros.shape != want:
            raise ValidationError(f"scales/zeros must have shape {want}, got {self.scales.shape}/{self.zeros.shape}")
        if len(self.packed_codes) != (self.d_out * self.d_in * self.bits + 7) // 8:
            raise ValidationError("packed code length does not match layer shape")

    @classmethod
    def from_codes(cls, codes: np.ndarray, scales, zeros, bits: int, group_size: int, meta=None) -> "QuantizedLayer":
        codes = np.asarray(codes)
        d_out, d_in = codes.shape
        return cls(
            bits=bits,
            group_size=group_size,
            d_out=d_out,
            d_in=d_in,
            packed_codes=pack_codes(codes.ravel(), bits),
            scales=np.asarray(scales, dtype=np.float32).reshape(d_out, -1),
            zeros=np.asarray(zeros, dtype=np.float32).reshape(d_out, -1),
            meta=dict(meta or {}),
        )

    @property
    def n_groups(self) -> int:
        return self.scales.size

    def codes(self) -> np.ndarray:
        flat = unpack_codes(self.packed_codes, self.bits, self.d_out * self.d_in)
        return flat.reshape(self.d_out, self.d_in)

    def to_bundle_entries(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}/codes": np.frombuffer(self.packed_codes, dtype=np.uint8),
            f"{prefix}/scales": self.scales.astype(np.float32),
            f"{prefix}/zeros": self.zeros.astype(np.float32),
            f"{prefix}/shape": np.array([self.bits, self.group_size, self.d_out, self.d_in], dtype=np.int64),
        }

    @classmethod
    def from_bundle(cls, bundle: TensorBundle, prefix: str) -> "QuantizedLayer":
        try:
            bits, group_size, d_out, d_in = (int(v) for v in bundle[f"{prefix}/shape"])
            return cls(
                bits=bits,
                group_size=group_size,
                d_out=d_out,
                d_in=d_in,
                packed_codes=bundle[f"{prefix}/codes"].tobytes(),
                scales=np.array(bundle[f"{prefix}/scales"], dtype=np.float32),
                zeros=np.array(bundle[f"{prefix}/zeros"], dtype=np.float32),
            )
        except KeyError as exc:
            raise ValidationError(f"bundle has no quantized layer under {prefix!r}: missing {exc}") from exc


def dequantize_layer(q: QuantizedLayer) -> np.ndarray:
    """Reconstruct ``s_G * Q - z_G`` in f64, returned as an f32 matrix."""
    return dequantize_layer_f64(q).astype(np.float32)


def dequantize_layer_f64(q: QuantizedLayer) -> np.ndarray:
    gidx = group_index(q.d_in, q.group_size)
    s = q.scales.astype(np.float64)[:, gidx]
    z = q.zeros.astype(np.float64)[:, gidx]
    return s * q.codes().astype(np.float64) - z
