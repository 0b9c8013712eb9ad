"""Reference quantizers: min-max round-to-nearest and GPTQ error compensation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import NumericalError, ValidationError
from .types import QuantizedLayer, QuantSpec, as_weight_matrix, group_bounds, round_half_away, storage_params


def rtn_params(W: np.ndarray, spec: QuantSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-group min-max scale and offset, shape ``(d_out, n_groups)``, in f64."""
    starts = [a for a, _ in group_bounds(W.shape[1], spec.group_size)]
    wmin = np.minimum.reduceat(W, starts, axis=1)
    wmax = np.maximum.reduceat(W, starts, axis=1)
    s = np.maximum((wmax - wmin) / spec.qmax, spec.s_floor)
    return s, -wmin


def _quantize_columns(W, s, z, cols, spec):
    gidx = np.asarray(cols) // spec.group_size
    x = (W + z[:, gidx]) / s[:, gidx]
    return np.clip(round_half_away(x), 0, spec.qmax)


def quantize_rtn(W, spec: QuantSpec) -> QuantizedLayer:
    """Round-to-nearest with min-max grids per group (no calibration data)."""
    W = as_weight_matrix(W).astype(np.float64)
    s, z = storage_params(*rtn_params(W, spec), spec)
    s, z = s.astype(np.float64), z.astype(np.float64)
    codes = _quantize_columns(W, s, z, np.arange(W.shape[1]), spec)
    return QuantizedLayer.from_codes(codes.astype(np.uint8), s, z, spec.bits, spec.group_size, meta={"method": "rtn"})


@dataclass(frozen=True)
class GptqConfig:
    """GPTQ settings.

    ``damp_ratio`` times the mean Hessian diagonal is added to the diagonal
    before inversion.
    """

    block_size: int = 128
    damp_ratio: float = 0.01
    spec: QuantSpec = field(default_factory=QuantSpec)

    def __post_init__(self):
        if self.block_size < 1:
            raise ValidationError(f"block_size must be >= 1, got {self.block_size}")
        if not self.damp_ratio >= 0:
            raise ValidationError(f"damp_ratio must be >= 0, got {self.damp_ratio}")


def damped_hessian(H: np.ndarray, damp_ratio: float) -> np.ndarray:
    """Hessian actually inverted by GPTQ: dead channels get a unit diagonal, then damping."""
    H = np.array(H, dtype=np.float64)
    diag = np.diag(H).copy()
    dead = diag == 0
    diag[dead] = 1.0
    diag += damp_ratio * diag.mean()
    np.fill_diagonal(H, diag)
    return H


def inverse_cholesky(H: np.ndarray, damp_ratio: float) -> np.ndarray:
    """Upper Cholesky factor ``U`` of the damped inverse Hessian (``inv(H) = U^T U``)."""
    Hd = damped_hessian(H, damp_ratio)
    try:
        L = scipy.linalg.cholesky(Hd, lower=True)
        Hinv = scipy.linalg.cho_solve((L, True), np.eye(len(Hd)))
        return scipy.linalg.cholesky((Hinv + Hinv.T) / 2, lower=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(
            f"Hessian is not positive definite after damping with ratio {damp_ratio}; "
            "try a larger damp_ratio"
        ) from exc


def quantize_gptq(
    W,
    hessian,
    cfg: GptqConfig,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> QuantizedLayer:
    """Quantize columns left to right, pushing each column's error onto the rest.

    Grids are fixed per group from the uncompensated weights. Columns are
    handled in blocks of ``cfg.block_size``: compensation inside a block is
    applied eagerly, to later blocks once the block is finished.

    Args:
        W: ``(d_out, d_in)`` weights.
        hessian: ``(d_in, d_in)`` matrix or an object with an ``H`` attribute.
        cfg: GPTQ settings.
        callback: called as ``callback(j, W_work, W_hat)`` after column ``j``
            is quantized and compensated. ``W_work`` holds the current
            continuous weights; columns beyond the current block are only
            current when ``j`` closes its block.
    """
    spec = cfg.spec
    W = as_weight_matrix(W).astype(np.float64)
    H = np.asarray(getattr(hessian, "H", hessian), dtype=np.float64)
    d_out, d_in = W.shape
    if H.shape != (d_in, d_in):
        raise ValidationError(f"Hessian shape {H.shape} does not match d_in {d_in}")
    if not np.all(np.isfinite(H)):
        raise ValidationError("Hessian contains non-finite entries")

    s, z = storage_params(*rtn_params(W, spec), spec)
    s, z = s.astype(np.float64), z.astype(np.float64)
    U = inverse_cholesky(H, cfg.damp_ratio)

    Wk = W.copy()
    codes = np.zeros((d_out, d_in), dtype=np.uint8)
    W_hat = np.zeros_like(W)
    for i1 in range(0, d_in, cfg.block_size):
        i2 = min(i1 + cfg.block_size, d_in)
        err = np.zeros((d_out, i2 - i1))
        for j in range(i1, i2):
            q = _quantize_columns(Wk[:, j : j + 1], s, z, [j], spec)[:, 0]
            g = j // spec.group_size
            w_hat = s[:, g] * q - z[:, g]
            codes[:, j] = q
            W_hat[:, j] = w_hat
            e = (Wk[:, j] - w_hat) / U[j, j]
            err[:, j - i1] = e
            Wk[:, j + 1 : i2] -= np.outer(e, U[j, j + 1 : i2])
            if j == i2 - 1 and i2 < d_in:
                Wk[:, i2:] -= err @ U[i1:i2, i2:]
            if callback is not None:
                callback(j, Wk, W_hat)
    return QuantizedLayer.from_codes(codes, s, z, spec.bits, spec.group_size, meta={"method": "gptq"})
