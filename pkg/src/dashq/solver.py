"""Diagonal-Hessian group quantizer.

Each quantization group is solved independently by coordinate descent on the
ridge-regularized weighted reconstruction objective

    J(s, z; Q) = sum_j h_j * (w_j - (s * q_j - z))**2 + ridge * s**2

alternating two exact steps: with (s, z) fixed the best codes are the
clipped nearest grid points, and with the codes fixed (s, z) has a closed
form from weighted moments (scale = Cov_h / (Var_h + ridge), offset =
scale * mean_h(q) - mean_h(w)).

The heavy lifting is done on 2-D arrays holding one group per row so whole
layers are solved in a handful of vectorized passes. The scalar entry points
(``init_params``, ``refine_codes`` ...) are thin wrappers over the same code.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError, ZeroDenominatorError, ZeroImportanceError
from .types import (
    GroupParams,
    QuantizedLayer,
    QuantSpec,
    WeightedMoments,
    as_weight_matrix,
    round_half_away,
    storage_params,
)


@dataclass(frozen=True)
class SolveTrace:
    """Per-iteration history of one group (arrays of length ``iters``).

    ``objective[t]`` is J after the t-th parameter update, evaluated with
    the codes that update was fitted to. ``delta_s[t]`` is
    ``|s_{t+1} - s_t| / |s_0|``.
    """

    objective: np.ndarray
    delta_s: np.ndarray
    clamped: bool = False


@dataclass(frozen=True)
class LayerTrace:
    """Traces for every group of a layer, rows ordered (output row, group)."""

    objective: np.ndarray
    delta_s: np.ndarray
    clamped: np.ndarray
    s0: np.ndarray


# ---------------------------------------------------------------------------
# vectorized kernels: one group per row


def _refine(W: np.ndarray, s: np.ndarray, z: np.ndarray, qmax: int) -> np.ndarray:
    x = (W + z[:, None]) / s[:, None]
    return np.clip(round_half_away(x), 0, qmax)


def _effective_importance(H: np.ndarray) -> np.ndarray:
    # groups with no importance at all fall back to uniform weights
    dead = H.sum(axis=1) <= 0
    if dead.any():
        H = H.copy()
        H[dead] = 1.0
    return H


def _moments(W, Q, H):
    h_sum = H.sum(axis=1)
    w_mean = (H * W).sum(axis=1) / h_sum
    q_mean = (H * Q).sum(axis=1) / h_sum
    dq = Q - q_mean[:, None]
    cov = (H * dq * (W - w_mean[:, None])).sum(axis=1)
    var = (H * dq * dq).sum(axis=1)
    return h_sum, w_mean, q_mean, cov, var


def _objective(W, H, Q, s, z, ridge):
    r = W - (s[:, None] * Q - z[:, None])
    return (H * r * r).sum(axis=1) + ridge * s * s


def _init(W: np.ndarray, qmax: int, s_floor: float):
    wmin = W.min(axis=1)
    wmax = W.max(axis=1)
    s0 = np.maximum((wmax - wmin) / qmax, s_floor)
    return s0, -wmin, wmax == wmin


def solve_groups(W: np.ndarray, H: np.ndarray, spec: QuantSpec):
    """Solve a batch of equal-length groups.

    Args:
        W: ``(n, g)`` group weights.
        H: ``(n, g)`` non-negative importance of each weight.
        spec: quantization settings; ``iters``, ``ridge``, ``alpha`` and
            ``s_floor`` drive the descent.

    Returns:
        ``(s, z, Q, objective, delta_s, clamped, s0)`` with ``objective`` and
        ``delta_s`` of shape ``(n, iters)``. ``Q`` is recomputed from the
        final ``(s, z)``.
    """
    W = np.asarray(W, dtype=np.float64)
    H = _effective_importance(np.asarray(H, dtype=np.float64))
    n = W.shape[0]
    qmax, ridge, alpha, eps = spec.qmax, float(spec.ridge), float(spec.alpha), float(spec.s_floor)

    s0, z0, const = _init(W, qmax, eps)
    s, z = s0.copy(), z0.copy()
    objective = np.zeros((n, spec.iters))
    delta_s = np.zeros((n, spec.iters))
    clamped = np.zeros(n, dtype=bool)

    live = ~const
    for t in range(spec.iters):
        Q = _refine(W, s, z, qmax)
        _, w_mean, q_mean, cov, var = _moments(W, Q, H)
        denom = var + ridge
        ok = denom > 0
        # a zero denominator means constant codes with no ridge: keep the scale
        s_reg = np.where(ok, cov / np.where(ok, denom, 1.0), s)
        clamped |= live & (s_reg < eps)
        s_reg = np.maximum(s_reg, eps)
        z_reg = s_reg * q_mean - w_mean
        s_new = alpha * s_reg + (1.0 - alpha) * s
        z_new = alpha * z_reg + (1.0 - alpha) * z
        s_new = np.where(live, s_new, s)
        z_new = np.where(live, z_new, z)
        objective[:, t] = _objective(W, H, Q, s_new, z_new, ridge)
        delta_s[:, t] = np.abs(s_new - s) / np.abs(s0)
        s, z = s_new, z_new

    if const.any():
        # constant group: all codes 0 reproduce it exactly
        s = np.where(const, eps, s)
        z = np.where(const, -W[:, 0], z)
        if spec.iters:
            objective[const] = ridge * eps * eps
    Q = _refine(W, s, z, qmax)
    return s, z, Q, objective, delta_s, clamped, s0


# ---------------------------------------------------------------------------
# scalar API


def _as_group(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValidationError("empty quantization group")
    return w


def init_params(w, bits: int, s_floor: float = QuantSpec.s_floor) -> tuple[float, float]:
    """Min-max starting point ``s0 = range / (2**bits - 1)``, ``z0 = -min(w)``.

    A constant group gets ``s0 = s_floor``.
    """
    w = _as_group(w)
    s0, z0, _ = _init(w[None, :], (1 << bits) - 1, s_floor)
    return float(s0[0]), float(z0[0])


def refine_codes(w, s: float, z: float, bits: int) -> np.ndarray:
    """Nearest admissible codes for fixed (s, z); ties round away from zero."""
    if not s > 0:
        raise ValidationError(f"scale must be positive, got {s}")
    w = np.asarray(w, dtype=np.float64)
    return _refine(w.reshape(1, -1), np.array([s]), np.array([z]), (1 << bits) - 1).reshape(w.shape).astype(np.int64)


def weighted_moments(w, q, h) -> WeightedMoments:
    w, q, h = (np.asarray(a, dtype=np.float64).reshape(1, -1) for a in (w, q, h))
    if not w.shape == q.shape == h.shape:
        raise ValidationError("w, q and h must have equal lengths")
    if h.sum() <= 0:
        raise ZeroImportanceError("group has zero total importance")
    h_sum, w_mean, q_mean, cov, var = _moments(w, q, h)
    return WeightedMoments(float(h_sum[0]), float(w_mean[0]), float(q_mean[0]), float(cov[0]), float(var[0]))


def regress_params(m: WeightedMoments, ridge: float, s_floor: float = QuantSpec.s_floor) -> tuple[float, float]:
    """Closed-form (s, z) for fixed codes; the scale is clamped to ``s_floor``."""
    denom = m.var + ridge
    if denom == 0:
        raise ZeroDenominatorError("constant codes with zero ridge: scale is undefined")
    s = max(m.cov / denom, s_floor)
    return s, s * m.q_mean - m.w_mean


def ridge_objective(w, h, q, s: float, z: float, ridge: float) -> float:
    w, h, q = (np.asarray(a, dtype=np.float64) for a in (w, h, q))
    r = w - (s * q - z)
    return float(np.sum(h * r * r) + ridge * s * s)


def solve_group(w, h, spec: QuantSpec) -> tuple[GroupParams, SolveTrace]:
    w = _as_group(w)
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.shape != w.shape:
        raise ValidationError(f"importance length {h.size} != group length {w.size}")
    if np.any(h < 0):
        raise ValidationError("importance weights must be non-negative")
    s, z, Q, obj, ds, clamped, _ = solve_groups(w[None, :], h[None, :], spec)
    params = GroupParams(float(s[0]), float(z[0]), Q[0].astype(np.int64))
    return params, SolveTrace(obj[0], ds[0], bool(clamped[0]))


# ---------------------------------------------------------------------------
# layer


def split_groups(W: np.ndarray, group_size: int):
    """Yield ``(col_start, col_stop, block)`` with ``block`` of shape (d_out, width)."""
    d_in = W.shape[1]
    n_full = d_in // group_size
    if n_full:
        yield 0, n_full * group_size, W[:, : n_full * group_size]
    if d_in % group_size:
        yield n_full * group_size, d_in, W[:, n_full * group_size :]


def _solve_rows(W, h, spec):
    """Solve every group of the given rows; outputs are (rows, n_groups[, ...])."""
    d_out, d_in = W.shape
    g = spec.group_size
    n_groups = math.ceil(d_in / g)
    s = np.empty((d_out, n_groups))
    z = np.empty((d_out, n_groups))
    obj = np.empty((d_out, n_groups, spec.iters))
    ds = np.empty((d_out, n_groups, spec.iters))
    clamped = np.empty((d_out, n_groups), dtype=bool)
    s0 = np.empty((d_out, n_groups))
    for a, b, block in split_groups(W, g):
        width = min(g, b - a)
        k = (b - a) // width
        gw = block.reshape(d_out * k, width)
        gh = np.broadcast_to(h[a:b].reshape(k, width), (d_out, k, width)).reshape(d_out * k, width)
        rs, rz, _, robj, rds, rcl, rs0 = solve_groups(gw, gh, spec)
        ga, gb = a // g, a // g + k
        s[:, ga:gb] = rs.reshape(d_out, k)
        z[:, ga:gb] = rz.reshape(d_out, k)
        obj[:, ga:gb] = robj.reshape(d_out, k, -1)
        ds[:, ga:gb] = rds.reshape(d_out, k, -1)
        clamped[:, ga:gb] = rcl.reshape(d_out, k)
        s0[:, ga:gb] = rs0.reshape(d_out, k)
    return s, z, obj, ds, clamped, s0


def codes_for_params(W: np.ndarray, s: np.ndarray, z: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Codes of every weight under per-group (s, z) of shape (d_out, n_groups)."""
    gidx = np.arange(W.shape[1]) // spec.group_size
    x = (W + z[:, gidx]) / s[:, gidx]
    return np.clip(round_half_away(x), 0, spec.qmax).astype(np.uint8)


def quantize_layer_dashq(W, D, spec: QuantSpec, workers: int = 1) -> tuple[QuantizedLayer, LayerTrace]:
    """Quantize a weight matrix group by group using diagonal importance ``D``.

    Args:
        W: ``(d_out, d_in)`` weights.
        D: per-input-channel importance, a length-``d_in`` vector or an
            object with an ``h`` attribute.
        spec: quantization settings.
        workers: row chunks solved concurrently; the result does not depend
            on this value.
    """
    W = as_weight_matrix(W).astype(np.float64)
    h = np.asarray(getattr(D, "h", D), dtype=np.float64).ravel()
    d_out, d_in = W.shape
    if h.size != d_in:
        raise ValidationError(f"importance length {h.size} != d_in {d_in}")
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise ValidationError("importance must be finite and non-negative")

    workers = max(1, min(int(workers), d_out))
    if workers == 1:
        parts = [_solve_rows(W, h, spec)]
    else:
        chunks = np.array_split(np.arange(d_out), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda rows: _solve_rows(W[rows], h, spec), chunks))
    s, z, obj, ds, clamped, s0 = (np.concatenate(p, axis=0) for p in zip(*parts))

    s_st, z_st = storage_params(s, z, spec)
    codes = codes_for_params(W, s_st.astype(np.float64), z_st.astype(np.float64), spec)
    layer = QuantizedLayer.from_codes(
        codes, s_st, z_st, spec.bits, spec.group_size, meta={"method": "dashq"}
    )
    n = d_out * s.shape[1]
    trace = LayerTrace(
        objective=obj.reshape(n, -1),
        delta_s=ds.reshape(n, -1),
        clamped=clamped.ravel(),
        s0=s0.ravel(),
    )
    return layer, trace
