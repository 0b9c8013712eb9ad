"""Stability diagnostics for empirical Hessians.

Compares how reliably the diagonal and the off-diagonal parts of ``X X^T``
are estimated from limited calibration data: a linear shrinkage family
``D + rho * O``, the normalized L1 discrepancy between two calibration sets,
entrywise signal-to-noise ratios, and error-vs-sample-size curves.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericalError, ValidationError


def default_rho_grid(points: int = 33, low: float = 1e-4) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(np.log10(low), 0.0, points - 1)])


def _square(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {H.shape}")
    return H


def split_diag(H) -> tuple[np.ndarray, np.ndarray]:
    H = _square(H)
    D = np.diag(np.diag(H))
    return D, H - D


def shrink(H, rho: float) -> np.ndarray:
    """Keep the diagonal, scale the off-diagonal part by ``rho``."""
    H = _square(H)
    out = H * rho
    np.fill_diagonal(out, np.diag(H))
    return out


def discrepancy(H_a, H_b, rho: float) -> float:
    """``||shrink(A) - shrink(B)||_1 / ||shrink(A)||_1`` with entrywise L1 norms."""
    H_a, H_b = _square(H_a), _square(H_b)
    if H_a.shape != H_b.shape:
        raise ValidationError(f"shape mismatch {H_a.shape} vs {H_b.shape}")
    D_a, O_a = split_diag(H_a)
    D_b, O_b = split_diag(H_b)
    denom = np.abs(D_a + rho * O_a).sum()
    if denom == 0:
        raise NumericalError("reference Hessian is zero after shrinkage")
    return float(np.abs((D_a - D_b) + rho * (O_a - O_b)).sum() / denom)


def discrepancy_curve(H_a, H_b, rhos: Sequence[float]) -> np.ndarray:
    return np.array([discrepancy(H_a, H_b, r) for r in rhos])


@dataclass(frozen=True)
class ShrinkageSweep:
    rhos: np.ndarray
    R: np.ndarray  # (trials, len(rhos))
    set_ids: list = field(default_factory=list)

    @property
    def mean(self) -> np.ndarray:
        return self.R.mean(axis=0)

    def percentile(self, p: float) -> np.ndarray:
        return np.percentile(self.R, p, axis=0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "R_mean", "R_p10", "R_p90"])
        for row in zip(self.rhos, self.mean, self.percentile(10), self.percentile(90)):
            w.writerow([f"{v:.10g}" for v in row])
        return buf.getvalue()


def shrinkage_sweep(
    samples: np.ndarray,
    set_size: int,
    trials: int,
    rng,
    rhos: Sequence[float] | None = None,
) -> ShrinkageSweep:
    """R(rho) over random pairs of disjoint calibration sets.

    Args:
        samples: ``(S, d, L)`` stack of per-sample feature matrices.
        set_size: samples per calibration set; ``2 * set_size <= S``.
        trials: number of random (A, B) pairs.
        rng: anything with a ``permutation(n)`` method.
        rhos: shrinkage grid, defaults to :func:`default_rho_grid`.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or 2 * set_size > samples.shape[0]:
        raise ValidationError("need a (S, d, L) sample stack with S >= 2 * set_size")
    rhos = default_rho_grid() if rhos is None else np.asarray(rhos, dtype=np.float64)
    per_sample = np.einsum("sil,sjl->sij", samples, samples)
    R = np.empty((trials, len(rhos)))
    ids = []
    for t in range(trials):
        perm = rng.permutation(samples.shape[0])
        a, b = perm[:set_size], perm[set_size : 2 * set_size]
        R[t] = discrepancy_curve(per_sample[a].sum(axis=0), per_sample[b].sum(axis=0), rhos)
        ids.append((a.tolist(), b.tolist()))
    return ShrinkageSweep(rhos, R, ids)


@dataclass(frozen=True)
class SnrReport:
    """Entrywise |mean| / std of per-sample Hessians.

    Entries whose std is zero carry ``inf`` and are left out of the
    histograms.
    """

    diag: np.ndarray
    offdiag: np.ndarray
    diag_hist: tuple[np.ndarray, np.ndarray]
    offdiag_hist: tuple[np.ndarray, np.ndarray]

    def median_diag(self) -> float:
        return float(np.median(self.diag))

    def median_offdiag(self) -> float:
        return float(np.median(self.offdiag))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["part", "bin_lo", "bin_hi", "count"])
        for part, (counts, edges) in (("diag", self.diag_hist), ("offdiag", self.offdiag_hist)):
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([part, f"{lo:.10g}", f"{hi:.10g}", int(c)])
        return buf.getvalue()


def _hist(values: np.ndarray, bins) -> tuple[np.ndarray, np.ndarray]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(1)
    return np.histogram(finite, bins=bins)


def snr(per_sample_hessians, bins: int | Sequence[float] = 50) -> SnrReport:
    """SNR of every entry across samples, split into diagonal and upper triangle."""
    Hs = np.asarray(per_sample_hessians, dtype=np.float64)
    if Hs.ndim != 3 or Hs.shape[1] != Hs.shape[2]:
        raise ValidationError(f"expected a (S, d, d) stack, got shape {Hs.shape}")
    if Hs.shape[0] < 2:
        raise ValidationError("SNR needs at least two samples")
    mean = Hs.mean(axis=0)
    std = Hs.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(std > 0, np.abs(mean) / np.where(std > 0, std, 1.0), np.inf)
    d = Hs.shape[1]
    iu = np.triu_indices(d, k=1)
    diag, off = np.diag(ratio).copy(), ratio[iu]
    return SnrReport(diag, off, _hist(diag, bins), _hist(off, bins))


def per_sample_hessians(samples) -> np.ndarray:
    """``X_s X_s^T`` for each ``(d, L)`` sample in a ``(S, d, L)`` stack."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[:, :, None]
    return np.einsum("sil,sjl->sij", samples, samples)


@dataclass(frozen=True)
class StabilityCurve:
    sizes: np.ndarray
    diag_rel_l1: np.ndarray
    offdiag_rel_l1: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "diag_rel_l1", "offdiag_rel_l1"])
        for n, a, b in zip(self.sizes, self.diag_rel_l1, self.offdiag_rel_l1):
            w.writerow([int(n), f"{a:.10g}", f"{b:.10g}"])
        return buf.getvalue()


def stability_curve(
    activations,
    sizes: Sequence[int],
    reference_n: int,
    sample_width: int = 1,
    normalize: bool = True,
) -> StabilityCurve:
    """Relative L1 error of Hessians from the first ``n`` samples vs a reference.

    Args:
        activations: ``(d, N)`` stream; a sample is ``sample_width``
            consecutive columns.
        sizes: sample counts to evaluate; each must be ``<= reference_n``.
        reference_n: sample count of the reference estimate.
        sample_width: columns per sample.
        normalize: divide each estimate by its sample count before comparing.
    """
    X = np.asarray(activations, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size and sizes.max() > reference_n:
        raise ValidationError("reference_n must be at least max(sizes)")
    if reference_n * sample_width > X.shape[1]:
        raise ValidationError(
            f"stream has {X.shape[1] // sample_width} samples, reference needs {reference_n}"
        )

    def estimate(n):
        Xn = X[:, : n * sample_width]
        H = Xn @ Xn.T
        return H / n if normalize else H

    ref = estimate(reference_n)
    D_ref, O_ref = split_diag(ref)
    diag_err, off_err = [], []
    for n in sizes:
        D, O = split_diag(estimate(int(n)))
        diag_err.append(np.abs(D - D_ref).sum() / np.abs(D_ref).sum())
        off_err.append(np.abs(O - O_ref).sum() / np.abs(O_ref).sum())
    return StabilityCurve(sizes, np.array(diag_err), np.array(off_err))


def difference_std_ratio(estimates_a, estimates_b) -> np.ndarray:
    """``Std(A - B) / Std(A)`` per entry, over independent trials along axis 0.

    For independent, identically distributed estimates this is close to
    ``sqrt(2)``.
    """
    a = np.asarray(estimates_a, dtype=np.float64)
    b = np.asarray(estimates_b, dtype=np.float64)
    if a.shape != b.shape or a.shape[0] < 2:
        raise ValidationError("need matching estimate stacks with at least two trials")
    return (a - b).std(axis=0, ddof=1) / a.std(axis=0, ddof=1)
