"""Desk-scale experiments built from the library pieces.

These back the ``analyze`` CLI subcommands and the acceptance suite.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from . import analysis
from .pipeline import RunConfig, SyntheticSource, run_on_data
from .synthetic import SyntheticData, activations, gen_synthetic
from .types import QuantSpec

STABILITY_SIZES = tuple(2**k for k in range(3, 12))  # 8 .. 2048
CALIB_SIZES = tuple(2**k for k in range(1, 10))  # 2 .. 512


def stability_medians(
    d: int = 64,
    reference_n: int = 4096,
    sizes: Sequence[int] = STABILITY_SIZES,
    seeds: Sequence[int] = range(20),
    kind: str = "gaussian-iid",
) -> analysis.StabilityCurve:
    """Median over seeds of the error-vs-sample-size curve (one column per sample)."""
    curves = [
        analysis.stability_curve(activations(kind, d, reference_n, seed), sizes, reference_n)
        for seed in seeds
    ]
    return analysis.StabilityCurve(
        np.asarray(sizes),
        np.median([c.diag_rel_l1 for c in curves], axis=0),
        np.median([c.offdiag_rel_l1 for c in curves], axis=0),
    )


def sample_stack(kind: str, d: int, n_samples: int, seq_len: int, seed: int) -> np.ndarray:
    """``(n_samples, d, seq_len)`` per-sample feature matrices."""
    X = activations(kind, d, n_samples * seq_len, seed)
    return X.reshape(d, n_samples, seq_len).transpose(1, 0, 2)


def snr_report(kind: str = "gaussian-iid", d: int = 64, n_samples: int = 128, seq_len: int = 1, seed: int = 0):
    return analysis.snr(analysis.per_sample_hessians(sample_stack(kind, d, n_samples, seq_len, seed)))


def offdiag_difference_ratio(
    trials: int = 10_000,
    set_size: int = 128,
    d: int = 8,
    seed: int = 0,
    kind: str = "gaussian-iid",
) -> np.ndarray:
    """Monte Carlo ``Std(O_A - O_B) / Std(O_A)`` for every upper-triangle entry.

    Each trial draws two fresh, independent calibration sets of ``set_size``
    single-column samples and forms their normalized Hessians.
    """
    X = activations(kind, d, trials * 2 * set_size, seed).reshape(d, trials, 2, set_size)
    H = np.einsum("itsk,jtsk->tsij", X, X) / set_size
    iu = np.triu_indices(d, k=1)
    return analysis.difference_std_ratio(H[:, 0][:, iu[0], iu[1]], H[:, 1][:, iu[0], iu[1]])


def toy_spec() -> QuantSpec:
    return QuantSpec(bits=2, group_size=32, iters=9, ridge=1e-2, alpha=0.5)


def toy_comparison(seed: int, spec: QuantSpec | None = None, methods=("rtn", "dashq"), source=None):
    """End-to-end held-out output MSE per method on the 64-64-64-32 relu stack."""
    spec = spec or toy_spec()
    source = source or SyntheticSource(kind="heavy-tailed-cols", dims=(64, 64, 64, 32))
    data = gen_synthetic(source.kind, source.dims, source.n, seed, source.seq_len, source.heldout_n)
    return {m: run_on_data(RunConfig(method=m, spec=spec, seed=seed), data)[0] for m in methods}


def calibration_sweep(
    seed: int,
    sizes: Sequence[int] = CALIB_SIZES,
    methods=("dashq", "gptq"),
    spec: QuantSpec | None = None,
    source: SyntheticSource | None = None,
) -> dict[str, np.ndarray]:
    """First-layer held-out loss for each calibration size.

    Calibration sets are nested prefixes of one stream of ``max(sizes)``
    samples; the held-out set is fixed.
    """
    spec = spec or toy_spec()
    source = source or SyntheticSource(kind="heavy-tailed-cols", dims=(64, 64, 64, 32))
    full = gen_synthetic(source.kind, source.dims, max(sizes), seed, source.seq_len, source.heldout_n)
    L = source.seq_len
    out = {}
    for m in methods:
        cfg = RunConfig(method=m, spec=spec, seed=seed)
        losses = []
        for n in sizes:
            data = SyntheticData(full.stack, full.calibration[:, : n * L], full.heldout, L)
            losses.append(run_on_data(replace(cfg), data)[0].heldout_layer_loss[0])
        out[m] = np.array(losses)
    return out
