"""Layer-by-layer calibrate / quantize / propagate loop and method comparison."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .baselines import GptqConfig, quantize_gptq, quantize_rtn
from .calibration import (
    DiagImportance,
    HessianEstimate,
    LayerStack,
    accumulate_diag,
    accumulate_full,
    apply_layer,
    forward,
)
from .container import TensorBundle, bundle_read
from .errors import ValidationError
from .solver import quantize_layer_dashq
from .synthetic import KINDS, SyntheticData, data_from_bundle, gen_synthetic, stack_to_entries
from .types import QuantizedLayer, QuantSpec, dequantize_layer_f64

METHODS = ("rtn", "gptq", "dashq")


@dataclass(frozen=True)
class SyntheticSource:
    kind: str = "heavy-tailed-cols"
    dims: tuple[int, ...] = (64, 64, 64, 32)
    n: int = 128
    seq_len: int = 32
    heldout_n: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown synthetic kind {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    method: str = "dashq"
    spec: QuantSpec = field(default_factory=QuantSpec)
    gptq: GptqConfig = field(default_factory=GptqConfig)
    calibration: str | SyntheticSource = field(default_factory=SyntheticSource)
    seed: int = 0
    workers: int = 1
    out: str | None = None
    csv: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")

    def inputs_key(self):
        """Everything that determines the model and calibration inputs."""
        return (self.calibration, self.seed)


@dataclass
class LayerReport:
    layer_loss: float
    weighted_loss: float
    heldout_layer_loss: float
    seconds: float
    delta_s_median: np.ndarray | None = None
    clamped_groups: int = 0


@dataclass
class EvalReport:
    method: str
    layers: list[LayerReport]
    output_mse: float
    seconds: float

    @property
    def layer_loss(self) -> list[float]:
        return [r.layer_loss for r in self.layers]

    @property
    def weighted_loss(self) -> list[float]:
        return [r.weighted_loss for r in self.layers]

    @property
    def heldout_layer_loss(self) -> list[float]:
        return [r.heldout_layer_loss for r in self.layers]

    def to_bundle_entries(self) -> dict[str, np.ndarray]:
        out = {
            "report/layer_loss": np.array(self.layer_loss),
            "report/weighted_loss": np.array(self.weighted_loss),
            "report/heldout_layer_loss": np.array(self.heldout_layer_loss),
            "report/output_mse": np.array([self.output_mse]),
        }
        for l, r in enumerate(self.layers):
            if r.delta_s_median is not None:
                out[f"report/delta_s_median/{l}"] = np.asarray(r.delta_s_median, dtype=np.float64)
        return out


def load_inputs(cfg: RunConfig) -> SyntheticData:
    if isinstance(cfg.calibration, SyntheticSource):
        src = cfg.calibration
        return gen_synthetic(src.kind, src.dims, src.n, cfg.seed, src.seq_len, src.heldout_n)
    return data_from_bundle(bundle_read(cfg.calibration))


def frobenius_sq(A: np.ndarray) -> float:
    return float(np.sum(A * A))


def weighted_proxy(W: np.ndarray, W_hat: np.ndarray, h: np.ndarray) -> float:
    """``sum_j h_j * ||W[:, j] - W_hat[:, j]||**2``."""
    diff = np.asarray(W, dtype=np.float64) - W_hat
    return float(np.sum(h * np.sum(diff * diff, axis=0)))


def quantize_one(method: str, W, X: np.ndarray, cfg: RunConfig):
    """Quantize one layer from its input activations; returns (layer, h, trace)."""
    D = accumulate_diag(DiagImportance.zeros(X.shape[0]), X)
    trace = None
    if method == "rtn":
        q = quantize_rtn(W, cfg.spec)
    elif method == "gptq":
        H = accumulate_full(HessianEstimate.zeros(X.shape[0]), X)
        q = quantize_gptq(W, H, replace(cfg.gptq, spec=cfg.spec))
    else:
        q, trace = quantize_layer_dashq(W, D, cfg.spec, workers=cfg.workers)
    return q, D.h, trace


def run_on_data(cfg: RunConfig, data: SyntheticData) -> tuple[EvalReport, list[QuantizedLayer]]:
    stack = data.stack
    X = np.asarray(data.calibration, dtype=np.float64)
    Xh = np.asarray(data.heldout, dtype=np.float64)
    qlayers: list[QuantizedLayer] = []
    reports: list[LayerReport] = []
    t_start = time.perf_counter()
    for layer in stack.layers:
        t0 = time.perf_counter()
        q, h, trace = quantize_one(cfg.method, layer.W, X, cfg)
        seconds = time.perf_counter() - t0
        W = np.asarray(layer.W, dtype=np.float64)
        W_hat = dequantize_layer_f64(q)
        rep = LayerReport(
            layer_loss=frobenius_sq(W @ X - W_hat @ X),
            weighted_loss=weighted_proxy(W, W_hat, h),
            heldout_layer_loss=frobenius_sq(W @ Xh - W_hat @ Xh),
            seconds=seconds,
        )
        if trace is not None and trace.delta_s.shape[1]:
            rep.delta_s_median = np.median(trace.delta_s, axis=0)
            rep.clamped_groups = int(trace.clamped.sum())
        reports.append(rep)
        qlayers.append(q)
        X = apply_layer(W_hat, layer.activation, X)
        Xh = apply_layer(W_hat, layer.activation, Xh)
    ref = forward(stack, data.heldout)
    mse = float(np.mean((ref - Xh) ** 2)) if Xh.size else 0.0
    return EvalReport(cfg.method, reports, mse, time.perf_counter() - t_start), qlayers


def evaluate_model(data: SyntheticData, qlayers: Sequence[QuantizedLayer], method: str = "") -> EvalReport:
    """Recompute every report number from stored quantized layers and their inputs."""
    if len(qlayers) != len(data.stack):
        raise ValidationError(f"model has {len(qlayers)} layers, inputs have {len(data.stack)}")
    X = np.asarray(data.calibration, dtype=np.float64)
    Xh = np.asarray(data.heldout, dtype=np.float64)
    reps = []
    for layer, q in zip(data.stack.layers, qlayers):
        W = np.asarray(layer.W, dtype=np.float64)
        W_hat = dequantize_layer_f64(q)
        h = np.einsum("ij,ij->i", X, X)
        reps.append(
            LayerReport(
                frobenius_sq(W @ X - W_hat @ X),
                weighted_proxy(W, W_hat, h),
                frobenius_sq(W @ Xh - W_hat @ Xh),
                0.0,
            )
        )
        X = apply_layer(W_hat, layer.activation, X)
        Xh = apply_layer(W_hat, layer.activation, Xh)
    ref = forward(data.stack, data.heldout)
    mse = float(np.mean((ref - Xh) ** 2)) if Xh.size else 0.0
    return EvalReport(method, reps, mse, 0.0)


def model_bundle(stack: LayerStack, qlayers: Sequence[QuantizedLayer], report: EvalReport | None = None) -> TensorBundle:
    entries: dict[str, np.ndarray] = {}
    for l, (layer, q) in enumerate(zip(stack.layers, qlayers)):
        entries.update(q.to_bundle_entries(f"layer/{l}"))
        entries[f"activation/{l}"] = stack_to_entries(LayerStack((layer,)))["activation/0"]
    if report is not None:
        entries.update(report.to_bundle_entries())
    return TensorBundle(entries)


def load_quantized(bundle: TensorBundle) -> list[QuantizedLayer]:
    out = []
    l = 0
    while f"layer/{l}/shape" in bundle:
        out.append(QuantizedLayer.from_bundle(bundle, f"layer/{l}"))
        l += 1
    return out


def run_pipeline(cfg: RunConfig, data: SyntheticData | None = None) -> tuple[EvalReport, TensorBundle]:
    """Calibrate, quantize and propagate layer by layer, then evaluate.

    Returns the report and the model bundle (quantized layers + report
    tensors). Timing is kept out of the bundle so fixed-seed runs serialize
    identically.
    """
    data = load_inputs(cfg) if data is None else data
    report, qlayers = run_on_data(cfg, data)
    return report, model_bundle(data.stack, qlayers, report)


@dataclass
class Comparison:
    reports: list[EvalReport]

    def rows(self) -> list[dict]:
        out = []
        for r in self.reports:
            ds = [x.delta_s_median for x in r.layers if x.delta_s_median is not None]
            out.append(
                {
                    "method": r.method,
                    "layer_loss": sum(r.layer_loss),
                    "weighted_loss": sum(r.weighted_loss),
                    "heldout_layer_loss": sum(r.heldout_layer_loss),
                    "output_mse": r.output_mse,
                    "seconds": r.seconds,
                    "delta_s_first": float(np.median([d[0] for d in ds])) if ds else float("nan"),
                    "delta_s_last": float(np.median([d[-1] for d in ds])) if ds else float("nan"),
                }
            )
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_table(self) -> str:
        rows = self.rows()
        if not rows:
            return ""
        cols = list(rows[0])
        cells = [[r[c] if isinstance(r[c], str) else f"{r[c]:.6g}" for c in cols] for r in rows]
        widths = [max(len(c), *(len(x[i]) for x in cells)) for i, c in enumerate(cols)]
        line = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
        body = ["  ".join(x.ljust(w) for x, w in zip(row, widths)) for row in cells]
        return "\n".join([line, "-" * len(line), *body])


def compare(cfgs: Sequence[RunConfig]) -> Comparison:
    """Run several methods on the same inputs; one report per config, in order."""
    if not cfgs:
        raise ValidationError("nothing to compare")
    keys = {c.inputs_key() for c in cfgs}
    if len(keys) != 1:
        raise ValidationError("configs must share the same model and calibration inputs")
    data = load_inputs(cfgs[0])
    return Comparison([run_on_data(c, data)[0] for c in cfgs])
