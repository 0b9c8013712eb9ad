"""Command line interface.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, experiments
from .calibration import DiagImportance, HessianEstimate, accumulate_diag, accumulate_full, apply_layer
from .config import load_config_file, resolve, run_config
from .container import TensorBundle, bundle_read, bundle_write
from .errors import DashQError, ValidationError
from .pipeline import METHODS, EvalReport, compare, evaluate_model, load_inputs, load_quantized, run_pipeline
from .synthetic import KINDS, Rng, data_to_bundle, gen_synthetic
from .types import dequantize_layer

log = logging.getLogger("dashq")


def _common(p: argparse.ArgumentParser) -> None:
    # defaults are None so that config-file values survive unless overridden
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--bits", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--fp16-params", action="store_true", default=None)
    p.add_argument("--block-size", type=int)
    p.add_argument("--damp-ratio", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--dims", help="comma-separated layer widths, e.g. 64,64,64,32")
    p.add_argument("--n", type=int, help="calibration samples")
    p.add_argument("--seq-len", type=int, help="columns per calibration sample")
    p.add_argument("--heldout-n", type=int)
    p.add_argument("--in", dest="in_", help="input bundle")
    p.add_argument("--out", help="output bundle")
    p.add_argument("--csv", help="write a CSV report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dashq", description="Diagonal-Hessian weight quantization toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("gen", "generate a synthetic model + calibration bundle"),
        ("calibrate", "accumulate per-layer importance / Hessians"),
        ("quantize", "quantize a model layer by layer"),
        ("dequantize", "expand a quantized model bundle to f32 weights"),
        ("eval", "evaluate a quantized model bundle against its inputs"),
        ("compare", "run several methods on the same inputs"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "eval":
            p.add_argument("--model", required=True, help="quantized model bundle")
        if name == "compare":
            p.add_argument("--methods", default="rtn,gptq,dashq")

    pa = sub.add_parser("analyze", help="Hessian stability diagnostics")
    pa.add_argument("what", choices=["snr", "shrinkage", "stability"])
    _common(pa)
    pa.add_argument("--d", type=int, default=64, help="feature dimension")
    pa.add_argument("--samples", type=int, default=128)
    pa.add_argument("--set-size", type=int, default=128)
    pa.add_argument("--trials", type=int, default=100)
    pa.add_argument("--reference-n", type=int, default=4096)
    return parser


def _values(args) -> dict:
    cli = {
        "method": args.method,
        "bits": args.bits,
        "group-size": args.group_size,
        "iters": args.iters,
        "alpha": args.alpha,
        "lambda": args.lambda_,
        "seed": args.seed,
        "fp16-params": args.fp16_params,
        "block-size": args.block_size,
        "damp-ratio": args.damp_ratio,
        "workers": args.workers,
        "kind": args.kind,
        "dims": args.dims,
        "n": args.n,
        "seq-len": args.seq_len,
        "heldout-n": args.heldout_n,
        "in": args.in_,
        "out": args.out,
        "csv": args.csv,
    }
    file_values = load_config_file(args.config) if args.config else {}
    return resolve(file_values, cli)


def _require(value, flag):
    if not value:
        raise ValidationError(f"{flag} is required for this command")
    return value


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8")


def _report_csv(report: EvalReport) -> str:
    lines = ["layer,layer_loss,weighted_loss,heldout_layer_loss,seconds"]
    for l, r in enumerate(report.layers):
        lines.append(f"{l},{r.layer_loss:.10g},{r.weighted_loss:.10g},{r.heldout_layer_loss:.10g},{r.seconds:.6f}")
    lines.append(f"output_mse,{report.output_mse:.10g},,,{report.seconds:.6f}")
    return "\n".join(lines) + "\n"


def _print_report(report: EvalReport) -> None:
    print(f"method={report.method} output_mse={report.output_mse:.6g} seconds={report.seconds:.3f}")
    for l, r in enumerate(report.layers):
        print(
            f"  layer {l}: loss={r.layer_loss:.6g} weighted={r.weighted_loss:.6g} "
            f"heldout={r.heldout_layer_loss:.6g} ({r.seconds:.3f}s)"
        )


def cmd_gen(args, v):
    data = gen_synthetic(v["kind"], v["dims"], v["n"], v["seed"], v["seq-len"], v["heldout-n"])
    n = bundle_write(data_to_bundle(data), _require(v["out"], "--out"), strict=True)
    print(f"wrote {v['out']} ({n} bytes)")


def cmd_calibrate(args, v):
    cfg = run_config(v)
    data = load_inputs(cfg)
    X = np.asarray(data.calibration, dtype=np.float64)
    entries = {}
    for l, layer in enumerate(data.stack.layers):
        D = accumulate_diag(DiagImportance.zeros(X.shape[0]), X)
        entries[f"diag/{l}"] = D.h
        entries[f"sample_count/{l}"] = np.array([D.sample_count], dtype=np.int64)
        if cfg.method == "gptq":
            entries[f"hessian/{l}"] = accumulate_full(HessianEstimate.zeros(X.shape[0]), X).H
        X = apply_layer(layer.W, layer.activation, X)
    bundle_write(TensorBundle(entries), _require(v["out"], "--out"))
    print(f"wrote {v['out']} ({len(data.stack)} layers)")


def cmd_quantize(args, v):
    cfg = run_config(v)
    report, bundle = run_pipeline(cfg)
    if v["out"]:
        bundle_write(bundle, v["out"])
    if v["csv"]:
        _write_text(v["csv"], _report_csv(report))
    _print_report(report)


def cmd_dequantize(args, v):
    layers = load_quantized(bundle_read(_require(v["in"], "--in")))
    if not layers:
        raise ValidationError("input bundle holds no quantized layers (layer/<l>/...)")
    entries = {f"weights/{l}": dequantize_layer(q) for l, q in enumerate(layers)}
    bundle_write(TensorBundle(entries), _require(v["out"], "--out"), strict=True)
    print(f"wrote {v['out']} ({len(layers)} layers)")


def cmd_eval(args, v):
    cfg = run_config(v)
    data = load_inputs(cfg)
    report = evaluate_model(data, load_quantized(bundle_read(args.model)), cfg.method)
    if v["csv"]:
        _write_text(v["csv"], _report_csv(report))
    _print_report(report)


def cmd_compare(args, v):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cmp = compare([run_config(v, method=m) for m in methods])
    print(cmp.to_table())
    if v["csv"]:
        _write_text(v["csv"], cmp.to_csv())


def cmd_analyze(args, v):
    seed = v["seed"]
    kind = v["kind"] if args.kind else "gaussian-iid"
    seq_len = v["seq-len"] if args.seq_len else 1
    if args.what == "snr":
        rep = experiments.snr_report(kind, args.d, args.samples, seq_len, seed)
        print(f"median SNR diag={rep.median_diag():.4g} offdiag={rep.median_offdiag():.4g}")
        text = rep.to_csv()
    elif args.what == "shrinkage":
        stack = experiments.sample_stack(kind, args.d, 2 * args.set_size * 4, seq_len, seed)
        sweep = analysis.shrinkage_sweep(stack, args.set_size, args.trials, Rng(seed, 6))
        text = sweep.to_csv()
        print(text, end="")
    else:
        sizes = [n for n in experiments.STABILITY_SIZES if n <= args.reference_n]
        curve = analysis.stability_curve(
            experiments.activations(kind, args.d, args.reference_n, seed), sizes, args.reference_n
        )
        text = curve.to_csv()
        print(text, end="")
    if v["csv"]:
        _write_text(v["csv"], text)


COMMANDS = {
    "gen": cmd_gen,
    "calibrate": cmd_calibrate,
    "quantize": cmd_quantize,
    "dequantize": cmd_dequantize,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args, _values(args))
    except DashQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
