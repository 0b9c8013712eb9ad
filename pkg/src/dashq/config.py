"""Flat ``key = value`` run configuration.

Keys use the CLI flag spelling without the leading dashes (``group-size``,
``lambda`` ...); underscores are accepted as well. ``#`` starts a comment.
Values given on the command line override the file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from .baselines import GptqConfig
from .errors import ValidationError
from .pipeline import RunConfig, SyntheticSource
from .types import QuantSpec

# key -> (parser, default)
_BOOL = lambda v: v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
_DIMS = lambda v: tuple(int(x) for x in (v.split(",") if isinstance(v, str) else v))  # noqa: E731

KEYS: dict[str, tuple[Any, Any]] = {
    "method": (str, "dashq"),
    "bits": (int, 4),
    "group-size": (int, 128),
    "iters": (int, 9),
    "alpha": (float, 0.5),
    "lambda": (float, 1e-2),
    "s-floor": (float, 1e-8),
    "fp16-params": (_BOOL, False),
    "block-size": (int, 128),
    "damp-ratio": (float, 0.01),
    "seed": (int, 0),
    "workers": (int, 1),
    "kind": (str, "heavy-tailed-cols"),
    "dims": (_DIMS, (64, 64, 64, 32)),
    "n": (int, 128),
    "seq-len": (int, 32),
    "heldout-n": (int, 64),
    "in": (str, None),
    "out": (str, None),
    "csv": (str, None),
}


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("_", "-")


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = normalize_key(key)
        if key not in KEYS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def resolve(file_values: Mapping[str, Any], cli_values: Mapping[str, Any]) -> dict[str, Any]:
    """Defaults, then file, then non-None CLI values; all parsed to their types."""
    merged = {k: default for k, (_, default) in KEYS.items()}
    merged.update(file_values)
    merged.update({normalize_key(k): v for k, v in cli_values.items() if v is not None})
    out = {}
    for k, v in merged.items():
        parse = KEYS[k][0] if k in KEYS else (lambda x: x)
        try:
            out[k] = v if v is None else parse(v)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {k}: {v!r}") from exc
    return out


def run_config(values: Mapping[str, Any], method: str | None = None) -> RunConfig:
    spec = QuantSpec(
        bits=values["bits"],
        group_size=values["group-size"],
        iters=values["iters"],
        ridge=values["lambda"],
        alpha=values["alpha"],
        s_floor=values["s-floor"],
        fp16_params=values["fp16-params"],
    )
    gptq = GptqConfig(block_size=values["block-size"], damp_ratio=values["damp-ratio"], spec=spec)
    if values.get("in"):
        calibration: str | SyntheticSource = values["in"]
    else:
        calibration = SyntheticSource(
            kind=values["kind"],
            dims=values["dims"],
            n=values["n"],
            seq_len=values["seq-len"],
            heldout_n=values["heldout-n"],
        )
    return RunConfig(
        method=method or values["method"],
        spec=spec,
        gptq=gptq,
        calibration=calibration,
        seed=values["seed"],
        workers=values["workers"],
        out=values.get("out"),
        csv=values.get("csv"),
    )
