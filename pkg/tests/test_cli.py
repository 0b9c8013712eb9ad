import numpy as np
import pytest

from dashq.cli import main
from dashq.config import parse_config_text, resolve, run_config
from dashq.container import bundle_read
from dashq.errors import ValidationError

SMALL = ["--dims", "16,12,8", "--n", "4", "--seq-len", "4", "--heldout-n", "2", "--group-size", "8"]


def test_config_precedence():
    file_values = parse_config_text("bits = 3  # comment\n\nmethod=rtn\n")
    v = resolve(file_values, {"bits": 5, "method": None})
    assert v["bits"] == 5 and v["method"] == "rtn" and v["iters"] == 9
    cfg = run_config(v)
    assert cfg.spec.bits == 5 and cfg.method == "rtn"


def test_config_errors():
    with pytest.raises(ValidationError):
        parse_config_text("nonsense")
    with pytest.raises(ValidationError):
        parse_config_text("colour=blue")
    with pytest.raises(ValidationError):
        resolve({"bits": "four"}, {})


def test_gen_quantize_dequantize_eval(tmp_path, capsys):
    data = tmp_path / "data.dqb"
    model = tmp_path / "model.dqb"
    assert main(["gen", *SMALL, "--out", str(data)]) == 0
    assert main(["quantize", "--in", str(data), "--bits", "3", "--group-size", "8", "--out", str(model)]) == 0
    assert main(["dequantize", "--in", str(model), "--out", str(tmp_path / "w.dqb")]) == 0
    w = bundle_read(tmp_path / "w.dqb")
    assert w["weights/0"].shape == (12, 16) and w["weights/0"].dtype == np.float32
    csv = tmp_path / "eval.csv"
    assert main(["eval", "--in", str(data), "--model", str(model), "--csv", str(csv)]) == 0
    assert csv.read_text().startswith("layer,layer_loss")


def test_calibrate_and_compare(tmp_path, capsys):
    out = tmp_path / "cal.dqb"
    assert main(["calibrate", *SMALL, "--method", "gptq", "--out", str(out)]) == 0
    b = bundle_read(out)
    assert b["hessian/0"].shape == (16, 16)
    np.testing.assert_allclose(np.diag(b["hessian/0"]), b["diag/0"])
    assert main(["compare", *SMALL, "--methods", "rtn,dashq", "--csv", str(tmp_path / "c.csv")]) == 0
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("what", ["snr", "shrinkage", "stability"])
def test_analyze(what, tmp_path, capsys):
    args = ["analyze", what, "--d", "8", "--samples", "16", "--set-size", "8", "--trials", "3", "--reference-n", "64"]
    assert main([*args, "--csv", str(tmp_path / "a.csv")]) == 0
    assert (tmp_path / "a.csv").read_text()


def test_config_file_overridden_by_flag(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("method = rtn\nbits = 9\n")
    assert main(["quantize", *SMALL, "--config", str(cfg)]) == 2
    assert main(["quantize", *SMALL, "--config", str(cfg), "--bits", "3"]) == 0
    assert "method=rtn" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert main(["quantize", *SMALL, "--bits", "9"]) == 2
    assert main(["dequantize", "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.dqb"
    bad.write_bytes(b"\x01")
    assert main(["dequantize", "--in", str(bad), "--out", str(tmp_path / "y")]) == 2
    # one single-column sample gives a rank-one Hessian; undamped it is singular
    rank_one = ["--n", "1", "--seq-len", "1", "--method", "gptq", "--damp-ratio", "0"]
    assert main(["quantize", *SMALL, *rank_one]) == 3
