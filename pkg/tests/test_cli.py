import json

import numpy as np
import pytest

from arcquant.cli import format_table, main
from arcquant.tensorio import gen_synthetic, write_tensor


@pytest.fixture
def layer(tmp_path):
    a, w = tmp_path / "a.arct", tmp_path / "w.arct"
    write_tensor(a, gen_synthetic(256, 32, 1, 8.0, seed=1))
    write_tensor(w, np.random.default_rng(1).standard_normal((16, 256)))
    return a, w


def run(capsys, *argv):
    code = main([str(v) for v in argv])
    return code, capsys.readouterr().out


def test_formats_rows():
    rows = {(r["format"], r["element_type"]): r for r in format_table()}
    nv = rows[("NVFP4", "FP4 (E2M1)")]
    assert (nv["block_size"], nv["scale_type"], nv["tensor_scale"]) == (16, "E4M3", "FP32")
    mx = rows[("MXFP4", "FP4 (E2M1)")]
    assert (mx["block_size"], mx["scale_type"], mx["tensor_scale"]) == (32, "E8M0", "N/A")
    assert rows[("MXFP6", "FP6 (E2M3)")]["max_normal"] == 7.5
    assert len(format_table(include_int4=True)) == 7


def test_formats_text(capsys):
    code, out = run(capsys, "formats")
    assert code == 0
    assert "± 7.5" in out and "± 57344" in out


def test_calibrate_example(capsys, tmp_path):
    x = np.array([[10.0, 2.0, 1.4, 0.5], [-3.0, 0.1, 0.0, 0.2]])
    write_tensor(tmp_path / "x.arct", x)
    code, out = run(capsys, "calibrate", tmp_path / "x.arct")
    doc = json.loads(out)
    assert code == 0 and (doc["m"], doc["tau"], doc["s_raw"]) == (10.0, 1.25, 3)
    write_tensor(tmp_path / "z.arct", np.zeros((2, 16)))
    doc = json.loads(run(capsys, "calibrate", tmp_path / "z.arct")[1])
    assert (doc["m"], doc["s_raw"], doc["s"]) == (0.0, 0, 0)
    write_tensor(tmp_path / "u.arct", np.ones((1, 8)))
    assert json.loads(run(capsys, "calibrate", tmp_path / "u.arct")[1])["s_raw"] == 8


def test_calibrate_shape_mismatch(capsys, tmp_path):
    write_tensor(tmp_path / "a.arct", np.ones((2, 8)))
    write_tensor(tmp_path / "b.arct", np.ones((2, 9)))
    assert run(capsys, "calibrate", tmp_path / "a.arct", tmp_path / "b.arct")[0] == 2


def test_simulate_json(capsys, layer):
    code, out = run(capsys, "simulate", *layer, "--emit", "json")
    doc = json.loads(out)
    assert code == 0
    assert doc["meta"]["seed"] == 0 and doc["meta"]["format"] == "nvfp4"
    reps = doc["reports"]
    assert set(reps) == {"rtn", "smooth", "hadamard", "arcquant"}
    assert min(reps, key=lambda k: reps[k]["mse"]) == "arcquant"
    assert reps["arcquant"]["overhead"] == doc["meta"]["s"] / 256
    assert reps["arcquant"]["violations"] == 0


def test_simulate_deterministic(capsys, layer):
    a = run(capsys, "simulate", *layer, "--emit", "json", "--seed", "3")[1]
    b = run(capsys, "simulate", *layer, "--emit", "json", "--seed", "3")[1]
    assert a == b and json.loads(a)["meta"]["seed"] == 3


def test_simulate_s_zero(capsys, layer):
    doc = json.loads(run(capsys, "simulate", *layer, "--emit", "json", "--s-override", "0")[1])
    assert doc["meta"]["overhead"] == 0
    assert doc["reports"]["arcquant"]["checked"] == 0


def test_compare_csv_and_text(capsys, layer, tmp_path):
    out = tmp_path / "r.csv"
    assert run(capsys, "compare", *layer, "--emit", "csv", "--out", out, "--layout", "interleaved")[0] == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("method,") and len(lines) == 5
    text = run(capsys, "compare", *layer, "--alpha", "0.8")[1]
    assert "# seed: 0" in text and "# format: nvfp4" in text and "# alpha: 0.8" in text


def test_quantize_and_profile(capsys, layer, tmp_path):
    prof = tmp_path / "p.json"
    assert run(capsys, "calibrate", layer[0], "--out", prof)[0] == 0
    q = tmp_path / "q.arct"
    code, out = run(capsys, "quantize", layer[0], "--profile", prof, "--out", q)
    assert code == 0 and q.exists() and "quantize" in out
    assert run(capsys, "quantize", layer[0], "--format", "mxfp4", "--emit", "json")[0] == 0


def test_gen_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, "gen", tmp_path / f"{name}.arct", "--seed", 5, "--k", 64, "--n", 4)[0] == 0
    assert (tmp_path / "a.arct").read_bytes() == (tmp_path / "b.arct").read_bytes()


def test_file_errors(capsys, tmp_path):
    bad = tmp_path / "bad.arct"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert main(["quantize", str(bad)]) == 3
    bad.write_bytes(b"AR")
    assert main(["quantize", str(bad)]) == 4
    assert main(["quantize", str(tmp_path / "missing.arct")]) == 2


def test_verify_bounds(capsys):
    code, out = run(capsys, "verify-bounds", "--samples", 5000, "--gemm-configs", 10, "--emit", "json")
    doc = json.loads(out)
    assert code == 0 and doc["meta"]["total_violations"] == 0
    assert all(r["status"] == "PASS" for r in doc["rows"])
    again = run(capsys, "verify-bounds", "--samples", 5000, "--gemm-configs", 10, "--emit", "json")[1]
    assert again == out


def test_verify_bounds_fault(capsys):
    code, out = run(capsys, "verify-bounds", "--samples", 5000, "--gemm-configs", 10, "--inject-fault")
    assert code == 1 and "FAIL" in out
