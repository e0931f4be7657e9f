import io
import json
import subprocess
import sys

import numpy as np
import pytest

from empcheb import cli
from empcheb.geometry import ConfidenceEllipsoid, confidence_ellipsoid
from empcheb.stats import SampleStats


def run(argv, stdin=None, monkeypatch=None):
    out, err = io.StringIO(), io.StringIO()
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = cli.run(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def test_bound_example():
    code, out, _ = run(["bound", "--dim", "2", "--count", "100", "--lambda", "3"])
    assert code == 0
    (rec,) = records(out)
    assert rec["value_exact"] == "24/101"
    assert rec["value"] == pytest.approx(0.23762, abs=1e-5)
    assert rec["formula"] == "empirical" and rec["exact"] is True
    assert rec["schema_version"] == 1


def test_bound_formulas_and_sweep():
    _, out, _ = run(["bound", "--dim", "2", "--count", "100", "--lambda-sq", "9",
                     "--formula", "simplified"])
    assert records(out)[0]["value_exact"] == "1211/5000"
    _, out, _ = run(["bound", "--dim", "2", "--count", "100,1000,1000000", "--lambda", "2"])
    recs = records(out)
    assert [r["count"] for r in recs] == [100, 1000, 1000000]
    assert recs[-1]["gap"] <= 1e-5 and recs[-1]["limit"] == 0.5
    _, out, _ = run(["bound", "--dim", "2", "--count", "100", "--lambda", "3", "--mode", "float"])
    rec = records(out)[0]
    assert rec["exact"] is False and rec["value"] == pytest.approx(24 / 101, rel=1e-15)


def test_invert_example():
    code, out, _ = run(["invert", "--dim", "2", "--count", "100", "--epsilon", "0.25"])
    rec = records(out)[0]
    assert code == 0 and rec["feasible"]
    assert rec["lambda"] == pytest.approx(2.9023, abs=1e-4)
    assert rec["lambda_sq_boundary_exact"] == "91809/10900"
    assert rec["bound_at_safe"] <= 0.25


def test_invert_infeasible():
    _, out, _ = run(["invert", "--dim", "2", "--count", "10", "--epsilon", "0.01"])
    rec = records(out)[0]
    assert rec["feasible"] is False and rec["min_epsilon_exact"] == "2/11"


def test_samplesize():
    _, out, _ = run(["samplesize", "--dim", "2", "--lambda", "3", "--epsilon", "0.3"])
    rec = records(out)[0]
    assert rec["count"] == 16 and rec["bound_at_count"] <= 0.3
    _, out, _ = run(["samplesize", "--dim", "2", "--lambda", "1", "--epsilon", "0.3"])
    assert records(out)[0]["feasible"] is False


def test_floats_have_17_digits():
    _, out, _ = run(["bound", "--dim", "2", "--count", "100", "--lambda", "3"])
    assert '"value": 0.23762376237623761' in out


def test_detect_one_record_per_post_warmup_row(monkeypatch):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((80, 2))
    text = "\n".join(f"{a:.17g},{b:.17g}" for a, b in x)
    code, out, _ = run(["detect", "--epsilon", "0.5", "--warmup", "50"], text, monkeypatch)
    recs = records(out)
    assert code == 0
    assert len(recs) == 30
    assert [r["index"] for r in recs] == list(range(50, 80))
    assert [r["line"] for r in recs] == list(range(51, 81))
    assert all(r["threshold_sq"] > 0 for r in recs)


def test_detect_jsonl_file(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "s.jsonl"
    path.write_text("".join(json.dumps({"x": list(r)}) + "\n" for r in rng.standard_normal((30, 3))))
    code, out, _ = run(["detect", str(path), "--lambda", "3", "--warmup", "10"])
    assert code == 0 and len(records(out)) == 20


def test_ingest_examples(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,0\n2,0\n0,2\n2,2\n")
    data, lines = cli.ingest(str(p))
    np.testing.assert_array_equal(data, [[0, 0], [2, 0], [0, 2], [2, 2]])
    assert lines == [1, 2, 3, 4]
    data, lines = cli.ingest(io.StringIO("u,v\n1,2\n3,4\n"))
    assert data.shape == (2, 2) and lines == [2, 3]
    data, _ = cli.ingest(io.StringIO('{"x":[1.5,2.5]}\n'), "jsonl")
    np.testing.assert_array_equal(data, [[1.5, 2.5]])


@pytest.mark.parametrize("text,fmt,code,line", [
    ("1,2\n1,2,3\n", "csv", "format_error", 2),
    ("1,2\n3,abc\n", "csv", "format_error", 2),
    ('{"x":[1]}\n{"y":[1]}\n', "jsonl", "format_error", 2),
    ("", "csv", "empty_input", None),
])
def test_ingest_errors(text, fmt, code, line):
    with pytest.raises(cli.EmpChebError) as err:
        cli.ingest(io.StringIO(text), fmt)
    assert err.value.code == code
    assert getattr(err.value, "line", None) == line


def test_error_exit_codes(monkeypatch):
    code, out, err = run(["bound", "--dim", "2", "--count", "100", "--bogus"])
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "usage_error"
    code, _, err = run(["detect", "--epsilon", "0.5"], "1,2\n1,2,3\n", monkeypatch)
    rec = json.loads(err)
    assert code == 2 and rec["error"] == "format_error" and rec["line"] == 2
    code, _, err = run(["bound", "--dim", "0", "--count", "10", "--lambda", "2"])
    assert code == 2 and json.loads(err)["error"] == "invalid_dimension"
    code, _, err = run(["bound", "--dim", "2", "--count", "10", "--lambda", "0"])
    assert code == 2 and json.loads(err)["error"] == "invalid_radius"
    code, _, err = run(["ellipsoid", "--epsilon", "0.5"], "0,0\n1,1\n2,2\n3,3\n", monkeypatch)
    assert code == 2 and json.loads(err)["error"] == "singular_covariance"
    assert len(err.splitlines()) == 1


def test_detect_rejects_zero_lambda(monkeypatch):
    code, _, err = run(["detect", "--lambda-sq", "0"], "1,2\n", monkeypatch)
    assert code == 2 and json.loads(err)["error"] == "invalid_radius"


def test_format_env_and_csv(monkeypatch):
    monkeypatch.setenv("EMPCHEB_FORMAT", "csv")
    code, out, _ = run(["bound", "--dim", "2", "--count", "10,100", "--lambda", "3"])
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("schema_version,command,dim,count")
    assert len(lines) == 3 and "24/101" in lines[2]
    _, out, _ = run(["bound", "--dim", "2", "--count", "100", "--lambda", "3", "--format", "human"])
    assert "value_exact" in out and "24/101" in out


def test_ellipsoid_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((60, 3)) @ rng.standard_normal((3, 3))
    data = tmp_path / "d.csv"
    data.write_text("\n".join(",".join(f"{v:.17g}" for v in row) for row in x))
    pts = rng.standard_normal((200, 3)) * 3
    pfile = tmp_path / "p.csv"
    pfile.write_text("\n".join(",".join(f"{v:.17g}" for v in row) for row in pts))
    code, out, _ = run(["ellipsoid", str(data), "--epsilon", "0.3", "--contains", str(pfile)])
    assert code == 0
    recs = records(out)
    head, rows = recs[0], recs[1:]
    assert head["schema_version"] == 1 and head["command"] == "ellipsoid"
    back = ConfidenceEllipsoid.from_record(head)
    direct = confidence_ellipsoid(SampleStats.from_samples(x), epsilon=0.3)
    np.testing.assert_array_equal(back.center, direct.center)
    np.testing.assert_array_equal(back.chol_factor, direct.chol_factor)
    assert back.radius_sq == direct.radius_sq
    np.testing.assert_array_equal(back.contains(pts), direct.contains(pts))
    assert [r["inside"] for r in rows] == list(direct.contains(pts))


def test_simulate_echoes_seed():
    code, out, _ = run(["simulate", "--family", "gaussian", "--dim", "2", "--count", "20",
                        "--lambda", "2", "--trials", "5000"])
    rec = records(out)[0]
    assert code == 0 and rec["seed"] == cli.DEFAULT_SEED and rec["pass"] is True
    assert rec["bound_exact"] == "4/7"
    _, again, _ = run(["simulate", "--family", "gaussian", "--dim", "2", "--count", "20",
                       "--lambda", "2", "--trials", "5000", "--workers", "2"])
    assert records(again)[0]["events"] == rec["events"]


def test_schema_fields_stable():
    _, out, _ = run(["bound", "--dim", "2", "--count", "100", "--lambda", "3"])
    assert list(records(out)[0]) == [
        "schema_version", "command", "dim", "count", "lambda_sq", "lambda_sq_exact", "lambda",
        "formula", "value", "value_exact", "exact", "limit", "gap"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "empcheb", "bound", "--dim", "1", "--count", "20",
                          "--lambda", "2"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["value_exact"] == "2/7"
