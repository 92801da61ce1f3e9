"""Problem-file loading, pipeline exit codes, artifact layout, determinism,
and independent re-verification."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from ordercomplete.cli import RunConfig, load_spec, main, run_pipeline, verify
from ordercomplete.expr import render

DEMOS = Path(__file__).resolve().parent.parent / "demos"

GOOD_SPEC = """\
n = 1
K = 1
m = 1
box.lo = 0
box.hi = 3
grid = 64
F1 = u[1,(1)] + u[1,(0)]^3
f1 = cos(x1) + sin(x1)^3
exact1 = sin(x1)
"""


def _write(tmp_path, text, name="prob.spec"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---------------------------------------------------------------------------
# load_spec


def test_load_bundled_manufactured_spec():
    system, exact, grid = load_spec(DEMOS / "manufactured_1d.spec")
    assert (system.n, system.K, system.m) == (1, 1, 1)
    assert grid == 512
    assert render(system.F[0]) == "u[1,(1)] + u[1,(0)]^3"
    assert render(system.f[0]) == "cos(x1) + sin(x1)^3"
    assert [render(e) for e in exact] == ["sin(x1)"]
    assert system.box_lo[0] == 0.0 and system.box_hi[0] == 3.0


def test_load_bundled_negative_control():
    system, exact, grid = load_spec(DEMOS / "unsolvable_1d.spec")
    assert render(system.F[0]) == "u[1,(0)]^2"
    assert render(system.f[0]) == "-1"
    assert exact is None


def test_load_missing_key_names_it(tmp_path):
    text = GOOD_SPEC.replace("f1 = cos(x1) + sin(x1)^3\n", "")
    with pytest.raises(ValueError, match="'f1'"):
        load_spec(_write(tmp_path, text))


def test_load_signature_error_names_key(tmp_path):
    text = GOOD_SPEC.replace("m = 1", "m = 0")
    with pytest.raises(ValueError, match="'F1'"):
        load_spec(_write(tmp_path, text))


def test_load_duplicate_key(tmp_path):
    with pytest.raises(ValueError, match="duplicate key 'n'"):
        load_spec(_write(tmp_path, "n = 1\nn = 2\n"))


def test_load_malformed_line(tmp_path):
    with pytest.raises(ValueError, match="line 1"):
        load_spec(_write(tmp_path, "just some words\n"))


def test_load_bad_number(tmp_path):
    text = GOOD_SPEC.replace("grid = 64", "grid = many")
    with pytest.raises(ValueError, match="'grid'"):
        load_spec(_write(tmp_path, text))


def test_load_box_arity(tmp_path):
    text = GOOD_SPEC.replace("box.hi = 3", "box.hi = 3, 4")
    with pytest.raises(ValueError, match="box"):
        load_spec(_write(tmp_path, text))


def test_load_jet_vars_rejected_in_rhs_and_exact(tmp_path):
    bad_rhs = GOOD_SPEC.replace("f1 = cos(x1) + sin(x1)^3", "f1 = u[1,(0)]")
    with pytest.raises(ValueError, match="'f1'"):
        load_spec(_write(tmp_path, bad_rhs))
    bad_exact = GOOD_SPEC.replace("exact1 = sin(x1)", "exact1 = u[1,(1)]")
    with pytest.raises(ValueError, match="'exact1'"):
        load_spec(_write(tmp_path, bad_exact))


def test_run_config_validation(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(spec="s", gamma=0.0, stages=2, grid=64, out="o")
    with pytest.raises(ValueError):
        RunConfig(spec="s", gamma=0.4, stages=0, grid=64, out="o")
    with pytest.raises(ValueError):
        RunConfig(spec="s", gamma=0.4, stages=2, grid=4, out="o")


# ---------------------------------------------------------------------------
# pipeline runs


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    spec = tmp / "prob.spec"
    spec.write_text(GOOD_SPEC)
    out = tmp / "out"
    code = main([
        "run", str(spec), "--gamma", "0.4", "--stages", "2", "--out", str(out)
    ])
    assert code == 0
    return out


def test_run_writes_expected_artifacts(run_dir):
    for name in ("certificate.json", "summary.txt",
                 "global_lower.json", "global_upper.json", "f1.csv"):
        assert (run_dir / name).is_file()
    for n in (1, 2):
        sdir = run_dir / f"stage{n}"
        assert (sdir / "poly.json").is_file()
        assert (sdir / "tv_u1.csv").is_file()
        for tag in ("u1_a0", "u1_a1"):
            for prefix in ("d", "lo", "hi"):
                assert (sdir / f"{prefix}_{tag}.csv").is_file()
    cert = json.loads((run_dir / "certificate.json").read_text())
    assert cert["verdict"] == "pass"
    assert cert["schema"] == 1
    assert cert["problem"]["exact"] == ["sin(x1)"]
    assert cert["assumption"]["interior"]["supported"] is True
    assert "not a proof" in cert["assumption"]["note"]
    summary = (run_dir / "summary.txt").read_text()
    assert "verdict: pass" in summary
    assert "EVIDENCE" in summary or "evidence" in summary


def test_run_deterministic(run_dir, tmp_path):
    spec = tmp_path / "prob.spec"
    spec.write_text(GOOD_SPEC)
    out2 = tmp_path / "out2"
    code = main([
        "run", str(spec), "--gamma", "0.4", "--stages", "2", "--out", str(out2)
    ])
    assert code == 0
    assert (out2 / "certificate.json").read_bytes() == \
        (run_dir / "certificate.json").read_bytes()
    assert (out2 / "stage1" / "poly.json").read_bytes() == \
        (run_dir / "stage1" / "poly.json").read_bytes()


def test_run_no_samples_flag(tmp_path):
    spec = tmp_path / "prob.spec"
    spec.write_text(GOOD_SPEC)
    out = tmp_path / "lean"
    code = main([
        "run", str(spec), "--gamma", "0.4", "--stages", "1",
        "--out", str(out), "--no-samples",
    ])
    assert code == 0
    assert (out / "certificate.json").is_file()
    assert not (out / "f1.csv").exists()
    assert not (out / "stage1" / "tv_u1.csv").exists()
    assert (out / "stage1" / "poly.json").is_file()  # certificates still complete


def test_grid_flag_overrides_file(tmp_path):
    spec = tmp_path / "prob.spec"
    spec.write_text(GOOD_SPEC)  # file says 64
    out = tmp_path / "g128"
    code = main([
        "run", str(spec), "--gamma", "0.4", "--stages", "1",
        "--grid", "128", "--out", str(out),
    ])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["config"]["grid"] == [128]


def test_run_exit3_on_unsupported_assumption(tmp_path, capsys):
    out = tmp_path / "bad"
    code = main([
        "run", str(DEMOS / "unsolvable_1d.spec"), "--gamma", "0.4",
        "--stages", "1", "--out", str(out),
    ])
    assert code == 3
    msg = capsys.readouterr().out
    assert "assumption" in msg and "unsupported" in msg
    assert not (out / "certificate.json").exists()


def test_run_exit3_when_skipping_straight_to_solver(tmp_path, capsys):
    out = tmp_path / "bad2"
    code = main([
        "run", str(DEMOS / "unsolvable_1d.spec"), "--gamma", "0.4",
        "--stages", "1", "--out", str(out), "--skip-assumption-check",
    ])
    assert code == 3
    assert "construction failure" in capsys.readouterr().out


def test_run_exit3_on_spec_problems(tmp_path, capsys):
    out = tmp_path / "x"
    assert main(["run", str(tmp_path / "nope.spec"), "--gamma", "0.4",
                 "--stages", "1", "--out", str(out)]) == 3
    no_grid = _write(tmp_path, GOOD_SPEC.replace("grid = 64\n", ""))
    assert main(["run", no_grid, "--gamma", "0.4", "--stages", "1",
                 "--out", str(out)]) == 3
    assert "no grid resolution" in capsys.readouterr().out
    assert main(["run", no_grid, "--gamma", "0.4", "--stages", "1",
                 "--grid", "4", "--out", str(out)]) == 3


# ---------------------------------------------------------------------------
# verification


def test_verify_passes_on_fresh_run(run_dir, capsys):
    assert verify(run_dir) == 0
    assert "all certificates reproduce" in capsys.readouterr().out


def test_verify_detects_tampered_margin(run_dir, tmp_path, capsys):
    copy = tmp_path / "tampered"
    shutil.copytree(run_dir, copy)
    cert = json.loads((copy / "certificate.json").read_text())
    cert["stages"][1]["eq1"]["lower_slack"] += 0.01
    (copy / "certificate.json").write_text(json.dumps(cert))
    assert verify(copy) == 2
    out = capsys.readouterr().out
    assert "MISMATCH stage2.eq1.lower_slack" in out


def test_verify_detects_tampered_polynomial(run_dir, tmp_path, capsys):
    copy = tmp_path / "tampered_poly"
    shutil.copytree(run_dir, copy)
    poly = json.loads((copy / "stage1" / "poly.json").read_text())
    poly["cells"][0]["polys"][0]["coeffs"][0] += 0.05
    (copy / "stage1" / "poly.json").write_text(json.dumps(poly))
    assert verify(copy) == 2
    assert "MISMATCH" in capsys.readouterr().out


def test_verify_detects_tampered_verdict(run_dir, tmp_path, capsys):
    copy = tmp_path / "tampered_verdict"
    shutil.copytree(run_dir, copy)
    cert = json.loads((copy / "certificate.json").read_text())
    cert["verdict"] = "fail"
    (copy / "certificate.json").write_text(json.dumps(cert))
    assert verify(copy) == 2
    assert "MISMATCH verdict" in capsys.readouterr().out


def test_verify_rejects_missing_or_foreign_dir(tmp_path, capsys):
    assert verify(tmp_path / "nothing_here") == 2
    assert "cannot read certificate" in capsys.readouterr().out
    (tmp_path / "certificate.json").write_text('{"schema": 99}')
    assert verify(tmp_path) == 2
    assert "unsupported schema" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# installed entry point


def test_console_entry_point(tmp_path):
    spec = tmp_path / "prob.spec"
    spec.write_text(GOOD_SPEC)
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "ordercomplete.cli", "run", str(spec),
         "--gamma", "0.4", "--stages", "1", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr
    proc2 = subprocess.run(
        [sys.executable, "-m", "ordercomplete.cli", "verify", str(out)],
        capture_output=True, text=True,
    )
    assert proc2.returncode == 0, proc2.stdout + proc2.stderr
