import json
import subprocess
import sys

import pytest

from lyapscope import catalog
from lyapscope.cli import main


def run(tmp_path, *args):
    code = main(list(args) + ["--out", str(tmp_path), "--no-timestamp"])
    report = tmp_path / "report.json"
    return code, json.loads(report.read_text()) if report.exists() else None


def test_verify_ahmadi_lyapunov(tmp_path, capsys):
    code, rep = run(tmp_path, "verify", "--catalog", "ahmadi", "--check", "lyapunov")
    assert code == 0 and rep["verdict"] == "pass"
    assert rep["samples"] >= 10_000


def test_verify_ahmadi_convex(tmp_path, capsys):
    code, rep = run(tmp_path, "verify", "--catalog", "ahmadi", "--check", "convex")
    assert code == 1 and rep["verdict"] == "fail"
    assert len(rep["witness"]) == 2


def test_verify_gconvex(tmp_path, capsys):
    code, rep = run(tmp_path, "verify", "--catalog", "ahmadi", "--check", "gconvex")
    assert code == 0


def test_hautus(tmp_path, capsys):
    code, rep = run(tmp_path, "hautus", "--A", "0,1;0,0", "--B", "0;1")
    assert code == 0 and rep["stabilizable"] is True
    code, rep = run(tmp_path, "hautus", "--A", "1,0;0,-1", "--B", "0;1")
    assert code == 1 and rep["failing_eigenvalues"] == [[1.0, 0.0]]


def test_lyapeq(tmp_path, capsys):
    code, rep = run(tmp_path, "lyapeq", "--A", "-0.1,1;-1,-0.1")
    assert code == 0
    assert max(abs(a - b) for ra, rb in zip(rep["P"], [[5.0, 0.0], [0.0, 5.0]]) for a, b in zip(ra, rb)) <= 1e-9
    assert run(tmp_path, "lyapeq", "--A", "1,0;0,-1")[0] == 2


def test_obstruct_modes(tmp_path, capsys):
    code, rep = run(tmp_path, "obstruct", "--catalog", "gauss_spiral_f2_beta100")
    assert code == 1 and rep["verdict"] == "violated"
    assert (tmp_path / "alignment.csv").exists()
    assert run(tmp_path, "obstruct", "--catalog", "linear_spiral")[0] == 0
    assert run(tmp_path, "obstruct", "--catalog", "driftless_bilinear")[0] == 1


def test_homotopy(tmp_path, capsys):
    code, rep = run(tmp_path, "homotopy", "--catalog", "canonical", "--to-catalog", "linear_spiral")
    assert code == 0 and (tmp_path / "margins.csv").exists()
    assert run(tmp_path, "homotopy", "--catalog", "ahmadi")[0] == 2


def test_sontag(tmp_path, capsys):
    code, rep = run(tmp_path, "sontag", "--catalog", "cubic_scalar", "--x0", "2")
    assert code == 0
    assert rep["decrease_identity_residual"] <= 1e-9
    assert abs(rep["closed_loop"]["final"][0]) < 1e-3


def test_singular(tmp_path, capsys):
    code, rep = run(tmp_path, "singular", "--catalog", "canonical", "--g", "1,0", "--level", "0.5")
    assert code == 0 and rep["count"] == 2


def test_portrait(tmp_path, capsys):
    code, rep = run(tmp_path, "portrait", "--catalog", "canonical", "--lattice", "3", "--t-final", "30", "--svg")
    assert code == 0 and rep["trajectories"] == 9
    assert (tmp_path / "portrait.svg").exists()


def test_catalog_listing(capsys):
    assert main(["catalog", "list"]) == 0
    out = capsys.readouterr().out
    assert all(i in out for i in catalog.list_ids())
    assert main(["catalog", "show", "ahmadi"]) == 0
    assert json.loads(capsys.readouterr().out)["id"] == "ahmadi"


def test_errors_exit_two(tmp_path, capsys):
    assert run(tmp_path, "verify", "--catalog", "missing", "--check", "lyapunov")[0] == 2
    with pytest.raises(SystemExit) as ei:
        main(["verify", "--catalog", "ahmadi", "--check", "bogus"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["verify", "--catalog", "ahmadi", "--check", "lyapunov", "--unknown-flag"])
    assert ei.value.code == 2


def test_system_file_source(tmp_path, capsys):
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(catalog.raw("canonical")), encoding="utf-8")
    code, rep = run(tmp_path, "verify", "--system", str(path), "--check", "lyapunov")
    assert code == 0


def test_explain_adds_description(tmp_path, capsys):
    code, rep = run(tmp_path, "verify", "--catalog", "canonical", "--check", "convex", "--explain")
    assert code == 0 and rep.get("explanation")


@pytest.mark.parametrize(
    "cid, check",
    [(e.id, k) for e in catalog.entries() for k in e.expected if k in ("lyapunov", "convex", "gconvex", "clf")],
)
def test_exit_codes_match_catalog(cid, check, tmp_path, capsys):
    code, rep = run(tmp_path, "verify", "--catalog", cid, "--check", check, "--samples", "2000")
    assert rep["verdict"] == catalog.get(cid).expected[check]
    assert code == {"pass": 0, "fail": 1}[rep["verdict"]]


def test_report_byte_identical(tmp_path):
    outs = []
    for d in ("a", "b"):
        out = tmp_path / d
        out.mkdir()
        subprocess.run(
            [sys.executable, "-m", "lyapscope.cli", "verify", "--catalog", "ahmadi", "--check", "convex",
             "--seed", "7", "--out", str(out), "--no-timestamp"],
            check=False, capture_output=True,
        )
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_env_seed(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LYAPSCOPE_SEED", "99")
    code, rep = run(tmp_path, "verify", "--catalog", "canonical", "--check", "lyapunov", "--samples", "500")
    assert rep["seed"] == 99
