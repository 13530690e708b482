import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from nnim.cli import main
from nnim.graph import dump_graph
from nnim.pipeline import read_matrix, write_matrix
from nnim.synthetic import two_block_graph


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    g, _ = two_block_graph(200, 8, seed=6)
    return dump_graph(g, tmp_path_factory.mktemp("cli") / "blocks")


def ds(data):
    return ["--edges", str(data / "edges.tsv"), "--labels", str(data / "labels.tsv"), "--d", "8"]


def run_json(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr()


def test_extract_core(data, tmp_path, capsys):
    code, cap = run_json(capsys, ["extract-core", *ds(data), "--out", str(tmp_path), "--curve", "0.5,0.7"])
    assert code == 0
    stats = json.loads(cap.out)
    assert 0 < stats["coverage_pct"] <= 100
    assert (tmp_path / "core.txt").exists() and (tmp_path / "coverage_curve.tsv").exists()
    assert len((tmp_path / "coverage_curve.tsv").read_text().splitlines()) == 3


def test_infer_and_rerun_identical(data, tmp_path, capsys):
    argv = ["infer", *ds(data), "--out", str(tmp_path), "--max-steps", "10", "--seed", "3"]
    assert main(argv + ["--run-name", "a"]) == 0
    assert main(argv + ["--run-name", "b"]) == 0
    capsys.readouterr()
    for name in ("scores.tsv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    cfg = json.loads((tmp_path / "a" / "report.json").read_text())["config"]
    assert cfg["method"] == "nnim" and cfg["seed"] == 3


@pytest.mark.parametrize("method", ["cf-bipartite", "cf-dynamic", "label-prop", "random-hk"])
def test_baseline(data, tmp_path, capsys, method):
    code = main(["baseline", "--method", method, *ds(data), "--out", str(tmp_path), "--run-name", method,
                 "--max-steps", "5"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["run_dir"].endswith(method)


def test_pipeline_from_config_file(data, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"edges={data / 'edges.tsv'}\nlabels={data / 'labels.tsv'}\nmethod=nnim-sqrt\nmax_steps=5\n"
                   f"out_dir={tmp_path}\nrun_name=p\n")
    assert main(["pipeline", "--config", str(cfg), "--index", "exact"]) == 0
    capsys.readouterr()
    report = json.loads((tmp_path / "p" / "report.json").read_text())
    assert report["config"]["index"] == "exact" and report["config"]["k"] == "sqrt"


def test_export(data, tmp_path, capsys):
    for m in ("cf-bipartite", "label-prop"):
        main(["baseline", "--method", m, *ds(data), "--out", str(tmp_path), "--run-name", m])
    capsys.readouterr()
    assert main(["export", str(tmp_path / "cf-bipartite"), str(tmp_path / "label-prop"), "--format", "tsv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split("\t")[0] for ln in lines] == ["method", "cf-bipartite", "label-prop"]


def test_evaluate_aligns_rows_by_id(tmp_path, capsys):
    truth = np.array([[1, 0], [0, 1], [1, 1]])
    scores = np.array([[0.9, 0.1], [0.2, 0.7], [0.8, 0.6]])
    write_matrix(tmp_path / "t.tsv", ["a", "b", "c"], truth, integer=True)
    write_matrix(tmp_path / "s.tsv", ["c", "a", "b"], scores[[2, 0, 1]])
    assert main(["evaluate", "--truth", str(tmp_path / "t.tsv"), "--scores", str(tmp_path / "s.tsv"),
                 "--out", str(tmp_path / "ev")]) == 0
    ev = json.loads(capsys.readouterr().out)
    assert ev["auc_all"] == 100.0
    assert (tmp_path / "ev" / "row.tsv").exists()


def test_evaluate_missing_row_is_data_error(tmp_path, capsys):
    write_matrix(tmp_path / "t.tsv", ["a", "b"], np.array([[1], [0]]), integer=True)
    write_matrix(tmp_path / "s.tsv", ["a"], np.array([[0.5]]))
    assert main(["evaluate", "--truth", str(tmp_path / "t.tsv"), "--scores", str(tmp_path / "s.tsv")]) == 3
    assert "no score row" in capsys.readouterr().err


def test_simulate_worked_start(tmp_path, capsys):
    write_matrix(tmp_path / "xi.tsv", ["0", "1", "2"], np.array([[0.0], [1.0], [1.0]]))
    assert main(["simulate", "--xi0", str(tmp_path / "xi.tsv"), "--k", "2", "--epsilon", "0.5",
                 "--out", str(tmp_path / "sim"), "--snapshot-every", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["converged"]
    _, xi = read_matrix(tmp_path / "sim" / "final_xi.tsv")
    assert set(np.unique(xi * 2)) <= {0.0, 1.0, 2.0}
    assert (tmp_path / "sim" / "snapshot_0.tsv").exists()


def test_simulate_strict_nonconvergence(tmp_path, capsys):
    xi0 = np.random.default_rng(5).random((30, 6))
    write_matrix(tmp_path / "xi.tsv", [str(i) for i in range(30)], xi0)
    argv = ["simulate", "--xi0", str(tmp_path / "xi.tsv"), "--k", "3", "--epsilon", "0", "--max-steps", "2",
            "--out", str(tmp_path / "sim")]
    assert main(argv) == 0
    assert main(argv + ["--strict"]) == 4
    assert "not converged" in capsys.readouterr().err


def test_infer_strict_nonconvergence(data, tmp_path, capsys):
    assert main(["infer", *ds(data), "--out", str(tmp_path), "--run-name", "s", "--max-steps", "1",
                 "--D", "0", "--strict"]) == 4
    capsys.readouterr()


def test_hi(data, capsys):
    assert main(["hi", *ds(data)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0 <= rep["homophilic_index"] <= 100
    assert main(["hi", *ds(data), "--k-policy", "3"]) == 0
    capsys.readouterr()


def test_check_suites(tmp_path, capsys):
    assert main(["check", "--suite", "bound", "--n", "16", "--k", "2", "--trials", "5", "--out", str(tmp_path)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["suite"] == "bound" and rep["within_bound"]
    assert (tmp_path / "bound.json").exists() and (tmp_path / "bound.tsv").exists()
    assert main(["check", "--suite", "all", "--n", "8", "--k", "2", "--trials", "3"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 5


def test_convert_snap_ego(tmp_path, capsys):
    snap = tmp_path / "snap"
    snap.mkdir()
    (snap / "1.edges").write_text("2 3\n3 4\n")
    (snap / "1.feat").write_text("2 1 0\n3 0 1\n4 1 1\n")
    (snap / "1.egofeat").write_text("0 0\n")
    assert main(["convert-snap-ego", "--snap-dir", str(snap), "--ego", "1", "--out", str(tmp_path / "dump")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["N"] == 4 and info["d"] == 2
    assert (tmp_path / "dump" / "edges.tsv").exists()


@pytest.mark.parametrize("argv,code", [
    (["infer", "--edges", "x.tsv"], 2),
    (["pipeline", "--snap-dir", "x", "--k", "cube"], 2),
    (["infer", "--edges", "/nonexistent/e.tsv", "--labels", "/nonexistent/l.tsv"], 3),
    (["check", "--n", "3", "--k", "5"], 2),
    (["nosuchcommand"], 2),
    (["infer", "--threads", "0", "--snap-dir", "x"], 2),
])
def test_error_exit_codes(argv, code, tmp_path, capsys):
    assert main(argv + ([] if argv[0] in ("check", "nosuchcommand") else ["--out", str(tmp_path)])) == code
    capsys.readouterr()


@pytest.mark.skipif(shutil.which("nnim") is None, reason="console script not on PATH")
def test_console_script_help():
    res = subprocess.run(["nnim", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "extract-core" in res.stdout


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nnim.cli", "check", "--suite", "concentration"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["suite"] == "concentration"
