import json

import numpy as np
import pytest

from nnim.baselines import cf_bipartite
from nnim.graph import dump_graph
from nnim.pipeline import (ConfigError, PipelineError, RunConfig, RunReport, export_tables, extract_core,
                           load_config, load_dataset, parse_config_text, pipeline, read_matrix, write_matrix)
from nnim.synthetic import two_block_graph


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    g, _ = two_block_graph(240, 10, seed=3)
    return dump_graph(g, tmp_path_factory.mktemp("data") / "blocks")


def config(dataset, out, **kw):
    base = {"edges": str(dataset / "edges.tsv"), "labels": str(dataset / "labels.tsv"), "d": 10,
            "max_steps": 20, "out_dir": str(out)}
    base.update(kw)
    return RunConfig.from_mapping(base)


def test_parse_config_text_comments_and_errors():
    assert parse_config_text("# c\nk = 5  # inline\n\nmethod=nnim\n") == {"k": "5", "method": "nnim"}
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("k=3\nbroken\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig.from_mapping({"snap_dir": "x", "kk": "3"})


@pytest.mark.parametrize("method,k,alpha", [("nnim-log", "log", 0.0), ("nnim-sqrt-reg", "sqrt", 1.0),
                                            ("nnim", "log", 0.0)])
def test_presets(method, k, alpha):
    cfg = RunConfig.from_mapping({"snap_dir": "x", "method": method})
    assert (cfg.k, cfg.alpha) == (k, alpha)


def test_explicit_values_override_preset(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("snap_dir=x\nmethod=nnim-log-reg\nk=7\n")
    cfg = load_config(path, {"alpha": "0.5", "seed": None})
    assert cfg.k == 7 and cfg.alpha == 0.5 and cfg.seed == 17


@pytest.mark.parametrize("values", [
    {"snap_dir": "x", "method": "magic"},
    {"snap_dir": "x", "gamma": "1"},
    {"snap_dir": "x", "k": "cube"},
    {"edges": "e.tsv"},
    {},
    {"snap_dir": "x", "pca_variance": "1.5"},
    {"snap_dir": "x", "tau": "three"},
])
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(values)


def test_config_text_roundtrip():
    cfg = RunConfig.from_mapping({"snap_dir": "x", "pca_variance": "none", "k": "12"})
    again = RunConfig.from_mapping(parse_config_text(cfg.to_text()))
    assert again == cfg


def test_matrix_roundtrip(tmp_path):
    m = np.random.default_rng(0).random((4, 3))
    write_matrix(tmp_path / "m.tsv", ["a", "b", "c", "d"], m)
    ids, back = read_matrix(tmp_path / "m.tsv")
    assert ids == ["a", "b", "c", "d"] and np.array_equal(back, m)


def test_pipeline_writes_artifacts(dataset, tmp_path):
    report, out = pipeline(config(dataset, tmp_path, run_name="a"))
    for name in ("config.txt", "core.txt", "bipartite.tsv", "scores.tsv", "truth.tsv", "trajectory.tsv",
                 "report.json", "timings.json"):
        assert (out / name).exists(), name
    ids, scores = read_matrix(out / "scores.tsv")
    assert scores.shape == (report.partition["periphery_size"], 10)
    assert len((out / "core.txt").read_text().split()) == report.partition["core_size"]
    assert set(json.loads((out / "timings.json").read_text())) >= {"load", "core_extraction", "dynamics", "eval",
                                                                    "total"}
    assert 0 <= report.evaluation["auc_all"] <= 100


def test_pipeline_rerun_is_byte_identical(dataset, tmp_path):
    _, a = pipeline(config(dataset, tmp_path, run_name="a", seed=5))
    _, b = pipeline(config(dataset, tmp_path, run_name="b", seed=5))
    for name in ("scores.tsv", "report.json", "core.txt", "bipartite.tsv", "trajectory.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_zero_step_nnim_equals_cf_bipartite_without_pca(dataset, tmp_path):
    _, a = pipeline(config(dataset, tmp_path, run_name="nn", method="nnim", max_steps=0, pca_variance="none"))
    _, b = pipeline(config(dataset, tmp_path, run_name="cf", method="cf-bipartite"))
    assert (a / "scores.tsv").read_bytes() == (b / "scores.tsv").read_bytes()


def test_cf_bipartite_scores_match_direct_call(dataset, tmp_path):
    cfg = config(dataset, tmp_path, run_name="cf", method="cf-bipartite")
    _, out = pipeline(cfg)
    g, _ = load_dataset(cfg)
    _, scores = read_matrix(out / "scores.tsv")
    assert np.array_equal(scores, cf_bipartite(extract_core(g, cfg), g))


@pytest.mark.parametrize("method", ["cf-dynamic", "label-prop", "random-hk", "nnim-sqrt"])
def test_every_method_runs(dataset, tmp_path, method):
    report, out = pipeline(config(dataset, tmp_path, run_name=method, method=method, max_steps=5))
    assert report.config["method"] == method
    _, scores = read_matrix(out / "scores.tsv")
    assert np.all((scores >= 0) & (scores <= 1))
    if method == "label-prop":
        assert report.evaluation["f1_micro"] is not None


def test_report_json_roundtrip(dataset, tmp_path):
    report, out = pipeline(config(dataset, tmp_path, run_name="r"))
    again = RunReport.from_json((out / "report.json").read_text())
    assert again.to_json() == report.to_json()
    assert "out_dir" not in again.config and "run_name" not in again.config


def test_export_tables(dataset, tmp_path):
    _, a = pipeline(config(dataset, tmp_path, run_name="a", method="nnim-log"))
    _, b = pipeline(config(dataset, tmp_path, run_name="b", method="cf-bipartite"))
    md = export_tables([a, b]).splitlines()
    assert len(md) == 4
    assert md[2].startswith("| nnim-log |") and md[3].startswith("| cf-bipartite |")
    # cf-bipartite is not binary, so f1 is missing
    assert "—" in md[3]
    tsv = export_tables([a, b], "tsv").splitlines()
    assert tsv[0].split("\t")[0] == "method" and len(tsv) == 3
    assert export_tables([], "tsv") == "method\n"
    with pytest.raises(ValueError):
        export_tables([a], "html")


def test_missing_file_is_a_data_error(tmp_path):
    cfg = RunConfig.from_mapping({"edges": str(tmp_path / "nope.tsv"), "labels": str(tmp_path / "nope2.tsv"),
                                  "out_dir": str(tmp_path)})
    with pytest.raises(PipelineError) as info:
        pipeline(cfg)
    assert info.value.stage == "load" and info.value.kind == "data"


def test_malformed_file_is_a_data_error(tmp_path):
    (tmp_path / "e.tsv").write_text("1\t2\nbad line here\n")
    (tmp_path / "l.tsv").write_text("1\t0\n2\t1\n")
    cfg = RunConfig.from_mapping({"edges": str(tmp_path / "e.tsv"), "labels": str(tmp_path / "l.tsv"),
                                  "out_dir": str(tmp_path)})
    with pytest.raises(PipelineError) as info:
        pipeline(cfg)
    assert info.value.kind == "data"


def test_invalid_config_mutated_after_build(dataset, tmp_path):
    cfg = config(dataset, tmp_path)
    cfg.index = "faiss"
    with pytest.raises(PipelineError) as info:
        pipeline(cfg)
    assert info.value.stage == "config" and info.value.kind == "config"
