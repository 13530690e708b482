"""End-to-end runs: load, extract the core, predict, evaluate, write artifacts.

A run directory holds everything needed to reproduce it::

    config.txt        resolved key=value configuration
    core.txt          core node ids, one per line
    bipartite.tsv     periphery_id <TAB> core_id
    scores.tsv        node id + d probabilities per peripheral user
    truth.tsv         node id + d ground-truth bits, same row order
    trajectory.tsv    per-step displacement trace (empty for static methods)
    report.json       deterministic run report (config, input hashes, metrics)
    timings.json      wall-clock seconds per phase

Everything except ``timings.json`` is a pure function of the config and
the input files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .baselines import cf_bipartite, cf_dynamic, label_propagation, random_hk
from .core import CorePartition, bgmc, budget_for
from .dynamics import Trajectory
from .graph import GraphFormatError, LabeledGraph, load_graph, load_snap_ego
from .inference import InferenceConfig, run_inference
from .knn import resolve_k
from .metrics import evaluate

logger = logging.getLogger(__name__)

NNIM_PRESETS = {
    "nnim": {},
    "nnim-log": {"k": "log", "alpha": 0.0},
    "nnim-sqrt": {"k": "sqrt", "alpha": 0.0},
    "nnim-log-reg": {"k": "log", "alpha": 1.0},
    "nnim-sqrt-reg": {"k": "sqrt", "alpha": 1.0},
}
BASELINES = ("cf-bipartite", "cf-dynamic", "label-prop", "random-hk")
METHODS = tuple(NNIM_PRESETS) + BASELINES


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it and ``kind`` is ``config`` or ``data`` or ``runtime``."""

    def __init__(self, stage: str, message: str, kind: str = "runtime"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.kind = kind


def _parse_k(value):
    if value is None or isinstance(value, int):
        return value
    text = str(value).strip()
    return int(text) if text.isdigit() else text


def _parse_optional_float(value):
    if value is None or str(value).strip().lower() in ("", "none", "off"):
        return None
    return float(value)


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_optional_int(value):
    if value is None or str(value).strip().lower() in ("", "none"):
        return None
    return int(value)


def _parse_optional_str(value):
    if value is None or str(value).strip().lower() in ("", "none"):
        return None
    return str(value)


@dataclass
class RunConfig:
    edges: str | None = None
    labels: str | None = None
    snap_dir: str | None = None
    ego: str = "107"
    directed: bool = True
    d: int | None = None
    p: float = 0.7
    K: int | None = None
    gamma: float = 2.0
    tau: int = 4
    method: str = "nnim-log-reg"
    k: str | int | None = None
    D: float = 1e-3
    alpha: float | None = None
    pca_variance: float | None = 0.95
    index: str = "lsh"
    trees: int = 10
    leaf_capacity: int = 64
    epsilon_radius: float | None = None
    seed: int = 17
    max_steps: int = 100
    out_dir: str = "runs"
    run_name: str | None = None

    def __post_init__(self):
        preset = NNIM_PRESETS.get(self.method, {})
        if self.k is None:
            self.k = preset.get("k", "log")
        if self.alpha is None:
            self.alpha = preset.get("alpha", 0.0)

    _parsers = {
        "edges": _parse_optional_str, "labels": _parse_optional_str, "snap_dir": _parse_optional_str,
        "ego": str, "directed": _parse_bool, "d": _parse_optional_int, "p": float,
        "K": _parse_optional_int, "gamma": float, "tau": int, "method": str, "k": _parse_k,
        "D": float, "alpha": _parse_optional_float, "pca_variance": _parse_optional_float, "index": str,
        "trees": int, "leaf_capacity": int, "epsilon_radius": _parse_optional_float,
        "seed": int, "max_steps": int, "out_dir": str, "run_name": _parse_optional_str,
    }

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string (or typed) values; unknown keys are rejected."""
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                kwargs[key] = cls._parsers[key](raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}")
        if self.index not in ("exact", "lsh"):
            raise ConfigError("index must be 'exact' or 'lsh'")
        if (self.edges is None) != (self.labels is None):
            raise ConfigError("edges and labels must be given together")
        if self.edges is None and self.snap_dir is None:
            raise ConfigError("no dataset: give edges+labels or snap_dir")
        if self.K is None and not 0 < self.p <= 1:
            raise ConfigError("p must lie in (0, 1]")
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.gamma <= 1:
            raise ConfigError("gamma must be > 1")
        if self.tau < 0 or self.max_steps < 0 or self.D < 0 or self.alpha < 0:
            raise ConfigError("tau, max_steps, D and alpha must be non-negative")
        if self.pca_variance is not None and not 0 < self.pca_variance <= 1:
            raise ConfigError("pca_variance must lie in (0, 1] or be none")
        if isinstance(self.k, int) and self.k < 1 or isinstance(self.k, str) and self.k not in ("log", "sqrt"):
            raise ConfigError("k must be 'log', 'sqrt' or a positive integer")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={'none' if value is None else value}")
        return "\n".join(lines) + "\n"

    def echo(self) -> dict:
        """Config values that define the result (output location excluded)."""
        data = dataclasses.asdict(self)
        data.pop("out_dir")
        data.pop("run_name")
        return data


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a key=value file and apply ``overrides`` on top of it."""
    values = {}
    if path is not None:
        try:
            values = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_mapping(values)


@dataclass
class RunReport:
    config: dict
    inputs: dict
    partition: dict
    evaluation: dict
    trajectory: dict
    method_info: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = dataclasses.asdict(self)
        data.pop("timings")
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, timings: dict | None = None) -> "RunReport":
        return cls(**json.loads(text), timings=timings or {})


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_matrix(path, ids, matrix, integer: bool = False) -> None:
    """TSV with a header row, an id column and one column per label."""
    matrix = np.asarray(matrix)
    header = "node\t" + "\t".join(f"l{j}" for j in range(matrix.shape[1]))
    fmt = "{:d}" if integer else "{:.17g}"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for name, row in zip(ids, matrix):
            cells = (fmt.format(int(x)) if integer else fmt.format(float(x)) for x in row)
            fh.write(f"{name}\t" + "\t".join(cells) + "\n")


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    """Inverse of :func:`write_matrix`; a header row is optional."""
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[0] == "node":
                continue
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-numeric score") from None
            ids.append(parts[0])
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise GraphFormatError(f"{path}: ragged score rows")
    width = widths.pop() if widths else 0
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), width)


def load_dataset(cfg: RunConfig) -> tuple[LabeledGraph, dict]:
    if cfg.snap_dir is not None:
        root = Path(cfg.snap_dir)
        g = load_snap_ego(root, cfg.ego, symmetrize=not cfg.directed)
        files = [root / f"{cfg.ego}.{ext}" for ext in ("edges", "feat", "egofeat")]
        name = f"{root.name}-{cfg.ego}"
    else:
        g = load_graph(cfg.edges, cfg.labels, directed=cfg.directed, d=cfg.d)
        files = [Path(cfg.edges), Path(cfg.labels)]
        name = Path(cfg.edges).parent.name or Path(cfg.edges).stem
    hashes = {p.name: sha256_file(p) for p in files if p.exists()}
    return g, {"dataset": name, "sha256": hashes, "N": g.n_nodes, "E": g.n_edges, "d": g.d}


def extract_core(g: LabeledGraph, cfg: RunConfig) -> CorePartition:
    K = cfg.K if cfg.K is not None else budget_for(g.n_nodes, cfg.p)
    return bgmc(g, K, cfg.gamma, cfg.tau)


def partition_stats(part: CorePartition) -> dict:
    return {
        "coverage_pct": 100.0 * part.coverage_fraction,
        "core_pct": 100.0 * part.core_fraction,
        "bipartite_edge_pct": 100.0 * part.bipartite_edge_fraction,
        **{k: v for k, v in part.stats.items()},
    }


def predict(part: CorePartition, g: LabeledGraph, cfg: RunConfig) -> tuple[np.ndarray, Trajectory, dict]:
    """Score matrix, trajectory and method details for ``cfg.method``."""
    if cfg.method in NNIM_PRESETS:
        icfg = InferenceConfig(k=cfg.k, D=cfg.D, max_steps=cfg.max_steps, alpha=cfg.alpha,
                               pca_variance=cfg.pca_variance, index=cfg.index, trees=cfg.trees,
                               leaf_capacity=cfg.leaf_capacity, seed=cfg.seed)
        res = run_inference(part, g, icfg)
        return res.scores, res.trajectory, dict(res.info)
    if cfg.method == "cf-bipartite":
        return cf_bipartite(part, g), Trajectory(), {}
    if cfg.method == "cf-dynamic":
        scores, traj = cf_dynamic(g, part, cfg.max_steps, cfg.D, return_trajectory=True)
        return scores, traj, {}
    if cfg.method == "label-prop":
        scores, info = label_propagation(g, part, cfg.seed, cfg.max_steps, return_info=True)
        return scores, Trajectory(), info
    k = resolve_k(cfg.k, part.n)
    radius = cfg.epsilon_radius if cfg.epsilon_radius is not None else math.sqrt(g.d / 2)
    scores, traj = random_hk(part, g, k, radius, cfg.D, cfg.max_steps, cfg.seed, return_trajectory=True)
    return scores, traj, {"k": k, "epsilon_radius": radius}


def _run_dir(cfg: RunConfig) -> Path:
    name = cfg.run_name or f"{cfg.method}-{datetime.now(timezone.utc):%Y%m%dT%H%M%S%fZ}"
    path = Path(cfg.out_dir) / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def pipeline(cfg: RunConfig) -> tuple[RunReport, Path]:
    """Run every stage and write the artifacts; returns the report and run directory.

    Stage failures raise :class:`PipelineError`; files already written stay.
    """
    try:
        cfg.validate()
    except ConfigError as exc:
        raise PipelineError("config", str(exc), "config") from exc
    out = _run_dir(cfg)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    timings: dict[str, float] = {}

    def stage(name, kind="runtime"):
        return _Stage(name, timings, kind)

    with stage("load", "data"):
        g, inputs = load_dataset(cfg)
    with stage("core_extraction"):
        part = extract_core(g, cfg)
        if part.n == 0:
            raise PipelineError("core_extraction", "empty periphery; nothing to predict", "data")
        ids = g.node_ids
        (out / "core.txt").write_text("".join(f"{ids[c]}\n" for c in part.core), encoding="utf-8")
        with open(out / "bipartite.tsv", "w", encoding="utf-8") as fh:
            for u, c in part.bipartite_edges():
                fh.write(f"{ids[u]}\t{ids[c]}\n")
    with stage("dynamics"):
        scores, traj, info = predict(part, g, cfg)
        peri_ids = [ids[u] for u in part.periphery]
        write_matrix(out / "scores.tsv", peri_ids, scores)
        truth = g.labels[part.periphery]
        write_matrix(out / "truth.tsv", peri_ids, truth, integer=True)
        (out / "trajectory.tsv").write_text(traj.to_tsv(), encoding="utf-8")
    with stage("eval"):
        ev = evaluate(truth, scores, binary=cfg.method == "label-prop")
        ev.coverage = 100.0 * part.coverage_fraction
        ev.core_fraction = 100.0 * part.core_fraction
        ev.bipartite_edge_fraction = 100.0 * part.bipartite_edge_fraction
        evaluation = ev.as_dict()
        evaluation.pop("runtime_s")

    timings["total"] = sum(timings.values())
    report = RunReport(config=cfg.echo(), inputs=inputs, partition=partition_stats(part),
                       evaluation=evaluation, trajectory=traj.summary(),
                       method_info=info, timings=timings)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("run written to %s", out)
    return report, out


class _Stage:
    """Times a block and re-raises its errors tagged with the stage name."""

    def __init__(self, name, timings, kind):
        self.name, self.timings, self.kind = name, timings, kind

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.start
        if exc is None or isinstance(exc, PipelineError):
            return False
        kind = "data" if isinstance(exc, (GraphFormatError, OSError)) else self.kind
        raise PipelineError(self.name, f"{type(exc).__name__}: {exc}", kind) from exc


TABLE_METRICS = ("auc_all", "auc_top50", "rmse_macro", "f1_micro", "runtime_s",
                 "coverage", "core_fraction", "bipartite_edge_fraction")


def _cell(value) -> str:
    if value is None:
        return "—"
    if isinstance(value, float):
        return f"{value:.3f}" if abs(value) < 1 else f"{value:.2f}"
    return str(value)


def export_tables(run_dirs, fmt: str = "markdown") -> str:
    """Method rows by (metric, dataset) columns, in the order runs are given."""
    runs = []
    for run in run_dirs:
        run = Path(run)
        report = RunReport.from_json((run / "report.json").read_text(encoding="utf-8"))
        timings_path = run / "timings.json"
        timings = json.loads(timings_path.read_text(encoding="utf-8")) if timings_path.exists() else {}
        metrics = dict(report.evaluation)
        metrics["runtime_s"] = timings.get("total")
        runs.append((report.config["method"], report.inputs.get("dataset", "?"), metrics))
    methods = list(dict.fromkeys(m for m, _, _ in runs))
    datasets = list(dict.fromkeys(d for _, d, _ in runs))
    grid = {(m, d): metrics for m, d, metrics in runs}
    header = ["method"] + [f"{metric}:{ds}" for metric in TABLE_METRICS for ds in datasets]
    rows = []
    for m in methods:
        cells = [m]
        for metric in TABLE_METRICS:
            for ds in datasets:
                cells.append(_cell(grid.get((m, ds), {}).get(metric)))
        rows.append(cells)
    if fmt == "tsv":
        return "\n".join("\t".join(r) for r in [header] + rows) + "\n"
    if fmt != "markdown":
        raise ValueError("fmt must be 'markdown' or 'tsv'")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"
