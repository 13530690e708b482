"""Command-line entry point (``nnim``).

Exit codes: 0 success, 2 configuration error, 3 data error,
4 non-convergence when ``--strict`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import theory
from .core import coverage_tsv, coverage_curve
from .dynamics import homophilic_index, run_nnim
from .graph import GraphFormatError, dump_graph, load_snap_ego
from .metrics import evaluate
from .pipeline import (BASELINES, METHODS, ConfigError, PipelineError, RunConfig, export_tables,
                       extract_core, load_config, load_dataset, partition_stats, pipeline, read_matrix,
                       write_matrix)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4

logger = logging.getLogger("nnim")


class NotConverged(RuntimeError):
    pass


def _dataset_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--edges", help="edge list, one 'src<TAB>dst' per line")
    g.add_argument("--labels", help="label file, 'node<TAB>i1,i2,...'")
    g.add_argument("--snap-dir", help="directory with SNAP ego files (<ego>.edges, .feat, .egofeat)")
    g.add_argument("--ego", help="ego id inside --snap-dir (default 107)")
    g.add_argument("--undirected", dest="directed", action="store_const", const=False,
                   help="treat edges as undirected (SNAP alter pairs are symmetrized)")
    g.add_argument("--d", type=int, help="number of labels (default: max index + 1)")


def _core_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("core extraction")
    budget = g.add_mutually_exclusive_group()
    budget.add_argument("--p", type=float, help="budget exponent, K = ceil(N^p) (default 0.7)")
    budget.add_argument("--K", type=int, help="explicit core budget")
    g.add_argument("--gamma", type=float, help="bucket growth factor (default 2)")
    g.add_argument("--tau", type=int, help="engagement threshold on out-degree (default 4)")


def _dynamics_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dynamics")
    g.add_argument("--k", help="neighbours: log, sqrt or an integer")
    g.add_argument("--D", type=float, help="stop once the L1,1 displacement is <= D (default 1e-3)")
    g.add_argument("--max-steps", type=int, help="step cap (default 100)")


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", dest="out_dir", help="parent directory for run directories (default runs)")
    p.add_argument("--run-name", help="run directory name (default: method + UTC timestamp)")


def _nnim_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inference")
    g.add_argument("--alpha", type=float, help="pull towards the initial beliefs")
    g.add_argument("--pca-variance", help="explained variance kept by PCA, or 'none'")
    g.add_argument("--index", choices=("exact", "lsh"))
    g.add_argument("--trees", type=int, help="LSH trees (default 10)")
    g.add_argument("--leaf-capacity", type=int, help="LSH leaf size (default 64)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 17)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    common.add_argument("--strict", action="store_true", help="exit 4 when a run does not converge")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="nnim", description="Interest prediction on core-periphery networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-core", parents=[common], help="BGMC core, bipartite edges and stats")
    _dataset_args(p)
    _core_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--curve", help="comma-separated exponents; also write a coverage curve TSV")

    p = sub.add_parser("simulate", parents=[common], help="stochastic NNIM from an initial parameter matrix")
    p.add_argument("--xi0", required=True, help="TSV matrix of initial Bernoulli parameters")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--snapshot-every", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("infer", parents=[common], help="mean-field NNIM prediction run")
    _dataset_args(p)
    _core_args(p)
    _dynamics_args(p)
    _nnim_args(p)
    _run_args(p)

    p = sub.add_parser("baseline", parents=[common], help="baseline prediction run")
    p.add_argument("--method", required=True, choices=BASELINES)
    _dataset_args(p)
    _core_args(p)
    _dynamics_args(p)
    p.add_argument("--epsilon-radius", type=float, help="random-hk ball radius (default sqrt(d/2))")
    _run_args(p)

    p = sub.add_parser("pipeline", parents=[common], help="full run of any method from a config file")
    p.add_argument("--method", choices=METHODS)
    _dataset_args(p)
    _core_args(p)
    _dynamics_args(p)
    _nnim_args(p)
    p.add_argument("--epsilon-radius", type=float)
    _run_args(p)

    p = sub.add_parser("evaluate", parents=[common], help="score a prediction matrix against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--binary", action="store_true", help="also report micro-F1 (scores must be 0/1)")
    p.add_argument("--out", help="write report.json and row.tsv here")

    p = sub.add_parser("hi", parents=[common], help="homophilic index of a labeled graph")
    _dataset_args(p)
    p.add_argument("--k-policy", default="outdegree+1", help="outdegree+1, log, sqrt or an integer")

    p = sub.add_parser("check", parents=[common], help="empirical convergence-theory suites")
    p.add_argument("--suite", default="all",
                   choices=("convergence", "bound", "ordering", "overlap", "concentration", "all"))
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--D", type=float, default=1e-3)
    p.add_argument("--out", help="directory for JSON + TSV reports and counterexamples")

    p = sub.add_parser("export", parents=[common], help="aggregate run reports into a results table")
    p.add_argument("runs", nargs="*")
    p.add_argument("--format", choices=("markdown", "tsv"), default="markdown")

    p = sub.add_parser("convert-snap-ego", parents=[common], help="SNAP ego files to the canonical dump")
    p.add_argument("--snap-dir", required=True)
    p.add_argument("--ego", default="107")
    p.add_argument("--undirected", action="store_true")
    p.add_argument("--out", required=True)
    return parser


_CONFIG_FLAGS = ("edges", "labels", "snap_dir", "ego", "directed", "d", "p", "K", "gamma", "tau",
                 "method", "k", "D", "alpha", "pca_variance", "index", "trees", "leaf_capacity",
                 "epsilon_radius", "seed", "max_steps", "out_dir", "run_name")


def _config_from_args(args, **forced) -> RunConfig:
    overrides = {name: getattr(args, name) for name in _CONFIG_FLAGS if getattr(args, name, None) is not None}
    overrides.update(forced)
    return load_config(getattr(args, "config", None), overrides)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_extract_core(args) -> int:
    cfg = _config_from_args(args, method="cf-bipartite")
    g, inputs = load_dataset(cfg)
    part = extract_core(g, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = g.node_ids
    (out / "core.txt").write_text("".join(f"{ids[c]}\n" for c in part.core), encoding="utf-8")
    with open(out / "bipartite.tsv", "w", encoding="utf-8") as fh:
        for u, c in part.bipartite_edges():
            fh.write(f"{ids[u]}\t{ids[c]}\n")
    stats = {"inputs": inputs, "partition": partition_stats(part),
             "K": int(cfg.K) if cfg.K is not None else None, "p": cfg.p, "gamma": cfg.gamma, "tau": cfg.tau}
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.curve:
        exps = [float(x) for x in args.curve.split(",")]
        (out / "coverage_curve.tsv").write_text(coverage_tsv(coverage_curve(g, exps, cfg.gamma, cfg.tau)),
                                                encoding="utf-8")
    _print_json(stats["partition"])
    return EXIT_OK


def cmd_simulate(args) -> int:
    _, xi0 = read_matrix(args.xi0)
    seed = 17 if args.seed is None else args.seed
    state, traj = run_nnim(xi0, args.k, args.epsilon, args.max_steps, seed, snapshot_every=args.snapshot_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.tsv").write_text(traj.to_tsv(), encoding="utf-8")
    ids = [str(i) for i in range(state.xi.shape[0])]
    write_matrix(out / "final_xi.tsv", ids, state.xi)
    for t, snap in sorted(traj.snapshots.items()):
        write_matrix(out / f"snapshot_{t}.tsv", ids, snap)
    report = {"k": args.k, "epsilon": args.epsilon, "seed": seed, **traj.summary()}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _print_json(report)
    if args.strict and not traj.converged:
        raise NotConverged(f"simulation did not reach epsilon={args.epsilon} in {args.max_steps} steps")
    return EXIT_OK


def _run_pipeline(cfg: RunConfig, strict: bool) -> int:
    report, out = pipeline(cfg)
    _print_json({"run_dir": str(out), "evaluation": report.evaluation, "trajectory": report.trajectory})
    steps = report.trajectory["steps"]
    if strict and steps and not report.trajectory["converged"]:
        raise NotConverged(f"{cfg.method} did not converge within {cfg.max_steps} steps")
    return EXIT_OK


def cmd_infer(args) -> int:
    return _run_pipeline(_config_from_args(args, method="nnim"), args.strict)


def cmd_baseline(args) -> int:
    return _run_pipeline(_config_from_args(args), args.strict)


def cmd_pipeline(args) -> int:
    return _run_pipeline(_config_from_args(args), args.strict)


def cmd_evaluate(args) -> int:
    truth_ids, truth = read_matrix(args.truth)
    score_ids, scores = read_matrix(args.scores)
    if truth.shape[1] != scores.shape[1]:
        raise GraphFormatError(f"label count mismatch: truth {truth.shape[1]} vs scores {scores.shape[1]}")
    pos = {name: i for i, name in enumerate(score_ids)}
    missing = [name for name in truth_ids if name not in pos]
    if missing:
        raise GraphFormatError(f"{len(missing)} truth rows have no score row (first: {missing[0]})")
    scores = scores[[pos[name] for name in truth_ids]]
    if scores.min(initial=0) < 0 or scores.max(initial=0) > 1:
        raise GraphFormatError("scores must lie in [0, 1]")
    ev = evaluate(truth, scores, binary=args.binary).as_dict()
    fields = [k for k, v in ev.items() if v is not None]
    row = "\t".join(fields) + "\n" + "\t".join(f"{ev[k]:.17g}" for k in fields) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(ev, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "row.tsv").write_text(row, encoding="utf-8")
    _print_json(ev)
    return EXIT_OK


def cmd_hi(args) -> int:
    cfg = _config_from_args(args, method="cf-bipartite")
    g, inputs = load_dataset(cfg)
    policy = args.k_policy
    if policy.isdigit():
        policy = int(policy)
    _print_json({"dataset": inputs["dataset"], "k_policy": args.k_policy, "homophilic_index": homophilic_index(g, policy)})
    return EXIT_OK


def _suite_rows(report: dict) -> str:
    flat = {k: v for k, v in report.items() if not isinstance(v, (list, dict))}
    keys = sorted(flat)
    return "\t".join(keys) + "\n" + "\t".join(str(flat[k]) for k in keys) + "\n"


def cmd_check(args) -> int:
    seed = 17 if args.seed is None else args.seed
    suites = ("convergence", "bound", "ordering", "overlap", "concentration") if args.suite == "all" else (args.suite,)
    if args.k < 1 or args.n < args.k:
        raise ConfigError("need 1 <= k <= n")
    reports = []
    for suite in suites:
        if suite == "convergence":
            rep = theory.check_finite_convergence(args.n, args.k, args.trials, seed, dump_dir=args.out)
        elif suite == "bound":
            if args.k < 2:
                raise ConfigError("the bound suite needs k >= 2")
            rep = theory.check_iteration_bound(args.n, args.k, args.D, args.trials, seed)
        elif suite == "ordering":
            rep = theory.check_ordering_and_splits(args.n, args.k, args.trials, seed, dump_dir=args.out)
        elif suite == "overlap":
            xi0 = np.random.default_rng([seed, args.n]).random((args.n, 8))
            rep = theory.knn_overlap_diagnostic(xi0, args.k, seed=seed)
        else:
            rep = theory.check_hamming_concentration(seed=seed)
        reports.append(rep)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for rep in reports:
            name = rep["suite"]
            (out / f"{name}.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            (out / f"{name}.tsv").write_text(_suite_rows(rep), encoding="utf-8")
    _print_json(reports if len(reports) > 1 else reports[0])
    return EXIT_OK


def cmd_export(args) -> int:
    sys.stdout.write(export_tables(args.runs, args.format))
    return EXIT_OK


def cmd_convert(args) -> int:
    g = load_snap_ego(args.snap_dir, args.ego, symmetrize=args.undirected)
    out = dump_graph(g, args.out)
    _print_json({"out": str(out), "N": g.n_nodes, "E": g.n_edges, "d": g.d})
    return EXIT_OK


COMMANDS = {
    "extract-core": cmd_extract_core, "simulate": cmd_simulate, "infer": cmd_infer,
    "baseline": cmd_baseline, "pipeline": cmd_pipeline, "evaluate": cmd_evaluate, "hi": cmd_hi,
    "check": cmd_check, "export": cmd_export, "convert-snap-ego": cmd_convert,
}


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return {"config": EXIT_CONFIG, "data": EXIT_DATA}.get(exc.kind, 1)
    except (GraphFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
