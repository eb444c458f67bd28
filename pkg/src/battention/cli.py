"""Command-line front end. Every subcommand reads and writes flat files.

Exit codes: 0 success, 2 usage error, 3 data or validation error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .attention import FUSIONS, VARIANTS, load_checkpoint, save_checkpoint
from .clustering import g_cut, knn_edges, threshold_sweep
from .errors import InfeasibleBoundError, NumericError, ParameterError, ValidationError
from .graph import avg_enr, build_knn_graph, l2_normalize
from .metrics import auc, bcubed_f, mean_average_precision, pairwise_f, roc_points
from .multitest import TestModel, min_m, sim_m_edges, simulate, target_delta, write_simulation_csv
from .synthetic import gen_synthetic
from .training import Network, TrainConfig, enhance, train

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
DEFAULT_GRID = "-1:1:81"


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _grid(text: str) -> np.ndarray:
    """``start:stop:num`` (inclusive linspace) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, num = text.split(":")
            return np.linspace(float(start), float(stop), int(num))
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold grid {text!r}") from None


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> None:
    x, labels = gen_synthetic(args.classes, args.samples, args.dim, args.noise, args.seed)
    io.write_feat(args.out_features, x)
    io.write_labels(args.out_labels, labels)


def cmd_build_graph(args) -> None:
    graph = build_knn_graph(io.read_features(args.features), args.k)
    io.write_knn_csv(args.out, graph)


def cmd_eval_sim(args) -> None:
    x = l2_normalize(io.read_features(args.features))
    labels = io.read_labels(args.labels).labels
    rows = []
    for k in args.k:
        graph = build_knn_graph(x, k)
        r, c, s, m, _ = sim_m_edges(graph, x, args.mode, args.binary_threshold)
        pos = labels[r] == labels[c]
        a_s, a_m = auc((s, pos)), auc((m, pos))
        rows.append((k, avg_enr(graph, labels), a_s, a_m, a_m - a_s))
    io.write_csv(args.out, ["k", "enr", "auc_s", "auc_m", "auc_delta"], rows)
    print(f"{'k':>5} {'ENR':>6} {'AUC_S':>7} {'AUC_M':>7} {'delta':>7}")
    for k, e, a_s, a_m, d in rows:
        print(f"{k:>5} {e:6.2f} {100 * a_s:7.2f} {100 * a_m:7.2f} {100 * d:7.2f}")


def cmd_simulate(args) -> None:
    model = TestModel(p=args.p, q=args.q, alpha=args.alpha, m=args.m, gamma=args.gamma,
                      s_plus=args.s_plus, s_minus=args.s_minus, mode=args.mode, noise_std=args.noise_std)
    required = min_m(model)
    report = simulate(model, args.trials, seed=args.seed, workers=args.workers)
    extra = {"mode": model.mode, "gamma": model.gamma, "alpha": model.alpha, "min_m": required,
             "target_delta": target_delta(model)}
    if model.mode == "binary":
        extra.update(p=model.p, q=model.q)
    else:
        extra.update(s_plus=model.s_plus, s_minus=model.s_minus, noise_std=model.noise_std)
    write_simulation_csv(args.out, report, extra)
    print(io.format_kv({**report.summary(), **extra}), end="")


def cmd_train(args) -> None:
    text = Path(args.config).read_text() if args.config else ""
    config = TrainConfig.from_text(text, epochs=args.epochs, k=args.k, layers=args.layers, seed=args.seed,
                                   variant=args.variant, fusion=args.fusion, learning_rate=args.learning_rate)
    result = train(io.read_features(args.features), io.read_labels(args.labels), config)
    net = result.network
    save_checkpoint(args.out_checkpoint, list(net.layers), net.head, net.head_slope)
    if args.out_loss:
        io.write_csv(args.out_loss, ["epoch", "lr", "loss"],
                     [(e, lr, loss) for e, (lr, loss) in enumerate(zip(result.lrs, result.losses))])


def cmd_enhance(args) -> None:
    layers, head, slope = load_checkpoint(args.checkpoint)
    net = Network(tuple(layers), head, slope)
    io.write_feat(args.out, enhance(io.read_features(args.features), net))


def _edges(args, x):
    graph = build_knn_graph(x, args.k)
    return knn_edges(graph, x, args.combine, args.scorer)


def cmd_cluster(args) -> None:
    x = l2_normalize(io.read_features(args.features))
    assign = g_cut(_edges(args, x), x.rows, args.threshold)
    io.write_csv(args.out, ["node", "cluster"], enumerate(assign.tolist()))


def cmd_sweep(args) -> None:
    x = l2_normalize(io.read_features(args.features))
    labels = io.read_labels(args.labels)
    res = threshold_sweep(_edges(args, x), x.rows, labels, args.grid)
    io.write_csv(args.out, ["threshold", "fp", "fb"], res.rows)
    print(io.format_kv({"best_threshold": res.best_threshold, "fp": res.best_fp, "fb": res.best_fb}), end="")


def _read_clusters(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["node", "cluster"]:
            raise ValidationError(f"{path}: expected header node,cluster")
        rows = sorted((int(r["node"]), int(r["cluster"])) for r in reader)
    if [n for n, _ in rows] != list(range(len(rows))):
        raise ValidationError(f"{path}: every node must appear exactly once")
    return np.array([c for _, c in rows], dtype=np.int64)


def cmd_metrics(args) -> None:
    x = l2_normalize(io.read_features(args.features))
    labels = io.read_labels(args.labels).labels
    graph = build_knn_graph(x, args.k)
    r, c, s, _, _ = sim_m_edges(graph, x)
    pos = labels[r] == labels[c]
    summary = {"auc": auc((s, pos))}
    map_res = mean_average_precision(x, labels, return_skipped=True)
    summary.update(map=map_res.value, map_skipped=map_res.skipped)
    if args.clusters:
        assign = _read_clusters(args.clusters)
    else:
        res = threshold_sweep(knn_edges(graph, x, args.combine), x.rows, labels, args.grid)
        assign = g_cut(knn_edges(graph, x, args.combine), x.rows, res.best_threshold)
        summary["threshold"] = res.best_threshold
    pp, pr, pf = pairwise_f(assign, labels)
    bp, br, bf = bcubed_f(assign, labels)
    summary.update(fp=pf, fp_precision=pp, fp_recall=pr, fb=bf, fb_precision=bp, fb_recall=br,
                   f_min=min(pf, bf))
    text = io.format_kv(summary)
    Path(args.out_summary).write_text(text)
    if args.out_roc:
        io.write_csv(args.out_roc, ["fpr", "tpr", "threshold"], roc_points((s, pos)))
    print(text, end="")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="battention", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a labelled synthetic feature set")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--samples", type=int, required=True, help="samples per class")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.5, help="perturbation norm relative to the centroid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-features", required=True, help="FEAT output path")
    p.add_argument("--out-labels", required=True, help="label file output path")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-graph", help="exact cosine kNN graph as CSV probe,neighbor,score")
    p.add_argument("--features", required=True, help="FEAT or CSV features")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("eval-sim", help="AUC of Sim-S vs Sim-M over kNN pairs for several k")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=_int_list, default=[5, 10, 20, 40], help="comma-separated k values")
    p.add_argument("--mode", choices=["real", "binary"], default="real")
    p.add_argument("--binary-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="CSV k,enr,auc_s,auc_m,auc_delta")
    p.set_defaults(func=cmd_eval_sim)

    p = sub.add_parser("simulate", help="Monte-Carlo check of single-test vs Sim-M error rates")
    p.add_argument("--gamma", type=float, required=True, help="error reduction factor (> 1)")
    p.add_argument("--p", type=float, default=0.8, help="same-category connection probability")
    p.add_argument("--q", type=float, default=0.2, help="cross-category connection probability")
    p.add_argument("--alpha", type=float, default=0.7, help="same-category share of the candidate pool")
    p.add_argument("--m", type=int, default=None, help="pool size (default: the minimum for gamma)")
    p.add_argument("--mode", choices=["binary", "real"], default="binary")
    p.add_argument("--s-plus", type=float, default=0.8, help="real mode: same-category mean similarity")
    p.add_argument("--s-minus", type=float, default=0.3, help="real mode: cross-category mean similarity")
    p.add_argument("--noise-std", type=float, default=0.2, help="real mode: truncated-Gaussian std")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="simulate.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train an attention stack on labelled features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--fusion", choices=FUSIONS)
    p.add_argument("--out-checkpoint", required=True, help="BATT checkpoint path")
    p.add_argument("--out-loss", help="CSV epoch,lr,loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="run features through a trained checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="FEAT output path")
    p.set_defaults(func=cmd_enhance)

    for name, helptext in (("cluster", "G-cut clustering at one threshold"),
                           ("sweep", "G-cut over a threshold grid, scored by F_P and F_B")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--features", required=True)
        p.add_argument("--k", type=int, default=10)
        p.add_argument("--combine", choices=["union", "intersection"], default="union")
        p.add_argument("--scorer", choices=["cosine", "simm"], default="cosine")
        p.add_argument("--out", required=True)
        if name == "cluster":
            p.add_argument("--threshold", type=float, required=True)
            p.set_defaults(func=cmd_cluster)
        else:
            p.add_argument("--labels", required=True)
            p.add_argument("--grid", type=_grid, default=_grid(DEFAULT_GRID), help="start:stop:num or comma list; write --grid=-1:1:81 when it starts with a minus")
            p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="AUC, mAP and clustering F-scores")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=int, default=10, help="kNN size for AUC pairs and clustering edges")
    p.add_argument("--clusters", help="CSV node,cluster; default: best G-cut over --grid")
    p.add_argument("--combine", choices=["union", "intersection"], default="union")
    p.add_argument("--grid", type=_grid, default=_grid(DEFAULT_GRID), help="sweep grid, as for sweep")
    p.add_argument("--out-summary", required=True, help="key=value summary path")
    p.add_argument("--out-roc", help="CSV fpr,tpr,threshold")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InfeasibleBoundError, NumericError) as exc:
        print(f"battention: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"battention: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, OSError) as exc:
        print(f"battention: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
