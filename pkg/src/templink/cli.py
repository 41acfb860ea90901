"""Command-line entry point: ingest raw edge lists, generate synthetic
sequences, and run reproducible training/evaluation experiments."""

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, ContractError, IngestionError, TemplinkError
from .graphs import (
    ColumnSchema,
    Snapshot,
    TemporalGraph,
    ingest_edge_list,
    new_edges,
    read_snapshot_file,
    write_snapshot_file,
)
from .model import ModelConfig, build_model, count_parameters, preset_config
from .rollout import history_cut, trained_rollout
from .synthetic import RewireConfig, SbmConfig, generate_rewire, generate_sbm
from .training import TrainConfig, rolling_evaluation

OUTPUT_DIR_VAR = "TEMPLINK_OUTPUT_DIR"


def _output_dir(args):
    chosen = args.output_dir or os.environ.get(OUTPUT_DIR_VAR) or "."
    os.makedirs(chosen, exist_ok=True)
    return chosen


def _float_cell(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _float_cell(c) for c in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_training_log(path, log):
    rows = [(epoch, *entry) for epoch, entry in enumerate(log, start=1)]
    _write_csv(path, ("epoch", "reconstruction", "kl", "l2", "total"), rows)


# --- configuration assembly -------------------------------------------------

def _load_config_file(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path}: {err}")
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path}: expected a JSON object")
    model = payload.get("model")
    train = payload.get("train")
    return (
        ModelConfig.from_dict(model) if model is not None else None,
        TrainConfig.from_dict(train) if train is not None else None,
    )


def _resolve_configs(args):
    """Precedence: explicit flags > config file > built-in defaults."""
    model_cfg, train_cfg = None, None
    if args.config:
        if os.path.exists(args.config) or args.config.endswith(".json"):
            model_cfg, train_cfg = _load_config_file(args.config)
        else:
            model_cfg = preset_config(args.config)
    if args.ablation:
        model_cfg = preset_config(args.ablation)
    if model_cfg is None:
        model_cfg = preset_config("TNA")
    if train_cfg is None:
        train_cfg = TrainConfig()
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.learning_rate is not None:
        overrides["learning_rate"] = args.learning_rate
    if args.l2_lambda is not None:
        overrides["l2_lambda"] = args.l2_lambda
    if overrides:
        train_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), **overrides})
    return model_cfg, train_cfg


# --- commands ----------------------------------------------------------------

def cmd_ingest(args):
    schema = ColumnSchema(args.source_column, args.target_column, args.timestamp_column)
    graph = ingest_edge_list(args.input, schema=schema, granularity=args.granularity)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    out = args.output or os.path.join(_output_dir(args), stem + ".snapshots")
    write_snapshot_file(graph, out)
    print(f"vertices: {graph.vertex_count}")
    print(f"snapshots: {graph.T} ({graph.granularity_label})")
    for t in range(1, graph.T + 1):
        fresh = "" if t == 1 else f" new={len(new_edges(graph, t))}"
        print(f"  t={t} edges={graph.snapshot(t).edge_count}{fresh}")
    print(f"wrote {out}")
    return 0


def _run_rollout(args, graph, model_cfg, train_cfg, out_dir):
    start_t = history_cut(graph.T, args.train_fraction)
    result, log = trained_rollout(
        graph,
        model_cfg,
        train_cfg,
        start_t,
        args.horizon,
        seed=args.seed,
        binarize=args.binarize,
        tau=args.tau,
    )
    _write_training_log(os.path.join(out_dir, "training_log.csv"), [b.as_row() for b in log])
    rows = [(s.k, s.t, s.record.auc, s.record.ap) for s in result.steps]
    _write_csv(os.path.join(out_dir, "results.csv"), ("k", "t", "auc", "ap"), rows)
    summary = {
        "dataset": args.dataset,
        "config": {
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "mode": "rollout",
            "train_fraction": args.train_fraction,
            "start_t": start_t,
            "horizon": args.horizon,
            "binarize": args.binarize,
            "tau": args.tau,
            "seed": args.seed,
        },
        "k": [s.k for s in result.steps],
        "t": [s.t for s in result.steps],
        "auc": [s.record.auc for s in result.steps],
        "ap": [s.record.ap for s in result.steps],
        "threshold_precision": [s.record.threshold_precision for s in result.steps],
        "n_pos": [s.record.n_pos for s in result.steps],
        "n_neg": [s.record.n_neg for s in result.steps],
        "skipped": list(result.skipped),
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    for step in result.steps:
        print(f"k={step.k} t={step.t} auc={step.record.auc:.4f} ap={step.record.ap:.4f}")
    return 0


def cmd_run(args):
    model_cfg, train_cfg = _resolve_configs(args)
    graph = read_snapshot_file(args.dataset)
    out_dir = _output_dir(args)
    parameter_count = count_parameters(
        build_model(model_cfg, graph.vertex_count, np.random.default_rng(0))
    )
    print(f"parameters: {parameter_count}")
    if args.mode == "rollout":
        return _run_rollout(args, graph, model_cfg, train_cfg, out_dir)

    sweep = rolling_evaluation(
        graph,
        model_cfg,
        train_cfg,
        seed=args.seed,
        fraction=args.fraction,
        mode=args.mode,
        workers=args.workers,
        checkpoint_dir=out_dir if args.save_checkpoints else None,
    )
    for t, log in sorted(sweep.training_logs.items()):
        _write_training_log(os.path.join(out_dir, f"training_log_t{t}.csv"), log)
    rows = [(r.t, r.record.auc, r.record.ap) for r in sweep.results]
    rows.append(("mean", sweep.mean_auc, sweep.mean_ap))
    _write_csv(os.path.join(out_dir, "results.csv"), ("t", "auc", "ap"), rows)
    summary = {
        "dataset": args.dataset,
        "config": {
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "mode": args.mode,
            "fraction": args.fraction,
            "seed": args.seed,
        },
        "parameters": parameter_count,
        "t": [r.t for r in sweep.results],
        "auc": [r.record.auc for r in sweep.results],
        "ap": [r.record.ap for r in sweep.results],
        "threshold_precision": [r.record.threshold_precision for r in sweep.results],
        "n_pos": [r.record.n_pos for r in sweep.results],
        "n_neg": [r.record.n_neg for r in sweep.results],
        "skipped": list(sweep.skipped),
        "mean_auc": sweep.mean_auc,
        "std_auc": sweep.std_auc,
        "mean_ap": sweep.mean_ap,
        "std_ap": sweep.std_ap,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    print(f"auc: {sweep.mean_auc:.4f} +/- {sweep.std_auc:.4f}")
    print(f"ap:  {sweep.mean_ap:.4f} +/- {sweep.std_ap:.4f}")
    if sweep.skipped:
        print(f"skipped targets (no new edges): {list(sweep.skipped)}")
    return 0


def _load_seed_snapshot(path):
    """Seed graph for rewiring: snapshot container or a plain pair-per-line
    edge list (arbitrary ids, re-indexed densely)."""
    try:
        return read_snapshot_file(path).snapshot(1)
    except (IngestionError, ContractError):
        pass
    pairs = []
    with open(path) as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(("#", "%")):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 2:
                raise IngestionError("expected two vertex ids", line_number=number)
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise IngestionError("vertex ids must be integers", line_number=number)
    if not pairs:
        raise IngestionError("no edges in seed graph")
    ids = sorted({v for pair in pairs for v in pair})
    index = {v: k for k, v in enumerate(ids)}
    return Snapshot(len(ids), [(index[a], index[b]) for a, b in pairs if a != b])


def cmd_synth(args):
    out_dir = _output_dir(args)
    if args.generator == "sbm":
        config = SbmConfig(
            vertex_count=args.n,
            communities=args.k,
            snapshots=args.t,
            migrators_per_step=args.migrators,
            p_intra=args.p_intra,
            p_inter=args.p_inter,
            seed=args.seed,
        )
        graph = generate_sbm(config)
        out = args.output or os.path.join(out_dir, "sbm.snapshots")
    else:
        source = _load_seed_snapshot(args.seed_graph)
        config = RewireConfig(
            source_graph=source,
            snapshots=args.t,
            edges_rewired_per_step=args.per_step,
            seed=args.seed,
        )
        graph = generate_rewire(config)
        out = args.output or os.path.join(out_dir, "rewire.snapshots")
    write_snapshot_file(graph, out)
    print(f"vertices: {graph.vertex_count}")
    print(f"snapshots: {graph.T}")
    print(f"wrote {out}")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="templink",
        description="Temporal graph embeddings and next-snapshot link prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="convert a timestamped edge list to snapshots")
    ingest.add_argument("input")
    ingest.add_argument("--output", help="snapshot file path")
    ingest.add_argument("--output-dir", help=f"fallback: ${OUTPUT_DIR_VAR} or cwd")
    ingest.add_argument("--granularity", default="month",
                        help="month, week, or fixed_count:N")
    ingest.add_argument("--source-column", type=int, default=0)
    ingest.add_argument("--target-column", type=int, default=1)
    ingest.add_argument("--timestamp-column", type=int, default=2)
    ingest.set_defaults(handler=cmd_ingest)

    run = sub.add_parser("run", help="train and evaluate on a snapshot file")
    run.add_argument("--dataset", required=True, help="snapshot file from ingest/synth")
    run.add_argument("--config", help="preset name or JSON config file")
    run.add_argument("--ablation", help="preset overriding the model part of --config")
    run.add_argument("--mode", default="new-edges",
                     choices=("new-edges", "full-graph", "rollout"))
    run.add_argument("--fraction", type=float, default=1.0,
                     help="leading share of targets to evaluate")
    run.add_argument("--train-fraction", type=float, default=0.7,
                     help="rollout only: share of history to train on")
    run.add_argument("--horizon", type=int, default=1, help="rollout steps ahead")
    run.add_argument("--binarize", default="threshold", choices=("threshold", "top_k"))
    run.add_argument("--tau", type=float, default=0.5, help="threshold binarization cut")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--epochs", type=int)
    run.add_argument("--learning-rate", type=float)
    run.add_argument("--l2-lambda", type=float)
    run.add_argument("--save-checkpoints", action="store_true")
    run.add_argument("--output-dir", help=f"fallback: ${OUTPUT_DIR_VAR} or cwd")
    run.set_defaults(handler=cmd_run)

    synth = sub.add_parser("synth", help="generate a synthetic snapshot sequence")
    gen = synth.add_subparsers(dest="generator", required=True)

    sbm = gen.add_parser("sbm", help="migrating stochastic block model")
    sbm.add_argument("--n", type=int, default=3000, help="vertices")
    sbm.add_argument("--k", type=int, default=3, help="communities")
    sbm.add_argument("--t", type=int, default=30, help="snapshots")
    sbm.add_argument("--migrators", type=int, default=20, help="movers per step")
    sbm.add_argument("--p-intra", type=float, default=0.01)
    sbm.add_argument("--p-inter", type=float, default=0.0005)
    sbm.add_argument("--seed", type=int, default=0)
    sbm.add_argument("--output")
    sbm.add_argument("--output-dir", help=f"fallback: ${OUTPUT_DIR_VAR} or cwd")
    sbm.set_defaults(handler=cmd_synth)

    rewire = gen.add_parser("rewire", help="edge-conserving random rewiring")
    rewire.add_argument("--seed-graph", required=True,
                        help="snapshot file or plain edge list")
    rewire.add_argument("--t", type=int, default=10, help="snapshots")
    rewire.add_argument("--per-step", type=int, default=100, help="edges moved per step")
    rewire.add_argument("--seed", type=int, default=0)
    rewire.add_argument("--output")
    rewire.add_argument("--output-dir", help=f"fallback: ${OUTPUT_DIR_VAR} or cwd")
    rewire.set_defaults(handler=cmd_synth)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except FileNotFoundError as err:
        print(f"error: no such file: {err.filename}", file=sys.stderr)
        return 2
    except (ConfigError, ContractError, IngestionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except TemplinkError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
