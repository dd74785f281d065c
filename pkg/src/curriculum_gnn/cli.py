"""Command-line interface.

Verbs: ``gen-synthetic`` writes a planted-partition dataset as a manifest
directory; ``train`` runs a multi-seed experiment; ``evaluate`` rescores
a saved model on a split; ``ablate`` runs the six-variant grid; ``sweep``
walks one sweep axis; ``export-embeddings`` dumps final node embeddings.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence. Relative dataset paths are also resolved against the
``CGNN_DATA_DIR`` environment variable when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data_io import DataError, save_dataset, write_json
from .graph import ImbalanceSpec
from .losses import CurriculumConfig
from .metrics import compute_metrics
from .model import ABLATIONS, VARIANTS, Model
from .runs import (SWEEP_AXES, ConfigError, RunConfig, build_graph_for,
                   export_embeddings, prepare_split, run, run_ablation, run_sweep)
from .synthetic import SyntheticSpec, generate_sbm
from .training import DivergenceError, TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def resolve_dataset(path: str) -> str:
    p = Path(path)
    if p.exists():
        return str(p)
    cache = os.environ.get("CGNN_DATA_DIR")
    if cache:
        candidate = Path(cache) / path
        if candidate.exists():
            return str(candidate)
    return str(p)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="RunConfig JSON file; flags override it")
    parser.add_argument("--dataset", help="path to a dataset meta.json")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
    parser.add_argument("--seed", type=int, help="single seed (shorthand)")
    parser.add_argument("--rho", type=float, help="minority/majority train ratio")
    parser.add_argument("--minority-classes", help="comma-separated class ids")
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--ablation", choices=ABLATIONS)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--weight-decay", type=float)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--heads", type=int)
    parser.add_argument("--layers", type=int)


def _run_config_from_args(args) -> RunConfig:
    if args.config:
        with open(args.config) as f:
            config = RunConfig.from_dict(json.load(f))
    else:
        if not args.dataset:
            raise ConfigError("either --config or --dataset is required")
        config = RunConfig(dataset=resolve_dataset(args.dataset),
                           out_dir=args.out or "runs/out")
    updates = {}
    if args.dataset:
        updates["dataset"] = resolve_dataset(args.dataset)
    if args.out:
        updates["out_dir"] = args.out
    if args.seeds:
        updates["seeds"] = [int(s) for s in args.seeds.split(",")]
    elif args.seed is not None:
        updates["seeds"] = [args.seed]
    if args.rho is not None:
        minority = None
        if args.minority_classes:
            minority = [int(c) for c in args.minority_classes.split(",")]
        updates["imbalance"] = {"rho": args.rho, "minority_classes": minority,
                                "seed": 0}
    for flag, key in (("variant", "train.variant"), ("ablation", "train.ablation"),
                      ("epochs", "train.epochs"), ("lr", "train.lr"),
                      ("weight_decay", "train.weight_decay"),
                      ("dropout", "train.dropout"), ("hidden", "train.hidden"),
                      ("embed_dim", "train.embed_dim"), ("heads", "train.heads"),
                      ("layers", "train.layers")):
        value = getattr(args, flag)
        if value is not None:
            updates[key] = value
    return config.with_updates(**updates) if updates else config


def cmd_gen_synthetic(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    spec = SyntheticSpec(num_classes=len(sizes), nodes_per_class=sizes,
                         intra_p=args.intra_p, inter_p=args.inter_p,
                         feature_dim=args.feature_dim,
                         center_scale=args.center_scale,
                         noise_scale=args.noise_scale, seed=args.seed)
    graph = generate_sbm(spec)
    manifest = save_dataset(graph, Path(args.out), name=args.name)
    print(f"wrote {manifest} ({graph.num_nodes} nodes, {graph.num_edges} edges, "
          f"{graph.num_classes} classes)")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _run_config_from_args(args)
    record = run(config)
    agg = record.aggregate
    if agg:
        print(f"test accuracy {agg['accuracy']['mean']:.4f} +- {agg['accuracy']['std']:.4f}, "
              f"macro-F1 {agg['macro_f1']['mean']:.4f} +- {agg['macro_f1']['std']:.4f}, "
              f"AUC {agg['auc']['mean']:.4f} +- {agg['auc']['std']:.4f}")
    print(f"record: {Path(config.out_dir) / 'run_record.json'}")
    return EXIT_DIVERGED if record.partial else EXIT_OK


def cmd_evaluate(args) -> int:
    with open(args.record) as f:
        record = json.load(f)
    config = RunConfig.from_dict(record["config"])
    seed = args.seed if args.seed is not None else config.seeds[0]
    model_path = Path(args.record).parent / f"model_seed{seed}.npz"
    if not model_path.exists():
        raise DataError(f"no saved model for seed {seed}: {model_path}")
    model = Model.load(model_path)
    graph = build_graph_for(config)
    split = prepare_split(graph, config, seed)
    node_set = {"train": split.train, "val": split.val, "test": split.test}[args.split]
    metrics = compute_metrics(model.forward(graph, training=False).probs.data,
                              graph.labels, node_set, graph.num_classes)
    payload = metrics.to_dict()
    print(json.dumps(payload, indent=2))
    if args.out:
        write_json(Path(args.out), payload)
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _run_config_from_args(args)
    records = run_ablation(config)
    print(f"ablation table: {Path(config.out_dir) / 'ablation.csv'}")
    return EXIT_DIVERGED if any(r.partial for r in records) else EXIT_OK


def cmd_sweep(args) -> int:
    config = _run_config_from_args(args)
    values = None
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    records = run_sweep(config, args.axis, values=values)
    print(f"sweep table: {Path(config.out_dir)}")
    return EXIT_DIVERGED if any(r.partial for r in records) else EXIT_OK


def cmd_export_embeddings(args) -> int:
    model = Model.load(args.model)
    if args.record:
        with open(args.record) as f:
            config = RunConfig.from_dict(json.load(f)["config"])
        graph = build_graph_for(config)
    elif args.dataset:
        from .data_io import load_dataset
        graph = load_dataset(resolve_dataset(args.dataset))
    else:
        raise ConfigError("export-embeddings needs --record or --dataset")
    path = export_embeddings(model, graph, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgnn",
        description="Curriculum-guided three-stage attention GNN for "
                    "imbalanced node classification")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a planted-partition dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--name", default="synthetic")
    g.add_argument("--sizes", default="100,100,100,100",
                   help="comma-separated nodes per class")
    g.add_argument("--intra-p", type=float, default=0.05)
    g.add_argument("--inter-p", type=float, default=0.005)
    g.add_argument("--feature-dim", type=int, default=16)
    g.add_argument("--center-scale", type=float, default=1.0)
    g.add_argument("--noise-scale", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("train", help="run a multi-seed experiment")
    _add_run_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="rescore a saved model on a split")
    e.add_argument("--record", required=True, help="run_record.json of the run")
    e.add_argument("--seed", type=int)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--out", help="optional metrics JSON output path")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="run the six-variant ablation grid")
    _add_run_flags(a)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="run one sweep axis")
    _add_run_flags(s)
    s.add_argument("--axis", choices=SWEEP_AXES, required=True)
    s.add_argument("--values", help="comma-separated values (rho axis only)")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-embeddings", help="dump final node embeddings")
    x.add_argument("--model", required=True, help="saved model .npz")
    x.add_argument("--record", help="run_record.json to rebuild the graph")
    x.add_argument("--dataset", help="dataset meta.json (alternative to --record)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, DataError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
