"""Experiment orchestration: multi-seed runs, the ablation grid, the
sweep axes (imbalance ratio, loss-coefficient grids, loss-flag cube),
and result persistence.

One seed drives the whole per-run pipeline (split, downsampling, model
init, dropout), so a record is reproducible from its config alone. All
outputs are JSON/CSV written atomically.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import (DataError, content_hash, hash_file, load_dataset,
                      save_dataset, write_csv, write_json)
from .graph import Graph, ImbalanceSpec, SplitAssignment, apply_imbalance, make_split
from .losses import CurriculumConfig
from .metrics import Metrics, compute_metrics, stability_report
from .model import ABLATIONS, Model
from .synthetic import SyntheticSpec, generate_sbm
from .training import DivergenceError, TrainConfig, TrainHistory, train

RHO_GRID = (0.1, 0.2, 0.4, 0.6, 0.8)
LAMBDA1_GRID = (0.0, 0.02, 0.04, 0.06, 0.08, 0.1)
LAMBDA23_GRID = (0.0, 0.002, 0.004, 0.006, 0.008, 0.01)
SWEEP_AXES = ("rho", "l1xl2", "l1xl3", "loss-flags")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything one experiment needs, serializable to a single JSON doc."""

    train: TrainConfig = field(default_factory=TrainConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    dataset: str | None = None                 # manifest path
    synthetic: SyntheticSpec | None = None     # or an in-memory generator spec
    imbalance: ImbalanceSpec | None = None
    split_fractions: tuple = (0.7, 0.1, 0.2)
    seeds: tuple = (0,)
    out_dir: str = "runs/out"

    def __post_init__(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("exactly one of dataset / synthetic must be set")

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "curriculum": self.curriculum.to_dict(),
            "dataset": self.dataset,
            "synthetic": self.synthetic.to_dict() if self.synthetic else None,
            "imbalance": None if self.imbalance is None else {
                "rho": self.imbalance.rho,
                "minority_classes": self.imbalance.minority_classes,
                "seed": self.imbalance.seed,
            },
            "split_fractions": list(self.split_fractions),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        imb = d.get("imbalance")
        return cls(
            train=TrainConfig.from_dict(d["train"]),
            curriculum=CurriculumConfig.from_dict(d["curriculum"]),
            dataset=d.get("dataset"),
            synthetic=SyntheticSpec.from_dict(d["synthetic"]) if d.get("synthetic") else None,
            imbalance=None if imb is None else ImbalanceSpec(
                rho=imb["rho"], minority_classes=imb.get("minority_classes"),
                seed=imb.get("seed", 0)),
            split_fractions=tuple(d.get("split_fractions", (0.7, 0.1, 0.2))),
            seeds=tuple(d.get("seeds", (0,))),
            out_dir=d.get("out_dir", "runs/out"),
        )

    def with_updates(self, **kwargs) -> "RunConfig":
        d = self.to_dict()
        for key, value in kwargs.items():
            if "." in key:
                section, name = key.split(".", 1)
                d[section][name] = value
            else:
                d[key] = value
        return RunConfig.from_dict(d)


def build_graph_for(config: RunConfig) -> Graph:
    if config.synthetic is not None:
        return generate_sbm(config.synthetic)
    return load_dataset(Path(config.dataset))


def prepare_split(graph: Graph, config: RunConfig, seed: int) -> SplitAssignment:
    split = make_split(graph, fractions=config.split_fractions, seed=seed)
    if config.imbalance is not None:
        spec = ImbalanceSpec(rho=config.imbalance.rho,
                             minority_classes=config.imbalance.minority_classes,
                             seed=seed)
        split = apply_imbalance(split, graph, spec)
    return split


def train_one_seed(graph: Graph, config: RunConfig, seed: int):
    split = prepare_split(graph, config, seed)
    tc = TrainConfig.from_dict({**config.train.to_dict(), "seed": seed})
    model, history = train(graph, split, tc, config.curriculum)
    metrics = compute_metrics(
        model.forward(graph, training=False).probs.data,
        graph.labels, split.test, graph.num_classes)
    return model, history, metrics, split


@dataclass
class RunRecord:
    config: dict
    input_hash: str
    per_seed: list[dict]
    aggregate: dict
    history_files: list[str]
    stability: dict | None
    partial: bool

    def to_dict(self) -> dict:
        return {
            "config": self.config, "input_hash": self.input_hash,
            "per_seed": self.per_seed, "aggregate": self.aggregate,
            "history_files": self.history_files, "stability": self.stability,
            "partial": self.partial,
        }


def _aggregate(metrics_list: list[Metrics]) -> dict:
    out = {}
    for key in ("accuracy", "macro_f1", "auc"):
        values = np.array([getattr(m, key) for m in metrics_list])
        out[key] = {"mean": float(values.mean()), "std": float(values.std())}
    return out


def _input_hash(config: RunConfig) -> str:
    payload = {"config": config.to_dict()}
    if config.dataset is not None:
        manifest = Path(config.dataset)
        if manifest.exists():
            payload["files"] = {}
            import json
            with open(manifest) as f:
                meta = json.load(f)
            payload["files"]["meta.json"] = hash_file(manifest)
            for key in ("edge_file", "label_file", "feature_file"):
                fp = manifest.parent / meta[key]
                payload["files"][meta[key]] = hash_file(fp)
    return content_hash(payload)


def run(config: RunConfig, graph: Graph | None = None,
        save_models: bool = True) -> RunRecord:
    """Train/evaluate every seed, write histories and the run record.

    A diverging seed marks the record partial but does not stop the
    remaining seeds.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if graph is None:
        graph = build_graph_for(config)

    per_seed, history_files, metrics_ok = [], [], []
    stability = None
    partial = False
    for seed in config.seeds:
        try:
            model, history, metrics, _split = train_one_seed(graph, config, seed)
        except DivergenceError as exc:
            partial = True
            per_seed.append({"seed": seed, "diverged": True,
                             "diverged_epoch": exc.epoch, "metrics": None})
            continue
        hist_name = f"history_seed{seed}.csv"
        rows = history.rows()
        write_csv(out_dir / hist_name, rows, fieldnames=list(rows[0].keys()))
        conf_rows = [{"true_class": i,
                      **{f"pred_{j}": int(v) for j, v in enumerate(row)}}
                     for i, row in enumerate(metrics.confusion)]
        write_csv(out_dir / f"confusion_seed{seed}.csv", conf_rows,
                  fieldnames=list(conf_rows[0].keys()))
        if save_models:
            model.save(out_dir / f"model_seed{seed}.npz")
        history_files.append(hist_name)
        per_seed.append({"seed": seed, "diverged": False,
                         "metrics": metrics.to_dict()})
        metrics_ok.append(metrics)
        if stability is None:
            try:
                stability = stability_report(
                    np.array(history.grad_norms),
                    np.array(history.stage_scores),
                    config.train.epochs).to_dict()
            except ValueError:
                stability = None

    record = RunRecord(
        config=config.to_dict(),
        input_hash=_input_hash(config),
        per_seed=per_seed,
        aggregate=_aggregate(metrics_ok) if metrics_ok else {},
        history_files=history_files,
        stability=stability,
        partial=partial,
    )
    write_json(out_dir / "run_record.json", record.to_dict())
    return record


def run_ablation(config: RunConfig) -> list[RunRecord]:
    """One record per pipeline variant, plus a merged comparison CSV."""
    records = []
    rows = []
    base_out = Path(config.out_dir)
    for ablation in ABLATIONS:
        sub = config.with_updates(**{
            "train.ablation": ablation,
            "out_dir": str(base_out / ablation.replace("/", "_")),
        })
        record = run(sub)
        records.append(record)
        row = {"variant": ablation}
        for key in ("accuracy", "macro_f1", "auc"):
            agg = record.aggregate.get(key, {})
            row[f"{key}_mean"] = agg.get("mean")
            row[f"{key}_std"] = agg.get("std")
        rows.append(row)
    write_csv(base_out / "ablation.csv", rows, fieldnames=list(rows[0].keys()))
    return records


def run_sweep(config: RunConfig, axis: str, values=None) -> list[RunRecord]:
    """Grid of runs along one sweep axis; writes a keyed comparison CSV."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    base_out = Path(config.out_dir)
    cells = []
    if axis == "rho":
        grid = tuple(values) if values else RHO_GRID
        for rho in grid:
            if not 0 < rho <= 1:
                raise ConfigError(f"rho {rho} outside (0, 1]")
            imb = {"rho": rho,
                   "minority_classes": (config.imbalance.minority_classes
                                        if config.imbalance else None),
                   "seed": 0}
            cells.append(({"rho": rho}, {"imbalance": imb,
                                         "out_dir": str(base_out / f"rho_{rho}")}))
    elif axis in ("l1xl2", "l1xl3"):
        other = "lambda2" if axis == "l1xl2" else "lambda3"
        grid1, grid2 = (values if values else (LAMBDA1_GRID, LAMBDA23_GRID))
        for l1, lk in itertools.product(grid1, grid2):
            cells.append(({"lambda1": l1, other: lk},
                          {"curriculum.lambda1": l1, f"curriculum.{other}": lk,
                           "out_dir": str(base_out / f"l1_{l1}_{other}_{lk}")}))
    else:   # loss-flags: the 8-row on/off cube
        for ent, tcl, comb in itertools.product((False, True), repeat=3):
            key = {"entropy": ent, "time_cl": tcl, "combined": comb}
            cells.append((key, {
                "curriculum.entropy_enabled": ent,
                "curriculum.time_cl_enabled": tcl,
                "curriculum.combined_enabled": comb,
                "out_dir": str(base_out / f"flags_{int(ent)}{int(tcl)}{int(comb)}"),
            }))

    records, rows = [], []
    for key, updates in cells:
        record = run(config.with_updates(**updates))
        records.append(record)
        row = dict(key)
        for mkey in ("accuracy", "macro_f1", "auc"):
            agg = record.aggregate.get(mkey, {})
            row[f"{mkey}_mean"] = agg.get("mean")
            row[f"{mkey}_std"] = agg.get("std")
        rows.append(row)
    write_csv(base_out / f"sweep_{axis.replace('/', '_')}.csv", rows,
              fieldnames=list(rows[0].keys()))
    return records


def export_embeddings(model: Model, graph: Graph, path) -> Path:
    """Write final node embeddings plus the label column as CSV."""
    out = model.forward(graph, training=False)
    emb = out.final_nodes.data
    path = Path(path)
    lines = [",".join([f"e{i}" for i in range(emb.shape[1])] + ["label"])]
    for row, label in zip(emb, graph.labels):
        lines.append(",".join(f"{x:.9g}" for x in row) + f",{int(label)}")
    from .data_io import atomic_write_text
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path
