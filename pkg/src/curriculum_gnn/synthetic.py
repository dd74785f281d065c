"""Planted-partition synthetic graphs: configurable class sizes,
intra/inter edge probabilities, and Gaussian class-mean features.
Used as the downloadable-data-free test bed.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .graph import Graph, build_graph


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    nodes_per_class: tuple = (100, 100, 100, 100)
    intra_p: float = 0.05
    inter_p: float = 0.005
    feature_dim: int = 16
    center_scale: float = 1.0    # spread of the per-class feature means
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.nodes_per_class) != self.num_classes:
            raise ValueError(
                f"{self.num_classes} classes but {len(self.nodes_per_class)} size entries")
        if not (0 <= self.inter_p <= 1 and 0 <= self.intra_p <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nodes_per_class"] = list(self.nodes_per_class)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["nodes_per_class"] = tuple(d["nodes_per_class"])
        return cls(**d)


def generate_sbm(spec: SyntheticSpec) -> Graph:
    """Sample a planted-partition graph with Gaussian class features.

    Every node pair is considered once (upper triangle); the edge
    probability is intra_p inside a block and inter_p across blocks.
    """
    rng = np.random.default_rng(spec.seed)
    labels = np.concatenate([np.full(n, c, dtype=np.int64)
                             for c, n in enumerate(spec.nodes_per_class)])
    num_nodes = labels.size

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.intra_p, spec.inter_p)
    draw = rng.random((num_nodes, num_nodes))
    upper = np.triu(draw < prob, k=1)
    src, dst = np.nonzero(upper)
    edges = np.stack([src, dst], axis=1)

    centers = rng.normal(0.0, spec.center_scale,
                         size=(spec.num_classes, spec.feature_dim))
    features = centers[labels] + rng.normal(0.0, spec.noise_scale,
                                            size=(num_nodes, spec.feature_dim))
    return build_graph(edges, features, labels, num_classes=spec.num_classes)
