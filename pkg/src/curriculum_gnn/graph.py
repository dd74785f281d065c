"""Graph data model: adjacency normalization, class statistics, splits,
and controlled training-set imbalance.

A Graph is immutable after construction. Degree bookkeeping counts the
self-loop that is added internally before normalization, so isolated
nodes never make 1/sqrt(d_v * d_u) singular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import GatherPlan, Segments, SparseCOO


class GraphError(ValueError):
    pass


@dataclass
class Graph:
    """Undirected graph with features, labels, and normalized adjacency.

    ``edges`` holds canonical (u < v) pairs without self-loops. The
    attention index arrays enumerate every (center, neighbor) pair
    including (v, v), sorted by center then neighbor; the directed edge
    arrays enumerate each undirected edge twice, sorted by source.
    """

    num_nodes: int
    num_classes: int
    edges: np.ndarray            # [M, 2] canonical pairs, u < v
    features: np.ndarray         # [N, F]
    labels: np.ndarray           # [N]
    degrees: np.ndarray          # [N], neighbor count + 1 for the self-loop
    norm_adjacency: SparseCOO    # entries 1/sqrt(d_c * d_n), self-loops included
    mean_adjacency: SparseCOO    # entries 1/d_center (mean aggregator)
    att_center: np.ndarray       # [2M + N]
    att_nbr: np.ndarray          # [2M + N]
    att_segments: Segments = field(repr=False)
    att_center_plan: GatherPlan = field(repr=False)
    att_nbr_plan: GatherPlan = field(repr=False)
    att_noself_idx: np.ndarray = field(repr=False)   # positions of non-self pairs
    att_noself_plan: GatherPlan = field(repr=False)  # gather pair values onto edges
    edge_src: np.ndarray = field(repr=False)         # [2M], sorted by (src, dst)
    edge_dst: np.ndarray = field(repr=False)
    edge_src_segments: Segments = field(repr=False)
    edge_src_plan: GatherPlan = field(repr=False)
    edge_dst_plan: GatherPlan = field(repr=False)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_directed_edges(self) -> int:
        return 2 * self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def build_graph(edge_list, features, labels, num_classes: int | None = None) -> Graph:
    """Construct a Graph from raw parts, validating and canonicalizing.

    Input edges are symmetrized and deduplicated; self-loops in the input
    are dropped (they are re-added internally for normalization).
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_nodes = features.shape[0]
    if labels.shape[0] != num_nodes:
        raise GraphError(f"feature rows ({num_nodes}) != label count ({labels.shape[0]})")

    bad_rows = np.where(~np.all(np.isfinite(features), axis=1))[0]
    if bad_rows.size:
        raise GraphError(f"non-finite feature values in row {int(bad_rows[0])}")

    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(np.where((labels < 0) | (labels >= num_classes))[0][0])
        raise GraphError(
            f"label {int(labels[bad])} at node {bad} outside [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts == 0):
        empty = int(np.where(counts == 0)[0][0])
        raise GraphError(f"class {empty} has no nodes")

    raw = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if raw.size and (raw.min() < 0 or raw.max() >= num_nodes):
        bad = int(np.where((raw < 0) | (raw >= num_nodes))[0][0])
        raise GraphError(f"edge endpoint {int(raw.reshape(-1,2)[bad].max())} out of range "
                         f"for {num_nodes} nodes (edge index {bad})")
    if raw.size:
        canon = np.sort(raw, axis=1)
        canon = canon[canon[:, 0] != canon[:, 1]]            # drop input self-loops
        edges = np.unique(canon, axis=0)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)

    neighbor_count = np.bincount(edges.reshape(-1), minlength=num_nodes)
    degrees = neighbor_count + 1                              # internal self-loop

    # attention pairs: both directions of every edge plus (v, v), sorted
    centers = np.concatenate([edges[:, 0], edges[:, 1], np.arange(num_nodes)])
    nbrs = np.concatenate([edges[:, 1], edges[:, 0], np.arange(num_nodes)])
    order = np.lexsort((nbrs, centers))
    att_center, att_nbr = centers[order], nbrs[order]
    vals = 1.0 / np.sqrt(degrees[att_center] * degrees[att_nbr])
    norm_adj = SparseCOO(att_center, att_nbr, vals, (num_nodes, num_nodes))
    mean_adj = SparseCOO(att_center, att_nbr,
                         1.0 / degrees[att_center], (num_nodes, num_nodes))

    att_segments = Segments(att_center, num_nodes)
    att_center_plan = GatherPlan(att_center, num_nodes)
    att_nbr_plan = GatherPlan(att_nbr, num_nodes)
    att_noself_idx = np.where(att_center != att_nbr)[0]

    # directed edge instances (no self-loops), same (first, second) ordering
    edge_src = att_center[att_noself_idx]
    edge_dst = att_nbr[att_noself_idx]
    edge_src_segments = Segments(edge_src, num_nodes)

    return Graph(
        num_nodes=num_nodes,
        num_classes=num_classes,
        edges=edges,
        features=features,
        labels=labels,
        degrees=degrees,
        norm_adjacency=norm_adj,
        mean_adjacency=mean_adj,
        att_center=att_center,
        att_nbr=att_nbr,
        att_segments=att_segments,
        att_center_plan=att_center_plan,
        att_nbr_plan=att_nbr_plan,
        att_noself_idx=att_noself_idx,
        att_noself_plan=GatherPlan(att_noself_idx, att_center.shape[0]),
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_src_segments=edge_src_segments,
        edge_src_plan=GatherPlan(edge_src, num_nodes),
        edge_dst_plan=GatherPlan(edge_dst, num_nodes),
    )


def heterophily_ratio(graph: Graph) -> float:
    """Fraction of stored edges whose endpoints carry different labels."""
    if graph.num_edges == 0:
        raise GraphError("heterophily ratio undefined: graph has no edges")
    y = graph.labels
    cross = y[graph.edges[:, 0]] != y[graph.edges[:, 1]]
    return float(np.mean(cross))


@dataclass
class ClassStats:
    counts: np.ndarray        # per-class counts over the queried subset
    proportions: np.ndarray
    lambda_ratio: float       # max/min over classes present
    rho: float                # 1/lambda
    absent_classes: list[int] = field(default_factory=list)


def class_stats(graph: Graph, node_subset=None) -> ClassStats:
    """Class counts, proportions, and imbalance ratio over a node subset."""
    if node_subset is None:
        subset = np.arange(graph.num_nodes)
    else:
        subset = np.asarray(sorted(node_subset), dtype=np.int64)
    if subset.size == 0:
        raise GraphError("class_stats: empty node subset")
    counts = np.bincount(graph.labels[subset], minlength=graph.num_classes)
    present = counts > 0
    absent = [int(c) for c in np.where(~present)[0]]
    if absent:
        warnings.warn(f"classes absent from subset: {absent}", stacklevel=2)
    lam = float(counts[present].max() / counts[present].min())
    return ClassStats(
        counts=counts,
        proportions=counts / subset.size,
        lambda_ratio=lam,
        rho=1.0 / lam,
        absent_classes=absent,
    )


@dataclass
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    fractions: tuple = (0.7, 0.1, 0.2)

    def __post_init__(self):
        self.train = np.asarray(sorted(self.train), dtype=np.int64)
        self.val = np.asarray(sorted(self.val), dtype=np.int64)
        self.test = np.asarray(sorted(self.test), dtype=np.int64)


def make_split(graph: Graph, fractions=(0.7, 0.1, 0.2), seed: int = 0) -> SplitAssignment:
    """Stratified train/val/test split, deterministic for a fixed seed.

    Classes with fewer than 3 nodes cannot be stratified and go whole to
    the training set (with a warning).
    """
    f_tr, f_val, f_te = fractions
    if f_tr + f_val + f_te > 1.0 + 1e-9:
        raise GraphError(f"split fractions sum to {f_tr + f_val + f_te:.3f} > 1")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    exact = abs((f_tr + f_val + f_te) - 1.0) < 1e-9
    for c in range(graph.num_classes):
        idx = np.where(graph.labels == c)[0]
        if idx.size < 3:
            warnings.warn(f"class {c} has {idx.size} nodes; assigning all to train",
                          stacklevel=2)
            train.extend(idx.tolist())
            continue
        perm = idx[rng.permutation(idx.size)]
        n_tr = int(round(f_tr * idx.size))
        n_val = min(int(round(f_val * idx.size)), idx.size - n_tr)
        if exact:
            n_te = idx.size - n_tr - n_val
        else:
            n_te = min(int(round(f_te * idx.size)), idx.size - n_tr - n_val)
        train.extend(perm[:n_tr].tolist())
        val.extend(perm[n_tr:n_tr + n_val].tolist())
        test.extend(perm[n_tr + n_val:n_tr + n_val + n_te].tolist())
    return SplitAssignment(train=train, val=val, test=test,
                           seed=seed, fractions=tuple(fractions))


@dataclass
class ImbalanceSpec:
    """Target minority/majority training ratio and the classes to shrink."""

    rho: float = 1.0
    minority_classes: list[int] | None = None   # default: the 3 smallest classes
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise GraphError(f"imbalance rho must be in (0, 1], got {self.rho}")


def default_minority_classes(graph: Graph, k: int = 3) -> list[int]:
    """The k classes with the smallest natural node counts."""
    counts = np.bincount(graph.labels, minlength=graph.num_classes)
    return [int(c) for c in np.argsort(counts, kind="stable")[:k]]


def apply_imbalance(split: SplitAssignment, graph: Graph,
                    spec: ImbalanceSpec) -> SplitAssignment:
    """Downsample minority-class training nodes to rho x the largest
    majority-class training count. Validation/test sets are untouched."""
    minority = spec.minority_classes
    if minority is None:
        minority = default_minority_classes(graph, k=min(3, graph.num_classes - 1))
    minority = sorted(int(c) for c in minority)
    if len(minority) >= graph.num_classes:
        raise GraphError("minority classes must be a strict subset of all classes")

    train_labels = graph.labels[split.train]
    counts = np.bincount(train_labels, minlength=graph.num_classes)
    for c in minority:
        if counts[c] == 0:
            raise GraphError(f"minority class {c} has no training nodes")
    majority = [c for c in range(graph.num_classes) if c not in minority]
    maj_max = int(counts[majority].max())
    target = int(np.ceil(spec.rho * maj_max))
    if target < 1:
        warnings.warn("imbalance target below 1 node; clamping to 1", stacklevel=2)
        target = 1

    rng = np.random.default_rng(spec.seed)
    keep = []
    for c in range(graph.num_classes):
        idx = split.train[train_labels == c]
        if c in minority and idx.size > target:
            chosen = rng.choice(idx, size=target, replace=False)
            keep.extend(chosen.tolist())
        else:
            keep.extend(idx.tolist())
    return SplitAssignment(train=keep, val=split.val.copy(), test=split.test.copy(),
                           seed=split.seed, fractions=split.fractions)
