"""Classifier head and the composite curriculum loss: accuracy-adaptive
class weights, confidence-signed entropy regularization, diversity
promotion toward a uniform mean prediction, phase-gated weighting, and
the difficulty-gated progressive training subgraph.

Epoch weighting walks three phases: pure curriculum early, a 0.7/0.3
blend in the middle third, and 0.3/0.7 late. The difficulty threshold is
a quantile that ramps linearly from q_start to 1.0 over the first two
thirds of training, so the gated node set can only grow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph
from .layers import gat_logits

DEFAULT_PHASE_TABLE = ((1.0, 0.0), (0.7, 0.3), (0.3, 0.7))


class CurriculumError(ValueError):
    pass


@dataclass
class CurriculumConfig:
    """Knobs for the composite loss and its schedules.

    The three feature flags carve the loss into its ablatable pieces:
    ``entropy_enabled`` gates the signed-entropy term, ``time_cl_enabled``
    the pacing-based class weights, and ``combined_enabled`` the phase
    table, progressive subgraph, and diversity term together. With
    ``combined_enabled`` off, both brackets run at a fixed 0.5/0.5.
    """

    total_epochs: int | None = None        # filled from the trainer if None
    phase_table: tuple = DEFAULT_PHASE_TABLE
    lambda1: float = 0.1                   # curriculum-term scale
    lambda2: float = 0.01                  # entropy coefficient
    lambda3: float = 0.008                 # diversity coefficient
    pacing: str = "linear"
    confidence_tau: float = 0.5
    difficulty_weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    q_start: float = 0.3
    q_end: float = 1.0
    ema_decay: float = 0.9
    entropy_enabled: bool = True
    time_cl_enabled: bool = True
    combined_enabled: bool = True

    def __post_init__(self):
        for lc, le in self.phase_table:
            if abs(lc + le - 1.0) > 1e-9:
                raise CurriculumError(f"phase weights must sum to 1, got ({lc}, {le})")
        if not (0.0 < self.confidence_tau < 1.0):
            raise CurriculumError(f"confidence tau must be in (0, 1), got {self.confidence_tau}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise CurriculumError("loss coefficients must be nonnegative")
        if not (0.0 <= self.q_start <= self.q_end <= 1.0):
            raise CurriculumError(
                f"need 0 <= q_start <= q_end <= 1, got ({self.q_start}, {self.q_end})")
        if self.pacing != "linear":
            raise CurriculumError(f"unknown pacing descriptor: {self.pacing!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_table"] = [list(p) for p in self.phase_table]
        d["difficulty_weights"] = list(self.difficulty_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumConfig":
        d = dict(d)
        d["phase_table"] = tuple(tuple(p) for p in d.get("phase_table", DEFAULT_PHASE_TABLE))
        d["difficulty_weights"] = tuple(d.get("difficulty_weights", (1 / 3, 1 / 3, 1 / 3)))
        return cls(**d)


def phase_weights(t: int, T: int, table=DEFAULT_PHASE_TABLE) -> tuple[float, float]:
    """(lambda_c, lambda_e) for epoch t of T: three equal-width phases."""
    if not 0 <= t < T:
        raise CurriculumError(f"epoch {t} outside [0, {T})")
    if t < T / 3:
        return table[0]
    if t < 2 * T / 3:
        return table[1]
    return table[2]


@dataclass
class ClassWeightState:
    """EMA of per-class training accuracy plus the pacing value."""

    num_classes: int
    ema_decay: float = 0.9
    acc_ema: np.ndarray | None = None
    pacing_alpha: float = 1.0

    def update_accuracy(self, per_class_acc: np.ndarray) -> None:
        per_class_acc = np.asarray(per_class_acc, dtype=np.float64)
        if self.acc_ema is None:
            self.acc_ema = per_class_acc.copy()
        else:
            self.acc_ema = self.ema_decay * self.acc_ema + (1 - self.ema_decay) * per_class_acc

    def accuracies(self) -> np.ndarray:
        if self.acc_ema is None:
            return np.zeros(self.num_classes)
        return self.acc_ema


def pacing_value(t: int, T: int) -> float:
    """Linear pacing: 1 at the start, 0 at the end."""
    return 1.0 - t / T


def curriculum_weight(c: int, t: int, state: ClassWeightState) -> float:
    """w_c = alpha(t) + (1 - alpha(t)) * (1 - Acc_c)."""
    alpha = state.pacing_alpha
    acc = float(state.accuracies()[c])
    return alpha + (1.0 - alpha) * (1.0 - acc)


def class_weight_vector(state: ClassWeightState) -> np.ndarray:
    alpha = state.pacing_alpha
    return alpha + (1.0 - alpha) * (1.0 - state.accuracies())


def confidence_flags(probs: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """c_v = 1 where the max predicted probability reaches tau."""
    return (np.max(probs, axis=1) >= tau).astype(np.float64)


def entropy_reg(probs: Tensor, flags: np.ndarray) -> Tensor:
    """Sum over rows of (2 c_v - 1) * H(p_v), natural log.

    Confident rows count positively (their entropy is driven down by
    minimization), unconfident rows negatively.
    """
    row_sums = probs.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise CurriculumError(f"row {bad} is not a distribution (sum {row_sums[bad]:.6f})")
    entropy_rows = ad.mul(ad.sum_rows(ad.xlogx(probs)), -1.0)
    sign = 2.0 * np.asarray(flags, dtype=np.float64) - 1.0
    return ad.sum_all(ad.mul(entropy_rows, sign))


def diversity_loss(probs: Tensor) -> Tensor:
    """KL(mean prediction || uniform) = log C - H(p_bar), nonnegative."""
    mean_pred = ad.mean_rows(probs)
    neg_entropy = ad.sum_all(ad.xlogx(mean_pred))
    return ad.add(neg_entropy, np.log(probs.data.shape[1]))


def node_difficulty(graph: Graph, train_idx: np.ndarray,
                    weights=(1 / 3, 1 / 3, 1 / 3)) -> np.ndarray:
    """Per-node difficulty from degree rank, local label disagreement, and
    class rarity; all three terms sit in [0, 1].

    Only training labels are consulted. Nodes outside the training set get
    neutral 0.5 label-dependent terms, as do nodes with no labeled
    neighbors.
    """
    w_deg, w_het, w_rar = weights
    n = graph.num_nodes
    train_idx = np.asarray(train_idx, dtype=np.int64)
    in_train = np.zeros(n, dtype=bool)
    in_train[train_idx] = True

    # average rank of degree (ascending), scaled to (0, 1]
    deg = graph.degrees
    uniq, inverse, counts = np.unique(deg, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg_rank = (starts + ends + 1) / 2.0
    deg_term = avg_rank[inverse] / n

    het_term = np.full(n, 0.5)
    src, dst = graph.edge_src, graph.edge_dst
    labeled_pair = in_train[src] & in_train[dst]
    cross = (graph.labels[src] != graph.labels[dst]) & labeled_pair
    cross_count = np.bincount(src, weights=cross.astype(np.float64), minlength=n)
    labeled_count = np.bincount(src, weights=labeled_pair.astype(np.float64), minlength=n)
    have = in_train & (labeled_count > 0)
    het_term[have] = cross_count[have] / labeled_count[have]

    rar_term = np.full(n, 0.5)
    counts_train = np.bincount(graph.labels[train_idx], minlength=graph.num_classes)
    max_count = max(counts_train.max(), 1)
    rar_term[in_train] = 1.0 - counts_train[graph.labels[in_train]] / max_count

    return w_deg * deg_term + w_het * het_term + w_rar * rar_term


def edge_difficulty(graph: Graph, node_diff: np.ndarray) -> np.ndarray:
    """Mean endpoint difficulty per directed edge."""
    return 0.5 * (node_diff[graph.edge_src] + node_diff[graph.edge_dst])


def difficulty_quantile(t: int, T: int, q_start: float = 0.3, q_end: float = 1.0) -> float:
    """Quantile schedule: linear ramp to q_end over the first 2T/3 epochs."""
    ramp_end = 2.0 * T / 3.0
    if t >= ramp_end:
        return q_end
    return q_start + (q_end - q_start) * (t / ramp_end)


def progressive_subgraph(node_diff: np.ndarray, edge_diff: np.ndarray,
                         theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Index sets of nodes/edges whose difficulty is at most theta."""
    return np.where(node_diff <= theta)[0], np.where(edge_diff <= theta)[0]


@dataclass
class DifficultyScores:
    node: np.ndarray
    edge: np.ndarray
    theta: float = np.inf

    def active_sets(self, theta: float) -> tuple[np.ndarray, np.ndarray]:
        self.theta = theta
        return progressive_subgraph(self.node, self.edge, theta)


@dataclass
class CurriculumState:
    """Everything the loss needs at one epoch: the clock, the phase
    weights, pacing, accuracy history, and the difficulty gate."""

    t: int
    total_epochs: int
    lambda_c: float
    lambda_e: float
    weights: ClassWeightState
    theta: float = np.inf
    active_train: np.ndarray | None = None

    @classmethod
    def for_epoch(cls, t: int, config: CurriculumConfig, total_epochs: int,
                  weights: ClassWeightState, difficulty: DifficultyScores | None,
                  train_idx: np.ndarray) -> "CurriculumState":
        if config.combined_enabled:
            lam_c, lam_e = phase_weights(t, total_epochs, config.phase_table)
        else:
            lam_c, lam_e = 0.5, 0.5
        weights.pacing_alpha = pacing_value(t, total_epochs) if config.time_cl_enabled else 1.0
        theta = np.inf
        active = np.asarray(train_idx, dtype=np.int64)
        if config.combined_enabled and difficulty is not None:
            q = difficulty_quantile(t, total_epochs, config.q_start, config.q_end)
            theta = float(np.quantile(difficulty.node, q))
            nodes, _ = difficulty.active_sets(theta)
            mask = np.zeros(difficulty.node.shape[0], dtype=bool)
            mask[nodes] = True
            active = active[mask[active]]
        return cls(t=t, total_epochs=total_epochs, lambda_c=lam_c, lambda_e=lam_e,
                   weights=weights, theta=theta, active_train=active)


@dataclass
class LossBreakdown:
    """One epoch's loss terms. ``weighted_ce`` already carries the
    curriculum-term scale; ``total`` recombines the stored fields."""

    weighted_ce: float
    entropy_term: float
    diversity_term: float
    total: float
    lambda_c: float
    lambda_e: float
    epoch: int
    active_count: int
    loss: Tensor | None = field(default=None, repr=False, compare=False)


def total_loss(probs: Tensor, labels: np.ndarray, state: CurriculumState,
               config: CurriculumConfig, active_set: np.ndarray) -> LossBreakdown:
    """Composite curriculum loss over the gated training nodes.

    total = lambda_c * Lambda1 * mean(w_c CE) +
            lambda_e * (mean CE + Lambda2 * L_ent + Lambda3 * L_div)
    """
    active_set = np.asarray(active_set, dtype=np.int64)
    if active_set.size == 0:
        raise CurriculumError("curriculum gate excluded all training nodes")
    plan = ad.GatherPlan(active_set, probs.data.shape[0])
    p_active = ad.gather_rows(probs, plan)
    y_active = labels[active_set]
    ce = ad.cross_entropy(p_active, y_active)

    if config.time_cl_enabled:
        w = class_weight_vector(state.weights)[y_active]
    else:
        w = np.ones(active_set.size)
    weighted_ce = ad.mul(ad.mean_all(ad.mul(ce, w)), config.lambda1)

    bracket = ad.mean_all(ce)
    ent_value = 0.0
    if config.entropy_enabled:
        flags = confidence_flags(p_active.data, config.confidence_tau)
        ent = entropy_reg(p_active, flags)
        ent_value = float(ent.data)
        bracket = ad.add(bracket, ad.mul(ent, config.lambda2))
    div_value = 0.0
    if config.combined_enabled:
        div = diversity_loss(p_active)
        div_value = float(div.data)
        bracket = ad.add(bracket, ad.mul(div, config.lambda3))

    total = ad.add(ad.mul(weighted_ce, state.lambda_c), ad.mul(bracket, state.lambda_e))
    return LossBreakdown(
        weighted_ce=float(weighted_ce.data),
        entropy_term=ent_value,
        diversity_term=div_value,
        total=float(total.data),
        lambda_c=state.lambda_c,
        lambda_e=state.lambda_e,
        epoch=state.t,
        active_count=int(active_set.size),
        loss=total,
    )


def plain_ce_loss(probs: Tensor, labels: np.ndarray, train_idx: np.ndarray,
                  epoch: int) -> LossBreakdown:
    """Unweighted mean cross-entropy (baselines and pre-curriculum ablations)."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise CurriculumError("empty training set")
    plan = ad.GatherPlan(train_idx, probs.data.shape[0])
    ce = ad.mean_all(ad.cross_entropy(ad.gather_rows(probs, plan), labels[train_idx]))
    return LossBreakdown(
        weighted_ce=float(ce.data), entropy_term=0.0, diversity_term=0.0,
        total=float(ce.data), lambda_c=1.0, lambda_e=0.0,
        epoch=epoch, active_count=int(train_idx.size), loss=ce,
    )


def classifier_head(z_nodes: Tensor, graph: Graph, W_final: Tensor, a_final: Tensor | None,
                    W_o: Tensor, b_o: Tensor, alpha_pair: Tensor | None = None) -> Tensor:
    """Final attention layer plus softmax; rows sum to 1.

    When the stage machinery supplies ``alpha_pair``, those coefficients
    weight the aggregation; otherwise fresh attention coefficients are
    computed from ``a_final``.
    """
    proj = ad.matmul(z_nodes, W_final)
    if alpha_pair is None:
        if a_final is None:
            raise CurriculumError("classifier needs either alpha_pair or a_final")
        logits, proj = gat_logits(z_nodes, graph, W_final, a_final)
        alpha_pair = ad.masked_neighbor_softmax(logits, graph.att_segments)
    h = ad.relu(ad.segment_sum(
        ad.scale_rows(ad.gather_rows(proj, graph.att_nbr_plan), alpha_pair),
        graph.att_segments))
    return ad.row_softmax(ad.add(ad.matmul(h, W_o), b_o))


def per_class_accuracy(probs: np.ndarray, labels: np.ndarray, idx: np.ndarray,
                       num_classes: int) -> np.ndarray:
    """Fraction correct per class over ``idx``; empty classes score 0."""
    idx = np.asarray(idx, dtype=np.int64)
    pred = np.argmax(probs[idx], axis=1)
    y = labels[idx]
    acc = np.zeros(num_classes)
    for c in range(num_classes):
        mask = y == c
        if np.any(mask):
            acc[c] = float(np.mean(pred[mask] == c))
    return acc
