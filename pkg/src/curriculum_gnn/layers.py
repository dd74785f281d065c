"""Feature extraction layers: degree-normalized aggregation, learned
neighbor attention, the combined structural+semantic node update, and
attention-weighted edge feature updates.

Node attention coefficients are normalized over each node's neighbor set
including itself; edge features live on directed edge instances (each
undirected edge twice). The structural and semantic branches of the
combined update share one weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph

LEAKY_SLOPE = 0.2   # conventional slope for attention logits


@dataclass
class LayerParams:
    """Learnables for one feature-extraction layer.

    W is shared by the structural and semantic node branches; ``a`` scores
    neighbor pairs; We/be update and score edge features. ``b`` is an
    optional node bias (off by default, matching the update equations).
    """

    W: Tensor
    a: Tensor
    We: Tensor
    be: Tensor
    b: Tensor | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
             edge_dim: int | None = None, bias: bool = False) -> "LayerParams":
        edge_dim = out_dim if edge_dim is None else edge_dim
        return cls(
            W=ad.glorot(rng, (in_dim, out_dim)),
            a=ad.glorot(rng, (2 * out_dim,)),
            We=ad.glorot(rng, (edge_dim, edge_dim)),
            be=ad.glorot(rng, (edge_dim,)),
            b=ad.zeros((out_dim,)) if bias else None,
        )

    def tensors(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = [(f"{prefix}W", self.W), (f"{prefix}a", self.a),
                 (f"{prefix}We", self.We), (f"{prefix}be", self.be)]
        if self.b is not None:
            named.append((f"{prefix}b", self.b))
        return named


def gcn_aggregate(H: Tensor, graph: Graph, W: Tensor, b: Tensor | None = None,
                  aggregator: str = "norm") -> Tensor:
    """ReLU(A_hat @ H @ W): degree-normalized neighbor averaging.

    ``aggregator="mean"`` swaps the symmetric normalization for a plain
    neighborhood mean (the SAGE-style variant).
    """
    adj = graph.norm_adjacency if aggregator == "norm" else graph.mean_adjacency
    pre = ad.sparse_dense_matmul(adj, ad.matmul(H, W))
    if b is not None:
        pre = ad.add(pre, b)
    return ad.relu(pre)


def gat_logits(H: Tensor, graph: Graph, W: Tensor, a: Tensor) -> tuple[Tensor, Tensor]:
    """Unnormalized attention logits per (center, neighbor) pair.

    Returns (logits, WH) so callers can reuse the projected features.
    The bilinear form a^T [W h_c || W h_n] decomposes into two per-node
    scores gathered along the pair arrays.
    """
    WH = ad.matmul(H, W)
    d = WH.data.shape[1]
    s_center = ad.matvec(WH, ad.vec_slice(a, 0, d))
    s_nbr = ad.matvec(WH, ad.vec_slice(a, d, 2 * d))
    logits = ad.leaky_relu(
        ad.add(ad.gather_rows(s_center, graph.att_center_plan),
               ad.gather_rows(s_nbr, graph.att_nbr_plan)),
        slope=LEAKY_SLOPE)
    return logits, WH


def gat_coefficients(H: Tensor, graph: Graph, W: Tensor, a: Tensor) -> Tensor:
    """Attention coefficients per (center, neighbor) pair incl. self-loops;
    each node's coefficients sum to 1."""
    logits, _ = gat_logits(H, graph, W, a)
    return ad.masked_neighbor_softmax(logits, graph.att_segments)


def gat_aggregate(H: Tensor, graph: Graph, W: Tensor, a: Tensor,
                  activation: bool = True) -> tuple[Tensor, Tensor]:
    """ReLU(sum_u alpha_vu W h_u) plus the coefficients used."""
    logits, WH = gat_logits(H, graph, W, a)
    alpha = ad.masked_neighbor_softmax(logits, graph.att_segments)
    weighted = ad.scale_rows(ad.gather_rows(WH, graph.att_nbr_plan), alpha)
    agg = ad.segment_sum(weighted, graph.att_segments)
    return (ad.relu(agg) if activation else agg), alpha


def combined_update(H: Tensor, graph: Graph, W: Tensor, a: Tensor) -> tuple[Tensor, Tensor]:
    """ReLU(structural + semantic) node update with a shared W.

    The structural branch is the activated normalized aggregation; the
    semantic branch is the raw attention-weighted sum. Returns the updated
    node states and the attention coefficients.
    """
    structural = gcn_aggregate(H, graph, W)
    semantic, alpha = gat_aggregate(H, graph, W, a, activation=False)
    return ad.relu(ad.add(structural, semantic)), alpha


def edge_scores(E: Tensor, be: Tensor) -> Tensor:
    """Per-edge relevance in (0, 1): sigmoid of a learned projection."""
    return ad.sigmoid(ad.matvec(E, be))


def edge_update(E: Tensor, beta: Tensor, We: Tensor) -> Tensor:
    """e_vu <- beta_vu * We e_vu (no activation)."""
    if beta.data.shape[0] != E.data.shape[0]:
        raise ad.ShapeError(
            f"edge_update: {beta.data.shape[0]} scores for {E.data.shape[0]} edges")
    return ad.scale_rows(ad.matmul(E, We), beta)


def initial_edge_features(graph: Graph, We_init: Tensor) -> Tensor:
    """Projected mean of endpoint features for each directed edge."""
    proj = ad.matmul(Tensor(graph.features), We_init)
    return ad.mul(ad.add(ad.gather_rows(proj, graph.edge_src_plan),
                         ad.gather_rows(proj, graph.edge_dst_plan)), 0.5)


def _edge_norm_coef(graph: Graph) -> np.ndarray:
    d = graph.degrees
    return 1.0 / np.sqrt(d[graph.edge_src] * d[graph.edge_dst])


def edge_gcn_view(E: Tensor, graph: Graph, We: Tensor) -> Tensor:
    """Degree-normalized aggregation of a node's incident edge features,
    broadcast back to each of its directed edges."""
    coef = Tensor(_edge_norm_coef(graph))
    agg = ad.segment_sum(ad.scale_rows(ad.matmul(E, We), coef),
                         graph.edge_src_segments)
    return ad.gather_rows(ad.relu(agg), graph.edge_src_plan)


def edge_gat_view(E: Tensor, graph: Graph, We: Tensor, be: Tensor) -> tuple[Tensor, Tensor]:
    """Score-weighted aggregation of incident edge features (weights are
    raw sigmoid scores, not normalized), broadcast back per edge."""
    beta = edge_scores(E, be)
    agg = ad.segment_sum(ad.scale_rows(ad.matmul(E, We), beta),
                         graph.edge_src_segments)
    return ad.gather_rows(ad.relu(agg), graph.edge_src_plan), beta


def feature_extraction_output(alphas: list[Tensor], edge_feats: list[Tensor],
                              graph: Graph) -> Tensor:
    """Layer-summed attention-weighted edge features.

    ``alphas`` holds per-layer pair coefficients (over the attention
    arrays); the non-self entries align with the directed edge arrays.
    """
    if len(alphas) != len(edge_feats):
        raise ad.ShapeError(
            f"{len(alphas)} coefficient layers vs {len(edge_feats)} edge layers")
    total = None
    for alpha, E in zip(alphas, edge_feats):
        if alpha.data.shape[0] == graph.att_center.shape[0]:
            alpha = ad.gather_rows(alpha, graph.att_noself_plan)
        term = ad.scale_rows(E, alpha)
        total = term if total is None else ad.add(total, term)
    return total
