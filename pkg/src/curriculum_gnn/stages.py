"""Three-stage attention: Engage initializes node/edge relevance scores
from dual aggregation views, Enact refines them against score-weighted
neighborhood context, and Embed consolidates embeddings under the final
coefficients.

Two kinds of attention coexist and are named apart deliberately:
scalar relevance scores (one sigmoid value per node or directed edge,
strictly inside (0, 1)) and pairwise aggregation coefficients (masked
softmax over a neighbor set, rows summing to 1). Pairwise coefficients
for a stage are derived from that stage's scalar scores through the
shared masked softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph
from .layers import LayerParams, edge_gat_view, edge_gcn_view, gat_aggregate, gcn_aggregate


@dataclass
class StageParams:
    """Learnables for the Engage/Enact/Embed blocks.

    ``view`` feeds the Engage dual views (shared projection plus neighbor
    attention); a1/b1 score the Engage concatenations, a2/b2 the Enact
    refinements. The consolidation matrices map the doubled Engage width
    back to the embedding width. Per-stage scoring vectors produce the
    diagnostic stage scores.
    """

    view: LayerParams
    a1: Tensor
    b1: Tensor
    a2: Tensor
    b2: Tensor
    We_embed: Tensor
    Wep_embed: Tensor
    W_att: list[Tensor] = field(default_factory=list)   # 3 vectors [2*dim]
    b_att: list[Tensor] = field(default_factory=list)   # 3 scalars [1]

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int,
             score_dim: int | None = None) -> "StageParams":
        score_dim = dim if score_dim is None else score_dim
        return cls(
            view=LayerParams.init(rng, dim, dim, edge_dim=dim),
            a1=ad.glorot(rng, (2 * dim,)),
            b1=ad.glorot(rng, (2 * dim,)),
            a2=ad.glorot(rng, (4 * dim,)),
            b2=ad.glorot(rng, (4 * dim,)),
            We_embed=ad.glorot(rng, (2 * dim, dim)),
            Wep_embed=ad.glorot(rng, (2 * dim, dim)),
            W_att=[ad.glorot(rng, (score_dim,)) for _ in range(3)],
            b_att=[ad.zeros((1,)) for _ in range(3)],
        )

    def tensors(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = self.view.tensors(prefix=f"{prefix}view.")
        named += [(f"{prefix}a1", self.a1), (f"{prefix}b1", self.b1),
                  (f"{prefix}a2", self.a2), (f"{prefix}b2", self.b2),
                  (f"{prefix}We_embed", self.We_embed),
                  (f"{prefix}Wep_embed", self.Wep_embed)]
        for k in range(3):
            named += [(f"{prefix}W_att{k + 1}", self.W_att[k]),
                      (f"{prefix}b_att{k + 1}", self.b_att[k])]
        return named

    def consolidation_tensors(self) -> list[Tensor]:
        """The parameters gated to the final curriculum phase."""
        return [self.We_embed, self.Wep_embed]


def node_pairwise_from_scores(scores: Tensor, graph: Graph) -> Tensor:
    """Masked softmax of per-node scalar scores over each neighbor set
    (incl. self): coefficient for pair (v, u) is driven by u's score."""
    logits = ad.gather_rows(scores, graph.att_nbr_plan)
    return ad.masked_neighbor_softmax(logits, graph.att_segments)


def edge_pairwise_from_scores(scores: Tensor, graph: Graph) -> Tensor:
    """Masked softmax of per-edge scalar scores over the edges sharing a
    source node."""
    return ad.masked_neighbor_softmax(scores, graph.edge_src_segments)


def compute_views(z_nodes: Tensor, z_edges: Tensor, graph: Graph,
                  view: LayerParams) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """The four Engage inputs: structural/attention views of both tracks."""
    h_gcn = gcn_aggregate(z_nodes, graph, view.W)
    h_gat, _ = gat_aggregate(z_nodes, graph, view.W, view.a)
    e_gcn = edge_gcn_view(z_edges, graph, view.We)
    e_gat, _ = edge_gat_view(z_edges, graph, view.We, view.be)
    return h_gcn, h_gat, e_gcn, e_gat


def engage(h_gcn: Tensor, h_gat: Tensor, e_gcn: Tensor, e_gat: Tensor,
           params: StageParams) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Concatenate the dual views and score every node and edge.

    Returns (z0_nodes, z0_edges, alpha0, beta0); the concatenation width
    is twice the view width and all scores are sigmoid outputs.
    """
    if h_gcn.data.shape != h_gat.data.shape:
        raise ad.ShapeError(
            f"view widths differ: {h_gcn.data.shape} vs {h_gat.data.shape}")
    z0_nodes = ad.concat_columns([h_gcn, h_gat])
    z0_edges = ad.concat_columns([e_gcn, e_gat])
    alpha0 = ad.sigmoid(ad.matvec(z0_nodes, params.a1))
    beta0 = ad.sigmoid(ad.matvec(z0_edges, params.b1))
    return z0_nodes, z0_edges, alpha0, beta0


def enact(z_nodes: Tensor, z_edges: Tensor, alpha_prev: Tensor, beta_prev: Tensor,
          params: StageParams, graph: Graph) -> tuple[Tensor, Tensor]:
    """Refine scalar scores against score-weighted neighborhood context."""
    alpha_pair = node_pairwise_from_scores(alpha_prev, graph)
    ctx_nodes = ad.segment_sum(
        ad.scale_rows(ad.gather_rows(z_nodes, graph.att_nbr_plan), alpha_pair),
        graph.att_segments)
    alpha_next = ad.sigmoid(
        ad.matvec(ad.concat_columns([z_nodes, ctx_nodes]), params.a2))

    beta_pair = edge_pairwise_from_scores(beta_prev, graph)
    ctx_src = ad.segment_sum(ad.scale_rows(z_edges, beta_pair),
                             graph.edge_src_segments)
    ctx_edges = ad.gather_rows(ctx_src, graph.edge_src_plan)
    beta_next = ad.sigmoid(
        ad.matvec(ad.concat_columns([z_edges, ctx_edges]), params.b2))
    return alpha_next, beta_next


def embed_consolidate(z_nodes: Tensor, z_edges: Tensor, alpha_pair: Tensor,
                      beta_pair: Tensor, params: StageParams,
                      graph: Graph) -> tuple[Tensor, Tensor]:
    """Coefficient-weighted consolidation of both tracks (no activation).

    ``alpha_pair`` lives on the attention pair arrays, ``beta_pair`` on
    the directed edge arrays; each row of the output is the weighted sum
    of its neighbor (resp. co-incident edge) projections.
    """
    proj_nodes = ad.matmul(z_nodes, params.We_embed)
    zL_nodes = ad.segment_sum(
        ad.scale_rows(ad.gather_rows(proj_nodes, graph.att_nbr_plan), alpha_pair),
        graph.att_segments)

    proj_edges = ad.matmul(z_edges, params.Wep_embed)
    agg_src = ad.segment_sum(ad.scale_rows(proj_edges, beta_pair),
                             graph.edge_src_segments)
    zL_edges = ad.gather_rows(agg_src, graph.edge_src_plan)
    return zL_nodes, zL_edges


def stage_scores(h_final: Tensor, stage_k: int, params: StageParams) -> Tensor:
    """Diagnostic per-node score for stage k in {1, 2, 3}."""
    if stage_k not in (1, 2, 3):
        raise ValueError(f"stage index must be 1, 2, or 3, got {stage_k}")
    return ad.sigmoid(ad.add(ad.matvec(h_final, params.W_att[stage_k - 1]),
                             params.b_att[stage_k - 1]))


@dataclass
class AttentionState:
    """Per-stage scalar scores and the pairwise coefficients in effect."""

    node_scores: dict[int, np.ndarray] = field(default_factory=dict)
    edge_scores: dict[int, np.ndarray] = field(default_factory=dict)
    final_alpha_pair: Tensor | None = None
    final_beta_pair: Tensor | None = None

    def record(self, stage_k: int, alpha: Tensor, beta: Tensor) -> None:
        self.node_scores[stage_k] = alpha.data.copy()
        self.edge_scores[stage_k] = beta.data.copy()
