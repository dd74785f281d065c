"""Embedding layer: affine projection of node/edge features, multi-head
attention refinement of the node track, a non-linear output transform,
and the node+edge combination.

Head width is embed_dim / num_heads so the concatenation restores the
configured width. The node/edge combination mean-pools each node's
incident directed-edge embeddings before adding them to the node track.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph
from .layers import gat_aggregate


@dataclass
class EmbeddingParams:
    W0: Tensor
    b0: Tensor
    We: Tensor
    be: Tensor
    heads: list[tuple[Tensor, Tensor]]   # per head: (W_k, a_k)
    W1: Tensor
    b1: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, node_dim: int, edge_dim: int,
             embed_dim: int, num_heads: int) -> "EmbeddingParams":
        if num_heads < 1:
            raise ValueError(f"need at least one attention head, got {num_heads}")
        if embed_dim % num_heads != 0:
            raise ValueError(
                f"embed width {embed_dim} not divisible by {num_heads} heads")
        head_dim = embed_dim // num_heads
        heads = [(ad.glorot(rng, (embed_dim, head_dim)),
                  ad.glorot(rng, (2 * head_dim,))) for _ in range(num_heads)]
        return cls(
            W0=ad.glorot(rng, (node_dim, embed_dim)),
            b0=ad.zeros((embed_dim,)),
            We=ad.glorot(rng, (edge_dim, embed_dim)),
            be=ad.zeros((embed_dim,)),
            heads=heads,
            W1=ad.glorot(rng, (embed_dim, embed_dim)),
            b1=ad.zeros((embed_dim,)),
        )

    def tensors(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = [(f"{prefix}W0", self.W0), (f"{prefix}b0", self.b0),
                 (f"{prefix}We", self.We), (f"{prefix}be", self.be)]
        for k, (W, a) in enumerate(self.heads):
            named += [(f"{prefix}head{k}.W", W), (f"{prefix}head{k}.a", a)]
        named += [(f"{prefix}W1", self.W1), (f"{prefix}b1", self.b1)]
        return named


def initial_projection(H: Tensor, E: Tensor, params: EmbeddingParams) -> tuple[Tensor, Tensor]:
    """Affine maps (no activation): z_v = W0 h_v + b0, z_vu = We e_vu + be."""
    z_nodes = ad.add(ad.matmul(H, params.W0), params.b0)
    z_edges = ad.add(ad.matmul(E, params.We), params.be)
    return z_nodes, z_edges


def multi_head_refine(z_nodes: Tensor, graph: Graph,
                      heads: list[tuple[Tensor, Tensor]]) -> Tensor:
    """Concatenated per-head attention aggregations of the node track."""
    outputs = []
    for W, a in heads:
        out, _ = gat_aggregate(z_nodes, graph, W, a)
        outputs.append(out)
    return outputs[0] if len(outputs) == 1 else ad.concat_columns(outputs)


def final_transform(z: Tensor, W1: Tensor, b1: Tensor) -> Tensor:
    """ReLU(W1 z + b1)."""
    return ad.relu(ad.add(ad.matmul(z, W1), b1))


def embed_combine(z_nodes: Tensor, z_edges: Tensor, graph: Graph) -> Tensor:
    """Node embedding plus the mean of its incident directed-edge embeddings."""
    if z_nodes.data.shape[1] != z_edges.data.shape[1]:
        raise ad.ShapeError(
            f"node width {z_nodes.data.shape[1]} != edge width {z_edges.data.shape[1]}")
    pooled = ad.segment_mean(z_edges, graph.edge_src_segments)
    return ad.add(z_nodes, pooled)


def embed_forward(H: Tensor, E: Tensor, graph: Graph,
                  params: EmbeddingParams) -> tuple[Tensor, Tensor]:
    """Full embedding module: projection, refinement, transform, combine.

    Returns (combined node embeddings, projected edge embeddings); the
    edge track keeps its projected form for downstream stage use.
    """
    z_nodes, z_edges = initial_projection(H, E, params)
    z_nodes = multi_head_refine(z_nodes, graph, params.heads)
    z_nodes = final_transform(z_nodes, params.W1, params.b1)
    return embed_combine(z_nodes, z_edges, graph), z_edges
