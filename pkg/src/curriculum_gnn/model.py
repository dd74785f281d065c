"""Model assembly: builds the parameter set for a chosen variant and
ablation depth and runs the forward pass.

Variants pick the node-update rule of the feature extractor (normalized
sum, neighborhood mean, pure attention, or the combined update); the
ablation ladder controls how much of the pipeline runs after it:

    W/FE      feature extraction -> classifier
    W/EL      + embedding layer
    W/EW      + Engage block (classifier sees the doubled-width concat)
    W/2EW     + Enact refinement
    W/3EW     + Embed consolidation
    W/3EW-CL  same pipeline, trained under the curriculum loss

``vanilla-gcn`` / ``vanilla-gat`` are the plain two-layer baselines used
for comparisons. Stage blocks beyond ``active_stages`` pass their inputs
through unchanged; the consolidation always runs (its output width is
what the classifier expects) and is instead frozen by the optimizer
until its phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import EmbeddingParams, embed_forward
from .graph import Graph
from .layers import (LayerParams, combined_update, edge_scores, edge_update,
                     feature_extraction_output, gat_aggregate, gcn_aggregate,
                     initial_edge_features)
from .losses import classifier_head
from .stages import (AttentionState, StageParams, compute_views,
                     edge_pairwise_from_scores, embed_consolidate, enact, engage,
                     node_pairwise_from_scores, stage_scores)

VARIANTS = ("gcn", "sage", "gat", "full", "vanilla-gcn", "vanilla-gat")
ABLATIONS = ("W/FE", "W/EL", "W/EW", "W/2EW", "W/3EW", "W/3EW-CL")

_DEPTH = {name: i for i, name in enumerate(ABLATIONS)}


class ModelError(ValueError):
    pass


@dataclass
class ForwardResult:
    probs: Tensor
    final_nodes: Tensor
    attention: AttentionState
    stage_diag: list[np.ndarray] = field(default_factory=list)


@dataclass
class ClassifierParams:
    W_final: Tensor
    a_final: Tensor | None
    W_o: Tensor
    b_o: Tensor

    def tensors(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = [(f"{prefix}W_final", self.W_final)]
        if self.a_final is not None:
            named.append((f"{prefix}a_final", self.a_final))
        named += [(f"{prefix}W_o", self.W_o), (f"{prefix}b_o", self.b_o)]
        return named


class Model:
    """A built parameter set plus the forward pass for its pipeline."""

    def __init__(self, feature_dim: int, num_classes: int, hidden: int = 16,
                 embed_dim: int = 64, heads: int = 8, layers: int = 2,
                 dropout: float = 0.5, variant: str = "full",
                 ablation: str = "W/3EW-CL", seed: int = 0):
        if variant not in VARIANTS:
            raise ModelError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        if ablation not in ABLATIONS:
            raise ModelError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.heads = heads
        self.layers = layers
        self.dropout = dropout
        self.variant = variant
        self.ablation = ablation
        self.seed = seed
        self.depth = _DEPTH[ablation]

        rng = np.random.default_rng(seed)
        self.feature_layers: list[LayerParams] = []
        self.edge_init: Tensor | None = None
        self.embedding: EmbeddingParams | None = None
        self.stage: StageParams | None = None
        self.classifier: ClassifierParams | None = None
        self.vanilla: list[Tensor] = []

        if variant == "vanilla-gcn":
            self.vanilla = [ad.glorot(rng, (feature_dim, hidden)),
                            ad.glorot(rng, (hidden, num_classes))]
            return
        if variant == "vanilla-gat":
            self.vanilla = [ad.glorot(rng, (feature_dim, hidden)),
                            ad.glorot(rng, (2 * hidden,)),
                            ad.glorot(rng, (hidden, num_classes)),
                            ad.glorot(rng, (2 * num_classes,))]
            return

        dims = [feature_dim] + [hidden] * layers
        for l in range(layers):
            self.feature_layers.append(
                LayerParams.init(rng, dims[l], dims[l + 1], edge_dim=hidden))
        self.edge_init = ad.glorot(rng, (feature_dim, hidden))

        if self.depth >= _DEPTH["W/EL"]:
            self.embedding = EmbeddingParams.init(rng, hidden, hidden, embed_dim, heads)
        if self.depth >= _DEPTH["W/EW"]:
            self.stage = StageParams.init(rng, embed_dim,
                                          score_dim=self.classifier_input_dim())

        cls_in = self.classifier_input_dim()
        needs_fresh_attention = self.depth < _DEPTH["W/EW"]
        self.classifier = ClassifierParams(
            W_final=ad.glorot(rng, (cls_in, embed_dim)),
            a_final=ad.glorot(rng, (2 * embed_dim,)) if needs_fresh_attention else None,
            W_o=ad.glorot(rng, (embed_dim, num_classes)),
            b_o=ad.zeros((num_classes,)),
        )

    def classifier_input_dim(self) -> int:
        if self.depth == _DEPTH["W/FE"]:
            return self.hidden
        if self.depth == _DEPTH["W/EL"]:
            return self.embed_dim
        if self.depth in (_DEPTH["W/EW"], _DEPTH["W/2EW"]):
            return 2 * self.embed_dim
        return self.embed_dim

    @property
    def uses_curriculum(self) -> bool:
        return self.ablation == "W/3EW-CL" and not self.variant.startswith("vanilla")

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        named: list[tuple[str, Tensor]] = []
        if self.vanilla:
            named += [(f"vanilla.p{i}", t) for i, t in enumerate(self.vanilla)]
            return named
        for l, layer in enumerate(self.feature_layers):
            named += layer.tensors(prefix=f"fe{l}.")
        named.append(("edge_init", self.edge_init))
        if self.embedding is not None:
            named += self.embedding.tensors(prefix="emb.")
        if self.stage is not None:
            named += self.stage.tensors(prefix="stage.")
        named += self.classifier.tensors(prefix="cls.")
        return named

    def parameter_count(self) -> int:
        return int(sum(t.data.size for _, t in self.named_tensors()))

    def gated_tensor_ids(self, active_stages: int) -> set[int]:
        """Parameter ids excluded from updates at the current phase."""
        gated: set[int] = set()
        if self.stage is None:
            return gated
        if active_stages < 3 and self.depth >= _DEPTH["W/3EW"]:
            gated |= {id(t) for t in self.stage.consolidation_tensors()}
        if active_stages < 2:
            gated |= {id(self.stage.a2), id(self.stage.b2)}
        return gated

    def _node_update(self, H: Tensor, graph: Graph,
                     layer: LayerParams) -> tuple[Tensor, Tensor]:
        if self.variant == "gcn":
            out = gcn_aggregate(H, graph, layer.W)
            _, alpha = gat_aggregate(H, graph, layer.W, layer.a)
        elif self.variant == "sage":
            out = gcn_aggregate(H, graph, layer.W, aggregator="mean")
            _, alpha = gat_aggregate(H, graph, layer.W, layer.a)
        elif self.variant == "gat":
            out, alpha = gat_aggregate(H, graph, layer.W, layer.a)
        else:
            out, alpha = combined_update(H, graph, layer.W, layer.a)
        return out, alpha

    def forward(self, graph: Graph, training: bool = False,
                rng: np.random.Generator | None = None,
                active_stages: int = 3) -> ForwardResult:
        if graph.feature_dim != self.feature_dim:
            raise ModelError(f"graph has {graph.feature_dim} features, "
                             f"model built for {self.feature_dim}")
        p = self.dropout if training else 0.0
        if p > 0 and rng is None:
            raise ModelError("training-mode forward needs an rng for dropout")

        if self.variant == "vanilla-gcn":
            return self._forward_vanilla_gcn(graph, p, rng)
        if self.variant == "vanilla-gat":
            return self._forward_vanilla_gat(graph, p, rng)

        attn = AttentionState()
        H = Tensor(graph.features)
        E = initial_edge_features(graph, self.edge_init)
        alphas, edge_feats = [], []
        for layer in self.feature_layers:
            H, alpha = self._node_update(H, graph, layer)
            beta = edge_scores(E, layer.be)
            E = edge_update(E, beta, layer.We)
            alphas.append(alpha)
            edge_feats.append(E)
            if p > 0:
                H = ad.dropout(H, p, rng)
        F_e = feature_extraction_output(alphas, edge_feats, graph)

        if self.depth == _DEPTH["W/FE"]:
            return self._classify(H, graph, attn, alpha_pair=None)

        z_nodes, z_edges = embed_forward(H, F_e, graph, self.embedding)
        if p > 0:
            z_nodes = ad.dropout(z_nodes, p, rng)
        if self.depth == _DEPTH["W/EL"]:
            return self._classify(z_nodes, graph, attn, alpha_pair=None)

        views = compute_views(z_nodes, z_edges, graph, self.stage.view)
        z0n, z0e, alpha_s, beta_s = engage(*views, self.stage)
        attn.record(1, alpha_s, beta_s)
        if p > 0:
            z0n = ad.dropout(z0n, p, rng)

        if self.depth >= _DEPTH["W/2EW"] and active_stages >= 2:
            alpha_s, beta_s = enact(z0n, z0e, alpha_s, beta_s, self.stage, graph)
            attn.record(2, alpha_s, beta_s)

        alpha_pair = node_pairwise_from_scores(alpha_s, graph)
        beta_pair = edge_pairwise_from_scores(beta_s, graph)
        attn.final_alpha_pair = alpha_pair
        attn.final_beta_pair = beta_pair

        if self.depth >= _DEPTH["W/3EW"]:
            zL_nodes, _ = embed_consolidate(z0n, z0e, alpha_pair, beta_pair,
                                            self.stage, graph)
            return self._classify(zL_nodes, graph, attn, alpha_pair=alpha_pair)
        return self._classify(z0n, graph, attn, alpha_pair=alpha_pair)

    def _classify(self, z: Tensor, graph: Graph, attn: AttentionState,
                  alpha_pair: Tensor | None) -> ForwardResult:
        probs = classifier_head(z, graph, self.classifier.W_final,
                                self.classifier.a_final, self.classifier.W_o,
                                self.classifier.b_o, alpha_pair=alpha_pair)
        diag = []
        if self.stage is not None:
            diag = [stage_scores(z, k, self.stage).data.copy() for k in (1, 2, 3)]
        return ForwardResult(probs=probs, final_nodes=z, attention=attn,
                             stage_diag=diag)

    def save(self, path) -> None:
        """Persist config and weights as an .npz (atomic write)."""
        import json
        import os
        import tempfile
        config = {
            "feature_dim": self.feature_dim, "num_classes": self.num_classes,
            "hidden": self.hidden, "embed_dim": self.embed_dim,
            "heads": self.heads, "layers": self.layers, "dropout": self.dropout,
            "variant": self.variant, "ablation": self.ablation, "seed": self.seed,
        }
        arrays = {name: t.data for name, t in self.named_tensors()}
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                                   suffix=".npz")
        os.close(fd)
        try:
            np.savez(tmp, __config__=np.frombuffer(
                json.dumps(config).encode(), dtype=np.uint8), **arrays)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "Model":
        import json
        with np.load(path) as npz:
            config = json.loads(bytes(npz["__config__"]).decode())
            model = cls(**config)
            for name, t in model.named_tensors():
                stored = npz[name]
                if stored.shape != t.data.shape:
                    raise ModelError(f"stored tensor {name} has shape {stored.shape}, "
                                     f"expected {t.data.shape}")
                t.data = stored.astype(np.float64)
        return model

    def _forward_vanilla_gcn(self, graph: Graph, p: float, rng) -> ForwardResult:
        W1, W2 = self.vanilla
        H = gcn_aggregate(Tensor(graph.features), graph, W1)
        if p > 0:
            H = ad.dropout(H, p, rng)
        logits = ad.sparse_dense_matmul(graph.norm_adjacency, ad.matmul(H, W2))
        return ForwardResult(probs=ad.row_softmax(logits), final_nodes=H,
                             attention=AttentionState())

    def _forward_vanilla_gat(self, graph: Graph, p: float, rng) -> ForwardResult:
        W1, a1, W2, a2 = self.vanilla
        H, _ = gat_aggregate(Tensor(graph.features), graph, W1, a1)
        if p > 0:
            H = ad.dropout(H, p, rng)
        logits, _ = gat_aggregate(H, graph, W2, a2, activation=False)
        return ForwardResult(probs=ad.row_softmax(logits), final_nodes=H,
                             attention=AttentionState())
