"""Session recommender operating on the Lorentz hyperboloid.

Pipeline per session: look up item embeddings (stored as tangent vectors at
the origin, mapped onto the manifold), run graph attention layers over the
session graph, fuse all depths with softmax-normalized coefficients, refine
with hyperbolic self-attention blocks, blend the long-term (self-attention)
and short-term (last item) representations through a learned gate, and score
the whole catalog with tangent-space dot products followed by a softmax.

Every trainable parameter is an unconstrained array in the tangent space at
the origin (or a plain Euclidean matrix/scalar); the manifold structure
enters only through the exponential/logarithmic maps inside the forward
pass, so a standard first-order optimizer applies directly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import manifold
from .autodiff import Tensor
from .session_graph import SessionGraph, build_graph, neighborhood

CHECKPOINT_FORMAT = "hcgr-v1"
AGGREGATORS = ("multi_hop", "gat_last_layer", "gcn_mean")

# Pre-softmax logit for non-neighbor pairs; exp underflows to exactly 0.
MASK_LOGIT = -1e30


class CheckpointError(ValueError):
    """Checkpoint file is missing, malformed, or has an unknown format."""


@dataclass(frozen=True)
class HyperParams:
    """Architecture knobs; loss/optimizer knobs live in training.TrainConfig."""

    dim: int = 128
    graph_layers: int = 1
    attention_blocks: int = 1
    max_session_len: int = 50
    aggregator: str = "multi_hop"

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.graph_layers < 1:
            raise ValueError("graph_layers must be >= 1")
        if self.attention_blocks < 1:
            raise ValueError("attention_blocks must be >= 1")
        if self.max_session_len < 1:
            raise ValueError("max_session_len must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")


@dataclass
class BlockParams:
    """One hyperbolic self-attention block with its feed-forward sublayer."""

    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    ff_w1: Tensor
    ff_w2: Tensor
    ff_b1: Tensor
    ff_b2: Tensor
    kappa: Tensor


@dataclass
class ModelParams:
    embeddings: Tensor
    attn_w: Tensor
    attn_b: Tensor
    fusion_logits: Tensor
    gate_logit: Tensor
    graph_kappa: list[Tensor]
    blocks: list[BlockParams]

    @classmethod
    def init(cls, hyper: HyperParams, catalog_size: int, seed: int) -> "ModelParams":
        """Gaussian(0, 0.1) initialization; curvature scalars start at k = 1."""
        rng = np.random.default_rng(seed)
        w = hyper.dim + 1

        def p(shape=()):
            return Tensor(rng.normal(0.0, 0.1, shape), requires_grad=True)

        embeddings = p((catalog_size, hyper.dim))
        attn_w = p((2 * w,))
        attn_b = p()
        fusion_logits = p((hyper.graph_layers + 1,))
        gate_logit = p()
        blocks = []
        for _ in range(hyper.attention_blocks):
            mats = [p((w, w)) for _ in range(5)]
            biases = []
            for _ in range(2):
                b = rng.normal(0.0, 0.1, (w,))
                b[0] = 0.0  # tangent at the origin has zero time component
                biases.append(Tensor(b, requires_grad=True))
            blocks.append(
                BlockParams(
                    *mats,
                    *biases,
                    kappa=Tensor(manifold.KAPPA_RAW_FOR_UNIT_K, requires_grad=True),
                )
            )
        graph_kappa = [
            Tensor(manifold.KAPPA_RAW_FOR_UNIT_K, requires_grad=True)
            for _ in range(hyper.graph_layers + 1)
        ]
        return cls(embeddings, attn_w, attn_b, fusion_logits, gate_logit, graph_kappa, blocks)

    @classmethod
    def from_arrays(cls, hyper: HyperParams, catalog_size: int, arrays: dict) -> "ModelParams":
        shapes = expected_shapes(hyper, catalog_size)
        missing = sorted(set(shapes) - set(arrays))
        extra = sorted(set(arrays) - set(shapes))
        if missing or extra:
            raise CheckpointError(f"parameter set mismatch: missing={missing} extra={extra}")
        tensors = {}
        for name, shape in shapes.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise CheckpointError(f"parameter '{name}' has shape {arr.shape}, expected {shape}")
            tensors[name] = Tensor(arr, requires_grad=True)
        blocks = []
        for j in range(hyper.attention_blocks):
            blocks.append(
                BlockParams(
                    w_query=tensors[f"block.{j}.w_query"],
                    w_key=tensors[f"block.{j}.w_key"],
                    w_value=tensors[f"block.{j}.w_value"],
                    ff_w1=tensors[f"block.{j}.ff_w1"],
                    ff_w2=tensors[f"block.{j}.ff_w2"],
                    ff_b1=tensors[f"block.{j}.ff_b1"],
                    ff_b2=tensors[f"block.{j}.ff_b2"],
                    kappa=tensors[f"block.{j}.kappa"],
                )
            )
        graph_kappa = [tensors[f"graph_kappa.{l}"] for l in range(hyper.graph_layers + 1)]
        return cls(
            tensors["embeddings"],
            tensors["attn_w"],
            tensors["attn_b"],
            tensors["fusion_logits"],
            tensors["gate_logit"],
            graph_kappa,
            blocks,
        )

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [
            ("embeddings", self.embeddings),
            ("attn_w", self.attn_w),
            ("attn_b", self.attn_b),
            ("fusion_logits", self.fusion_logits),
            ("gate_logit", self.gate_logit),
        ]
        for l, t in enumerate(self.graph_kappa):
            out.append((f"graph_kappa.{l}", t))
        for j, blk in enumerate(self.blocks):
            out.extend(
                (f"block.{j}.{nm}", getattr(blk, nm))
                for nm in ("w_query", "w_key", "w_value", "ff_w1", "ff_w2", "ff_b1", "ff_b2", "kappa")
            )
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.named_parameters():
            t.data[...] = arrays[name]

    def zero_grads(self):
        for _, t in self.named_parameters():
            t.zero_grad()


def expected_shapes(hyper: HyperParams, catalog_size: int) -> dict[str, tuple]:
    w = hyper.dim + 1
    shapes: dict[str, tuple] = {
        "embeddings": (catalog_size, hyper.dim),
        "attn_w": (2 * w,),
        "attn_b": (),
        "fusion_logits": (hyper.graph_layers + 1,),
        "gate_logit": (),
    }
    for l in range(hyper.graph_layers + 1):
        shapes[f"graph_kappa.{l}"] = ()
    for j in range(hyper.attention_blocks):
        for nm in ("w_query", "w_key", "w_value", "ff_w1", "ff_w2"):
            shapes[f"block.{j}.{nm}"] = (w, w)
        shapes[f"block.{j}.ff_b1"] = (w,)
        shapes[f"block.{j}.ff_b2"] = (w,)
        shapes[f"block.{j}.kappa"] = ()
    return shapes


@dataclass
class ModelCaches:
    """Per-batch tensors shared by every forward pass until parameters change."""

    graph_k: list[Tensor]
    block_k: list[Tensor]
    tangent_table: Tensor  # (V, d+1) tangent rows at the origin, time column 0
    point_table: Tensor  # (V, d+1) item points on the hyperboloid


@dataclass
class Traces:
    """Attention weights captured during one forward pass."""

    node_items: tuple[int, ...]
    graph_attention: list[np.ndarray] = field(default_factory=list)
    self_attention: list[np.ndarray] = field(default_factory=list)
    fusion_weights: np.ndarray | None = None
    gate: float = 0.0
    points: dict[str, np.ndarray] | None = None


@dataclass
class ForwardResult:
    yhat: Tensor  # (V,) probability vector
    readout: Tensor  # (d+1,) tangent vector at the origin
    graph: SessionGraph
    traces: Traces


class HCGRModel:
    def __init__(self, hyper: HyperParams, catalog_size: int, params: ModelParams):
        self.hyper = hyper
        self.catalog_size = catalog_size
        self.params = params

    @classmethod
    def create(cls, hyper: HyperParams, catalog_size: int, seed: int) -> "HCGRModel":
        return cls(hyper, catalog_size, ModelParams.init(hyper, catalog_size, seed))

    # -- shared per-batch tensors ---------------------------------------
    def caches(self) -> ModelCaches:
        p = self.params
        graph_k = [manifold.curvature_from_raw(t) for t in p.graph_kappa]
        block_k = [manifold.curvature_from_raw(b.kappa) for b in p.blocks]
        zeros_col = ad.constant(np.zeros((self.catalog_size, 1)))
        tangent_table = ad.concat([zeros_col, p.embeddings], axis=1)
        point_table = manifold.exp_o_rows(tangent_table, graph_k[0])
        return ModelCaches(graph_k, block_k, tangent_table, point_table)

    # -- typed single-item view ------------------------------------------
    def embed(self, item: int) -> manifold.LorentzPoint:
        """Hyperbolic point of one item (analysis helper, no gradients)."""
        if not 0 <= item < self.catalog_size:
            raise ValueError(f"item id {item} out of range")
        with ad.no_grad():
            caches = self.caches()
            coords = caches.point_table.data[item].copy()
            k = float(caches.graph_k[0].data)
        return manifold.LorentzPoint(coords, k)

    def embedding_distances(self) -> np.ndarray:
        """Geodesic distance from the origin for every catalog item."""
        with ad.no_grad():
            caches = self.caches()
            k = caches.graph_k[0]
            o = manifold.origin_rows(self.catalog_size, self.hyper.dim, k)
            return manifold.dist_rows(o, caches.point_table, k).data[:, 0].copy()

    # -- forward pass -----------------------------------------------------
    def forward(self, items, caches: ModelCaches | None = None, collect_points: bool = False) -> ForwardResult:
        items = list(items)
        if not items:
            raise ValueError("forward: empty session")
        if len(items) > self.hyper.max_session_len:
            items = items[-self.hyper.max_session_len :]
        if min(items) < 0 or max(items) >= self.catalog_size:
            raise ValueError("forward: item id out of catalog range")
        if caches is None:
            caches = self.caches()
        p = self.params

        g = build_graph(items)
        traces = Traces(node_items=g.nodes)
        collected: dict[str, np.ndarray] = {}

        X = ad.take_rows(caches.point_table, np.asarray(g.nodes, dtype=np.intp))
        if collect_points:
            collected["embed"] = X.data.copy()

        per_layer = [X]
        for l in range(1, self.hyper.graph_layers + 1):
            X_in = manifold.transfer_rows(per_layer[-1], caches.graph_k[l - 1], caches.graph_k[l])
            X_out, attn = self._graph_attention(g, X_in, caches.graph_k[l])
            traces.graph_attention.append(attn)
            per_layer.append(X_out)
            if collect_points:
                collected[f"graph_layer_{l}"] = X_out.data.copy()

        Z, fusion_weights = self._fuse(per_layer, caches.graph_k)
        traces.fusion_weights = fusion_weights
        if collect_points:
            collected["fused"] = Z.data.copy()

        E = Z
        prev_k = caches.graph_k[-1]
        for j, blk in enumerate(p.blocks):
            E_in = manifold.transfer_rows(E, prev_k, caches.block_k[j])
            E, attn = self._self_attention_block(E_in, blk, caches.block_k[j])
            traces.self_attention.append(attn)
            prev_k = caches.block_k[j]
            if collect_points:
                collected[f"block_{j}"] = E.data.copy()

        pos = g.position_of_last
        long_tan = manifold.log_o_rows(E, prev_k)[pos]
        short_tan = manifold.log_o_rows(Z, caches.graph_k[-1])[pos]
        gate = ad.sigmoid(p.gate_logit)
        o_vec = ad.add(ad.mul(gate, long_tan), ad.mul(ad.sub(1.0, gate), short_tan))
        traces.gate = float(gate.data)

        yhat = self.score(o_vec, caches)
        if collect_points:
            traces.points = collected
        return ForwardResult(yhat, o_vec, g, traces)

    def score(self, o_vec: Tensor, caches: ModelCaches | None = None) -> Tensor:
        """Catalog probabilities from a readout tangent vector.

        Logits are dot products of the readout with each item's origin-tangent
        row (zero time coordinate on both sides), followed by a softmax.
        """
        if caches is None:
            caches = self.caches()
        return ad.softmax_rows(ad.matmul(caches.tangent_table, o_vec))

    # -- stages ------------------------------------------------------------
    def _graph_attention(self, g: SessionGraph, X: Tensor, k) -> tuple[Tensor, np.ndarray]:
        """One round of neighborhood attention in the tangent bundle.

        Attention logits are linear in the origin-tangents of the endpoint
        pair plus the log of the transition count; weighted neighbor tangents
        (logarithms at the node) are combined and mapped back with exp.
        """
        n = len(g.nodes)
        uniform = self.hyper.aggregator == "gcn_mean"
        bias = np.full((n, n), MASK_LOGIT)
        for i in range(n):
            for j, w in neighborhood(g, i):
                bias[i, j] = 0.0 if uniform else math.log(w)

        if uniform:
            logits = ad.constant(bias)
        else:
            T = manifold.log_o_rows(X, k)
            width = X.shape[1]
            a_row = ad.matmul(T, self.params.attn_w[:width])  # (n,)
            a_col = ad.matmul(T, self.params.attn_w[width:])  # (n,)
            ones_row = ad.constant(np.ones((1, n)))
            ones_col = ad.constant(np.ones((n, 1)))
            logits = ad.add(
                ad.add(
                    ad.matmul(ad.reshape(a_row, (n, 1)), ones_row),
                    ad.matmul(ones_col, ad.reshape(a_col, (1, n))),
                ),
                ad.add(self.params.attn_b, ad.constant(bias)),
            )
        attn = ad.softmax_rows(logits)

        # Sum_j w_ij log_{x_i}(x_j) expanded through the pairwise Lorentz Gram
        # matrix: log_{x_i}(x_j) = d_ij/|u_ij| * (x_j + (G_ij/k) x_i) with
        # |u_ij|^2 = G_ij^2/k - k, so the aggregate is C X + diag(C G^T/k) X.
        G = manifold.pairwise_inner(X, X)
        d_pair = ad.mul(ad.sqrt(ad.as_tensor(k)), ad.arcosh(ad.clamp(ad.div(ad.neg(G), k), lo=1.0)))
        inv_unorm = ad.div(
            1.0,
            ad.sqrt(ad.clamp(ad.sub(ad.div(ad.mul(G, G), k), k), lo=manifold.MIN_SQ_NORM)),
        )
        C = ad.mul(ad.mul(attn, d_pair), inv_unorm)
        self_coef = ad.div(ad.tsum(ad.mul(C, G), axis=1, keepdims=True), k)
        agg = ad.add(ad.matmul(C, X), ad.scale_rows(X, self_coef))
        X_out = manifold.exp_map_rows(X, agg, k)
        return X_out, attn.data.copy()

    def _fuse(self, per_layer: list[Tensor], graph_k: list[Tensor]) -> tuple[Tensor, np.ndarray]:
        """Convex tangent-space combination of all aggregation depths."""
        if self.hyper.aggregator == "gat_last_layer":
            return per_layer[-1], np.eye(len(per_layer))[-1]
        weights = ad.softmax_rows(self.params.fusion_logits)
        acc = None
        for l, (x, k) in enumerate(zip(per_layer, graph_k)):
            term = ad.mul(weights[l], manifold.log_o_rows(x, k))
            acc = term if acc is None else ad.add(acc, term)
        return manifold.exp_o_rows(acc, graph_k[-1]), weights.data.copy()

    def _self_attention_block(self, E: Tensor, blk: BlockParams, k) -> tuple[Tensor, np.ndarray]:
        """Scaled dot-product self-attention and feed-forward, both computed
        through the tangent space at the origin, with a tangent skip link.

        Where a map onto the hyperboloid is immediately followed by the
        logarithm at the origin the pair is dropped (it is the identity on
        zero-time tangents), so intermediate points are materialized only
        where the bias terms genuinely need them.
        """
        width = E.shape[1]
        T = manifold.log_o_rows(E, k)
        q = ad.matmul(T, blk.w_query)
        key = ad.matmul(T, blk.w_key)
        v = ad.matmul(T, blk.w_value)
        attn = ad.softmax_rows(ad.div(ad.matmul(q, ad.transpose(key)), math.sqrt(width)))
        f_tan = manifold.zero_time(ad.matmul(attn, v))  # log_o of the attention output point

        h1 = manifold.exp_o_rows(ad.matmul(f_tan, ad.transpose(blk.ff_w1)), k)
        h1 = manifold.hyp_bias_add_rows(h1, blk.ff_b1, k)
        act_tan = ad.leaky_relu(manifold.log_o_rows(h1, k), 0.2)
        h2 = manifold.exp_o_rows(ad.matmul(act_tan, ad.transpose(blk.ff_w2)), k)
        h2 = manifold.hyp_bias_add_rows(h2, blk.ff_b2, k)
        out = manifold.exp_o_rows(ad.add(manifold.log_o_rows(h2, k), f_tan), k)
        return out, attn.data.copy()


# ---------------------------------------------------------------------------
# checkpoint round-trip
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, model: HCGRModel, rng_seed: int):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "hyperparams": {
            "dim": model.hyper.dim,
            "graph_layers": model.hyper.graph_layers,
            "attention_blocks": model.hyper.attention_blocks,
            "max_session_len": model.hyper.max_session_len,
            "aggregator": model.hyper.aggregator,
        },
        "catalog_size": model.catalog_size,
        "rng_seed": rng_seed,
        "params": {name: arr.tolist() for name, arr in model.params.state_arrays().items()},
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[HCGRModel, int]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {doc.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
    try:
        hyper = HyperParams(**doc["hyperparams"])
        catalog_size = int(doc["catalog_size"])
        params = ModelParams.from_arrays(hyper, catalog_size, doc["params"])
        seed = int(doc.get("rng_seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return HCGRModel(hyper, catalog_size, params), seed
