"""Two-stream cluster classifier.

One stream aggregates neighborhood feature differences with EdgeConv over a
fixed cluster graph; the other runs a one-layer transformer over per-cluster
tokens. Their outputs are combined by a learnable weighted sum, optionally
gated by a per-cluster attention score, and flattened into a two-way
classification head. Ablation switches select either stream alone, turn the
gate off, or swap the graph stream for a pointwise baseline with no
neighborhood access.

Everything here is built on the Tape primitives, so a forward pass both
computes values and records the backward program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ScatterPlan, Tape, Tensor
from .errors import ConfigError
from .features import NormalizationParams

STREAMS = ("graph", "transformer")
BASELINES = ("1dcnn-pointwise",)


@dataclass
class ModelConfig:
    n_clusters: int
    in_features: int = 3
    edgeconv_dims: tuple[int, int] = (64, 64)
    stream_dim: int = 96
    attention_hidden: int = 64
    head_hidden: int = 128
    n_classes: int = 2
    transformer_layers: int = 1
    heads: int = 1
    ffn_hidden: int = 192
    streams: tuple[str, ...] = STREAMS
    use_attention: bool = True
    baseline: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.edgeconv_dims = tuple(int(d) for d in self.edgeconv_dims)
        requested = tuple(self.streams)
        bad = [s for s in requested if s not in STREAMS]
        if bad:
            raise ConfigError(f"unknown streams {bad}, expected a subset of {list(STREAMS)}")
        self.streams = tuple(s for s in STREAMS if s in requested)
        if self.n_clusters < 1:
            raise ConfigError(f"n_clusters must be positive, got {self.n_clusters}")
        if len(self.edgeconv_dims) != 2:
            raise ConfigError("exactly two neighborhood layers are supported")
        if self.transformer_layers != 1 or self.heads != 1:
            raise ConfigError("only one transformer layer with one head is supported")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if self.baseline is not None:
            if self.baseline not in BASELINES:
                raise ConfigError(f"unknown baseline {self.baseline!r}, expected one of {BASELINES}")
            # The baseline ablates everything except the pointwise stack.
            self.streams = ("graph",)
            self.use_attention = False
        if not self.streams:
            raise ConfigError("at least one stream must be enabled")
        for dim in (*self.edgeconv_dims, self.stream_dim, self.attention_hidden,
                    self.head_hidden, self.ffn_hidden, self.in_features):
            if dim < 1:
                raise ConfigError("all layer widths must be positive")

    def to_jsonable(self) -> dict:
        return {
            "n_clusters": self.n_clusters,
            "in_features": self.in_features,
            "edgeconv_dims": list(self.edgeconv_dims),
            "stream_dim": self.stream_dim,
            "attention_hidden": self.attention_hidden,
            "head_hidden": self.head_hidden,
            "n_classes": self.n_classes,
            "transformer_layers": self.transformer_layers,
            "heads": self.heads,
            "ffn_hidden": self.ffn_hidden,
            "streams": list(self.streams),
            "use_attention": self.use_attention,
            "baseline": self.baseline,
            "seed": self.seed,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ModelConfig":
        try:
            return cls(**{k: (tuple(v) if k in ("edgeconv_dims", "streams") else v) for k, v in obj.items()})
        except TypeError as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc


class NeighborPlan:
    """Padded gather layout for a ClusterGraph.

    Ragged neighbor lists are padded to the maximum degree by repeating each
    node's first neighbor; a node with no neighbors gets itself (its edge
    difference is then zero). Because a padded slot duplicates slot 0, the
    max pool's first-occurrence argmax never routes gradient to padding.
    """

    __slots__ = ("n_nodes", "k", "neigh", "self_idx")

    def __init__(self, graph):
        lists = [list(row) if row else [i] for i, row in enumerate(graph.neighbors)]
        n = graph.n_nodes
        k = max(len(row) for row in lists)
        flat = np.empty(n * k, dtype=np.int64)
        for i, row in enumerate(lists):
            flat[i * k:i * k + len(row)] = row
            flat[i * k + len(row):(i + 1) * k] = row[0]
        self.n_nodes = n
        self.k = k
        self.neigh = ScatterPlan(flat, n)
        self.self_idx = ScatterPlan(np.repeat(np.arange(n, dtype=np.int64), k), n)


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig) -> dict[str, Tensor]:
    """Fresh parameter tensors for every component the config enables.

    Weights draw from the symmetric uniform scheme +-sqrt(6/(fan_in+fan_out));
    biases and layer-norm offsets start at zero, gains at one, and the two
    fusion weights at 0.5.
    """
    rng = np.random.default_rng(config.seed)
    d = config.stream_dim
    e1, e2 = config.edgeconv_dims
    fin = config.in_features
    n = config.n_clusters
    params: dict[str, Tensor] = {}

    def w(name, fan_in, fan_out, shape=None):
        params[name] = Tensor(_glorot(rng, fan_in, fan_out, shape or (fan_in, fan_out)),
                              requires_grad=True, name=name)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape), requires_grad=True, name=name)

    if "graph" in config.streams:
        if config.baseline is None:
            w("graph.ec1.w", 2 * fin, e1)
            zeros("graph.ec1.b", e1)
            w("graph.ec2.w", 2 * e1, e2)
            zeros("graph.ec2.b", e2)
        else:
            w("graph.pw1.w", fin, e1)
            zeros("graph.pw1.b", e1)
            w("graph.pw2.w", e1, e2)
            zeros("graph.pw2.b", e2)
        w("graph.mix.w", e1 + e2, d)
        zeros("graph.mix.b", d)
    if "transformer" in config.streams:
        w("xf.tok.w", fin, d)
        zeros("xf.tok.b", d)
        w("xf.pos", n, d)
        for name in ("xf.wq", "xf.wk", "xf.wv", "xf.wo"):
            w(name, d, d)
        ones("xf.ln1.g", d)
        zeros("xf.ln1.b", d)
        w("xf.ff1.w", d, config.ffn_hidden)
        zeros("xf.ff1.b", config.ffn_hidden)
        w("xf.ff2.w", config.ffn_hidden, d)
        zeros("xf.ff2.b", d)
        ones("xf.ln2.g", d)
        zeros("xf.ln2.b", d)
    if len(config.streams) == 2:
        params["fuse.w1"] = Tensor(np.asarray(0.5), requires_grad=True, name="fuse.w1")
        params["fuse.w2"] = Tensor(np.asarray(0.5), requires_grad=True, name="fuse.w2")
    if config.use_attention:
        da = config.attention_hidden
        w("attn.v", d, da)
        w("attn.u", d, da)
        w("attn.w", 2 * da, 1)
        zeros("attn.b", 1)
    w("head.fc1.w", n * d, config.head_hidden)
    zeros("head.fc1.b", config.head_hidden)
    w("head.fc2.w", config.head_hidden, config.n_classes)
    zeros("head.fc2.b", config.n_classes)
    return params


# --- forward components ------------------------------------------------------


def edgeconv_forward(tape: Tape, x: Tensor, plan: NeighborPlan, w: Tensor, b: Tensor) -> Tensor:
    """Edge features LeakyReLU(FC([x_i ; x_j - x_i])), max-pooled per node."""
    xj = tape.gather_rows(x, plan.neigh)
    xi = tape.gather_rows(x, plan.self_idx)
    diff = tape.sub(xj, xi)
    edges = tape.leaky_relu(tape.linear(tape.concat_cols(xi, diff), w, b))
    return tape.max_pool_rows(edges, plan.n_nodes, plan.k)


def graph_stream_forward(tape: Tape, x: Tensor, plan: NeighborPlan, params, config) -> Tensor:
    """Two neighborhood layers, shortcut concat, pointwise mix to stream_dim.

    In baseline mode the neighborhood layers are pointwise (no graph access);
    the surrounding wiring is identical so comparisons isolate aggregation.
    """
    if config.baseline is None:
        h1 = edgeconv_forward(tape, x, plan, params["graph.ec1.w"], params["graph.ec1.b"])
        h2 = edgeconv_forward(tape, h1, plan, params["graph.ec2.w"], params["graph.ec2.b"])
    else:
        h1 = tape.leaky_relu(tape.linear(x, params["graph.pw1.w"], params["graph.pw1.b"]))
        h2 = tape.leaky_relu(tape.linear(h1, params["graph.pw2.w"], params["graph.pw2.b"]))
    mixed = tape.linear(tape.concat_cols(h1, h2), params["graph.mix.w"], params["graph.mix.b"])
    return tape.leaky_relu(mixed)


def tokenize(tape: Tape, x: Tensor, params) -> Tensor:
    """Shared linear embedding plus a learnable per-cluster position row."""
    return tape.add(tape.linear(x, params["xf.tok.w"], params["xf.tok.b"]), params["xf.pos"])


def transformer_layer_forward(tape: Tape, t: Tensor, params, config) -> Tensor:
    """Single-head self-attention block with post-norm residual wiring."""
    d = config.stream_dim
    q = tape.matmul(t, params["xf.wq"])
    k = tape.matmul(t, params["xf.wk"])
    v = tape.matmul(t, params["xf.wv"])
    attn = tape.softmax_rows(tape.scale_const(tape.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(d)))
    proj = tape.matmul(tape.matmul(attn, v), params["xf.wo"])
    y = tape.layer_norm_rows(tape.add(t, proj), params["xf.ln1.g"], params["xf.ln1.b"])
    hidden = tape.relu(tape.linear(y, params["xf.ff1.w"], params["xf.ff1.b"]))
    out = tape.linear(hidden, params["xf.ff2.w"], params["xf.ff2.b"])
    return tape.layer_norm_rows(tape.add(y, out), params["xf.ln2.g"], params["xf.ln2.b"])


def fuse(tape: Tape, fg: Tensor | None, ft: Tensor | None, params) -> Tensor:
    """Learnable weighted sum when both streams ran; passthrough otherwise."""
    if fg is not None and ft is not None:
        return tape.add(tape.scale_scalar(fg, params["fuse.w1"]),
                        tape.scale_scalar(ft, params["fuse.w2"]))
    single = fg if fg is not None else ft
    if single is None:
        raise ConfigError("fuse called with no stream outputs")
    return single


def normalized_fusion_weights(params) -> tuple[float, float] | None:
    """Report w1, w2 scaled to sum to 1; None for single-stream models."""
    if "fuse.w1" not in params:
        return None
    w1 = float(params["fuse.w1"].values)
    w2 = float(params["fuse.w2"].values)
    total = w1 + w2
    if total == 0.0:
        return (w1, w2)
    return (w1 / total, w2 / total)


def gated_attention(tape: Tape, f: Tensor, params) -> tuple[Tensor, Tensor]:
    """Per-cluster scalar gates in (0,1) and the gated features.

    Parallel tanh and sigmoid branches are concatenated and squashed to one
    score per cluster, which then scales that cluster's feature row.
    """
    u = tape.tanh(tape.matmul(f, params["attn.v"]))
    g = tape.sigmoid(tape.matmul(f, params["attn.u"]))
    scores = tape.sigmoid(tape.linear(tape.concat_cols(u, g), params["attn.w"], params["attn.b"]))
    return scores, tape.scale_rows(f, scores)


def classify_head(tape: Tape, f: Tensor, params) -> Tensor:
    """Row-major flatten (cluster position matters) into a 2-layer readout."""
    flat = tape.flatten(f)
    hidden = tape.relu(tape.linear(flat, params["head.fc1.w"], params["head.fc1.b"]))
    return tape.linear(hidden, params["head.fc2.w"], params["head.fc2.b"])


def model_forward(tape: Tape, x, params, plan: NeighborPlan | None, config: ModelConfig):
    """Full forward pass; returns (logits, attention scores or None)."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape != (config.n_clusters, config.in_features):
        raise ConfigError(f"input shape {x.shape} does not match config "
                          f"({config.n_clusters}, {config.in_features})")
    fg = ft = None
    if "graph" in config.streams:
        if config.baseline is None:
            if plan is None:
                raise ConfigError("graph stream requires a neighbor plan")
            if plan.n_nodes != config.n_clusters:
                raise ConfigError(f"plan covers {plan.n_nodes} nodes, config has {config.n_clusters}")
        fg = graph_stream_forward(tape, x, plan, params, config)
    if "transformer" in config.streams:
        ft = transformer_layer_forward(tape, tokenize(tape, x, params), params, config)
    fused = fuse(tape, fg, ft, params)
    scores = None
    if config.use_attention:
        scores, fused = gated_attention(tape, fused, params)
    return classify_head(tape, fused, params), scores


# --- snapshots ---------------------------------------------------------------

SNAPSHOT_FORMAT_VERSION = 1


def snapshot_to_jsonable(config: ModelConfig, params, norm: NormalizationParams | None,
                         graph_ref: str | None) -> dict:
    from .autodiff import params_to_jsonable

    return {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "config": config.to_jsonable(),
        "params": params_to_jsonable(params),
        "normalization": None if norm is None else norm.to_jsonable(),
        "graph_ref": graph_ref,
    }


def snapshot_from_jsonable(obj: dict):
    from .autodiff import params_from_jsonable
    from .errors import InputError

    version = obj.get("format_version")
    if version != SNAPSHOT_FORMAT_VERSION:
        raise InputError(f"unsupported model snapshot format_version: {version!r}")
    try:
        config = ModelConfig.from_jsonable(obj["config"])
        params = params_from_jsonable(obj["params"])
        norm = None if obj.get("normalization") is None else NormalizationParams.from_jsonable(obj["normalization"])
    except KeyError as exc:
        raise InputError(f"model snapshot missing field: {exc}") from exc
    expect = set(init_params(config))
    got = set(params)
    if expect != got:
        raise InputError(f"snapshot parameters do not match config: missing {sorted(expect - got)}, "
                         f"unexpected {sorted(got - expect)}")
    return config, params, norm, obj.get("graph_ref")
