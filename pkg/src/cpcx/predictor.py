"""Future-frame predictors: linear, feed-forward, causal conv8 and transformer.

Every kind maps context ``z`` of shape ``[B, T, H]`` to predictions of shape
``[B, T, K, C]`` where ``[:, t, k]`` estimates the encoder frame at ``t + k + 1``
from ``z[:, :t+1]`` only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Node

KINDS = ("linear", "ffd", "conv8", "transformer")
CONV_WIDTH = 8


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "transformer"
    K: int = 12
    dropout: float = 0.1
    heads: int = 4
    heads_share_trunk: bool = True
    ffd_hidden: int | None = None
    conv_channels: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"predictor kind must be one of {KINDS}; got {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.heads < 1:
            raise ValueError("attention heads must be positive")


# context entries are well inside (-1, 1); a unit-amplitude encoding would drown them
PE_SCALE = 0.1


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def _trunk_params(prefix: str, h: int, rng) -> dict[str, np.ndarray]:
    p = {}
    for name in ("q", "k", "v", "o"):
        p[f"{prefix}.w_{name}"] = _uniform(rng, h, (h, h))
        p[f"{prefix}.b_{name}"] = np.zeros(h)
    p[f"{prefix}.norm1.gain"] = np.ones(h)
    p[f"{prefix}.norm1.bias"] = np.zeros(h)
    p[f"{prefix}.ff1.weight"] = _uniform(rng, h, (h, 2 * h))
    p[f"{prefix}.ff1.bias"] = np.zeros(2 * h)
    p[f"{prefix}.ff2.weight"] = _uniform(rng, 2 * h, (2 * h, h))
    p[f"{prefix}.ff2.bias"] = np.zeros(h)
    p[f"{prefix}.norm2.gain"] = np.ones(h)
    p[f"{prefix}.norm2.bias"] = np.zeros(h)
    return p


def init_params(config: PredictorConfig, hidden: int, out_dim: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, Node]:
    K, h = config.K, hidden
    p: dict[str, np.ndarray] = {}
    if config.kind == "ffd":
        inner = config.ffd_hidden or h
        p["predictor.fc1.weight"] = _uniform(rng, h, (h, inner))
        p["predictor.fc1.bias"] = np.zeros(inner)
        p["predictor.fc2.weight"] = _uniform(rng, inner, (inner, h))
        p["predictor.fc2.bias"] = np.zeros(h)
        p["predictor.proj.bias"] = np.zeros(K * out_dim)
    elif config.kind == "conv8":
        ch = config.conv_channels or h
        p["predictor.conv.weight"] = _uniform(rng, h * CONV_WIDTH, (ch, h, CONV_WIDTH))
        p["predictor.conv.bias"] = np.zeros(ch)
        h = ch
    elif config.kind == "transformer":
        if hidden % config.heads:
            raise ValueError(f"hidden size {hidden} is not divisible by {config.heads} attention heads")
        trunks = 1 if config.heads_share_trunk else K
        for j in range(trunks):
            p.update(_trunk_params(f"predictor.trunk{j}", h, rng))
    # A_k stored as [K, C, H]; prediction k is A_k @ z_t. Zero start: random
    # projections score worse than chance and the quickest way down is to
    # collapse every frame onto one direction, which training never leaves
    p["predictor.A"] = np.zeros((K, out_dim, h))
    return {name: Node(np.asarray(v, dtype=dtype), True, name) for name, v in p.items()}


def _project(x: Node, A: Node) -> Node:
    K, c, h = A.shape
    flat = T.transpose(T.reshape(A, (K * c, h)))
    y = T.matmul(x, flat)
    return T.reshape(y, x.shape[:-1] + (K, c))


def predict_linear(z: Node, A: Node) -> Node:
    if z.shape[-1] != A.shape[-1]:
        raise T.ShapeError(f"context width {z.shape[-1]} does not match A {A.shape}")
    return _project(z, A)


def predict_ffd(z: Node, params: dict[str, Node]) -> Node:
    hid = T.relu(T.add_bias(T.matmul(z, params["predictor.fc1.weight"]), params["predictor.fc1.bias"]))
    out = T.add_bias(T.matmul(hid, params["predictor.fc2.weight"]), params["predictor.fc2.bias"])
    A = params["predictor.A"]
    K, c, _ = A.shape
    flat = T.add_bias(T.reshape(_project(out, A), out.shape[:-1] + (K * c,)), params["predictor.proj.bias"])
    return T.reshape(flat, out.shape[:-1] + (K, c))


def predict_conv8(z: Node, params: dict[str, Node]) -> Node:
    padded = T.pad_time(z, CONV_WIDTH - 1, 0)
    y = T.conv1d(padded, params["predictor.conv.weight"], params["predictor.conv.bias"], 1, 0)
    return _project(y, params["predictor.A"])


def positional_encoding(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    rates = 1.0 / (10000 ** (np.arange(0, dim, 2) / dim))
    pe = np.zeros((n, dim))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return pe


def _causal_attention(x: Node, prefix: str, params, heads: int) -> Node:
    b, t, h = x.shape
    d = h // heads

    def split(name):
        y = T.add_bias(T.matmul(x, params[f"{prefix}.w_{name}"]), params[f"{prefix}.b_{name}"])
        return T.transpose(T.reshape(y, (b, t, heads, d)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    future = np.broadcast_to(np.triu(np.ones((t, t), dtype=bool), 1), scores.shape)
    weights = T.softmax(T.masked_fill(scores, future, -np.inf))
    ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (b, t, h))
    return T.add_bias(T.matmul(ctx, params[f"{prefix}.w_o"]), params[f"{prefix}.b_o"])


def _trunk(x: Node, prefix: str, params, config: PredictorConfig, training: bool, rng) -> Node:
    att = T.dropout(_causal_attention(x, prefix, params, config.heads), config.dropout, rng, training)
    x = T.layer_norm(x + att, params[f"{prefix}.norm1.gain"], params[f"{prefix}.norm1.bias"])
    hid = T.relu(T.add_bias(T.matmul(x, params[f"{prefix}.ff1.weight"]), params[f"{prefix}.ff1.bias"]))
    ff = T.add_bias(T.matmul(hid, params[f"{prefix}.ff2.weight"]), params[f"{prefix}.ff2.bias"])
    ff = T.dropout(ff, config.dropout, rng, training)
    return T.layer_norm(x + ff, params[f"{prefix}.norm2.gain"], params[f"{prefix}.norm2.bias"])


def predict_transformer(
    z: Node,
    params: dict[str, Node],
    config: PredictorConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    b, t, h = z.shape
    if h % config.heads:
        raise ValueError(f"hidden size {h} is not divisible by {config.heads} attention heads")
    if training and config.dropout > 0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    x = z + T.constant(np.broadcast_to(PE_SCALE * positional_encoding(t, h), z.shape), like=z)
    A = params["predictor.A"]
    if config.heads_share_trunk:
        return _project(_trunk(x, "predictor.trunk0", params, config, training, rng), A)
    preds = []
    for k in range(config.K):
        y = _trunk(x, f"predictor.trunk{k}", params, config, training, rng)
        preds.append(T.matmul(y, T.transpose(A[k])))
    return T.stack(preds, axis=2)


def predict(
    z: Node,
    config: PredictorConfig,
    params: dict[str, Node],
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Node:
    """Dispatch on ``config.kind``; accepts ``[T, H]`` or ``[B, T, H]`` context."""
    squeeze = z.ndim == 2
    if squeeze:
        z = T.reshape(z, (1,) + z.shape)
    if config.kind == "linear":
        out = predict_linear(z, params["predictor.A"])
    elif config.kind == "ffd":
        out = predict_ffd(z, params)
    elif config.kind == "conv8":
        out = predict_conv8(z, params)
    else:
        out = predict_transformer(z, params, config, training, rng)
    return out[0] if squeeze else out
