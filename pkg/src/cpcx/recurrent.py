"""Causal single-layer recurrent context model (LSTM or GRU)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Node


@dataclass(frozen=True)
class RecurrenceConfig:
    kind: str = "lstm"
    hidden: int = 256
    layers: int = 1
    # 1.0 is the usual LSTM choice, but with channel-normalised frames it stalls
    # contrastive training at chance on short schedules; 0.0 does not
    forget_bias: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lstm", "gru"):
            raise ValueError(f"recurrence kind must be 'lstm' or 'gru'; got {self.kind!r}")
        if self.hidden <= 0:
            raise ValueError("hidden size must be positive")
        if self.layers != 1:
            raise ValueError("only single-layer recurrence is supported")


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def init_params(config: RecurrenceConfig, input_size: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, Node]:
    """Gate blocks are laid out ``[i, f, g, o]`` (LSTM) or ``[r, z, n]`` (GRU)."""
    h = config.hidden
    gates = 4 if config.kind == "lstm" else 3
    bound = 1.0 / np.sqrt(input_size)
    p = {
        "rnn.w_x": rng.uniform(-bound, bound, (input_size, gates * h)),
        "rnn.w_h": np.concatenate([_orthogonal(rng, h) for _ in range(gates)], axis=1),
    }
    if config.kind == "lstm":
        b = np.zeros(4 * h)
        b[h : 2 * h] = config.forget_bias
        p["rnn.b"] = b
    else:
        p["rnn.b_x"] = np.zeros(3 * h)
        p["rnn.b_h"] = np.zeros(3 * h)
    return {name: Node(np.asarray(v, dtype=dtype), True, name) for name, v in p.items()}


def _lstm_cell(gx: Node, h: Node, c: Node, params) -> tuple[Node, Node]:
    # gx already holds x @ w_x + b
    n = h.shape[-1]
    gates = gx + T.matmul(h, params["rnn.w_h"])
    i = T.sigmoid(gates[..., 0:n])
    f = T.sigmoid(gates[..., n : 2 * n])
    g = T.tanh(gates[..., 2 * n : 3 * n])
    o = T.sigmoid(gates[..., 3 * n : 4 * n])
    c_new = f * c + i * g
    return o * T.tanh(c_new), c_new


def _gru_cell(gx: Node, h: Node, params) -> Node:
    # gx already holds x @ w_x + b_x
    n = h.shape[-1]
    gh = T.add_bias(T.matmul(h, params["rnn.w_h"]), params["rnn.b_h"])
    r = T.sigmoid(gx[..., 0:n] + gh[..., 0:n])
    z = T.sigmoid(gx[..., n : 2 * n] + gh[..., n : 2 * n])
    cand = T.tanh(gx[..., 2 * n : 3 * n] + r * gh[..., 2 * n : 3 * n])
    # h' = (1 - z) * cand + z * h
    return cand + z * (h - cand)


def lstm_step(x: Node, h: Node, c: Node, params: dict[str, Node]) -> tuple[Node, Node]:
    gx = T.add_bias(T.matmul(x, params["rnn.w_x"]), params["rnn.b"])
    return _lstm_cell(gx, h, c, params)


def gru_step(x: Node, h: Node, params: dict[str, Node]) -> Node:
    gx = T.add_bias(T.matmul(x, params["rnn.w_x"]), params["rnn.b_x"])
    return _gru_cell(gx, h, params)


def context(frames: Node, config: RecurrenceConfig, params: dict[str, Node]) -> Node:
    """Run the recurrence from a zero state over ``[T, C]`` or ``[B, T, C]`` frames.

    Returns ``z`` with the same leading layout and ``H`` features; ``z[t]`` only
    depends on frames ``0..t``.
    """
    if frames.shape[-2] < 1:
        raise ValueError("context needs at least one frame")
    w_h = params["rnn.w_h"]
    if w_h.shape[0] != config.hidden:
        raise T.ShapeError(f"hidden size {config.hidden} does not match w_h {w_h.shape}")
    squeeze = frames.ndim == 2
    x = T.reshape(frames, (1,) + frames.shape) if squeeze else frames
    n_batch, n_steps, _ = x.shape
    h = T.constant(np.zeros((n_batch, config.hidden)), like=w_h)
    bias = params["rnn.b"] if config.kind == "lstm" else params["rnn.b_x"]
    # one product for the whole input projection; per-step slices are cheap views
    gx_all = T.add_bias(T.matmul(x, params["rnn.w_x"]), bias)
    outputs = []
    if config.kind == "lstm":
        c = h
        for t in range(n_steps):
            h, c = _lstm_cell(gx_all[:, t], h, c, params)
            outputs.append(h)
    else:
        for t in range(n_steps):
            h = _gru_cell(gx_all[:, t], h, params)
            outputs.append(h)
    z = T.stack(outputs, axis=1)
    return z[0] if squeeze else z
