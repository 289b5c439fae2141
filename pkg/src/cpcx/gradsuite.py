"""Double-precision finite-difference checks for every differentiable piece of the model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .cpc_loss import info_nce, sample_negatives
from .encoder import EncoderConfig
from .model import CPCModel, ModelConfig
from .predictor import PredictorConfig
from .probe import ctc_loss, stack_frames
from .recurrent import RecurrenceConfig, gru_step, init_params as rnn_params, lstm_step, context
from .trainer import frame_cross_entropy

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}\t{self.name}\t{self.max_error:.2e}\t<= {self.tolerance:.0e}"


def _leaf(rng, shape, name, positive=False):
    data = rng.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    return T.Node(data.astype(np.float64), True, name)


def _weights(rng, shape):
    # fixed random projection turns any output into a scalar with a generic gradient
    return T.Node(rng.normal(size=shape))


def _project(y: T.Node, w: T.Node) -> T.Node:
    return T.sum(T.mul(y, w))


def _check(name, f, params, tol, **kwargs) -> CheckResult:
    start = time.perf_counter()
    report = T.grad_check(f, params, eps=1e-5, tolerance=tol, **kwargs)
    return CheckResult(name, report.max_error, tol, time.perf_counter() - start)


def primitive_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    shapes = [(5,), (3, 4), (2, 3, 4)]
    for i, shape in enumerate(shapes):
        a, b = _leaf(rng, shape, "a"), _leaf(rng, shape, "b")
        w = _weights(rng, shape)
        for op in ("tanh", "sigmoid", "relu"):
            out.append(_check(f"{op}{shape}", lambda op=op: _project(T.pointwise(op, a), w), [a], PRIMITIVE_TOL))
        out.append(_check(f"add{shape}", lambda: _project(T.pointwise("add", a, b), w), [a, b], PRIMITIVE_TOL))
        out.append(_check(f"mul{shape}", lambda: _project(T.pointwise("mul", a, b), w), [a, b], PRIMITIVE_TOL))
        out.append(_check(f"scale{shape}", lambda: _project(T.pointwise("scale", a, -1.7), w), [a], PRIMITIVE_TOL))
        out.append(_check(f"log_softmax{shape}", lambda: _project(T.log_softmax(a), w), [a], PRIMITIVE_TOL))
        out.append(_check(f"softmax{shape}", lambda: _project(T.softmax(a), w), [a], PRIMITIVE_TOL))
        if len(shape) > 1:
            g, c = _leaf(rng, shape[-1:], "gain"), _leaf(rng, shape[-1:], "bias")
            out.append(_check(f"layer_norm{shape}", lambda: _project(T.layer_norm(a, g, c), w), [a, g, c], PRIMITIVE_TOL))
            out.append(_check(f"add_bias{shape}", lambda: _project(T.add_bias(a, c), w), [a, c], PRIMITIVE_TOL))
            out.append(_check(f"transpose{shape}", lambda: _project(T.transpose(a), T.transpose(w)), [a], PRIMITIVE_TOL))
    for m, k, n in [(4, 5, 3), (1, 6, 2), (7, 3, 7)]:
        a, b = _leaf(rng, (m, k), "a"), _leaf(rng, (k, n), "b")
        w = _weights(rng, (m, n))
        out.append(_check(f"matmul({m}x{k})@({k}x{n})", lambda: _project(T.matmul(a, b), w), [a, b], PRIMITIVE_TOL))
    a, b = _leaf(rng, (2, 3, 4, 5), "a"), _leaf(rng, (2, 3, 5, 2), "b")
    w = _weights(rng, (2, 3, 4, 2))
    out.append(_check("matmul stacked", lambda: _project(T.matmul(a, b), w), [a, b], PRIMITIVE_TOL))
    for t_in, c_in, c_out, k, stride, pad, batch in [(8, 2, 3, 4, 1, 0, None), (16, 1, 4, 10, 5, 3, 2), (9, 3, 2, 3, 2, 1, 3)]:
        shape = (t_in, c_in) if batch is None else (batch, t_in, c_in)
        x = _leaf(rng, shape, "input")
        kern = _leaf(rng, (c_out, c_in, k), "kernel")
        bias = _leaf(rng, (c_out,), "bias")
        t_out = (t_in + 2 * pad - k) // stride + 1
        w = _weights(rng, (t_out, c_out) if batch is None else (batch, t_out, c_out))
        out.append(_check(
            f"conv1d T={t_in} k={k} s={stride} p={pad}",
            lambda x=x, kern=kern, bias=bias, stride=stride, pad=pad, w=w: _project(T.conv1d(x, kern, bias, stride, pad), w),
            [x, kern, bias], PRIMITIVE_TOL,
        ))
    x = _leaf(rng, (2, 5, 3), "x")
    w = _weights(rng, (2, 10, 3))
    out.append(_check("pad_time", lambda: _project(T.pad_time(x, 3, 2), w), [x], PRIMITIVE_TOL))
    idx = (np.array([0, 1, 1]), np.array([4, 0, 4]))
    w2 = _weights(rng, (3, 3))
    out.append(_check("take (repeated indices)", lambda: _project(T.take(x, idx), w2), [x], PRIMITIVE_TOL))
    y = _leaf(rng, (2, 5, 3), "y")
    w3 = _weights(rng, (2, 5, 6))
    out.append(_check("concat", lambda: _project(T.concat([x, y], axis=-1), w3), [x, y], PRIMITIVE_TOL))
    w4 = _weights(rng, (2, 2, 5, 3))
    out.append(_check("stack", lambda: _project(T.stack([x, y], axis=1), w4), [x, y], PRIMITIVE_TOL))
    mask = rng.random((2, 5, 3)) < 0.3
    out.append(_check("masked_fill", lambda: _project(T.masked_fill(x, mask, 0.0), _weights(np.random.default_rng(1), (2, 5, 3))), [x], PRIMITIVE_TOL))
    # shared node feeding two consumers
    out.append(_check("fan-out", lambda: T.sum(T.mul(T.tanh(x), T.sigmoid(x))), [x], PRIMITIVE_TOL))
    return out


def recurrence_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    for kind in ("lstm", "gru"):
        cfg = RecurrenceConfig(kind, hidden=4)
        params = rnn_params(cfg, 3, rng, np.float64)
        x = _leaf(rng, (2, 3), "x")
        h = _leaf(rng, (2, 4), "h")
        w = _weights(rng, (2, 4))
        if kind == "lstm":
            c = _leaf(rng, (2, 4), "c")

            def f():
                h2, c2 = lstm_step(x, h, c, params)
                return _project(h2, w) + _project(c2, w)

            out.append(_check("lstm_step", f, {**params, "x": x, "h": h, "c": c}, PRIMITIVE_TOL))
        else:
            out.append(_check("gru_step", lambda: _project(gru_step(x, h, params), w), {**params, "x": x, "h": h}, PRIMITIVE_TOL))
        frames = _leaf(rng, (7, 3), "frames")
        out.append(_check(f"{kind} context sum(z)", lambda: T.sum(context(frames, cfg, params)), {**params, "frames": frames}, 1e-5))
    return out


def _randomize_projection(params, rng):
    # output projections start at zero, which would leave everything upstream
    # of them with an identically zero gradient
    A = params["predictor.A"]
    A.data[...] = rng.uniform(-1, 1, A.shape) / np.sqrt(A.shape[-1])


def predictor_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    from .predictor import init_params, predict

    for kind, tol in (("linear", 1e-5), ("ffd", 1e-5), ("conv8", 1e-5), ("transformer", 1e-4)):
        h = 8
        cfg = PredictorConfig(kind=kind, K=2, heads=2, dropout=0.1)
        params = init_params(cfg, h, 6, rng, np.float64)
        _randomize_projection(params, rng)
        z = _leaf(rng, (1, 5, h), "z")
        w = _weights(rng, (1, 5, 2, 6))

        def f(cfg=cfg, params=params, z=z, w=w):
            return _project(predict(z, cfg, params, training=True, rng=np.random.default_rng(7)), w)

        out.append(_check(f"predict_{kind}", f, {**params, "z": z}, tol))
    return out


def ctc_checks(rng: np.random.Generator) -> list[CheckResult]:
    out = []
    for u, labels in ((6, [1, 2, 1]), (4, [2, 2]), (9, [3, 1, 2, 2])):
        logits = _leaf(rng, (u, 4), "logits")
        out.append(_check(f"ctc U={u} L={len(labels)}", lambda logits=logits, labels=labels: ctc_loss(logits, labels), [logits], 1e-5))
    z = _leaf(rng, (17, 3), "z")
    w = _leaf(rng, (24, 4), "w")
    out.append(_check("stacked probe ctc", lambda: ctc_loss(T.matmul(stack_frames(z, 8, 4), w), [1, 3]), [z, w], 1e-5))
    return out


def head_checks(rng: np.random.Generator) -> list[CheckResult]:
    z = _leaf(rng, (2, 6, 5), "z")
    w = _leaf(rng, (5, 3), "head.weight")
    b = _leaf(rng, (3,), "head.bias")
    labels = rng.integers(0, 3, size=(2, 6))
    return [_check(
        "frame cross-entropy head",
        lambda: frame_cross_entropy(T.add_bias(T.matmul(z, w), b), labels),
        [z, w, b], PRIMITIVE_TOL,
    )]


def tiny_cpc_case(kind: str = "linear", seed: int = 0, n_frames: int = 16, K: int = 2, n_negatives: int = 4):
    """Tiny double-precision model (C = H = 8), a batch of two windows and a closure for its loss."""
    rng = np.random.default_rng(seed)
    config = ModelConfig(
        EncoderConfig(channels=8),
        RecurrenceConfig("lstm", hidden=8),
        PredictorConfig(kind=kind, K=K, heads=2),
    )
    model = CPCModel.initialize(config, rng, np.float64)
    _randomize_projection(model.params, rng)
    wave = rng.uniform(-0.5, 0.5, (2, n_frames * 160))
    negs = sample_negatives(["s", "s"], n_frames, K, n_negatives, rng)

    def loss() -> T.Node:
        frames = model.encode(wave)
        z = model.context(frames)
        preds = model.predict(z, training=True, rng=np.random.default_rng(3))
        return info_nce(preds, frames, negs).loss

    return model, loss


# ReLU kinks inside the +-eps stencil make central differences meaningless at
# isolated entries; this seed's tiny case keeps every pre-activation clear of them.
END_TO_END_SEED = 0


def end_to_end_checks(seed: int = END_TO_END_SEED, kinds=("linear", "transformer")) -> list[CheckResult]:
    out = []
    for kind in kinds:
        model, loss = tiny_cpc_case(kind, seed)
        out.append(_check(f"end-to-end CPC loss ({kind})", loss, model.params, MODEL_TOL))
    return out


def run_suite(seed: int = 0, end_to_end_kinds=("linear", "transformer")) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for group in (primitive_checks, recurrence_checks, predictor_checks, ctc_checks, head_checks):
        results += group(rng)
    results += end_to_end_checks(END_TO_END_SEED, end_to_end_kinds)
    return results
