"""Optimisation loops: contrastive pretraining and the supervised frame baseline."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .cpc_loss import info_nce, sample_negatives
from .data import Checkpoint, DataError, Utterance, save_checkpoint
from .encoder import HOP
from .model import CPCModel, ModelConfig, format_value
from .tensor import Node

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    window_samples: int = 20480
    batch_size: int = 8
    n_negatives: int = 128
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    max_steps: int = 2000
    seed: int = 0
    eval_interval: int = 0
    mode: str = "cpc"
    shared_negatives_across_k: bool = False

    def __post_init__(self):
        if self.window_samples % HOP or self.window_samples <= 0:
            raise ValueError(f"window_samples must be a positive multiple of {HOP}")
        if self.mode not in ("cpc", "supervised"):
            raise ValueError(f"mode must be 'cpc' or 'supervised'; got {self.mode!r}")
        if self.batch_size < 1 or self.n_negatives < 1 or self.max_steps < 0:
            raise ValueError("batch_size and n_negatives must be positive, max_steps non-negative")

    @property
    def window_frames(self) -> int:
        return self.window_samples // HOP


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= p.dtype.type(beta1)
        m += p.dtype.type(1 - beta1) * g
        v *= p.dtype.type(beta2)
        v += p.dtype.type(1 - beta2) * g * g
        p -= p.dtype.type(lr) * (m / p.dtype.type(c1)) / (np.sqrt(v / p.dtype.type(c2)) + p.dtype.type(eps))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= g.dtype.type(factor)
    return total


@dataclass
class TraceRecord:
    step: int
    loss: float
    accuracy: np.ndarray

    def line(self) -> str:
        return "\t".join([str(self.step), repr(self.loss)] + [repr(float(a)) for a in self.accuracy])


@dataclass
class TrainResult:
    model: CPCModel
    checkpoint: Checkpoint
    trace: list[TraceRecord]
    adam: AdamState
    rng: np.random.Generator


# --- checkpoint conversion ------------------------------------------------------


def make_checkpoint(
    model: CPCModel,
    config: TrainConfig | None = None,
    adam: AdamState | None = None,
    step: int = 0,
    rng: np.random.Generator | None = None,
    meta: dict[str, str] | None = None,
) -> Checkpoint:
    cfg = {k: format_value(v) for k, v in model.config.to_dict().items()}
    if config is not None:
        cfg.update({f"train.{f.name}": format_value(getattr(config, f.name)) for f in dataclasses.fields(config)})
    cfg["state.step"] = str(step)
    if rng is not None:
        cfg["state.rng"] = json.dumps(rng.bit_generator.state, sort_keys=True)
    for k, v in (meta or {}).items():
        cfg[f"meta.{k}"] = v
    arrays = {k: v.copy() for k, v in model.arrays().items()}
    if adam is not None:
        cfg["state.adam_t"] = str(adam.t)
        arrays.update({f"adam.m/{k}": v.copy() for k, v in adam.m.items()})
        arrays.update({f"adam.v/{k}": v.copy() for k, v in adam.v.items()})
    return Checkpoint(cfg, arrays)


def model_from_checkpoint(ckpt: Checkpoint) -> CPCModel:
    config = ModelConfig.from_dict(ckpt.config)
    params = {k: v for k, v in ckpt.arrays.items() if not k.startswith("adam.")}
    return CPCModel.from_arrays(config, params)


def train_config_from_checkpoint(ckpt: Checkpoint) -> TrainConfig:
    from .model import _parse_value

    kwargs = {}
    for f in dataclasses.fields(TrainConfig):
        key = f"train.{f.name}"
        if key in ckpt.config:
            kwargs[f.name] = _parse_value(ckpt.config[key], f.default)
    return TrainConfig(**kwargs)


def training_state(ckpt: Checkpoint) -> tuple[AdamState, int, np.random.Generator | None]:
    adam = AdamState(t=int(ckpt.config.get("state.adam_t", 0)))
    for k, v in ckpt.arrays.items():
        if k.startswith("adam.m/"):
            adam.m[k[7:]] = v.copy()
        elif k.startswith("adam.v/"):
            adam.v[k[7:]] = v.copy()
    rng = None
    if "state.rng" in ckpt.config:
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(ckpt.config["state.rng"])
    return adam, int(ckpt.config.get("state.step", 0)), rng


# --- batching -------------------------------------------------------------------


def sample_windows(
    utterances: Sequence[Utterance], window: int, batch_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, list[int], list[int]]:
    """Pick utterances uniformly and a fresh frame-aligned offset in each."""
    idx = rng.integers(0, len(utterances), size=batch_size)
    batch = np.empty((batch_size, window), dtype=np.float32)
    offsets = []
    for row, i in enumerate(idx):
        u = utterances[i]
        start = int(rng.integers(0, (len(u.samples) - window) // HOP + 1)) * HOP
        batch[row] = u.samples[start : start + window]
        offsets.append(start)
    return batch, [int(i) for i in idx], offsets


def _dump_batch(path: Path, batch: np.ndarray, ids: list[str], offsets: list[int]) -> Path:
    np.savez(path, batch=batch, utterances=np.array(ids), offsets=np.array(offsets))
    return path


class _Loop:
    """Shared optimisation plumbing for both pretraining modes."""

    def __init__(self, model, config, trainable, resume, trace_path, checkpoint_path, meta, dump_dir):
        self.model = model
        self.config = config
        self.trainable = trainable
        self.adam, self.step, rng = (AdamState(), 0, None) if resume is None else training_state(resume)
        self.rng = rng or np.random.default_rng(config.seed)
        self.trace: list[TraceRecord] = []
        self.trace_path = Path(trace_path) if trace_path else None
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.meta = meta or {}
        self.dump_dir = Path(dump_dir) if dump_dir else Path(".")
        if self.trace_path and resume is None:
            self.trace_path.write_text("")

    def checkpoint(self) -> Checkpoint:
        return make_checkpoint(self.model, self.config, self.adam, self.step, self.rng, self.meta)

    def run(self, step_fn: Callable[[np.random.Generator], tuple[Node, np.ndarray, tuple]]) -> TrainResult:
        cfg = self.config
        params = self.model.params
        while self.step < cfg.max_steps:
            loss, acc, batch_info = step_fn(self.rng)
            value = float(loss.data)
            if not np.isfinite(value):
                dump = _dump_batch(self.dump_dir / f"nonfinite_step{self.step + 1}.npz", *batch_info)
                raise NumericalError(f"non-finite loss {value} at step {self.step + 1}; batch dumped to {dump}")
            T.zero_grad(params.values())
            T.backward(loss)
            grads = {k: params[k].adjoint for k in self.trainable}
            clip_global_norm(grads, cfg.clip_norm)
            adam_step({k: params[k].data for k in self.trainable}, grads, self.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            T.zero_grad(params.values())
            self.step += 1
            rec = TraceRecord(self.step, value, np.asarray(acc, dtype=np.float64))
            self.trace.append(rec)
            if self.trace_path:
                with self.trace_path.open("a") as fh:
                    fh.write(rec.line() + "\n")
            if self.step % 100 == 0:
                log.info("step %d loss %.4f acc1 %.3f", self.step, value, rec.accuracy[0])
            if self.checkpoint_path and cfg.eval_interval and self.step % cfg.eval_interval == 0:
                save_checkpoint(self.checkpoint(), self.checkpoint_path)
        ckpt = self.checkpoint()
        if self.checkpoint_path:
            save_checkpoint(ckpt, self.checkpoint_path)
        return TrainResult(self.model, ckpt, self.trace, self.adam, self.rng)


def _eligible(utterances: Sequence[Utterance], window: int) -> list[Utterance]:
    ok = [u for u in utterances if len(u.samples) >= window]
    if not ok:
        raise DataError(f"no utterance is at least {window} samples long")
    return ok


def _init_model(model_config: ModelConfig, config: TrainConfig, resume: Checkpoint | None) -> CPCModel:
    if resume is not None:
        return model_from_checkpoint(resume)
    # parameter init draws from its own stream so batch sampling does not depend on model size
    init_rng = np.random.default_rng([config.seed, 1])
    return CPCModel.initialize(model_config, init_rng)


def pretrain(
    utterances: Sequence[Utterance],
    model_config: ModelConfig,
    config: TrainConfig,
    *,
    resume: Checkpoint | None = None,
    trace_path=None,
    checkpoint_path=None,
    meta: dict[str, str] | None = None,
    dump_dir=None,
) -> TrainResult:
    """Contrastive pretraining: encode -> context -> predict -> InfoNCE, one Adam step per batch."""
    K = model_config.predictor.K
    if K >= config.window_frames:
        raise ValueError(f"K={K} must be smaller than the window length {config.window_frames} frames")
    pool = _eligible(utterances, config.window_samples)
    model = _init_model(model_config, config, resume)
    loop = _Loop(model, config, list(model.params), resume, trace_path, checkpoint_path, meta, dump_dir)

    def step_fn(rng):
        batch, idx, offsets = sample_windows(pool, config.window_samples, config.batch_size, rng)
        frames = model.encode(batch)
        z = model.context(frames)
        preds = model.predict(z, training=True, rng=rng)
        negs = sample_negatives(
            [pool[i].speaker for i in idx], config.window_frames, K, config.n_negatives, rng,
            config.shared_negatives_across_k,
        )
        report = info_nce(preds, frames, negs)
        return report.loss, report.accuracy_per_k, (batch, [pool[i].utt_id for i in idx], offsets)

    return loop.run(step_fn)


def frame_targets(utterances: Sequence[Utterance], inventory: Sequence[str]) -> list[np.ndarray]:
    index = {s: i for i, s in enumerate(inventory)}
    out = []
    for u in utterances:
        if u.aligned_labels is None:
            raise DataError(f"{u.utt_id}: supervised pretraining needs aligned labels")
        if len(u.aligned_labels) != u.n_frames:
            raise DataError(f"{u.utt_id}: {len(u.aligned_labels)} labels for {u.n_frames} frames")
        try:
            out.append(np.array([index[s] for s in u.aligned_labels], dtype=np.int64))
        except KeyError as e:
            raise DataError(f"{u.utt_id}: label {e.args[0]!r} not in inventory") from None
    return out


def frame_cross_entropy(logits: Node, labels: np.ndarray) -> Node:
    """Mean negative log-likelihood of integer ``labels`` under ``[..., n_classes]`` logits."""
    logp = T.log_softmax(logits)
    flat = T.reshape(logp, (-1, logits.shape[-1]))
    labels = labels.reshape(-1)
    return T.neg(T.mean(flat[np.arange(labels.size), labels]))


def supervised_pretrain(
    utterances: Sequence[Utterance],
    inventory: Sequence[str],
    model_config: ModelConfig,
    config: TrainConfig,
    *,
    resume: Checkpoint | None = None,
    trace_path=None,
    checkpoint_path=None,
    meta: dict[str, str] | None = None,
    dump_dir=None,
) -> TrainResult:
    """Per-frame cross-entropy on aligned labels through encoder, context model and a linear head."""
    pool = _eligible(utterances, config.window_samples)
    targets = frame_targets(pool, inventory)
    if model_config.n_classes != len(inventory):
        model_config = dataclasses.replace(model_config, n_classes=len(inventory))
    model = _init_model(model_config, config, resume)
    trainable = [k for k in model.params if not k.startswith("predictor.")]
    meta = dict(meta or {})
    meta.setdefault("inventory", ",".join(inventory))
    loop = _Loop(model, config, trainable, resume, trace_path, checkpoint_path, meta, dump_dir)
    n = config.window_frames

    def step_fn(rng):
        batch, idx, offsets = sample_windows(pool, config.window_samples, config.batch_size, rng)
        labels = np.stack([targets[i][o // HOP : o // HOP + n] for i, o in zip(idx, offsets)])
        logits = model.classify(model.context(model.encode(batch)))
        loss = frame_cross_entropy(logits, labels)
        acc = (logits.data.argmax(axis=-1) == labels).mean()
        return loss, np.array([acc]), (batch, [pool[i].utt_id for i in idx], offsets)

    return loop.run(step_fn)
