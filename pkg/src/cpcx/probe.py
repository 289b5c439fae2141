"""Linear phoneme probe trained with CTC on stacked frames, scored by phone error rate."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .data import DataError, Utterance
from .model import CPCModel
from .tensor import Node
from .trainer import AdamState, adam_step, clip_global_norm

log = logging.getLogger(__name__)

BLANK = 0


class CTCInfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    concat_frames: int = 8
    stride: int | None = None  # None: non-overlapping blocks (stride = concat_frames)
    mode: str = "frozen"
    lr: float = 1e-3
    finetune_lr: float = 2e-4
    steps: int = 1000
    batch_size: int = 8
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.concat_frames < 1:
            raise ValueError("concat_frames must be at least 1")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be positive")
        if self.mode not in ("frozen", "finetune"):
            raise ValueError(f"probe mode must be 'frozen' or 'finetune'; got {self.mode!r}")

    @property
    def hop(self) -> int:
        return self.stride or self.concat_frames


def stacked_length(n_frames: int, n: int, stride: int | None = None) -> int:
    stride = stride or n
    if n_frames < n:
        return 0
    return (n_frames - n) // stride + 1


def stack_frames(z, n: int = 8, stride: int | None = None):
    """Concatenate ``n`` consecutive frames per output row.

    Works on an ndarray or a Node of shape ``[T, H]``. With the default stride
    (``n``), blocks do not overlap and a remainder of fewer than ``n`` frames is dropped.
    """
    stride = stride or n
    t = z.shape[0]
    if t < n:
        raise ValueError(f"cannot stack {n} frames from a sequence of {t}")
    u = stacked_length(t, n, stride)
    span = stride * (u - 1) + 1
    if isinstance(z, Node):
        return T.concat([z[j : j + span : stride] for j in range(n)], axis=-1)
    return np.concatenate([z[j : j + span : stride] for j in range(n)], axis=-1)


def ctc_min_length(labels: Sequence[int]) -> int:
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _ctc_tables(logp: np.ndarray, labels: np.ndarray):
    n_steps = logp.shape[0]
    ext = np.zeros(2 * len(labels) + 1, dtype=np.int64)
    ext[1::2] = labels
    s = ext.size
    skip = np.zeros(s, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = logp[:, ext]
    neg_inf = -np.inf
    alpha = np.full((n_steps, s), neg_inf)
    alpha[0, 0] = emit[0, 0]
    if s > 1:
        alpha[0, 1] = emit[0, 1]
    for u in range(1, n_steps):
        prev = alpha[u - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[u] = acc + emit[u]
    beta = np.full((n_steps, s), neg_inf)
    beta[-1, -1] = emit[-1, -1]
    if s > 1:
        beta[-1, -2] = emit[-1, -2]
    for u in range(n_steps - 2, -1, -1):
        nxt = beta[u + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[u] = acc + emit[u]
    total = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s > 1 else alpha[-1, -1]
    return ext, alpha, beta, emit, total


def ctc_nll(logp: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``labels`` under per-frame log-probabilities, and its gradient.

    Runs the forward and backward recursions in log space over the blank-augmented
    label sequence. Blank is index 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    logp = np.asarray(logp, dtype=np.float64)
    ext, alpha, beta, emit, total = _ctc_tables(logp, labels)
    occupancy = np.exp(alpha + beta - emit - total)
    grad = np.zeros_like(logp)
    np.add.at(grad, (slice(None), ext), -occupancy)
    return float(-total), grad


def ctc_loss(logits: Node, transcript: Sequence[int]) -> Node:
    """CTC loss of a ``[U, P+1]`` logit matrix against a non-aligned label sequence."""
    labels = np.asarray(transcript, dtype=np.int64)
    if labels.ndim != 1 or labels.size < 1:
        raise ValueError("transcript must be a non-empty label sequence")
    n_sym = logits.shape[-1]
    if (labels <= BLANK).any() or (labels >= n_sym).any():
        raise ValueError(f"transcript labels must lie in 1..{n_sym - 1} (0 is blank)")
    need = ctc_min_length(labels.tolist())
    if logits.shape[0] < need:
        raise CTCInfeasibleError(
            f"{logits.shape[0]} output frames cannot emit {labels.size} labels "
            f"(needs {need} including blanks between repeats)"
        )
    logp = T.log_softmax(logits)
    nll, grad = ctc_nll(logp.data, labels)
    grad = grad.astype(logp.dtype)
    return T.custom_op(np.asarray(nll), [logp], lambda g: (g * grad,), "ctc")


def ctc_greedy_decode(logits: np.ndarray) -> list[int]:
    """Best path: per-frame argmax, collapse repeats, drop blanks."""
    best = np.asarray(logits).argmax(axis=-1)
    out, prev = [], None
    for sym in best.tolist():
        if sym != prev and sym != BLANK:
            out.append(sym)
        prev = sym
    return out


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def per(hyp: Sequence, ref: Sequence) -> float:
    """Levenshtein distance over reference length (can exceed 1)."""
    if len(ref) == 0:
        raise ValueError("phone error rate is undefined for an empty reference")
    return edit_distance(hyp, ref) / len(ref)


# --- probe training ------------------------------------------------------------------


@dataclass
class ProbeResult:
    weight: np.ndarray
    bias: np.ndarray
    per: dict[str, float]
    model: CPCModel
    losses: list[float] = field(default_factory=list)

    def report(self) -> str:
        return "".join(f"{split}\t{100 * value:.4f}\n" for split, value in self.per.items())


def encode_transcripts(utterances: Sequence[Utterance], inventory: Sequence[str]) -> list[np.ndarray]:
    index = {s: i + 1 for i, s in enumerate(inventory)}
    out = []
    for u in utterances:
        try:
            out.append(np.array([index[p] for p in u.phonemes], dtype=np.int64))
        except KeyError as e:
            raise DataError(f"{u.utt_id}: phoneme {e.args[0]!r} is not in the inventory") from None
        if not u.phonemes:
            raise DataError(f"{u.utt_id}: empty transcript")
    return out


def _logits(x: Node, weight: Node, bias: Node) -> Node:
    return T.add_bias(T.matmul(x, weight), bias)


def evaluate_per(
    model: CPCModel,
    weight: np.ndarray,
    bias: np.ndarray,
    utterances: Sequence[Utterance],
    inventory: Sequence[str],
    config: ProbeConfig,
) -> float:
    """Corpus-level PER: summed edit distances over summed reference lengths."""
    if not utterances:
        raise DataError("cannot evaluate an empty split")
    refs = encode_transcripts(utterances, inventory)
    errors = total = 0
    for u, ref in zip(utterances, refs):
        x = stack_frames(model.features(u.samples), config.concat_frames, config.stride)
        hyp = ctc_greedy_decode(x @ weight + bias)
        errors += edit_distance(hyp, ref.tolist())
        total += len(ref)
    return errors / total


def _pad_batch(waves: Sequence[np.ndarray], dtype) -> np.ndarray:
    n = max(len(w) for w in waves)
    out = np.zeros((len(waves), n), dtype=dtype)
    for i, w in enumerate(waves):
        out[i, : len(w)] = w
    return out


def train_probe(
    model: CPCModel,
    train: Sequence[Utterance],
    inventory: Sequence[str],
    config: ProbeConfig,
    eval_sets: Mapping[str, Sequence[Utterance]] | None = None,
) -> ProbeResult:
    """Fit a linear CTC classifier over stacked context frames.

    In ``frozen`` mode only the classifier moves and the given model is left
    untouched. In ``finetune`` mode a copy of the model is trained jointly.
    """
    if not train:
        raise DataError("empty training split")
    if len(inventory) != len(set(inventory)) or "<blank>" in inventory:
        raise ValueError("inventory must hold distinct symbols and no blank")
    seen = {p for u in train for p in u.phonemes}
    missing = [s for s in inventory if s not in seen]
    if missing:
        warnings.warn(f"inventory symbols absent from training transcripts: {missing}", stacklevel=2)
    targets = encode_transcripts(train, inventory)
    n, hop = config.concat_frames, config.hop
    for u, y in zip(train, targets):
        u_len = stacked_length(u.n_frames, n, hop)
        if u_len < ctc_min_length(y.tolist()):
            raise DataError(
                f"{u.utt_id}: {u_len} stacked frames cannot emit {len(y)} phonemes; reduce the stacking stride"
            )

    rng = np.random.default_rng(config.seed)
    finetune = config.mode == "finetune"
    work = model.copy() if finetune else model
    dtype = work.dtype
    width = n * work.config.recurrence.hidden
    n_out = len(inventory) + 1
    bound = 1.0 / np.sqrt(width)
    weight = Node(rng.uniform(-bound, bound, (width, n_out)).astype(dtype), True, "probe.weight")
    bias = Node(np.zeros(n_out, dtype=dtype), True, "probe.bias")
    head = {"probe.weight": weight, "probe.bias": bias}
    upstream = {k: work.params[k] for k in work.upstream_names()} if finetune else {}
    head_adam, up_adam = AdamState(), AdamState()

    frozen_inputs = None
    if not finetune:
        frozen_inputs = [stack_frames(work.features(u.samples), n, hop) for u in train]

    losses = []
    for step in range(config.steps):
        idx = rng.choice(len(train), size=min(config.batch_size, len(train)), replace=False)
        terms = []
        if finetune:
            batch = _pad_batch([train[i].samples for i in idx], dtype)
            z = work.context(work.encode(batch))
            for row, i in enumerate(idx):
                zi = z[row, : train[i].n_frames]
                terms.append(ctc_loss(_logits(stack_frames(zi, n, hop), weight, bias), targets[i]))
        else:
            for i in idx:
                terms.append(ctc_loss(_logits(Node(frozen_inputs[i]), weight, bias), targets[i]))
        loss = T.scale(T.sum(T.stack(terms)), 1.0 / len(terms))
        everything = list(head.values()) + list(upstream.values())
        T.zero_grad(everything)
        T.backward(loss)
        grads = {k: p.adjoint for k, p in head.items()}
        up_grads = {k: p.adjoint for k, p in upstream.items()}
        clip_global_norm({**grads, **up_grads}, config.clip_norm)
        adam_step({k: p.data for k, p in head.items()}, grads, head_adam, config.lr)
        if finetune:
            adam_step({k: p.data for k, p in upstream.items()}, up_grads, up_adam, config.finetune_lr)
        T.zero_grad(everything)
        losses.append(float(loss.data))
        if (step + 1) % 100 == 0:
            log.info("probe step %d ctc %.4f", step + 1, losses[-1])

    scores = {}
    for split, utts in (eval_sets or {}).items():
        scores[split] = evaluate_per(work, weight.data, bias.data, utts, inventory, config)
    return ProbeResult(weight.data.copy(), bias.data.copy(), scores, work, losses)
