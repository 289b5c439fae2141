"""Contrastive (InfoNCE) objective with within-speaker negatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Node


@dataclass
class NegativeSet:
    """Flat frame indices into a ``[B * T]`` batch.

    ``negatives`` is ``[B, T - K, K, N]`` and ``positive`` is ``[B, T - K, K]``.
    """

    negatives: np.ndarray
    positive: np.ndarray
    n_frames: int


@dataclass
class LossReport:
    loss: Node
    accuracy_per_k: np.ndarray

    @property
    def value(self) -> float:
        return float(self.loss.data)


def sample_negatives(
    speakers: Sequence[str],
    n_frames: int,
    K: int,
    n_negatives: int,
    rng: np.random.Generator,
    shared_across_k: bool = False,
) -> NegativeSet:
    """Draw negatives uniformly, with replacement, among same-speaker frames of the batch.

    ``speakers[b]`` is the speaker of window ``b``; every window has ``n_frames``
    frames. The positive frame itself is never drawn. With ``shared_across_k``,
    one set per position is reused for every ``k`` and excludes all K positives.
    """
    n_windows = len(speakers)
    n_pos = n_frames - K
    if n_pos < 1:
        raise ValueError(f"no scorable positions: {n_frames} frames with K={K}")
    t = np.arange(n_pos)[:, None]
    k = np.arange(1, K + 1)[None, :]
    positive = (np.arange(n_windows)[:, None, None] * n_frames + (t + k)[None]).astype(np.int64)
    negatives = np.empty((n_windows, n_pos, K, n_negatives), dtype=np.int64)

    groups: dict[str, list[int]] = {}
    for b, spk in enumerate(speakers):
        groups.setdefault(spk, []).append(b)
    for spk in sorted(groups):
        members = np.asarray(groups[spk])
        pool = len(members) * n_frames
        excluded = K if shared_across_k else 1
        if pool - excluded < 2:
            raise ValueError(
                f"speaker {spk!r} has only {pool - excluded} candidate negative frame(s) in the batch; "
                "use longer windows or group more windows per speaker"
            )
        for rank, b in enumerate(members):
            if shared_across_k:
                # skip the K positive frames t+1..t+K of this window
                u = rng.integers(0, pool - K, size=(n_pos, 1, n_negatives))
                first = rank * n_frames + t[:, :, None] + 1
                u = np.where(u >= first, u + K, u)
                u = np.broadcast_to(u, (n_pos, K, n_negatives))
            else:
                u = rng.integers(0, pool - 1, size=(n_pos, K, n_negatives))
                own = rank * n_frames + (t + k)[:, :, None]
                u = np.where(u >= own, u + 1, u)
            negatives[b] = members[u // n_frames] * n_frames + u % n_frames
    return NegativeSet(negatives, positive, n_windows * n_frames)


def info_nce(preds: Node, targets: Node, negatives: NegativeSet) -> LossReport:
    """Mean over positions and k of ``-log softmax(scores)[positive]``.

    ``preds`` is ``[B, T, K, C]``, ``targets`` the encoder frames ``[B, T, C]``.
    Scores are dot products; the positive candidate sits in the denominator too.
    """
    b, n_frames, K, c = preds.shape
    n_pos = n_frames - K
    if n_pos < 1:
        raise ValueError(f"T={n_frames} leaves no position with a full {K}-step horizon")
    if targets.shape != (b, n_frames, c):
        raise T.ShapeError(f"targets {targets.shape} do not match predictions {preds.shape}")
    m = b * n_pos * K
    flat_preds = T.reshape(preds[:, :n_pos], (m, c))
    flat_targets = T.reshape(targets, (b * n_frames, c))
    # all pairwise scores in one product; candidate scores are then gathered
    scores_all = T.matmul(flat_preds, T.transpose(flat_targets))
    cand = np.concatenate(
        [negatives.positive.reshape(m, 1), negatives.negatives.reshape(m, -1)], axis=1
    )
    scores = T.take(scores_all, (np.arange(m)[:, None], cand))
    logp = T.log_softmax(scores)
    loss = T.neg(T.mean(logp[:, 0]))
    s = scores.data.reshape(b * n_pos, K, -1)
    correct = s[..., 0] > s[..., 1:].max(axis=-1)
    return LossReport(loss, correct.mean(axis=0))
