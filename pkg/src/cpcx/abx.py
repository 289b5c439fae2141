"""ABX phoneme discriminability with DTW-aligned frame-wise cosine distance."""

from __future__ import annotations

import itertools
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .data import DataError, Utterance

MAX_TRIPLETS = 5000
NORM_GUARD = 1e-12


@dataclass
class AbxSegment:
    features: np.ndarray
    phoneme: str
    speaker: str
    utt_id: str = ""
    start: int = 0
    end: int = 0
    context: tuple[str, str] | None = None

    def __post_init__(self):
        if len(self.features) == 0:
            raise ValueError("ABX segment has no frames")


@dataclass
class AbxResult:
    """Error rate (percent) for one mode, with the per-category-pair breakdown."""

    mode: str
    score: float
    pair_scores: dict[tuple[str, str], float]
    n_cells: int
    skipped_cells: list[tuple] = field(default_factory=list)


@dataclass
class AbxReport:
    within_speaker: float | None = None
    across_speaker: float | None = None
    results: dict[str, AbxResult] = field(default_factory=dict)

    def text(self) -> str:
        rows = []
        if self.within_speaker is not None:
            rows.append(f"within\t{self.within_speaker:.4f}")
        if self.across_speaker is not None:
            rows.append(f"across\t{self.across_speaker:.4f}")
        return "\n".join(rows) + "\n"

    def key_values(self) -> str:
        rows = []
        for mode, res in sorted(self.results.items()):
            rows.append(f"{mode}.score = {res.score!r}")
            rows.append(f"{mode}.cells = {res.n_cells}")
            rows.append(f"{mode}.skipped_cells = {len(res.skipped_cells)}")
            for (a, b), v in sorted(res.pair_scores.items()):
                rows.append(f"{mode}.pair.{a}.{b} = {v!r}")
        return "\n".join(rows) + "\n"


# --- distance ------------------------------------------------------------------


def cosine_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    an = a / (np.linalg.norm(a, axis=1, keepdims=True) + NORM_GUARD)
    bn = b / (np.linalg.norm(b, axis=1, keepdims=True) + NORM_GUARD)
    return 1.0 - an @ bn.T


@numba.njit(cache=True)
def _dtw_average(cost):
    # minimise accumulated cost; among equal costs prefer the longer path
    n, m = cost.shape
    acc = np.empty((n, m))
    length = np.empty((n, m), dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    length[0, 0] = 1
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            best_len = 0
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
                best_len = length[i - 1, j - 1]
            if i > 0:
                c, l = acc[i - 1, j], length[i - 1, j]
                if c < best or (c == best and l > best_len):
                    best, best_len = c, l
            if j > 0:
                c, l = acc[i, j - 1], length[i, j - 1]
                if c < best or (c == best and l > best_len):
                    best, best_len = c, l
            acc[i, j] = best + cost[i, j]
            length[i, j] = best_len + 1
    return acc[n - 1, m - 1] / length[n - 1, m - 1]


def dtw_cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Average cosine distance along the minimum-cost monotone alignment.

    Steps are (1,0), (0,1), (1,1); both endpoints are anchored.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("DTW needs non-empty sequences")
    return float(_dtw_average(np.ascontiguousarray(cosine_cost(a, b))))


# --- segments ------------------------------------------------------------------


def segments_from_labels(
    labels: Sequence[str],
    features: np.ndarray,
    speaker: str,
    utt_id: str = "",
    min_frames: int = 2,
) -> list[AbxSegment]:
    """Maximal runs of identical labels become segments; runs under ``min_frames`` are dropped."""
    if len(labels) != len(features):
        raise DataError(f"{utt_id}: {len(labels)} labels for {len(features)} feature frames")
    out = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            if i - start >= min_frames:
                prev = labels[start - 1] if start > 0 else "#"
                nxt = labels[i] if i < len(labels) else "#"
                out.append(AbxSegment(features[start:i], labels[start], speaker, utt_id, start, i, (prev, nxt)))
            start = i
    return out


def extract_segments(utterances: Sequence[Utterance], featurize: Callable[[np.ndarray], np.ndarray]) -> list[AbxSegment]:
    segments = []
    for u in utterances:
        if u.aligned_labels is None:
            raise DataError(f"{u.utt_id}: ABX segments need aligned labels")
        segments += segments_from_labels(u.aligned_labels, featurize(u.samples), u.speaker, u.utt_id)
    return segments


def write_segment_list(path, segments: Sequence[AbxSegment]) -> None:
    lines = [f"{s.utt_id}\t{s.start}\t{s.end}\t{s.phoneme}\t{s.speaker}" for s in segments]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_segment_list(path) -> list[tuple[str, int, int, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                utt, start, end, phone, spk = line.rstrip("\n").split("\t")
                rows.append((utt, int(start), int(end), phone, spk))
    return rows


# --- scoring -------------------------------------------------------------------


class _Distances:
    def __init__(self, segments):
        self.segments = segments
        self.cache: dict[tuple[int, int], float] = {}

    def __call__(self, i: int, j: int) -> float:
        key = (i, j) if i <= j else (j, i)
        d = self.cache.get(key)
        if d is None:
            d = dtw_cosine_distance(self.segments[key[0]].features, self.segments[key[1]].features)
            self.cache[key] = d
        return d


def _triplets(a_items, b_items, x_items, distinct: bool, cap: int | None, rng):
    """All (A, B, X) index triplets of a cell, or a seeded sample of ``cap`` of them."""
    n_ax = len(a_items) * len(x_items) - (len(a_items) if distinct else 0)
    total = n_ax * len(b_items)
    if cap is None or total <= cap:
        for a, x in itertools.product(a_items, x_items):
            if distinct and a == x:
                continue
            for b in b_items:
                yield a, b, x
        return
    for _ in range(cap):
        while True:
            a = a_items[rng.integers(len(a_items))]
            x = x_items[rng.integers(len(x_items))]
            if not (distinct and a == x):
                break
        yield a, b_items[rng.integers(len(b_items))], x


def _cell_error(dist, a_items, b_items, x_items, distinct, cap, rng) -> Fraction | None:
    # half-points: 2 when X is closer to B, 1 on a tie
    halves = 0
    count = 0
    for a, b, x in _triplets(a_items, b_items, x_items, distinct, cap, rng):
        dxa, dxb = dist(x, a), dist(x, b)
        halves += 2 if dxb < dxa else (1 if dxb == dxa else 0)
        count += 1
    return Fraction(halves, 2 * count) if count else None


def _mean(values) -> Fraction:
    values = list(values)
    return sum(values, Fraction(0)) / len(values)


def abx_score(
    segments: Sequence[AbxSegment],
    mode: str = "within",
    max_triplets: int | None = MAX_TRIPLETS,
    seed: int = 0,
    aggregation: str = "pairs_then_speakers",
    use_context: bool = False,
) -> AbxResult:
    """ABX error in percent.

    For an ordered category pair (a, b) the cell error is the mean over triplets
    (A in a, B in b, X in a) of 1 if X is closer to B, 1/2 on ties, 0 otherwise.
    ``within`` draws A, B, X from one speaker (X != A); ``across`` draws A, B from
    one speaker and X from another. Cells are symmetrised over (a, b) / (b, a),
    then averaged over category pairs and over speaker groupings in the order
    given by ``aggregation``.
    """
    if mode not in ("within", "across"):
        raise ValueError(f"ABX mode must be 'within' or 'across'; got {mode!r}")
    if aggregation not in ("pairs_then_speakers", "speakers_then_pairs"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    categories = sorted({s.phoneme for s in segments})
    if len(categories) < 2:
        raise ValueError("ABX needs at least two categories")
    speakers = sorted({s.speaker for s in segments})
    rng = np.random.default_rng(seed)
    dist = _Distances(list(segments))

    by_key: dict[tuple, list[int]] = {}
    for i, s in enumerate(segments):
        ctx = s.context if use_context else None
        by_key.setdefault((s.speaker, s.phoneme, ctx), []).append(i)
    contexts = sorted({k[2] for k in by_key}, key=lambda c: ("",) if c is None else c)

    if mode == "within":
        groupings = [(s, s) for s in speakers]
    else:
        groupings = [(s, x) for s in speakers for x in speakers if s != x]

    # grouping -> {(a, b): symmetrised error}; exact rationals so the result
    # does not depend on summation order
    table: dict[tuple[str, str], dict[tuple[str, str], Fraction]] = {}
    skipped = []
    n_cells = 0
    for spk_ab, spk_x in groupings:
        row = {}
        for a, b in itertools.combinations(categories, 2):
            both = []
            for ctx in contexts:
                directional = []
                for first, second in ((a, b), (b, a)):
                    a_items = by_key.get((spk_ab, first, ctx), [])
                    b_items = by_key.get((spk_ab, second, ctx), [])
                    x_items = by_key.get((spk_x, first, ctx), [])
                    distinct = mode == "within"
                    if not a_items or not b_items or not x_items or (distinct and len(a_items) < 2):
                        skipped.append((spk_ab, spk_x, first, second, ctx))
                        directional = None
                        break
                    directional.append(_cell_error(dist, a_items, b_items, x_items, distinct, max_triplets, rng))
                    n_cells += 1
                if directional:
                    both.append((directional[0] + directional[1]) / 2)
            if both:
                row[(a, b)] = _mean(both)
        if row:
            table[(spk_ab, spk_x)] = row

    if not table:
        raise DataError(f"no ABX cell is scorable in {mode} mode")
    pairs = sorted({p for row in table.values() for p in row})
    by_pair = {p: _mean(row[p] for row in table.values() if p in row) for p in pairs}
    if aggregation == "pairs_then_speakers":
        score = _mean(_mean(row.values()) for row in table.values())
    else:
        score = _mean(by_pair.values())
    pair_scores = {p: float(100 * v) for p, v in by_pair.items()}
    return AbxResult(mode, float(100 * score), pair_scores, n_cells, skipped)


def evaluate_abx(segments: Sequence[AbxSegment], modes: Sequence[str] = ("within", "across"), **kwargs) -> AbxReport:
    report = AbxReport()
    for mode in modes:
        res = abx_score(segments, mode, **kwargs)
        report.results[mode] = res
        if mode == "within":
            report.within_speaker = res.score
        else:
            report.across_speaker = res.score
    return report
