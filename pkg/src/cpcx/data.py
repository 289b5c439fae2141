"""Dataset I/O: WAV files, manifests, speaker splits, synthetic corpora, checkpoints."""

from __future__ import annotations

import hashlib
import io
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import HOP, SAMPLE_RATE


class DataError(Exception):
    """Malformed or inconsistent input data."""


class CheckpointError(DataError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


@dataclass
class Utterance:
    utt_id: str
    samples: np.ndarray
    speaker: str
    phonemes: list[str]
    aligned_labels: list[str] | None = None

    def __post_init__(self):
        if not self.speaker:
            raise DataError(f"{self.utt_id}: empty speaker id")
        if self.aligned_labels is not None and len(self.aligned_labels) != len(self.samples) // HOP:
            raise DataError(
                f"{self.utt_id}: {len(self.aligned_labels)} aligned labels for "
                f"{len(self.samples) // HOP} frames"
            )

    @property
    def n_frames(self) -> int:
        return len(self.samples) // HOP


# --- WAV ---------------------------------------------------------------------


def read_wav(path) -> np.ndarray:
    """Read 16 kHz mono PCM16 audio as float32 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE" or w.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit {w.getcomptype()}")
            if w.getnchannels() != 1:
                raise DataError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
            if w.getframerate() != SAMPLE_RATE:
                raise DataError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()} Hz (no resampling is done)")
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise DataError(f"{path}: not a PCM RIFF/WAVE file ({e})") from None
    return (np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0)


def write_wav(path, samples: np.ndarray) -> None:
    """Write float samples (scaled by 32768, clipped) or an int16 payload verbatim."""
    samples = np.asarray(samples)
    if samples.dtype != np.int16:
        samples = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(samples.astype("<i2").tobytes())


# --- manifests -----------------------------------------------------------------

MANIFEST_HEADER = ("utt_id", "audio", "speaker", "transcript", "alignment")


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    audio: str
    speaker: str
    transcript: str
    alignment: str = ""


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    lines = ["\t".join(MANIFEST_HEADER)]
    for r in records:
        lines.append("\t".join([r.utt_id, r.audio, r.speaker, r.transcript, r.alignment]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    rows = path.read_text(encoding="utf-8").splitlines()
    if not rows or tuple(rows[0].split("\t")) != MANIFEST_HEADER:
        raise DataError(f"{path}: missing header {'/'.join(MANIFEST_HEADER)}")
    records = []
    for n, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        cols = row.split("\t")
        if len(cols) == 4:
            cols.append("")
        if len(cols) != 5:
            raise DataError(f"{path}:{n}: expected 5 tab-separated columns")
        records.append(ManifestRecord(*cols))
    return records


def read_symbols(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").split()


def write_symbols(path, symbols: Sequence[str]) -> None:
    Path(path).write_text(" ".join(symbols) + "\n", encoding="utf-8")


def load_utterances(manifest_path) -> list[Utterance]:
    """Load every record of a manifest; paths are relative to the manifest's directory."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    out = []
    for r in read_manifest(manifest_path):
        samples = read_wav(root / r.audio)
        phonemes = read_symbols(root / r.transcript)
        labels = read_symbols(root / r.alignment) if r.alignment else None
        out.append(Utterance(r.utt_id, samples, r.speaker, phonemes, labels))
    return out


def read_inventory(path) -> list[str]:
    return read_symbols(path)


def make_splits(
    records: Sequence[ManifestRecord],
    ratios: Sequence[float] = (8, 1, 1),
    seed: int = 0,
) -> dict[str, list[ManifestRecord]]:
    """Partition speakers (not utterances) into train/dev/test."""
    speakers = sorted({r.speaker for r in records})
    if len(speakers) < 3:
        raise DataError(f"need at least 3 speakers for a speaker-disjoint split; got {len(speakers)}")
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or (ratios < 0).any() or ratios.sum() <= 0:
        raise ValueError("ratios must be three non-negative numbers")
    order = list(np.random.default_rng(seed).permutation(speakers))
    n = len(speakers)
    counts = np.floor(ratios / ratios.sum() * n).astype(int)
    # every split gets at least one speaker; leftovers go to the largest ratios
    counts = np.maximum(counts, 1)
    while counts.sum() > n:
        counts[np.argmax(counts)] -= 1
    for i in np.argsort(-ratios, kind="stable"):
        if counts.sum() == n:
            break
        counts[i] += 1
    bounds = np.cumsum([0, *counts])
    names = ("train", "dev", "test")
    assignment = {spk: names[i] for i in range(3) for spk in order[bounds[i] : bounds[i + 1]]}
    return {name: [r for r in records if assignment[r.speaker] == name] for name in names}


# --- synthetic corpus ------------------------------------------------------------


@dataclass
class SynthDataset:
    utterances: list[Utterance]
    inventory: list[str]
    unit_counts: dict[str, int] = field(default_factory=dict)
    class_frequencies: np.ndarray | None = None

    def write(self, root) -> Path:
        """Write WAV/transcript/alignment files plus ``manifest.tsv`` and ``inventory.txt``."""
        root = Path(root)
        for sub in ("wav", "txt", "ali"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        records = []
        for u in self.utterances:
            write_wav(root / "wav" / f"{u.utt_id}.wav", u.samples)
            write_symbols(root / "txt" / f"{u.utt_id}.txt", u.phonemes)
            ali = ""
            if u.aligned_labels is not None:
                ali = f"ali/{u.utt_id}.ali"
                write_symbols(root / ali, u.aligned_labels)
            records.append(ManifestRecord(u.utt_id, f"wav/{u.utt_id}.wav", u.speaker, f"txt/{u.utt_id}.txt", ali))
        write_manifest(root / "manifest.tsv", records)
        write_symbols(root / "inventory.txt", self.inventory)
        return root / "manifest.tsv"


def synth_dataset(
    n_speakers: int = 4,
    n_classes: int = 8,
    utterances_per_speaker: int = 50,
    seed: int = 0,
    utterance_seconds: float = 6.0,
    snr_db: float = 20.0,
    min_frames: int = 5,
    max_frames: int = 10,
) -> SynthDataset:
    """Generate a corpus of tonal "phonemes" with speaker-dependent colouring.

    Class ``c`` is a partial at base frequency ``f_c`` plus one at ``2 f_c``
    (geometric spacing from 250 Hz to 3 kHz). A speaker scales all frequencies
    by a fixed pitch factor and weights partials by a fixed spectral tilt
    ``(freq / 1 kHz) ** tilt``. Units last a whole number of 160-sample frames
    and never repeat back to back, so each unit is exactly one label run.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    base = 250.0 * (3000.0 / 250.0) ** (np.arange(n_classes) / max(n_classes - 1, 1))
    inventory = [f"p{c}" for c in range(n_classes)]
    pitch = 1.0 + rng.uniform(-0.05, 0.05, n_speakers)
    tilt = rng.uniform(-0.5, 0.5, n_speakers)
    t_max = max_frames * HOP
    time = np.arange(t_max) / SAMPLE_RATE
    ramp = min(80, min_frames * HOP // 4)
    utterances, unit_counts = [], {}
    target_frames = int(round(utterance_seconds * SAMPLE_RATE / HOP))
    for s in range(n_speakers):
        spk = f"spk{s:02d}"
        for u in range(utterances_per_speaker):
            pieces, labels, classes = [], [], []
            n = 0
            prev = -1
            while n < target_frames:
                if prev < 0:
                    c = int(rng.integers(n_classes))
                else:
                    c = int(rng.integers(n_classes - 1))
                    c += c >= prev
                frames = int(rng.integers(min_frames, max_frames + 1))
                length = frames * HOP
                f0 = base[c] * pitch[s] * (1.0 + rng.uniform(-0.02, 0.02))
                wave_ = np.zeros(length)
                for mult, weight in ((1.0, 1.0), (2.0, 0.45)):
                    f = f0 * mult
                    amp = weight * (f / 1000.0) ** tilt[s]
                    wave_ += amp * np.sin(2 * np.pi * f * time[:length] + rng.uniform(0, 2 * np.pi))
                env = np.ones(length)
                env[:ramp] = np.linspace(0.0, 1.0, ramp)
                env[-ramp:] = np.linspace(1.0, 0.0, ramp)
                # two partials peak at no more than twice their rms, so rms <= 0.3 never clips
                wave_ *= env * rng.uniform(0.15, 0.3) / np.sqrt(np.mean(wave_**2) + 1e-12)
                pieces.append(wave_)
                labels += [inventory[c]] * frames
                classes.append(inventory[c])
                n += frames
                prev = c
            signal = np.concatenate(pieces)
            noise_std = np.sqrt(np.mean(signal**2)) * 10 ** (-snr_db / 20)
            signal = signal + rng.normal(0, noise_std, signal.shape)
            signal = np.clip(signal, -1.0, 32767 / 32768)
            # quantise so the in-memory corpus equals what write/read would produce
            samples = (np.round(signal * 32768).astype(np.int16).astype(np.float32) / 32768.0)
            utt_id = f"{spk}_u{u:03d}"
            utterances.append(Utterance(utt_id, samples, spk, classes, labels))
            unit_counts[utt_id] = len(classes)
    return SynthDataset(utterances, inventory, unit_counts, base)


# --- checkpoints -------------------------------------------------------------------

MAGIC = b"CPCX"
FORMAT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3, np.dtype("<i4"): 4, np.dtype("u1"): 5}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass
class Checkpoint:
    """Named arrays plus a flat string-valued configuration."""

    config: dict[str, str] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def config_text(self) -> str:
        for k, v in self.config.items():
            if "\n" in k or "\n" in v or " = " in k:
                raise ValueError(f"config entry {k!r} is not representable in key = value text")
        return "".join(f"{k} = {self.config[k]}\n" for k in sorted(self.config))

    def config_hash(self) -> str:
        return hashlib.sha256(self.config_text().encode("utf-8")).hexdigest()


def _parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            k, _, v = line.partition(" = ")
            out[k] = v
    return out


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    body = io.BytesIO()
    text = ckpt.config_text().encode("utf-8")
    body.write(struct.pack("<I", len(text)))
    body.write(text)
    body.write(hashlib.sha256(text).digest())
    body.write(struct.pack("<I", len(ckpt.arrays)))
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
        if dt not in _DTYPE_TAGS:
            raise ValueError(f"array {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        body.write(struct.pack("<I", len(encoded)))
        body.write(encoded)
        body.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    payload = body.getvalue()
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + payload + hashlib.sha256(payload).digest()


def deserialize_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 8:
        raise TruncatedError("checkpoint shorter than its header")
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unknown checkpoint format version {version}")
    if len(blob) < 8 + 4 + 32 + 4 + 32:
        raise TruncatedError("checkpoint truncated")
    payload, digest = blob[8:-32], blob[-32:]
    pos = 0

    def read(n):
        nonlocal pos
        if pos + n > len(payload):
            raise TruncatedError("checkpoint truncated")
        chunk = payload[pos : pos + n]
        pos += n
        return chunk

    try:
        (n_text,) = struct.unpack("<I", read(4))
        text = read(n_text)
        text_hash = read(32)
        (n_arrays,) = struct.unpack("<I", read(4))
        arrays = {}
        for _ in range(n_arrays):
            (n_name,) = struct.unpack("<I", read(4))
            name = read(n_name).decode("utf-8")
            tag, rank = struct.unpack("<BB", read(2))
            if tag not in _TAG_DTYPES:
                raise CheckpointError(f"array {name!r}: unknown dtype tag {tag}")
            shape = struct.unpack(f"<{rank}Q", read(8 * rank))
            dt = _TAG_DTYPES[tag]
            count = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(read(count * dt.itemsize), dtype=dt).reshape(shape).copy()
    except TruncatedError:
        if hashlib.sha256(payload).digest() != digest:
            raise ChecksumError("checkpoint checksum mismatch (file corrupted or truncated)") from None
        raise
    if pos != len(payload):
        raise TruncatedError("checkpoint has trailing or missing bytes")
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch (file corrupted)")
    if hashlib.sha256(text).digest() != text_hash:
        raise ChecksumError("checkpoint config hash mismatch")
    return Checkpoint(_parse_config_text(text.decode("utf-8")), arrays)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(serialize_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return deserialize_checkpoint(path.read_bytes())


# --- feature files -------------------------------------------------------------------

FEATURE_MAGIC = b"CPCF"


def write_features(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<II", *frames.shape) + frames.tobytes())


def read_features(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature file")
    rows, cols = struct.unpack_from("<II", blob, 4)
    if len(blob) != 12 + 4 * rows * cols:
        raise DataError(f"{path}: truncated feature file")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(rows, cols).copy()
