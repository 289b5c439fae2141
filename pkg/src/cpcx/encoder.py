"""Strided convolutional waveform encoder (160x downsampling, 10 ms frames)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Node

SAMPLE_RATE = 16000
HOP = 160
NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 256
    norm: str = "channel_norm"
    kernels: tuple[int, ...] = (10, 8, 4, 4, 4)
    strides: tuple[int, ...] = (5, 4, 2, 2, 2)
    pads: tuple[int, ...] = (3, 2, 1, 1, 1)

    def __post_init__(self):
        if self.channels <= 0:
            raise ValueError(f"channels must be positive; got {self.channels}")
        if self.norm not in ("channel_norm", "none"):
            raise ValueError(f"norm must be 'channel_norm' or 'none'; got {self.norm!r}")
        if not len(self.kernels) == len(self.strides) == len(self.pads) == 5:
            raise ValueError("encoder needs exactly five layers")
        if int(np.prod(self.strides)) != HOP:
            raise ValueError(f"stride product must be {HOP}; got {int(np.prod(self.strides))}")


@dataclass
class FrameSequence:
    """Per-frame features of one utterance, ``frames`` is ``[T, C]``."""

    frames: np.ndarray
    frame_duration: float = HOP / SAMPLE_RATE
    sample_rate_origin: int = SAMPLE_RATE

    def __len__(self):
        return self.frames.shape[0]


def output_length(n_samples: int, config: EncoderConfig = EncoderConfig()) -> int:
    t = n_samples
    for k, s, p in zip(config.kernels, config.strides, config.pads):
        t = (t + 2 * p - k) // s + 1
    return t


def receptive_field(config: EncoderConfig = EncoderConfig()) -> int:
    width, jump = 1, 1
    for k, s in zip(config.kernels, config.strides):
        width += (k - 1) * jump
        jump *= s
    return width


def init_params(config: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Node]:
    params = {}
    c_in = 1
    for i, k in enumerate(config.kernels):
        bound = 1.0 / np.sqrt(c_in * k)
        params[f"encoder.conv{i}.weight"] = rng.uniform(-bound, bound, (config.channels, c_in, k))
        params[f"encoder.conv{i}.bias"] = np.zeros(config.channels)
        if config.norm == "channel_norm":
            params[f"encoder.norm{i}.gain"] = np.ones(config.channels)
            params[f"encoder.norm{i}.bias"] = np.zeros(config.channels)
        c_in = config.channels
    return {name: Node(np.asarray(v, dtype=dtype), True, name) for name, v in params.items()}


def channel_norm(x: Node, gain: Node, bias: Node) -> Node:
    """Normalise each time step over its channels; no statistic crosses time or batch."""
    if x.shape[-1] < 2:
        raise T.ShapeError("channel_norm needs at least 2 channels")
    return T.layer_norm(x, gain, bias, NORM_EPS)


def encode(waveform: Node | np.ndarray, config: EncoderConfig, params: dict[str, Node]) -> Node:
    """Map ``[N]`` or ``[B, N]`` samples to ``[T, C]`` or ``[B, T, C]`` frames."""
    if not isinstance(waveform, Node):
        waveform = Node(np.asarray(waveform, dtype=params["encoder.conv0.weight"].dtype))
    n = waveform.shape[-1]
    if n < HOP:
        raise ValueError(f"waveform of {n} samples is shorter than one {HOP}-sample frame")
    x = T.reshape(waveform, waveform.shape + (1,))
    for i, (k, s, p) in enumerate(zip(config.kernels, config.strides, config.pads)):
        x = T.conv1d(x, params[f"encoder.conv{i}.weight"], params[f"encoder.conv{i}.bias"], s, p)
        if config.norm == "channel_norm":
            x = channel_norm(x, params[f"encoder.norm{i}.gain"], params[f"encoder.norm{i}.bias"])
        x = T.relu(x)
    return x
