"""Encoder + context model + predictor bundle and its parameter store."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import encoder, predictor, recurrent
from . import tensor as T
from .encoder import EncoderConfig
from .predictor import PredictorConfig
from .recurrent import RecurrenceConfig
from .tensor import Node


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    recurrence: RecurrenceConfig = field(default_factory=RecurrenceConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    n_classes: int = 0  # > 0 adds a frame-classification head (supervised mode)

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"model.n_classes": self.n_classes}
        for prefix, cfg in (("encoder", self.encoder), ("recurrence", self.recurrence), ("predictor", self.predictor)):
            for f in dataclasses.fields(cfg):
                out[f"{prefix}.{f.name}"] = getattr(cfg, f.name)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        def build(prefix, klass):
            kwargs = {}
            for f in dataclasses.fields(klass):
                key = f"{prefix}.{f.name}"
                if key in d:
                    kwargs[f.name] = _parse_value(d[key], getattr(klass(), f.name))
            return klass(**kwargs)

        return cls(
            encoder=build("encoder", EncoderConfig),
            recurrence=build("recurrence", RecurrenceConfig),
            predictor=build("predictor", PredictorConfig),
            n_classes=int(d.get("model.n_classes", 0)),
        )


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str, default):
    if text == "none":
        return None
    if isinstance(default, bool):
        return text == "true"
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(","))
    if isinstance(default, int) or default is None:
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


class CPCModel:
    """Holds configuration plus a flat ``name -> Node`` parameter dictionary."""

    def __init__(self, config: ModelConfig, params: dict[str, Node]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "CPCModel":
        enc, rec, pred = config.encoder, config.recurrence, config.predictor
        params = {}
        params.update(encoder.init_params(enc, rng, dtype))
        params.update(recurrent.init_params(rec, enc.channels, rng, dtype))
        params.update(predictor.init_params(pred, rec.hidden, enc.channels, rng, dtype))
        if config.n_classes:
            bound = 1.0 / np.sqrt(rec.hidden)
            params["head.weight"] = Node(rng.uniform(-bound, bound, (rec.hidden, config.n_classes)).astype(dtype), True, "head.weight")
            params["head.bias"] = Node(np.zeros(config.n_classes, dtype=dtype), True, "head.bias")
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "CPCModel":
        return cls(config, {k: Node(np.array(v), True, k) for k, v in arrays.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def copy(self, dtype=None) -> "CPCModel":
        return CPCModel(self.config, {
            k: Node(p.data.astype(dtype or p.dtype, copy=True), True, k) for k, p in self.params.items()
        })

    def upstream_names(self) -> list[str]:
        return [k for k in self.params if k.startswith(("encoder.", "rnn."))]

    @property
    def dtype(self):
        return self.params["encoder.conv0.weight"].dtype

    def encode(self, waveform) -> Node:
        return encoder.encode(waveform, self.config.encoder, self.params)

    def context(self, frames: Node) -> Node:
        return recurrent.context(frames, self.config.recurrence, self.params)

    def predict(self, z: Node, training: bool = False, rng=None) -> Node:
        return predictor.predict(z, self.config.predictor, self.params, training, rng)

    def classify(self, z: Node) -> Node:
        return T.add_bias(T.matmul(z, self.params["head.weight"]), self.params["head.bias"])

    def features(self, waveform: np.ndarray) -> np.ndarray:
        """Context features ``[T, H]`` for one utterance, without recording a tape."""
        with T.no_grad():
            return self.context(self.encode(np.asarray(waveform, dtype=self.dtype))).data
