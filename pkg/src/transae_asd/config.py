"""Flat ``key=value`` run configuration shared by every CLI command."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .dataio import DspConfig, SynthSpec
from .dsp import ConfigError
from .model import ModelConfig
from .scorer import ScoreConfig, default_r_beta
from .trainer import TrainConfig


@dataclass
class RunConfig:
    # front-end
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0
    frames: int = 5
    # model
    n_heads: int = 4
    ff_dim: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    classifier_hidden: int = 64
    alpha: float = 0.3
    # training
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-4
    classifier_period: int = 10
    seed: int = 0
    standardize: bool = True
    samples_per_epoch: int = 3072
    # scoring and evaluation; None means "per machine type"
    r: float | None = None
    beta: float | None = None
    theta: float = math.inf
    p: float = 0.1
    hist_bins: int = 20
    score_column: str = "score_weighted"
    synth: SynthSpec = field(default_factory=SynthSpec)

    # -- derived configs -------------------------------------------------

    def dsp(self) -> DspConfig:
        return DspConfig(self.sample_rate, self.n_fft, self.hop, self.n_mels, self.f_min, self.f_max)

    def model_config(self, num_ids: int) -> ModelConfig:
        return ModelConfig(
            num_ids=num_ids,
            d_model=self.n_mels,
            n_heads=self.n_heads,
            ff_dim=self.ff_dim,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            n_mels=self.n_mels,
            phase_dim=self.n_fft // 2 + 1,
            context_len=self.frames - 1,
            alpha=self.alpha,
            classifier_hidden=self.classifier_hidden,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            alpha=self.alpha,
            classifier_period=self.classifier_period,
            seed=self.seed,
            standardize=self.standardize,
            samples_per_epoch=self.samples_per_epoch,
        )

    def score_config(self, machine_type: str) -> ScoreConfig:
        r0, b0 = default_r_beta(machine_type)
        return ScoreConfig(
            r=r0 if self.r is None else self.r,
            beta=b0 if self.beta is None else self.beta,
            theta=self.theta,
        )

    # -- serialisation ---------------------------------------------------

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "synth":
                continue
            out[f.name] = _format(getattr(self, f.name))
        for f in dataclasses.fields(SynthSpec):
            out[f"synth.{f.name}"] = _format(getattr(self.synth, f.name))
        return out

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_mapping().items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())

    def with_overrides(self, values: dict[str, str]) -> "RunConfig":
        top = {f.name: f for f in dataclasses.fields(self) if f.name != "synth"}
        synth_fields = {f.name: f for f in dataclasses.fields(SynthSpec)}
        kwargs = {k: getattr(self, k) for k in top}
        synth_kwargs = dataclasses.asdict(self.synth)
        for key, raw in values.items():
            if key in top:
                kwargs[key] = _parse(key, raw, top[key].type)
            elif key.startswith("synth.") and key[6:] in synth_fields:
                name = key[6:]
                synth_kwargs[name] = _parse(key, raw, type(getattr(self.synth, name)).__name__)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return RunConfig(**kwargs, synth=SynthSpec(**synth_kwargs))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "RunConfig":
        return cls().with_overrides(values)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_mapping(parse_kv_lines(Path(path).read_text().splitlines()))


def parse_kv_lines(lines: Iterable[str]) -> dict[str, str]:
    values = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _format(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, raw: str, type_name: str):
    raw = raw.strip()
    try:
        if "None" in type_name:
            return None if raw.lower() == "auto" else float(raw)
        if type_name == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type_name}") from None
