"""Line-oriented ``key=value`` run configuration with strict key checking."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .encoders import ModelConfig
from .numcore import ConfigError
from .stopcore import StopHyper
from .training import TrainSettings


@dataclass(frozen=True)
class RunConfig:
    # frozen model
    d_v: int = 64
    d: int = 32
    L_v: int = 2
    L_t: int = 2
    n_heads: int = 4
    g: int = 7
    h: int = 4
    w: int = 4
    N_F: int = 8
    vocab_size: int = 64
    max_text_len: int = 16
    model_seed: int = 0
    # prompting
    alpha: float = 0.4
    beta: float = 4.0
    eta: int = 12
    N_s: int = 6
    tau: float = 0.07
    N_t_max: int = 0  # 0 means "same as eta"
    intra_on: bool = True
    inter_on: bool = True
    # optimisation
    steps: int = 800
    batch_size: int = 8
    lr: float = 2e-2
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    seed: int = 0
    # data
    K: int = 4
    n_per_class: int = 40
    retrieval_n: int = 32
    data_seed: int = 0
    data_dir: str = "data"

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_v=self.d_v, d=self.d, L_v=self.L_v, L_t=self.L_t, n_heads=self.n_heads,
                           g=self.g, h=self.h, w=self.w, N_F=self.N_F, vocab_size=self.vocab_size,
                           max_text_len=self.max_text_len, seed=self.model_seed)

    def hyper(self) -> StopHyper:
        return StopHyper(alpha=self.alpha, beta=self.beta, eta=self.eta, N_s=self.N_s, tau=self.tau,
                         N_t_max=self.N_t_max or None)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(steps=self.steps, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1,
                             beta2=self.beta2, weight_decay=self.weight_decay, seed=self.seed,
                             intra_on=self.intra_on, inter_on=self.inter_on)

    def validate(self) -> "RunConfig":
        self.model_config()
        self.hyper()
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("steps must be >= 0, batch_size >= 1 and lr > 0")
        if self.N_s > self.g * self.g:
            raise ConfigError(f"N_s={self.N_s} exceeds the {self.g * self.g} patches per frame")
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(key, val, types[key])
        return replace(cls(), **values).validate()

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls().validate()
        return cls.from_text(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(key: str, val: str, typ: str):
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(val)
            return low in ("true", "1")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as {typ}") from None
