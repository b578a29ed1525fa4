"""Experiment configuration: an INI-style file with one section per subsystem.

Example::

    [data]
    n_train = 2000
    n_test = 200

    [train]
    pretrain_epochs = 20
    seed = 0

Command-line overrides use ``section.key=value``. When no seed is given in
the file or overrides, ``SAOOSC_SEED`` is consulted before the default 0.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .hv_codec import HvConfig
from .jscc_codec import TOY_V, JsccConfig
from .scene import SceneSpec

METHODS = ("sa_oosc", "oosc_uniform", "ntscc_entropy_only", "fixed_rate")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_train: int = 2000
    n_test: int = 200
    height: int = 48
    width: int = 48
    patch_size: int = 8
    min_objects: int = 1
    max_objects: int = 4
    seed: int = 0
    ppm_dir: str = ""           # non-empty -> load exported scenes instead of generating

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(height=self.height, width=self.width,
                         min_objects=self.min_objects, max_objects=self.max_objects)

    @property
    def rows(self) -> int:
        return self.height // self.patch_size

    @property
    def cols(self) -> int:
        return self.width // self.patch_size


@dataclass
class HvSection:
    c: int = 16
    hidden: int = 256
    n1_blocks: int = 1
    heads: int = 2
    hyper_channels: int = 8
    sigma_min: float = 1e-2
    p_min: float = 1e-9
    lambda_hv: float = 1e-6
    quantize_around_mean: bool = True
    latent_gain: float = 8.0


@dataclass
class JsccSection:
    V: tuple[int, ...] = TOY_V
    d_model: int = 32
    heads: int = 2
    n_e: int = 2
    n_d: int = 2
    c_tok: int = 8
    c_fixed: int = 32
    lambda_jscc: float = 1e-6


@dataclass
class RateSection:
    eta: float = 0.0             # 0 -> auto-calibrate (mean continuous rate at mid-V)
    alpha: float = -1.0          # negative -> one step of V
    target_mean_k: float = 0.0   # 0 -> the fixed-rate length; adaptive methods match it
    target_cbr: float = 0.02     # >0 -> fixed-rate length is the V element nearest this CBR; 0 -> mid-V
    eta_start: str = "target"    # "mid": mean continuous rate at mid-V; "target": at the matched length


@dataclass
class ChannelSection:
    train_snr_db: float = 10.0
    snr_list: tuple[float, ...] = (10.0,)
    side_channel_counted_in_cbr: bool = False


@dataclass
class TrainSection:
    pretrain_epochs: int = 20
    joint_epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    hv_lr_mult: float = 0.1
    freeze_entropy_model: bool = True
    seed: int = 0
    calibration_images: int = 200


@dataclass
class ExperimentSection:
    methods: tuple[str, ...] = METHODS
    out: str = "runs"
    checkpoints: str = ""        # empty -> same as out
    heatmaps: bool = True


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    hv: HvSection = field(default_factory=HvSection)
    jscc: JsccSection = field(default_factory=JsccSection)
    rate: RateSection = field(default_factory=RateSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    train: TrainSection = field(default_factory=TrainSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def hv_config(self) -> HvConfig:
        h = self.hv
        return HvConfig(patch_size=self.data.patch_size, rows=self.data.rows, cols=self.data.cols,
                        c=h.c, hidden=h.hidden, n1_blocks=h.n1_blocks, heads=h.heads,
                        hyper_channels=h.hyper_channels, sigma_min=h.sigma_min, p_min=h.p_min,
                        lambda_hv=h.lambda_hv, quantize_around_mean=h.quantize_around_mean,
                        latent_gain=h.latent_gain)

    def jscc_config(self) -> JsccConfig:
        j = self.jscc
        return JsccConfig(L=self.data.rows * self.data.cols, c=self.hv.c, V=tuple(j.V),
                          d_model=j.d_model, heads=j.heads, n_e=j.n_e, n_d=j.n_d,
                          c_tok=j.c_tok, c_fixed=j.c_fixed, lambda_jscc=j.lambda_jscc,
                          latent_scale=self.hv.latent_gain)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        d = self.data
        if d.height % d.patch_size or d.width % d.patch_size:
            raise ConfigError(f"image {d.height}x{d.width} not divisible by patch_size {d.patch_size}")
        for m in self.experiment.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        V = tuple(self.jscc.V)
        if not V or any(b <= a for a, b in zip(V, V[1:])):
            raise ConfigError(f"jscc.V must be strictly increasing, got {V}")
        if self.hv.c % self.hv.heads or self.jscc.d_model % self.jscc.heads:
            raise ConfigError("model widths must be divisible by the head counts")
        if self.train.batch_size <= 0:
            raise ConfigError("train.batch_size must be positive")
        if self.rate.eta_start not in ("mid", "target"):
            raise ConfigError(f"rate.eta_start must be 'mid' or 'target', got {self.rate.eta_start!r}")
        if self.rate.target_cbr < 0:
            raise ConfigError("rate.target_cbr must be non-negative")


_SECTIONS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(raw: str, current: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [t.strip() for t in raw.replace(";", ",").split(",") if t.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(t) for t in items)
            if current and isinstance(current[0], float):
                return tuple(float(t) for t in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def _set(cfg: ExperimentConfig, section: str, key: str, raw: str) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    sec = getattr(cfg, section)
    if key not in {f.name for f in fields(sec)}:
        raise ConfigError(f"unknown config key {section}.{key}")
    setattr(sec, key, _coerce(raw, getattr(sec, key), f"{section}.{key}"))


def load_config(path: str | os.PathLike | None = None,
                overrides: Sequence[str] = ()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seed_given = False
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {p}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw)
                seed_given |= (section, key) == ("train", "seed")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _set(cfg, section, key, raw)
        seed_given |= (section, key) == ("train", "seed")
    if not seed_given and os.environ.get("SAOOSC_SEED"):
        cfg.train.seed = _coerce(os.environ["SAOOSC_SEED"], 0, "SAOOSC_SEED")
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for name, values in cfg.to_dict().items():
        parser[name] = {k: (",".join(str(x) for x in v) if isinstance(v, (list, tuple)) else str(v))
                        for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
