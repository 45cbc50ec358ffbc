"""Experiment configuration as flat ``dotted.key=value`` text.

Sections map onto the module configs: ``pimc.*`` (TrotterConfig, shared by
every quantum sampler), ``synthetic.*``, ``toy.*`` and ``gan.*``.  Unknown
keys fail fast with the offending key in the message.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Iterable

from .adversarial import GanConfig
from .experiments import SyntheticConfig, ToyConfig
from .pimc import TrotterConfig

EXPERIMENTS = ("synthetic-bm", "gan-toy", "aan-toy", "qaan-toy", "oracle-suite")
TOY_MODES = {"gan-toy": "dcgan", "aan-toy": "aan", "qaan-toy": "qaan"}
OUTPUT_ROOT_ENV = "QAAN_OUTPUT_ROOT"

# Values published with the original experiments; reported in the run manifest.
PUBLISHED_DEFAULTS = {
    "pimc.slices": 10,
    "pimc.replicas": 64,
    "pimc.anneal_steps": 5,
    "synthetic.gamma": 2.0,
    "synthetic.lr": 1e-3,
    "synthetic.gibbs_k": 5,
    "synthetic.n_visible": 8,
    "synthetic.n_hidden": 2,
    "synthetic.n_modes": 8,
    "synthetic.q": 0.9,
    "synthetic.samples": 6400,
    "gan.gamma": 2.0,
    "gan.lr_bm": 1e-3,
    "gan.lr_gan": 2e-4,
    "gan.gibbs_k": 5,
    "gan.epochs": 30,
    "gan.latent_dim": 32,
    "gan.bm_hidden": 8,
    "gan.beta1": 0.5,
    "gan.beta2_bm": 0.9,
    "gan.beta2_gan": 0.999,
    "gan.fake_label_low": 0.0,
    "gan.fake_label_high": 0.1,
    "gan.real_label_low": 0.9,
    "gan.real_label_high": 1.0,
}


class ConfigError(ValueError):
    pass


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _toy_gan() -> GanConfig:
    return GanConfig(mode="qaan", latent_dim=8, bm_hidden=2, epochs=5)


@dataclass
class ExperimentConfig:
    experiment: str = "synthetic-bm"
    seed: int = 0
    output_dir: str = ""
    pimc: TrotterConfig = field(default_factory=TrotterConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)
    gan: GanConfig = field(default_factory=_toy_gan)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; valid: {', '.join(EXPERIMENTS)}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def run_dir(self) -> Path:
        root = Path(self.output_dir) if self.output_dir else default_output_root()
        return root / f"{self.experiment}-seed{self.seed}"

    def synthetic_config(self) -> SyntheticConfig:
        return replace(self.synthetic, sampler=self.pimc)

    def toy_config(self) -> ToyConfig:
        mode = TOY_MODES.get(self.experiment, self.gan.mode)
        return replace(self.toy, gan=replace(self.gan, mode=mode, sampler=self.pimc))


def _sections(cfg) -> Iterable[tuple[str, Any]]:
    for f in fields(cfg):
        if f.name in ("sampler",) and not isinstance(cfg, ExperimentConfig):
            continue
        if f.name == "gan" and isinstance(cfg, ToyConfig):
            continue
        yield f.name, getattr(cfg, f.name)


def flatten(cfg, prefix: str = "") -> dict[str, Any]:
    """Dotted keys for every leaf field, in declaration order."""
    out: dict[str, Any] = {}
    for name, value in _sections(cfg):
        key = f"{prefix}{name}"
        if is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def _parse_value(text: str, current: Any, key: str) -> Any:
    text = text.strip()
    try:
        if isinstance(current, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(current).__name__}") from None
    return text


def _set(cfg, path: list[str], raw: str, key: str):
    name = path[0]
    names = {n for n, _ in _sections(cfg)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(cfg, name)
    if len(path) == 1:
        if is_dataclass(current):
            raise ConfigError(f"config key {key!r} names a section, not a value")
        value = _parse_value(raw, current, key)
    else:
        if not is_dataclass(current):
            raise ConfigError(f"unknown config key {key!r}")
        value = _set(current, path[1:], raw, key)
    try:
        return replace(cfg, **{name: value})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    for key, raw in overrides.items():
        cfg = _set(cfg, key.split("."), str(raw), key)
    return cfg


def parse_lines(lines: Iterable[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    values = parse_lines(Path(path).read_text().splitlines())
    values.update(overrides or {})
    return from_flat(values)


def from_flat(values: dict[str, str]) -> ExperimentConfig:
    values = dict(values)
    experiment = values.pop("experiment", "synthetic-bm")
    cfg = ExperimentConfig(experiment=experiment)
    return apply_overrides(cfg, values)


def dumps(cfg: ExperimentConfig) -> str:
    return "".join(f"{key}={_format(value)}\n" for key, value in flatten(cfg).items())


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def provenance(cfg: ExperimentConfig) -> dict[str, dict]:
    """Per-key value with a note on whether it keeps the published default."""
    flat = flatten(cfg)
    out = {}
    for key, value in flat.items():
        entry: dict[str, Any] = {"value": value}
        if key in PUBLISHED_DEFAULTS:
            published = PUBLISHED_DEFAULTS[key]
            entry["published"] = published
            entry["note"] = ("published default" if value == published
                             else f"desk-scale override; published default {published}")
        out[key] = entry
    return out

