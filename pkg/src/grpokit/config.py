"""Experiment configuration: INI file with one section per stage."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from grpokit._random import derive_seed


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSection:
    seed: int = 0


@dataclass
class GenSection:
    n_temporal: int = 500
    n_box: int = 300
    n_match: int = 300
    n_activity: int = 300
    eval_fraction: float = 0.2
    noise_temporal: float = 0.05
    noise_box: float = 0.05
    noise_match: float = 0.8
    noise_activity: float = 0.8
    match_k: int = 4
    temporal_points: int = 10
    temporal_step: float = 1.0
    box_cells: int = 5
    box_size: float = 0.4


@dataclass
class SftSection:
    learning_rate: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    optimizer: str = "sgd"
    n_demos: int = 400
    home_fraction: float = 0.5


@dataclass
class FilterSection:
    group_size: int = 8
    lo: float = 0.05
    hi: float = 0.95
    score: str = "accuracy"


@dataclass
class GrpoSection:
    group_size: int = 8
    clip_epsilon: float = 0.2
    kl_coef: float = 0.04
    learning_rate: float = 0.5
    iterations: int = 200
    batch_size: int = 16
    optimizer: str = "sgd"
    inner_steps: int = 1
    lambda_acc: float = 0.9
    lambda_fmt: float = 0.1
    tasks: str = "temporal,box,match"


@dataclass
class EvalSection:
    decode: str = "argmax"


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    gen: GenSection = field(default_factory=GenSection)
    sft: SftSection = field(default_factory=SftSection)
    filter: FilterSection = field(default_factory=FilterSection)
    grpo: GrpoSection = field(default_factory=GrpoSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.experiment.seed, stage)

    def validate(self) -> None:
        g = self.gen
        for name in ("n_temporal", "n_box", "n_match", "n_activity"):
            if getattr(g, name) < 0:
                raise ConfigError(f"gen.{name} must be non-negative")
        if not 0 < g.eval_fraction < 1:
            raise ConfigError("gen.eval_fraction must lie in (0, 1)")
        if g.match_k < 2 or g.temporal_points < 2 or g.box_cells < 1 or not 0 < g.box_size <= 1:
            raise ConfigError("grid sizes too small")
        if not 0 <= self.filter.lo < self.filter.hi <= 1:
            raise ConfigError("filter needs 0 <= lo < hi <= 1")
        if self.filter.score not in ("accuracy", "total"):
            raise ConfigError("filter.score must be accuracy or total")
        if not 0 < self.grpo.clip_epsilon < 1:
            raise ConfigError("grpo.clip_epsilon must lie in (0, 1)")
        for section in ("sft", "grpo"):
            if getattr(self, section).optimizer not in ("sgd", "adam"):
                raise ConfigError(f"{section}.optimizer must be sgd or adam")
        if self.eval.decode not in ("argmax", "sample"):
            raise ConfigError("eval.decode must be argmax or sample")
        unknown = set(self.grpo_tasks()) - {"temporal", "box", "match", "activity"}
        if unknown or not self.grpo_tasks():
            raise ConfigError(f"grpo.tasks has unknown task kinds: {sorted(unknown)}")
        if not 0 <= self.sft.home_fraction <= 1:
            raise ConfigError("sft.home_fraction must lie in [0, 1]")

    def grpo_tasks(self) -> list[str]:
        return [t.strip() for t in self.grpo.tasks.split(",") if t.strip()]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            cp[f.name] = {k: str(v) for k, v in dataclasses.asdict(section).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _convert(value: str, typ, where: str):
    try:
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    cfg = ExperimentConfig()
    sections = {f.name for f in dataclasses.fields(cfg)}
    for name in cp.sections():
        if name not in sections:
            raise ConfigError(f"unknown config section [{name}]")
        section = getattr(cfg, name)
        types = {f.name: f.type for f in dataclasses.fields(section)}
        for key, raw in cp[name].items():
            if key not in types:
                raise ConfigError(f"unknown config key {name}.{key}")
            setattr(section, key, _convert(raw, types[key], f"{name}.{key}"))
    cfg.validate()
    return cfg


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    with open(path) as fh:
        return parse_config(fh.read())
