"""Experiment configuration loaded from YAML.

Every section maps onto a dataclass; unknown keys anywhere are rejected.
"""

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .data import make_data
from .divergences import DivergenceSpec
from .errors import ValidationError
from .rewards import RewardComponent, RewardSpec
from .rl import RLConfig
from .schedule import build_schedule
from .student import build_coarse_schedule

SEED_ENV = "REDIF_SEED"


@dataclass
class DataSection:
    kind: str = "gmm-ring"
    mode_count: int = 8
    radius: float = 4.0
    mode_std: float = 0.15
    square: float = 2.0


@dataclass
class ScheduleSection:
    kind: str = "linear"
    T: int = 50
    beta_min: float = 1e-3
    beta_max: float = 0.25


@dataclass
class TeacherSection:
    hidden: list = field(default_factory=lambda: [64, 64, 64])
    time_dim: int = 8
    conditional: bool = True
    activation: str = "tanh"
    steps: int = 20000
    lr: float = 2e-3
    batch_size: int = 256
    cond_drop: float = 0.2
    seed: int = 0
    checkpoint: Optional[str] = None


@dataclass
class CoarseSection:
    K: int = 5
    strategy: str = "uniform"


@dataclass
class DivergenceSection:
    kind: str = "kl"
    alpha: float = 0.5
    # YAML key is "lambda"
    lam: float = 1.0


@dataclass
class RLSection:
    algorithm: str = "grpo"
    clip_eps: float = 0.2
    lr: float = 1e-4
    inner_epochs: int = 4
    group_size: int = 8
    n_prompts: int = 8
    kl_beta: float = 0.05
    div_lambda: float = 0.1
    divergence: Optional[DivergenceSection] = field(default_factory=DivergenceSection)
    clip_enabled: bool = True
    reference: str = "teacher"
    max_grad_norm: float = 1.0
    freeze_log_std: bool = False


@dataclass
class ComponentSection:
    kind: str
    weight: float = 1.0
    encoder: int = 0


def _default_components():
    return [ComponentSection("teacher_cosine", 1.0, 0), ComponentSection("mmd", 1.0, 0)]


@dataclass
class RewardSection:
    components: list = field(default_factory=_default_components)
    normalize: str = "none"
    mmd_bandwidth: float = 0.05


@dataclass
class EvalSection:
    n_samples: int = 2048
    seed: int = 12345
    k: int = 5


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    coarse: CoarseSection = field(default_factory=CoarseSection)
    rl: RLSection = field(default_factory=RLSection)
    reward: RewardSection = field(default_factory=RewardSection)
    eval: EvalSection = field(default_factory=EvalSection)
    epochs: int = 30
    seed: int = 0
    output_dir: str = "runs"
    baseline: str = "truncated_teacher"

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Build every runtime object once so invalid values fail at load time."""
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.baseline not in ("none", "truncated_teacher"):
            raise ValidationError(f"unknown baseline {self.baseline!r}")
        if self.eval.n_samples <= self.eval.k:
            raise ValidationError("eval.n_samples must exceed eval.k")
        if self.reward.mmd_bandwidth <= 0:
            raise ValidationError("reward.mmd_bandwidth must be positive")
        if self.teacher.steps < 0 or self.teacher.lr <= 0 or not 0 <= self.teacher.cond_drop <= 1:
            raise ValidationError("invalid teacher training settings")
        self.data_spec()
        self.noise_schedule()
        self.coarse_schedule()
        self.rl_config()
        self.reward_spec()

    def data_spec(self):
        d = self.data
        return make_data(d.kind, d.mode_count, d.radius, d.mode_std, d.square)

    def noise_schedule(self):
        s = self.schedule
        return build_schedule(s.kind, s.T, s.beta_min, s.beta_max)

    def coarse_schedule(self):
        return build_coarse_schedule(self.schedule.T, self.coarse.K, self.coarse.strategy)

    def divergence_spec(self):
        dv = self.rl.divergence
        return None if dv is None else DivergenceSpec(dv.kind, dv.alpha, dv.lam)

    def rl_config(self):
        r = self.rl
        kw = {f.name: getattr(r, f.name) for f in dataclasses.fields(r) if f.name != "divergence"}
        return RLConfig(divergence=self.divergence_spec(), **kw)

    def reward_spec(self):
        comps = tuple(RewardComponent(c.kind, float(c.weight), int(c.encoder)) for c in self.reward.components)
        return RewardSpec(comps, self.reward.normalize)

    def to_dict(self):
        return _to_plain(self)

    def config_hash(self):
        return config_hash(self.to_dict())

    def replace(self, **changes):
        """Copy with dotted-path overrides, e.g. ``replace(**{"rl.algorithm": "ppo"})``."""
        d = self.to_dict()
        for path, value in changes.items():
            node = d
            keys = path.split(".")
            for k in keys[:-1]:
                node = node[k]
            if keys[-1] not in node:
                raise ValidationError(f"unknown config key {path!r}")
            node[keys[-1]] = copy.deepcopy(value)
        return config_from_dict(d)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            key = "lambda" if f.name == "lam" else f.name
            out[key] = _to_plain(getattr(obj, f.name))
        return out
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def config_hash(d):
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


_SECTIONS = {
    "data": DataSection, "schedule": ScheduleSection, "teacher": TeacherSection, "coarse": CoarseSection,
    "rl": RLSection, "reward": RewardSection, "eval": EvalSection,
}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ValidationError(f"{where} must be a mapping")
    names = {("lambda" if f.name == "lam" else f.name): f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = {}
    for key, value in raw.items():
        f = names[key]
        if cls is RLSection and key == "divergence":
            value = None if value is None else _build(DivergenceSection, value, f"{where}.divergence")
        elif cls is RewardSection and key == "components":
            if not isinstance(value, list) or not value:
                raise ValidationError(f"{where}.components must be a non-empty list")
            value = [_build(ComponentSection, c, f"{where}.components[{i}]") for i, c in enumerate(value)]
        kw[f.name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def config_from_dict(raw):
    raw = dict(raw or {})
    unknown = sorted(set(raw) - {f.name for f in dataclasses.fields(ExperimentConfig)})
    if unknown:
        raise ValidationError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {}
    for key, value in raw.items():
        kw[key] = _build(_SECTIONS[key], value, key) if key in _SECTIONS else value
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc)) from exc


def load_config(path, env=None):
    """Read a YAML config; ``REDIF_SEED`` in the environment overrides ``seed``."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from exc
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            raw["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ValidationError(f"{SEED_ENV} must be an integer") from exc
    return config_from_dict(raw)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
