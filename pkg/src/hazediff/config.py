"""Experiment configuration: one JSON document, validated up front.

Sections: ``schedule``, ``train``, ``aug``, ``fcb``, ``synth`` and ``io``.
Every section is optional and falls back to the module defaults; unknown
sections or keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .diffusion import NoiseSchedule, make_schedule
from .fcb import DEFAULT_KS, DEFAULT_SIGMAS, make_bank
from .haze_aug import HazeAugConfig
from .toynet import TrainConfig
from .toyset import BASE_A, BASE_BETA


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


def _take(section: str, d, cls, extra: tuple[str, ...] = ()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    known = {f.name for f in fields(cls)} | set(extra)
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    return dict(d)


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 2000
    beta_start: float = 1e-6
    beta_end: float = 1e-2

    def build(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class FcbConfig:
    ks: tuple[int, ...] = DEFAULT_KS
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS
    gamma_sigma: float = 1.0
    use_fcb: bool = True

    def __post_init__(self):
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        make_bank(self.ks, self.sigmas, self.gamma_sigma)  # validates


@dataclass(frozen=True)
class SynthConfig:
    """Base ASM ranges used by ``synth``."""

    a_min: float = BASE_A[0]
    a_max: float = BASE_A[1]
    beta_min: float = BASE_BETA[0]
    beta_max: float = BASE_BETA[1]

    def __post_init__(self):
        if not 0 < self.a_min <= self.a_max:
            raise ValueError(f"need 0 < a_min <= a_max, got ({self.a_min}, {self.a_max})")
        if not 0 <= self.beta_min <= self.beta_max:
            raise ValueError(f"need 0 <= beta_min <= beta_max, got ({self.beta_min}, {self.beta_max})")


@dataclass(frozen=True)
class IOConfig:
    dataset: str | None = None
    output: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    aug: HazeAugConfig = field(default_factory=HazeAugConfig)
    aug_seed: int | None = None
    fcb: FcbConfig = field(default_factory=FcbConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    io: IOConfig = field(default_factory=IOConfig)

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        sections = {"schedule", "train", "aug", "fcb", "synth", "io"}
        unknown = sorted(set(doc) - sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        try:
            sched = ScheduleConfig(**_take("schedule", doc.get("schedule", {}), ScheduleConfig))
            sched.build()
            fcb = FcbConfig(**_take("fcb", doc.get("fcb", {}), FcbConfig))
            train = _take("train", doc.get("train", {}), TrainConfig)
            if "use_fcb" in train and "use_fcb" in doc.get("fcb", {}) and train["use_fcb"] != fcb.use_fcb:
                raise ConfigError("train.use_fcb and fcb.use_fcb disagree")
            train["use_fcb"] = train.get("use_fcb", fcb.use_fcb)
            fcb = FcbConfig(fcb.ks, fcb.sigmas, fcb.gamma_sigma, train["use_fcb"])
            aug = _take("aug", doc.get("aug", {}), HazeAugConfig, extra=("seed",))
            aug_seed = aug.pop("seed", None)
            return cls(
                schedule=sched,
                train=TrainConfig(**train),
                aug=HazeAugConfig(**aug),
                aug_seed=None if aug_seed is None else int(aug_seed),
                fcb=fcb,
                synth=SynthConfig(**_take("synth", doc.get("synth", {}), SynthConfig)),
                io=IOConfig(**_take("io", doc.get("io", {}), IOConfig)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        aug = asdict(self.aug)
        if self.aug_seed is not None:
            aug["seed"] = self.aug_seed
        return {
            "schedule": asdict(self.schedule),
            "train": asdict(self.train),
            "aug": aug,
            "fcb": asdict(self.fcb),
            "synth": asdict(self.synth),
            "io": asdict(self.io),
        }


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)
