"""Experiment configuration: strict JSON parsing with per-section defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .diffusion import DiffusionConfig
from .errors import ConfigError
from .scm import SCMConfig
from .sr import SRConfig


@dataclass
class SimulatorSection:
    n_items: int = 1000
    train_mixture: list = field(default_factory=lambda: [0.8, 0.2])
    eval_mixture: list = field(default_factory=lambda: [0.5, 0.5])
    mu_high: float = 1.0
    mu_low: float = -1.0
    affinity_noise: float = 0.5
    tau: float = 1.0
    u_noclick: float = 0.0
    session_length: int = 5
    slate_size: int = 3
    n_log_sessions: int = 4000
    n_eval_sessions: int = 1000


@dataclass
class DataSection:
    csv_path: str | None = None
    sessions_path: str | None = None
    iso_timestamps: bool = False
    top_m: int = 10000
    min_len: int = 3
    max_len: int = 10
    fractions: list = field(default_factory=lambda: [0.85, 0.085, 0.065])
    slate_size: int = 5


@dataclass
class AugmentSection:
    n_attempts: int | None = None   # default: one per observed interaction
    guidance_w: float = 2.0
    slate_size: int | None = None   # default: the environment's slate size
    min_length: int = 2
    beta_mode: str = "per-session"


@dataclass
class EvalSection:
    K: int = 5


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "out"
    mode: str = "simulator"          # "simulator" | "data"
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    data: DataSection = field(default_factory=DataSection)
    sr: SRConfig = field(default_factory=SRConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    scm: SCMConfig = field(default_factory=SCMConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def fingerprint(self) -> str:
        obj = config_to_dict(self)
        obj.pop("out_dir")  # the output location is not an experiment parameter
        return hashlib.sha256(
            json.dumps(obj, sort_keys=True).encode()
        ).hexdigest()[:16]


_SECTIONS = {"simulator": SimulatorSection, "data": DataSection, "sr": SRConfig,
             "diffusion": DiffusionConfig, "scm": SCMConfig,
             "augment": AugmentSection, "eval": EvalSection}


def _build(cls, obj: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path}")
    try:
        return cls(**obj)
    except Exception as e:
        raise ConfigError(f"bad values in {path}: {e}") from e


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    top_known = {"seed", "out_dir", "mode"} | set(_SECTIONS)
    unknown = set(obj) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    kwargs = {}
    for key in ("seed", "out_dir", "mode"):
        if key in obj:
            kwargs[key] = obj[key]
    for name, cls in _SECTIONS.items():
        if name in obj:
            if not isinstance(obj[name], dict):
                raise ConfigError(f"section {name!r} must be an object")
            kwargs[name] = _build(cls, obj[name], name)
    cfg = ExperimentConfig(**kwargs)
    if cfg.mode not in ("simulator", "data"):
        raise ConfigError(f"mode must be 'simulator' or 'data', got {cfg.mode!r}")
    if cfg.mode == "data" and not (cfg.data.csv_path or cfg.data.sessions_path):
        raise ConfigError("data mode needs data.csv_path or data.sessions_path")
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return config_from_dict(obj)
