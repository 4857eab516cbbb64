"""Run configuration: flat JSON with dotted keys, validated on load."""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional

from .ddpg import Hyperparams
from .dlo_sim import DloParams, SimConfig
from .errors import ConfigurationError
from .orchestrator import EpisodeConfig
from .trainer import TrainerConfig
from .utils import get_environment_variable

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "MULTIAC6_OUTPUT_DIR"
DATASET_DIR_ENV = "MULTIAC6_DATASET_DIR"


@dataclass
class PathsConfig:
    output_dir: str = "."
    dataset_dir: str = "."


@dataclass
class RunConfig:
    """Every tunable of a run; defaults reproduce the published configuration."""

    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    sim_params: DloParams = field(default_factory=DloParams)
    sim_config: SimConfig = field(default_factory=SimConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        # the trainer carries the hyperparameters its agents are built with
        self.trainer = replace(self.trainer, hyperparams=self.hyperparams)

    def validate(self) -> "RunConfig":
        self.hyperparams.validate()
        self.episode.validate()
        self.trainer.validate()
        self.sim_config.check_stability(self.sim_params)
        if abs(self.episode.control_dt - self.sim_config.control_dt) > 1e-12:
            raise ConfigurationError(
                f"episode.control_dt ({self.episode.control_dt}) must equal sim.control_dt "
                f"({self.sim_config.control_dt})")
        if self.episode.num_feature_points > self.sim_params.num_particles:
            raise ConfigurationError("episode.num_feature_points cannot exceed sim.num_particles")
        return self

    def to_flat_dict(self) -> Dict[str, Any]:
        """Dotted-key view of every setting, JSON-ready."""
        flat: Dict[str, Any] = {}
        for prefix, section in _sections(self).items():
            for key, value in asdict(section).items():
                if prefix == "trainer" and key == "hyperparams":
                    continue
                flat[f"{prefix}.{key}"] = list(value) if isinstance(value, tuple) else value
        return flat


def _sections(config: RunConfig) -> Dict[str, Any]:
    return {
        "ddpg": config.hyperparams,
        "episode": config.episode,
        "sim": config.sim_params,
        "sim_timing": config.sim_config,
        "trainer": config.trainer,
        "paths": config.paths,
    }


_SECTION_TYPES = {
    "ddpg": Hyperparams,
    "episode": EpisodeConfig,
    "sim": DloParams,
    "sim_timing": SimConfig,
    "trainer": TrainerConfig,
    "paths": PathsConfig,
}


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigurationError(f"{section}.{key} must be a list of {len(default)} numbers")
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{section}.{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigurationError(f"{section}.{key} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigurationError(f"{section}.{key} must be a string, got {value!r}")
    return value


def from_flat_dict(values: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig from dotted keys; missing keys keep their defaults, unknown keys are rejected."""
    overrides: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTION_TYPES}
    for dotted, value in values.items():
        section, _, key = dotted.partition(".")
        if section not in _SECTION_TYPES:
            raise ConfigurationError(f"Unknown configuration key '{dotted}'")
        defaults = {f.name: f for f in fields(_SECTION_TYPES[section]) if f.name != "hyperparams"}
        if key not in defaults:
            raise ConfigurationError(f"Unknown configuration key '{dotted}'")
        default_value = getattr(_SECTION_TYPES[section](), key)
        overrides[section][key] = _coerce(section, key, value, default_value)

    try:
        config = RunConfig(
            hyperparams=Hyperparams(**overrides["ddpg"]),
            episode=EpisodeConfig(**overrides["episode"]),
            sim_params=DloParams(**overrides["sim"]),
            sim_config=SimConfig(**overrides["sim_timing"]),
            trainer=TrainerConfig(**overrides["trainer"]),
            paths=PathsConfig(**overrides["paths"]),
        )
    except TypeError as exc:
        raise ConfigurationError(f"Invalid configuration: {exc}") from exc
    return config.validate()


def apply_environment(config: RunConfig) -> RunConfig:
    """Path overrides from MULTIAC6_OUTPUT_DIR and MULTIAC6_DATASET_DIR."""
    config.paths.output_dir = get_environment_variable(OUTPUT_DIR_ENV, config.paths.output_dir)
    config.paths.dataset_dir = get_environment_variable(DATASET_DIR_ENV, config.paths.dataset_dir)
    return config


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path: JSON file of dotted keys; defaults only when omitted

    Returns:
        Validated RunConfig with environment path overrides applied
    """
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                values = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigurationError(f"{path} must hold a JSON object of dotted keys")
    config = from_flat_dict(values)
    logger.debug(f"Loaded run configuration from {path or 'defaults'}")
    return apply_environment(config)


def save_run_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config.to_flat_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
