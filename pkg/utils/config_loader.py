# ============================================
# utils/config_loader.py
# ============================================

"""
Run configuration loading.

A run config uses the `.morph` line grammar with `[section]` headers:

    [run]          seed, output, policy
    [train]        TrainConfig fields
    [network]      layer widths
    [ranges]       ERRanges half-widths
    [dr]           DRRanges half-widths
    [curriculum]   CurriculumConfig fields
    [env]          EnvConfig and RewardConfig fields
    [robots]       train: a.morph, b.morph   holdout: c.morph

Robot paths are relative to the config file. Values come from, in order of
precedence: command-line flags, the config file, dataclass defaults.
Process-level settings (MORPHRL_THREADS, MORPHRL_LOG_LEVEL) come from the
environment, optionally through a `.env` file.
"""

import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from components.baselines import POLICY_KINDS
from components.curriculum import CurriculumConfig
from components.env import EnvConfig, RewardConfig
from components.morphology import Morphology, load_morphology
from components.network import NetworkConfig
from components.randomization import DRRanges, ERRanges
from components.trainer import TrainConfig
from utils.errors import ConfigError, MorphrlError
from utils.keyvalue import Entry, Section, parse_document, to_bool, to_float, to_int, to_list, to_vector

logger = logging.getLogger(__name__)

SECTIONS = ("run", "train", "network", "ranges", "dr", "curriculum", "env", "robots")

DEFAULT_OUTPUT = "runs/latest"

_OPTIONAL_TYPES = {"num_robots": int, "min_return": float}


@dataclass
class RunConfig:
    seed: int = 0
    output: Path = Path(DEFAULT_OUTPUT)
    policy: str = "urma_v2"
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ranges: ERRanges = field(default_factory=ERRanges)
    dr_ranges: DRRanges = field(default_factory=DRRanges)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    robot_paths: List[Path] = field(default_factory=list)
    holdout_path: Optional[Path] = None
    robots: List[Morphology] = field(default_factory=list)
    holdout: Optional[Morphology] = None
    source_path: Optional[Path] = None
    source_text: str = ""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ProcessSettings:
    threads: int = 1
    log_level: str = "INFO"


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

def load_process_settings() -> ProcessSettings:
    """Read MORPHRL_THREADS / MORPHRL_LOG_LEVEL (after loading `.env` if present)."""
    load_dotenv()
    threads_text = os.getenv("MORPHRL_THREADS", "1")
    try:
        threads = int(threads_text)
        if threads < 1:
            raise ValueError
    except ValueError:
        logger.warning("MORPHRL_THREADS=%r is not a positive integer, using 1", threads_text)
        threads = 1
    return ProcessSettings(threads=threads, log_level=os.getenv("MORPHRL_LOG_LEVEL", "INFO").upper())


# ---------------------------------------------------------------------------
# Value coercion
# ---------------------------------------------------------------------------

def _coerce(entry: Entry, default: Any, name: str) -> Any:
    """Convert an entry to the type of the dataclass default it replaces."""
    if default is None:
        if entry.value.lower() == "none":
            return None
        kind = _OPTIONAL_TYPES.get(name, float)
        return to_int(entry) if kind is int else to_float(entry)
    if isinstance(default, bool):
        return to_bool(entry)
    if isinstance(default, int):
        return to_int(entry)
    if isinstance(default, float):
        return to_float(entry)
    if isinstance(default, str):
        return entry.value
    if isinstance(default, tuple):
        if default and all(isinstance(v, int) for v in default):
            return tuple(int(v) for v in to_list(entry))
        return to_vector(entry, len(default))
    raise ConfigError(f"{name}: unsupported setting type")


def _build(cls, section: Optional[Section], section_name: str, skip: Tuple[str, ...] = (), base=None):
    """Instantiate `cls` from a section; unknown keys raise ConfigError naming section.key."""
    base = base if base is not None else cls()
    if section is None:
        return base
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    values: Dict[str, Any] = {}
    for entry in section.entries:
        if entry.key not in known:
            raise ConfigError(f"unknown setting {section_name}.{entry.key} (line {entry.line})")
        f = known[entry.key]
        try:
            values[entry.key] = _coerce(entry, getattr(base, f.name), f.name)
        except ValueError as exc:
            raise ConfigError(f"{section_name}.{entry.key}: {exc}") from None
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section_name}] {exc}") from None


def _network_from(section: Optional[Section]) -> NetworkConfig:
    config = _build(NetworkConfig, section, "network")
    if config.latent_dim < 1 or min(config.phi_hidden + config.psi_hidden + config.core_hidden, default=1) < 1:
        raise ConfigError("[network] widths must be >= 1")
    return config


def _env_from(section: Optional[Section]) -> EnvConfig:
    """[env] mixes EnvConfig and RewardConfig keys."""
    if section is None:
        return EnvConfig()
    reward_keys = {f.name for f in fields(RewardConfig)}
    env_part = Section(name="env", line=section.line, entries=[e for e in section.entries if e.key not in reward_keys])
    reward_part = Section(name="env", line=section.line, entries=[e for e in section.entries if e.key in reward_keys])
    reward = _build(RewardConfig, reward_part, "env")
    env = _build(EnvConfig, env_part, "env", skip=("reward",))
    return replace(env, reward=reward)


def _robots_from(section: Optional[Section], root: Path) -> Tuple[List[Path], Optional[Path]]:
    if section is None:
        return [], None
    train: List[Path] = []
    holdout: Optional[Path] = None
    for entry in section.entries:
        if entry.key == "train":
            train = [(root / item).resolve() for item in to_list(entry)]
        elif entry.key == "holdout":
            holdout = (root / entry.value).resolve()
        else:
            raise ConfigError(f"unknown setting robots.{entry.key} (line {entry.line})")
    return train, holdout


def _load_robot(path: Path) -> Morphology:
    if not path.exists():
        raise ConfigError(f"robot file not found: {path}")
    try:
        return load_morphology(path)
    except MorphrlError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def parse_run_config(text: str, root: Union[str, Path] = ".") -> RunConfig:
    """
    Parse config text without touching robot files.

    Args:
        text: Config file content
        root: Directory robot paths are relative to

    Raises:
        KeyValueSyntaxError: grammar problems
        ConfigError: unknown sections or keys, invalid values
    """
    document = parse_document(text, allow_sections=True)
    if document.top.entries or document.top.blocks:
        raise ConfigError("settings must live inside a [section]")
    for section in document.sections[1:]:
        if section.name not in SECTIONS:
            raise ConfigError(f"unknown section [{section.name}] (line {section.line})")
        if section.blocks:
            raise ConfigError(f"[{section.name}] does not take blocks (line {section.blocks[0].line})")

    config = RunConfig(source_text=text)
    run = document.section("run")
    if run is not None:
        for entry in run.entries:
            if entry.key == "seed":
                config.seed = to_int(entry)
            elif entry.key == "output":
                config.output = Path(entry.value)
            elif entry.key == "policy":
                config.policy = entry.value
            else:
                raise ConfigError(f"unknown setting run.{entry.key} (line {entry.line})")
    if config.policy not in POLICY_KINDS:
        raise ConfigError(f"run.policy must be one of {', '.join(POLICY_KINDS)} (got '{config.policy}')")

    config.train = _build(TrainConfig, document.section("train"), "train", skip=("seed",))
    config.network = _network_from(document.section("network"))
    config.ranges = _build(ERRanges, document.section("ranges"), "ranges")
    config.dr_ranges = _build(DRRanges, document.section("dr"), "dr")
    config.curriculum = _build(CurriculumConfig, document.section("curriculum"), "curriculum")
    config.env = _env_from(document.section("env"))
    config.robot_paths, config.holdout_path = _robots_from(document.section("robots"), Path(root))
    return config


def load_run_config(
    path: Union[str, Path],
    seed: Optional[int] = None,
    output: Optional[Union[str, Path]] = None,
) -> RunConfig:
    """
    Load a run config, apply flag overrides, and load every referenced robot.

    Args:
        path: Config file
        seed: --seed flag (overrides [run] seed)
        output: --out flag (overrides [run] output)

    Returns:
        RunConfig with robots and holdout loaded and train.seed set

    Raises:
        ConfigError: missing files, holdout listed for training, bad values
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = parse_run_config(path.read_text(encoding="utf-8"), root=path.parent)
    config.source_path = path

    if seed is not None:
        config.seed = int(seed)
    if output is not None:
        config.output = Path(output)
    if not 0 <= config.seed < 2 ** 64:
        raise ConfigError("run.seed must be a 64-bit unsigned integer")
    config.train = replace(config.train, seed=config.seed)
    config.train.validate()

    if not config.robot_paths:
        raise ConfigError("[robots] train must list at least one robot file")
    if config.holdout_path is not None and config.holdout_path in config.robot_paths:
        raise ConfigError(f"holdout robot {config.holdout_path} is also listed for training")

    config.robots = [_load_robot(p) for p in config.robot_paths]
    names = [robot.name for robot in config.robots]
    if len(set(names)) != len(names):
        raise ConfigError(f"training robots must have distinct names: {names}")
    if config.holdout_path is not None:
        config.holdout = _load_robot(config.holdout_path)
        if config.holdout.name in names:
            raise ConfigError(f"holdout robot '{config.holdout.name}' shares its name with a training robot")

    logger.info(
        "loaded config %s: %d training robots, policy %s, seed %d",
        path, len(config.robots), config.policy, config.seed,
    )
    return config


def write_manifest(config: RunConfig, output_dir: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
    """`manifest.json`: everything needed to reproduce the run."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_path": str(config.source_path) if config.source_path else None,
        "config_sha256": config.config_hash,
        "seed": config.seed,
        "policy": config.policy,
        "robots": [str(p) for p in config.robot_paths],
        "holdout": str(config.holdout_path) if config.holdout_path else None,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    path = output_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
