"""
Run configuration and manifests for the command-line pipeline.

A run configuration comes from an optional YAML file merged with command-line
flags and is validated against a JSON schema that rejects unknown keys. Every
run records a manifest (resolved config, config hash, seeds, package versions)
next to its outputs; writes into an output directory go through a file lock.
"""
import copy
import hashlib
import json
import logging
import os
import platform
from datetime import datetime, timezone
from importlib import metadata
from typing import Dict, Iterable, Optional

import jsonschema
import yaml
from filelock import FileLock

from core.conic import SolverOptions
from core.models import NoiseType, SeparabilityDefinition, SettingFamily, ValidationError
from core.simlab import DEFAULT_JITTER_DEG, NoiseModel

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SWITCH_TOMOGRAPHY_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = os.path.join(".", "data", "runs")
LOCK_TIMEOUT = 10
MANIFEST_NAME = "manifest.json"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "jsonschema", "PyYAML", "filelock")

COMMANDS = ("ideal", "settings", "simulate", "reconstruct", "witness", "robustness", "worst-case", "game", "report")

SOLVER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "eps_abs": {"type": "number", "exclusiveMinimum": 0},
        "eps_rel": {"type": "number", "minimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "infeasibility_window": {"type": "integer", "minimum": 0},
        "infeasibility_tol": {"type": "number", "minimum": 0},
        "linear_solver": {"enum": ["auto", "direct", "indirect", "structured"]},
        "direct_max_rows": {"type": "integer", "minimum": 1},
        "cg_tol": {"type": "number", "exclusiveMinimum": 0},
        "cg_max_iter": {"type": "integer", "minimum": 1},
        "log_every": {"type": "integer", "minimum": 0},
        "precondition": {"type": "boolean"},
    },
}

RUN_CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "RunConfig",
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "family": {"enum": [f.value for f in SettingFamily]},
        "process": {"type": "string", "minLength": 1},
        "control": {
            "type": "array", "minItems": 2, "maxItems": 2,
            "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "shots": {"type": ["integer", "null"], "minimum": 1},
                "jitter_deg": {"type": "number", "minimum": 0},
                "visibility_sq": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "noise_type": {"enum": [n.value for n in NoiseType]},
        "definition": {"enum": [d.value for d in SeparabilityDefinition]},
        "impose_future_x": {"type": "boolean"},
        "eps_grid": {"type": "string", "pattern": r"^[0-9.eE+-]+:[0-9.eE+-]+:[0-9.eE+-]+$"},
        "seed": {"type": ["integer", "null"], "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
        "solver": SOLVER_SCHEMA,
        "output_dir": {"type": "string", "minLength": 1},
    },
}


def _merge(base: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        elif isinstance(value, dict):
            nested = _merge({}, value)
            if nested:
                merged[key] = nested
        else:
            merged[key] = value
    return merged


def load_yaml_config(path) -> dict:
    """Load a YAML run configuration (an empty file is an empty mapping)."""
    with open(path, mode="r", encoding="utf-8") as file:
        data = yaml.safe_load(file)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"Run configuration {path} must be a mapping, got {type(data).__name__}")
    return data


class RunConfig:
    """A schema-validated run configuration."""

    def __init__(self, values: dict):
        jsonschema.Draft7Validator(RUN_CONFIG_SCHEMA).validate(values)
        self.values = values

    @classmethod
    def from_sources(cls, command: str, config_path=None, overrides: Optional[dict] = None) -> "RunConfig":
        """File values first, then command-line overrides (unset flags are ignored)."""
        values = load_yaml_config(config_path) if config_path else {}
        file_command = values.get("command")
        if file_command is not None and file_command != command:
            raise ValidationError(f"Configuration is for command '{file_command}', not '{command}'")
        values = _merge(values, dict(overrides or {}))
        values["command"] = command
        return cls(values)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def command(self) -> str:
        return self.values["command"]

    @property
    def family(self) -> SettingFamily:
        return SettingFamily(self.values.get("family", SettingFamily.FULL.value))

    @property
    def noise_type(self) -> NoiseType:
        return NoiseType(self.values.get("noise_type", NoiseType.WHITE.value))

    @property
    def definition(self) -> SeparabilityDefinition:
        return SeparabilityDefinition(self.values.get("definition", SeparabilityDefinition.CONVEX_MIXTURE.value))

    @property
    def seed(self) -> Optional[int]:
        return self.values.get("seed")

    def noise_model(self) -> NoiseModel:
        """Sampled runs default to DEFAULT_JITTER_DEG of waveplate jitter, analytic runs to none."""
        noise = self.values.get("noise", {})
        shots = noise.get("shots")
        jitter = noise.get("jitter_deg")
        if jitter is None:
            jitter = 0.0 if shots is None else DEFAULT_JITTER_DEG
        return NoiseModel(shots, jitter, noise.get("visibility_sq", 1.0))

    def solver_options(self, **defaults) -> SolverOptions:
        """Solver options from per-problem defaults overridden by the config."""
        mapping = dict(defaults)
        mapping.update(self.values.get("solver", {}))
        return SolverOptions.from_mapping(mapping)

    @property
    def output_dir(self) -> str:
        return self.values.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the config."""
        canonical = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def __repr__(self):
        return f"RunConfig(command={self.command}, hash={self.config_hash()[:12]})"


def output_lock(output_dir) -> FileLock:
    """Lock serializing writes into an output directory."""
    os.makedirs(output_dir, exist_ok=True)
    return FileLock(os.path.join(output_dir, ".lock"), timeout=LOCK_TIMEOUT)


def package_versions(packages: Iterable[str] = TRACKED_PACKAGES) -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in packages:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_manifest(config: RunConfig, outputs: Iterable[str] = (), seeds: Optional[dict] = None) -> str:
    """Write manifest.json into the run's output directory and return its path."""
    output_dir = config.output_dir
    manifest = {
        "command": config.command,
        "config": config.values,
        "config_sha256": config.config_hash(),
        "seeds": seeds or {"seed": config.seed},
        "noise": config.noise_model().to_dict(),
        "outputs": sorted(os.fspath(o) for o in outputs),
        "versions": package_versions(),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(output_dir, MANIFEST_NAME)
    with output_lock(output_dir):
        with open(path, mode="w", encoding="utf-8") as file:
            json.dump(manifest, file, indent=2, sort_keys=True)
    logger.info(f"Manifest written to {path}")
    return path
