"""
Run Manifests
RunManifest persistence and the flags > config file > defaults merge
"""

import json
import logging
import os
from typing import Any, Dict, Optional

from engine.errors import ConfigError, InputNotFound
from engine.schema import TilePlan
from schemas import PlanSummary, RunManifest

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def manifest_path(output_path: str) -> str:
    """Manifest location for an output file or directory."""
    if os.path.isdir(output_path):
        return os.path.join(output_path, "manifest.json")
    return f"{output_path}{MANIFEST_SUFFIX}"


def write_manifest(path: str, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))
    logger.debug(f"Wrote manifest {path}")


def read_manifest(path: str) -> RunManifest:
    if not os.path.exists(path):
        raise InputNotFound(f"manifest not found: {path}", path=path)
    with open(path, "r", encoding="utf-8") as f:
        return RunManifest.model_validate(json.load(f))


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """
    Flat JSON object of option values, keyed by option name with dashes or underscores.

    Raises:
        ConfigError: unreadable file or not a JSON object
    """
    if not path:
        return {}
    if not os.path.exists(path):
        raise InputNotFound(f"config file not found: {path}", path=path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return {key.replace("-", "_"): value for key, value in data.items()}


def resolve_options(
    flags: Dict[str, Any],
    defaults: Dict[str, Any],
    config_file: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Effective options: explicitly given flags, then the config file, then defaults.

    A flag counts as given when its value is not None.
    """
    merged = dict(defaults)
    merged.update({k: v for k, v in load_config_file(config_file).items() if k in defaults})
    merged.update({k: v for k, v in flags.items() if v is not None and k in defaults})
    return merged


def plan_summary(plan: TilePlan) -> PlanSummary:
    return PlanSummary(**plan.summary())
