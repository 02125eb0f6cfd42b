"""
Backend Manager - Estimator and Codec Registry
Loads named backends from the backends config file and resolves locators into estimator/codec pairs
"""

import os
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from artifacts.store import load_toy_estimator

from .adapters import pretrained_adapter, pretrained_codec
from .analytic import AnalyticEstimator
from .codec import IdentityCodec, LatentCodec
from .corpus import TextureWorld, analytic_preset
from .errors import ConfigError, UnknownBackend
from .estimators import NoiseEstimator
from .schedule import schedule_from_params
from .schema import DilationProfile, ScheduleParams, load_profile
from .toy_denoiser import build_toy_estimator

logger = logging.getLogger(__name__)

# Global backend configuration
BACKENDS_CONFIG_FILE = "backends.config"
BACKEND_KINDS = ("toy", "analytic", "diffusers")
backends: Dict[str, Dict[str, Any]] = {}


@dataclass
class Backend:
    """A resolved backend: estimator bound to its schedule plus the matching codec."""
    name: str
    kind: str
    estimator: NoiseEstimator
    codec: LatentCodec
    profile: Optional[DilationProfile] = None
    settings: Dict[str, Any] = field(default_factory=dict)

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "estimator": self.estimator.backend_id,
            "codec": self.codec.codec_id,
            "latent_factor": self.codec.spatial_factor,
            "schedule": self.estimator.schedule.schedule_id,
        }


def config_path() -> str:
    return os.getenv("HIRES_EDIT_BACKENDS_CONFIG", BACKENDS_CONFIG_FILE)


def load_backend_config(path: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
    """
    Load named backends from a JSON configuration file.

    A missing file leaves only the raw locators available; a malformed one is
    a configuration error.

    Raises:
        ConfigError: unreadable JSON or an entry with an unknown kind
    """
    global backends

    path = path or config_path()
    backends = {}
    if not os.path.exists(path):
        logger.debug(f"Backend config file not found: {path}")
        return backends

    try:
        with open(path, "r", encoding="utf-8") as f:
            config = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"❌ Failed to load backend config: {e}")
        raise ConfigError(f"cannot read backend config {path}: {e}") from e

    for name, settings in config.get("backends", {}).items():
        kind = settings.get("kind")
        if kind not in BACKEND_KINDS:
            raise ConfigError(f"backend '{name}' has unknown kind '{kind}'", backend=name)
        backends[name] = dict(settings)
        logger.debug(f"Loaded backend: {name} ({kind})")

    logger.info(f"📋 Loaded {len(backends)} backends from {path}")
    return backends


def get_backends() -> Dict[str, Dict[str, Any]]:
    """Get all registered backends, loading the config file on first use."""
    if not backends:
        load_backend_config()
    return backends


def parse_locator(locator: str) -> Dict[str, Any]:
    """
    Settings for a registered name or a raw locator.

    Raw forms: toy, toy:<weights-dir>, analytic:<preset>, diffusers:<model-id>.
    """
    registered = get_backends()
    if locator in registered:
        return dict(registered[locator])

    kind, _, rest = locator.partition(":")
    if kind == "toy":
        return {"kind": "toy", "weights": rest} if rest else {"kind": "toy"}
    if kind == "analytic" and rest:
        return {"kind": "analytic", "world": rest}
    if kind == "diffusers" and rest:
        return {"kind": "diffusers", "model": rest}
    raise UnknownBackend(f"unknown backend '{locator}'", available=sorted(registered))


def resolve_backend(locator: str, params: Optional[ScheduleParams] = None) -> Backend:
    """
    Build the estimator and codec a locator names.

    Args:
        locator: Registered backend name or raw locator
        params: Schedule recipe; pretrained models keep their own betas and only take T from it

    Raises:
        UnknownBackend: locator not recognized
        ModelUnavailable: pretrained weights cannot be loaded
    """
    params = params or ScheduleParams()
    settings = parse_locator(locator)
    kind = settings["kind"]
    profile = load_profile(settings["profile"]) if settings.get("profile") else None

    if kind == "analytic":
        world = analytic_preset(settings.get("world", "two-tone"))
        estimator: NoiseEstimator = AnalyticEstimator(world, schedule_from_params(params))
        codec: LatentCodec = IdentityCodec(world.dims[2])
    elif kind == "toy":
        schedule = schedule_from_params(params)
        if settings.get("weights"):
            estimator = load_toy_estimator(settings["weights"], schedule)
        else:
            world = TextureWorld()
            estimator = build_toy_estimator(
                schedule, (world.base_size, world.base_size), int(settings.get("seed", 0)), world
            )
        codec = IdentityCodec(estimator.channels)
    else:
        estimator = pretrained_adapter(settings["model"], params.num_sample_steps)
        codec = pretrained_codec(settings["model"])

    backend = Backend(
        name=locator,
        kind=kind,
        estimator=estimator,
        codec=codec,
        profile=profile,
        settings=settings,
    )
    logger.info(f"✅ Resolved backend {locator} -> {estimator.backend_id}")
    return backend


def resolve_estimator(locator: str, params: Optional[ScheduleParams] = None) -> NoiseEstimator:
    return resolve_backend(locator, params).estimator


def resolve_codec(locator: str, params: Optional[ScheduleParams] = None) -> LatentCodec:
    return resolve_backend(locator, params).codec


def get_backend_debug_info() -> Dict[str, Any]:
    """Get backend registry debug information."""
    path = config_path()
    return {
        "config_file": path,
        "config_exists": os.path.exists(path),
        "backends": {name: dict(settings) for name, settings in get_backends().items()},
    }
