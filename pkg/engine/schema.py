"""
Engine Schemas
Configuration and geometry models shared across the engine
"""

import json
import os
from enum import Enum
from fnmatch import fnmatchcase
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, InputNotFound, InvalidFactor, InvalidRange, ScaleOutOfRange

DEFAULT_LAMBDA = 0.5
DEFAULT_SAMPLE_STEPS = 50


class Spacing(str, Enum):
    """Beta spacing of the training schedule"""
    LINEAR = "linear"
    QUADRATIC = "quadratic"


class ScheduleParams(BaseModel):
    """Serializable recipe for a NoiseSchedule"""
    model_config = ConfigDict(frozen=True)

    num_train_steps: int = 1000
    num_sample_steps: int = DEFAULT_SAMPLE_STEPS
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    spacing: Spacing = Spacing.LINEAR

    @property
    def schedule_id(self) -> str:
        return (
            f"{self.spacing.value}-{self.num_train_steps}-{self.num_sample_steps}"
            f"-{self.beta_start:g}-{self.beta_end:g}"
        )


class TileRect(BaseModel):
    """One tile of a plan: top-left corner plus size, in pixels or latent cells"""
    model_config = ConfigDict(frozen=True)

    row0: int = Field(ge=0)
    col0: int = Field(ge=0)
    height: int = Field(gt=0)
    width: int = Field(gt=0)

    def scaled(self, factor: int) -> "TileRect":
        """Same rect measured in units `factor` times larger (pixel -> latent)."""
        return TileRect(
            row0=self.row0 // factor,
            col0=self.col0 // factor,
            height=self.height // factor,
            width=self.width // factor,
        )

    @property
    def area(self) -> int:
        return self.height * self.width

    def intersects(self, other: "TileRect") -> bool:
        return not (
            self.row0 + self.height <= other.row0
            or other.row0 + other.height <= self.row0
            or self.col0 + self.width <= other.col0
            or other.col0 + other.width <= self.col0
        )


class TilePlan(BaseModel):
    """Non-overlapping row-major partition of an H x W canvas into S_h x S_w tiles"""
    model_config = ConfigDict(frozen=True)

    canvas_height: int
    canvas_width: int
    tile_height: int
    tile_width: int
    rects: Tuple[TileRect, ...]
    latent_factor: int = 1

    @property
    def grid(self) -> Tuple[int, int]:
        return self.canvas_height // self.tile_height, self.canvas_width // self.tile_width

    @property
    def num_tiles(self) -> int:
        return len(self.rects)

    @property
    def tile_latent_size(self) -> Tuple[int, int]:
        return self.tile_height // self.latent_factor, self.tile_width // self.latent_factor

    @property
    def latent_canvas_size(self) -> Tuple[int, int]:
        return self.canvas_height // self.latent_factor, self.canvas_width // self.latent_factor

    def latent_rects(self) -> List[TileRect]:
        return [rect.scaled(self.latent_factor) for rect in self.rects]

    def summary(self) -> Dict[str, Any]:
        """Plan fields without the per-rect list, for manifests."""
        rows, cols = self.grid
        return {
            "canvas_height": self.canvas_height,
            "canvas_width": self.canvas_width,
            "tile_height": self.tile_height,
            "tile_width": self.tile_width,
            "latent_factor": self.latent_factor,
            "rows": rows,
            "cols": cols,
        }


class GuidanceMode(str, Enum):
    CFG = "CFG"
    CFGPP = "CFGPP"
    NDCFG = "NDCFG"
    NDCFGPP = "NDCFGPP"

    @property
    def is_lambda_mode(self) -> bool:
        return self in (GuidanceMode.CFGPP, GuidanceMode.NDCFGPP)


class VanillaEval(str, Enum):
    """How the undilated estimator sees a high-resolution latent"""
    FULL = "full"
    TILED = "tiled"


class GuidanceConfig(BaseModel):
    """Guidance settings for one sampling run"""
    model_config = ConfigDict(frozen=True)

    mode: GuidanceMode = GuidanceMode.NDCFGPP
    scale: float = DEFAULT_LAMBDA
    tau: int = 37
    dilation_factor: int = 1
    invert_switch: bool = False  # NDCFG++ when t > tau instead of t <= tau
    vanilla_eval: VanillaEval = VanillaEval.FULL
    preview_every: int = 5

    @model_validator(mode="after")
    def check_ranges(self) -> "GuidanceConfig":
        check_scale(self.mode, self.scale)
        if self.tau < 0:
            raise InvalidRange(f"tau must be >= 0, got {self.tau}")
        if self.dilation_factor < 1:
            raise InvalidFactor(f"dilation factor must be >= 1, got {self.dilation_factor}")
        if self.preview_every < 1:
            raise InvalidRange(f"preview interval must be >= 1, got {self.preview_every}")
        return self

    def check_steps(self, num_steps: int) -> None:
        """Validate tau against the schedule length T."""
        if self.tau > num_steps:
            raise InvalidRange(f"tau={self.tau} exceeds T={num_steps}")


def check_scale(mode: GuidanceMode, scale: float) -> None:
    if mode.is_lambda_mode:
        if not 0.0 <= scale <= 1.0:
            raise ScaleOutOfRange(f"{mode.value} needs lambda in [0, 1], got {scale}")
    elif scale < 0.0:
        raise ScaleOutOfRange(f"{mode.value} needs omega >= 0, got {scale}")


def default_tau(area_factor: int, num_steps: int = DEFAULT_SAMPLE_STEPS) -> int:
    """
    Switch point by pixel-count factor: x4 -> 10, x8 and x16 -> 37 at T=50,
    scaled proportionally for other T.
    """
    base = 10 if area_factor <= 4 else 37
    if num_steps == DEFAULT_SAMPLE_STEPS:
        return base
    return min(num_steps, int(round(base * num_steps / DEFAULT_SAMPLE_STEPS)))


def default_dilation(rows: int, cols: int) -> int:
    """Dilation factor for a rows x cols tile grid: the longer side ratio."""
    return max(1, rows, cols)


class DilationRule(BaseModel):
    """Dilation rate for layers whose name matches `pattern` inside a model-timestep window"""
    model_config = ConfigDict(frozen=True)

    pattern: str
    factor: int = Field(ge=1)
    t_min: int = 0
    t_max: int = 10**9

    def applies(self, layer_name: str, model_timestep: int) -> bool:
        return self.t_min <= model_timestep <= self.t_max and fnmatchcase(layer_name, self.pattern)


class DilationProfile(BaseModel):
    """Ordered rules; the first matching rule decides a layer's rate, unmatched layers keep rate 1"""
    model_config = ConfigDict(frozen=True)

    rules: Tuple[DilationRule, ...] = ()

    def rate_for(self, layer_name: str, model_timestep: int) -> int:
        for rule in self.rules:
            if rule.applies(layer_name, model_timestep):
                return rule.factor
        return 1

    def resolve_rates(self, layer_names: List[str], model_timestep: int) -> Dict[str, int]:
        return {name: self.rate_for(name, model_timestep) for name in layer_names}

    @property
    def max_factor(self) -> int:
        return max((rule.factor for rule in self.rules), default=1)


def default_profile(factor: int) -> DilationProfile:
    """Every convolution dilated by `factor` at every timestep."""
    if factor < 1:
        raise InvalidFactor(f"dilation factor must be >= 1, got {factor}")
    return DilationProfile(rules=(DilationRule(pattern="*", factor=factor),))


def load_profile(path: str, factor: Optional[int] = None) -> DilationProfile:
    """
    Load a dilation profile from a JSON document.

    Args:
        path: File holding either {"rules": [...]} or a bare list of rules
        factor: When given, rules without an explicit factor use it

    Returns:
        Parsed DilationProfile

    Raises:
        InputNotFound: missing file
        ConfigError: malformed JSON
    """
    if not os.path.exists(path):
        raise InputNotFound(f"dilation profile not found: {path}", path=path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"dilation profile {path} is not valid JSON: {e}") from e
    rules = data.get("rules", []) if isinstance(data, dict) else data
    if not isinstance(rules, list):
        raise ConfigError(f"dilation profile {path} must hold a list of rules")
    try:
        if factor is not None:
            rules = [{"factor": factor, **rule} for rule in rules]
        return DilationProfile(rules=tuple(DilationRule(**rule) for rule in rules))
    except (TypeError, ValidationError) as e:
        raise ConfigError(f"dilation profile {path} has an invalid rule: {e}") from e
