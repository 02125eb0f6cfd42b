"""
Common Manifest Schemas
Shared data models for run manifests and command results
"""

from pydantic import BaseModel, Field
from typing import Dict, Any, List, Optional

from engine.schema import GuidanceConfig, ScheduleParams

TOOL_VERSION = "0.1.0"


class PlanSummary(BaseModel):
    """Tile plan geometry without the per-rect list"""
    canvas_height: int
    canvas_width: int
    tile_height: int
    tile_width: int
    latent_factor: int = 1
    rows: int = 1
    cols: int = 1


class RunManifest(BaseModel):
    """Everything needed to re-run one command"""
    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    schedule: Optional[ScheduleParams] = None
    guidance: Optional[GuidanceConfig] = None
    plan: Optional[PlanSummary] = None
    backends: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)
    tool_version: str = TOOL_VERSION

