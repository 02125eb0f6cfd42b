"""
Noise Estimators
Conditioning signals and the estimator contract eps_theta(z_t, t, c) shared by every backend
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import torch

from .errors import IndexOutOfRange, InvalidFactor, ShapeMismatch, UnsupportedBackend
from .schedule import NoiseSchedule
from .schema import DilationProfile

logger = logging.getLogger(__name__)


class ConditioningKind(str, Enum):
    EMBEDDING = "embedding"
    CLASS_LABEL = "class_label"
    NULL = "null"


@dataclass(frozen=True)
class Conditioning:
    """
    A condition c or the null condition.

    Embeddings carry either a tensor payload or the prompt text that a
    text-encoding backend turns into one.
    """
    kind: ConditioningKind
    payload: Optional[Union[int, torch.Tensor]] = None
    text: Optional[str] = None

    @property
    def is_null(self) -> bool:
        return self.kind == ConditioningKind.NULL

    @classmethod
    def null(cls) -> "Conditioning":
        return NULL

    @classmethod
    def label(cls, index: int) -> "Conditioning":
        return cls(kind=ConditioningKind.CLASS_LABEL, payload=int(index))

    @classmethod
    def prompt(cls, text: str, embedding: Optional[torch.Tensor] = None) -> "Conditioning":
        return cls(kind=ConditioningKind.EMBEDDING, payload=embedding, text=text)

    def describe(self) -> str:
        if self.is_null:
            return "null"
        if self.kind == ConditioningKind.CLASS_LABEL:
            return f"class:{self.payload}"
        return f"prompt:{self.text}" if self.text is not None else "embedding"


NULL = Conditioning(kind=ConditioningKind.NULL)


class NoiseEstimator(ABC):
    """
    eps_theta bound to one NoiseSchedule.

    predict takes sampler indices t in [1, T] of the bound schedule and
    (H, W, C) latents; the output has the input's shape. Instances are
    immutable after construction and predict is reentrant.
    """

    backend_id: str = "estimator"
    supports_dilation: bool = False
    resolution_agnostic: bool = False
    strict_size: bool = False
    dilation_factor: int = 1

    def __init__(self, schedule: NoiseSchedule, base_height: int, base_width: int, channels: int):
        self.schedule = schedule
        self.base_height = base_height
        self.base_width = base_width
        self.channels = channels

    @abstractmethod
    def _predict(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
        ...

    @abstractmethod
    def with_schedule(self, schedule: NoiseSchedule) -> "NoiseEstimator":
        """Same weights, bound to another schedule."""

    def check_input(self, z_t: torch.Tensor) -> None:
        """
        Enforce the size contract.

        Strict estimators take exactly base x dilation_factor; the others take
        any positive multiple of the base size.
        """
        if z_t.dim() != 3 or z_t.shape[-1] != self.channels:
            raise ShapeMismatch(f"{self.backend_id} expects (H, W, {self.channels}), got {tuple(z_t.shape)}")
        height, width = z_t.shape[0], z_t.shape[1]
        if self.strict_size:
            expected = (self.base_height * self.dilation_factor, self.base_width * self.dilation_factor)
            if (height, width) != expected:
                raise ShapeMismatch(f"{self.backend_id} expects {expected[0]}x{expected[1]} latents, got {height}x{width}")
        elif height % self.base_height or width % self.base_width:
            raise ShapeMismatch(
                f"{self.backend_id} expects multiples of {self.base_height}x{self.base_width}, got {height}x{width}"
            )

    def check_timestep(self, t: int) -> None:
        if not 1 <= t <= self.schedule.num_steps:
            raise IndexOutOfRange(f"timestep {t} outside [1, {self.schedule.num_steps}]")

    def predict(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
        self.check_input(z_t)
        self.check_timestep(t)
        eps = self._predict(z_t, t, cond)
        if eps.shape != z_t.shape:
            raise ShapeMismatch(f"{self.backend_id} returned {tuple(eps.shape)} for input {tuple(z_t.shape)}")
        return eps

    def predict_pair(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> Tuple[torch.Tensor, torch.Tensor]:
        """(eps_c, eps_null); backends that can batch the two override this."""
        return self.predict(z_t, t, cond), self.predict(z_t, t, NULL)

    def redilate(self, factor: int, profile: Optional[DilationProfile] = None) -> "NoiseEstimator":
        if self.resolution_agnostic:
            return self
        raise UnsupportedBackend(f"{self.backend_id} does not support kernel re-dilation")


def predict(estimator: NoiseEstimator, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
    return estimator.predict(z_t, t, cond)


def redilate(estimator: NoiseEstimator, factor: int, profile: Optional[DilationProfile] = None) -> NoiseEstimator:
    """
    Re-dilated view of an estimator sharing its weights.

    Args:
        estimator: Estimator to dilate
        factor: Dilation multiplier (>= 1)
        profile: Per-layer/timestep rules; defaults to every convolution at every step

    Returns:
        Dilated estimator (the analytic backend returns itself)

    Raises:
        UnsupportedBackend: backend cannot be dilated
    """
    if factor < 1:
        raise InvalidFactor(f"dilation factor must be >= 1, got {factor}")
    dilated = estimator.redilate(factor, profile)
    if dilated is not estimator:
        logger.info(f"✅ Re-dilated {estimator.backend_id} by x{factor}")
    return dilated
