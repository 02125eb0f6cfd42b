"""
Shared test doubles: scripted estimators and a pooling codec
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import pytest
import torch
import torch.nn.functional as F

from engine.codec import LatentCodec
from engine.estimators import Conditioning, NoiseEstimator
from engine.schedule import NoiseSchedule, build_schedule


class ScriptedEstimator(NoiseEstimator):
    """
    Smooth, deterministic eps(z, t, c) that is cheap to evaluate on any canvas.

    Counts null and conditional calls so tests can assert which branch ran.
    """

    resolution_agnostic = True

    def __init__(self, schedule: NoiseSchedule, channels: int = 1, gain: float = 0.5, label_gain: float = 0.3,
                 zero: bool = False, backend_id: str = "scripted"):
        super().__init__(schedule, 1, 1, channels)
        self.gain = gain
        self.label_gain = label_gain
        self.zero = zero
        self.backend_id = backend_id
        self.calls = {"null": 0, "cond": 0}

    def with_schedule(self, schedule: NoiseSchedule) -> "ScriptedEstimator":
        return ScriptedEstimator(schedule, self.channels, self.gain, self.label_gain, self.zero, self.backend_id)

    def _predict(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
        self.calls["null" if cond.is_null else "cond"] += 1
        if self.zero:
            return torch.zeros_like(z_t)
        shift = 0.0 if cond.is_null else self.label_gain * (1 + int(cond.payload or 0))
        return torch.tanh(self.gain * z_t + shift) * (t / self.schedule.num_steps)


class PoolCodec(LatentCodec):
    """Average-pool encoder / nearest decoder with an SD-like factor-8 geometry."""

    codec_id = "pool"
    spatial_factor = 8
    pixel_channels = 3
    latent_channels = 4

    def _encode(self, image: torch.Tensor) -> torch.Tensor:
        pooled = F.avg_pool2d(image.permute(2, 0, 1).unsqueeze(0), self.spatial_factor)[0].permute(1, 2, 0)
        return torch.cat([pooled, pooled.mean(dim=-1, keepdim=True)], dim=-1)

    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        f = self.spatial_factor
        return latent[..., :3].repeat_interleave(f, dim=0).repeat_interleave(f, dim=1)


@pytest.fixture
def schedule50() -> NoiseSchedule:
    return build_schedule(1000, 50, 1e-4, 2e-2)


@pytest.fixture
def scripted():
    """Factory for ScriptedEstimator instances."""
    return ScriptedEstimator


@pytest.fixture
def pool_codec() -> PoolCodec:
    return PoolCodec()
