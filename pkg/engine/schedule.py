"""
Noise Schedule
Diffusion coefficient tables and the deterministic DDIM step algebra shared by inversion and sampling
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import torch

from .errors import IndexOutOfRange, InvalidRange, ShapeMismatch
from .schema import ScheduleParams, Spacing

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    alpha / alpha-bar / beta tables for sampler indices 1..T.

    Tables are float64 tensors where position i-1 holds index i. Index 0 is the
    clean end of the chain and always has alpha_bar = 1.
    """
    num_steps: int
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    timestep_map: Tuple[int, ...]
    params: Optional[ScheduleParams] = field(default=None, compare=False)

    @classmethod
    def from_betas(cls, betas: Sequence[float]) -> "NoiseSchedule":
        """Build directly from per-step betas; beta = 0 is accepted (test schedules)."""
        table = torch.as_tensor(list(betas), dtype=torch.float64)
        if table.numel() == 0:
            raise InvalidRange("schedule needs at least one step")
        if torch.any(table < 0) or torch.any(table >= 1):
            raise InvalidRange("betas must lie in [0, 1)")
        alphas = 1.0 - table
        return cls(
            num_steps=table.numel(),
            betas=table,
            alphas=alphas,
            alpha_bars=torch.cumprod(alphas, dim=0),
            timestep_map=tuple(range(1, table.numel() + 1)),
        )

    @property
    def schedule_id(self) -> str:
        if self.params is not None:
            return self.params.schedule_id
        return f"custom-{self.num_steps}"

    def alpha_bar(self, t: int) -> float:
        """alpha_bar at sampler index t in [0, T]."""
        if not 0 <= t <= self.num_steps:
            raise IndexOutOfRange(f"timestep {t} outside [0, {self.num_steps}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def model_timestep(self, t: int) -> int:
        """Underlying training timestep for sampler index t (0 for the clean end)."""
        if not 0 <= t <= self.num_steps:
            raise IndexOutOfRange(f"timestep {t} outside [0, {self.num_steps}]")
        return 0 if t == 0 else self.timestep_map[t - 1]


def _training_betas(num_train_steps: int, beta_start: float, beta_end: float, spacing: Spacing) -> torch.Tensor:
    if spacing == Spacing.LINEAR:
        return torch.linspace(beta_start, beta_end, num_train_steps, dtype=torch.float64)
    if spacing == Spacing.QUADRATIC:
        return torch.linspace(beta_start ** 0.5, beta_end ** 0.5, num_train_steps, dtype=torch.float64) ** 2
    raise InvalidRange(f"unknown spacing: {spacing}")


def build_schedule(
    num_train_steps: int,
    num_sample_steps: int,
    beta_start: float,
    beta_end: float,
    spacing: Spacing = Spacing.LINEAR,
) -> NoiseSchedule:
    """
    Build a sampling schedule subsampled from a training schedule.

    Timesteps use leading spacing starting at training step 1. alpha_bar is the
    full training cumulative product gathered at the mapped steps; per-step
    alphas are the ratios of consecutive gathered alpha_bars.

    Raises:
        InvalidRange: step counts or beta bounds violated
    """
    spacing = Spacing(spacing)
    if not 1 <= num_sample_steps <= num_train_steps:
        raise InvalidRange(
            f"need 1 <= num_sample_steps ({num_sample_steps}) <= num_train_steps ({num_train_steps})"
        )
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidRange(f"need 0 < beta_start ({beta_start}) <= beta_end ({beta_end}) < 1")

    train_alpha_bars = torch.cumprod(1.0 - _training_betas(num_train_steps, beta_start, beta_end, spacing), dim=0)

    step_ratio = num_train_steps // num_sample_steps
    timestep_map = tuple(i * step_ratio + 1 for i in range(num_sample_steps))
    index = torch.tensor([t - 1 for t in timestep_map], dtype=torch.long)
    alpha_bars = train_alpha_bars[index]

    previous = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bars[:-1]])
    alphas = alpha_bars / previous

    schedule = NoiseSchedule(
        num_steps=num_sample_steps,
        betas=1.0 - alphas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        timestep_map=timestep_map,
        params=ScheduleParams(
            num_train_steps=num_train_steps,
            num_sample_steps=num_sample_steps,
            beta_start=beta_start,
            beta_end=beta_end,
            spacing=spacing,
        ),
    )
    logger.debug(f"Built schedule {schedule.schedule_id}: alpha_bar_T={float(alpha_bars[-1]):.3e}")
    return schedule


def schedule_from_params(params: ScheduleParams) -> NoiseSchedule:
    return build_schedule(
        params.num_train_steps,
        params.num_sample_steps,
        params.beta_start,
        params.beta_end,
        params.spacing,
    )


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def predict_clean(z_t: torch.Tensor, eps: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    """z0_hat = (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t), for t in [1, T]."""
    _check_shapes(z_t, eps)
    if not 1 <= t <= schedule.num_steps:
        raise IndexOutOfRange(f"timestep {t} outside [1, {schedule.num_steps}]")
    return _clean(z_t, eps, schedule.alpha_bar(t))


def _clean(z_t: torch.Tensor, eps: torch.Tensor, alpha_bar: float) -> torch.Tensor:
    return (z_t - math.sqrt(1.0 - alpha_bar) * eps) / math.sqrt(alpha_bar)


def _renoise(z0_hat: torch.Tensor, eps: torch.Tensor, alpha_bar: float) -> torch.Tensor:
    return math.sqrt(alpha_bar) * z0_hat + math.sqrt(1.0 - alpha_bar) * eps


def ddim_step(
    z_t: torch.Tensor,
    eps_for_direction: torch.Tensor,
    eps_for_clean: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    Deterministic DDIM reverse step z_t -> z_{t_prev}.

    The clean estimate uses `eps_for_clean`; the direction term uses
    `eps_for_direction`. Passing the same tensor twice is the standard step.

    Raises:
        ShapeMismatch: tensor shapes differ
        IndexOutOfRange: t outside [1, T] or t_prev not in [0, t)
    """
    _check_shapes(z_t, eps_for_direction)
    _check_shapes(z_t, eps_for_clean)
    if not 1 <= t <= schedule.num_steps or not 0 <= t_prev < t:
        raise IndexOutOfRange(f"invalid reverse step {t} -> {t_prev} for T={schedule.num_steps}")

    alpha_bar_prev = schedule.alpha_bar(t_prev)
    z0_hat = _clean(z_t, eps_for_clean, schedule.alpha_bar(t))
    if alpha_bar_prev == 1.0:
        return z0_hat
    return _renoise(z0_hat, eps_for_direction, alpha_bar_prev)


def ddim_inverse_step(
    z_t: torch.Tensor,
    eps: torch.Tensor,
    t: int,
    t_next: int,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    Deterministic DDIM inversion step z_t -> z_{t_next} (t may be 0, the clean end).

    Raises:
        ShapeMismatch: tensor shapes differ
        IndexOutOfRange: t not in [0, T) or t_next not in (t, T]
    """
    _check_shapes(z_t, eps)
    if not 0 <= t < t_next <= schedule.num_steps:
        raise IndexOutOfRange(f"invalid inversion step {t} -> {t_next} for T={schedule.num_steps}")

    z0_hat = _clean(z_t, eps, schedule.alpha_bar(t))
    return _renoise(z0_hat, eps, schedule.alpha_bar(t_next))
