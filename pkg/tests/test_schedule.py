#!/usr/bin/env python3
"""
Test Noise Schedule
Tests schedule construction and the DDIM step algebra
"""

import sys
import os
import math
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import pytest
import torch

from engine.errors import IndexOutOfRange, InvalidRange, ShapeMismatch
from engine.schedule import (
    NoiseSchedule,
    build_schedule,
    ddim_inverse_step,
    ddim_step,
    predict_clean,
    schedule_from_params,
)
from engine.schema import ScheduleParams, Spacing


def test_build_schedule_defaults():
    """Test the T=50 subsampled linear schedule."""
    schedule = build_schedule(1000, 50, 1e-4, 2e-2, Spacing.LINEAR)

    assert schedule.num_steps == 50
    assert len(schedule.betas) == len(schedule.alphas) == len(schedule.alpha_bars) == 50
    assert torch.all(schedule.alpha_bars[1:] < schedule.alpha_bars[:-1])
    assert torch.all((schedule.alpha_bars > 0) & (schedule.alpha_bars <= 1))
    assert schedule.timestep_map[0] == 1
    assert schedule.timestep_map[1] == 21
    assert all(a < b for a, b in zip(schedule.timestep_map, schedule.timestep_map[1:]))
    assert schedule.alpha_bars.dtype == torch.float64
    print(f"✅ Built {schedule.schedule_id}")


def test_alpha_bars_are_running_products():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    running = torch.cumprod(schedule.alphas, dim=0)
    assert torch.allclose(running, schedule.alpha_bars, rtol=1e-12 * 50, atol=0)


def test_alpha_bars_gathered_from_training_schedule():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    train = torch.cumprod(1.0 - torch.linspace(1e-4, 2e-2, 1000, dtype=torch.float64), dim=0)
    for i, t in enumerate(schedule.timestep_map):
        assert float(schedule.alpha_bars[i]) == pytest.approx(float(train[t - 1]), rel=1e-12)


def test_quadratic_spacing():
    schedule = build_schedule(1000, 50, 0.00085, 0.012, Spacing.QUADRATIC)
    assert "quadratic" in schedule.schedule_id
    assert torch.all(schedule.alpha_bars[1:] < schedule.alpha_bars[:-1])
    first_beta = float(schedule.betas[0])
    assert first_beta == pytest.approx(0.00085, rel=1e-9)


def test_from_betas_products():
    schedule = NoiseSchedule.from_betas([0.1, 0.2])
    assert schedule.alpha_bars.tolist() == pytest.approx([0.9, 0.72])


def test_from_betas_accepts_zero_noise():
    schedule = NoiseSchedule.from_betas([0.0])
    assert schedule.alpha_bar(1) == 1.0
    assert schedule.alpha_bar(0) == 1.0


def test_schedule_from_params_matches_build():
    params = ScheduleParams(num_train_steps=1000, num_sample_steps=20)
    schedule = schedule_from_params(params)
    assert schedule.params == params
    assert torch.equal(schedule.alpha_bars, build_schedule(1000, 20, 1e-4, 2e-2).alpha_bars)


@pytest.mark.parametrize("args", [
    (10, 20, 1e-4, 2e-2),
    (1000, 0, 1e-4, 2e-2),
    (1000, 50, 0.0, 2e-2),
    (1000, 50, 2e-2, 1e-4),
    (1000, 50, 1e-4, 1.0),
])
def test_build_schedule_rejects_bad_bounds(args):
    with pytest.raises(InvalidRange):
        build_schedule(*args)


def test_model_timestep_and_bounds():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    assert schedule.model_timestep(0) == 0
    assert schedule.model_timestep(50) == 981
    with pytest.raises(IndexOutOfRange):
        schedule.alpha_bar(51)


def test_predict_clean_scalar():
    """z_t=1.0, eps=0.5, alpha_bar=0.64 -> (1.0 - 0.6*0.5)/0.8."""
    schedule = NoiseSchedule.from_betas([0.36])
    z = torch.full((1, 1, 1), 1.0, dtype=torch.float64)
    eps = torch.full((1, 1, 1), 0.5, dtype=torch.float64)
    assert float(predict_clean(z, eps, 1, schedule)) == pytest.approx(0.875, rel=1e-12)


def test_predict_clean_zero_noise_and_clean_timestep():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    z = torch.randn(4, 4, 3, dtype=torch.float64)
    out = predict_clean(z, torch.zeros_like(z), 10, schedule)
    assert torch.allclose(out, z / math.sqrt(schedule.alpha_bar(10)))

    clean = NoiseSchedule.from_betas([0.0, 0.0])
    assert torch.equal(predict_clean(z, torch.randn_like(z), 2, clean), z)


def test_predict_clean_errors():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    with pytest.raises(ShapeMismatch):
        predict_clean(torch.zeros(2, 2, 1), torch.zeros(2, 2, 3), 1, schedule)
    with pytest.raises(IndexOutOfRange):
        predict_clean(torch.zeros(2, 2, 1), torch.zeros(2, 2, 1), 0, schedule)


def test_ddim_step_terminal_returns_clean_estimate():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    z = torch.randn(3, 3, 2)
    eps_clean = torch.randn(3, 3, 2)
    eps_direction = torch.randn(3, 3, 2)
    out = ddim_step(z, eps_direction, eps_clean, 1, 0, schedule)
    assert torch.equal(out, predict_clean(z, eps_clean, 1, schedule))


def test_ddim_step_scalar_oracle():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    z, e_dir, e_clean, t, t_prev = 0.3, -0.7, 0.2, 30, 29
    a_t, a_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    expected = math.sqrt(a_prev) * (z - math.sqrt(1 - a_t) * e_clean) / math.sqrt(a_t) + math.sqrt(1 - a_prev) * e_dir

    def scalar(v):
        return torch.full((1, 1, 1), v, dtype=torch.float64)

    out = ddim_step(scalar(z), scalar(e_dir), scalar(e_clean), t, t_prev, schedule)
    assert float(out) == pytest.approx(expected, rel=1e-12)


def test_ddim_inverse_step_scalar_oracle():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    z, eps, t, t_next = 0.4, 0.1, 0, 1
    a_t, a_next = schedule.alpha_bar(t), schedule.alpha_bar(t_next)
    expected = math.sqrt(a_next) * (z - math.sqrt(1 - a_t) * eps) / math.sqrt(a_t) + math.sqrt(1 - a_next) * eps
    out = ddim_inverse_step(torch.full((1, 1, 1), z, dtype=torch.float64),
                            torch.full((1, 1, 1), eps, dtype=torch.float64), t, t_next, schedule)
    assert float(out) == pytest.approx(expected, rel=1e-12)


def test_ddim_inverse_step_identity_without_noise():
    schedule = NoiseSchedule.from_betas([0.0, 0.0, 0.0])
    z = torch.randn(2, 2, 1)
    assert torch.equal(ddim_inverse_step(z, torch.zeros_like(z), 0, 2, schedule), z)


@pytest.mark.parametrize("t,t_next", [(0, 1), (3, 7), (20, 50), (49, 50)])
def test_inverse_then_reverse_round_trip(t, t_next):
    """The same eps inverts and reverses exactly up to rounding."""
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    generator = torch.Generator().manual_seed(t * 100 + t_next)
    z = torch.randn(5, 5, 3, generator=generator, dtype=torch.float64)
    eps = torch.randn(5, 5, 3, generator=generator, dtype=torch.float64)
    forward = ddim_inverse_step(z, eps, t, t_next, schedule)
    back = ddim_step(forward, eps, eps, t_next, t, schedule)
    assert float((back - z).norm() / z.norm()) < 1e-6


def test_step_index_errors():
    schedule = build_schedule(1000, 50, 1e-4, 2e-2)
    z = torch.zeros(2, 2, 1)
    with pytest.raises(IndexOutOfRange):
        ddim_step(z, z, z, 5, 5, schedule)
    with pytest.raises(IndexOutOfRange):
        ddim_inverse_step(z, z, 5, 4, schedule)
    with pytest.raises(ShapeMismatch):
        ddim_step(z, torch.zeros(2, 2, 2), z, 5, 4, schedule)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
