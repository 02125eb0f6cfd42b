#!/usr/bin/env python3
"""
Test Reverse Sampler
Tests tau switching, reductions to known samplers, trajectories and reconstruction
"""

import sys
import os
import math
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import pytest
import torch

from engine.analytic import AnalyticEstimator, GaussianMixtureWorld, class_distance
from engine.codec import IdentityCodec
from engine.corpus import gray_levels_world, world_canvas
from engine.errors import InvalidRange, MissingCache, ModeMismatch, ShapeMismatch
from engine.estimators import NULL, Conditioning
from engine.guidance import CFG, CFGPP, NDCFG, NDCFGPP
from engine.inversion import tiled_ddim_invert
from engine.sampler import (
    draw_initial_noise,
    edit,
    edit_branch,
    edit_latent,
    reconstruct_latent,
    scalecrafter_generate,
    scalecrafter_latent,
)
from engine.schedule import NoiseSchedule, build_schedule, ddim_step
from engine.schema import GuidanceConfig, GuidanceMode
from engine.seeding import make_generator
from engine.tiling import plan_tiles

COND = Conditioning.label(1)


def _pair(scripted, schedule):
    return scripted(schedule, gain=0.5), scripted(schedule, gain=0.8)


def _z(height=4, width=4, seed=0):
    return torch.randn(height, width, 1, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


@pytest.mark.parametrize("tau,nd,pp", [(37, 37, 13), (10, 10, 40), (0, 0, 50), (50, 50, 0)])
def test_branch_accounting(scripted, schedule50, tau, nd, pp):
    vanilla, dilated = _pair(scripted, schedule50)
    cfg = GuidanceConfig(mode=GuidanceMode.NDCFGPP, scale=0.5, tau=tau)
    _, trajectory = edit_latent(_z(), COND, cfg, vanilla, dilated, schedule50, record=True)
    counts = trajectory.branch_counts()
    assert counts.get(NDCFGPP, 0) == nd
    assert counts.get(CFGPP, 0) == pp
    assert trajectory.num_switches <= 1
    if 0 < tau < 50:
        # reverse order: CFG++ first, NDCFG++ for the last tau steps
        assert trajectory.branches[0] == CFGPP and trajectory.branches[-1] == NDCFGPP


def test_invert_switch(scripted, schedule50):
    vanilla, dilated = _pair(scripted, schedule50)
    cfg = GuidanceConfig(mode=GuidanceMode.NDCFGPP, scale=0.5, tau=37, invert_switch=True)
    _, trajectory = edit_latent(_z(), COND, cfg, vanilla, dilated, schedule50, record=True)
    assert trajectory.branch_counts() == {NDCFGPP: 13, CFGPP: 37}
    assert trajectory.branches[0] == NDCFGPP


def test_cfgpp_mode_never_switches():
    cfg = GuidanceConfig(mode=GuidanceMode.CFGPP, scale=0.5, tau=37)
    assert {edit_branch(t, cfg) for t in range(1, 51)} == {CFGPP}


def test_scalecrafter_branches(scripted, schedule50):
    vanilla, dilated = _pair(scripted, schedule50)
    cfg = GuidanceConfig(mode=GuidanceMode.NDCFG, scale=7.5, tau=10)
    _, trajectory = scalecrafter_latent(_z(), COND, cfg, vanilla, dilated, schedule50, record=True)
    assert trajectory.branch_counts() == {CFG: 40, NDCFG: 10}
    nd_entries = [e for e in trajectory.entries if e.branch == NDCFG]
    assert not any(e.direction_is_vanilla for e in nd_entries)


def test_mode_mismatch(scripted, schedule50):
    vanilla, dilated = _pair(scripted, schedule50)
    with pytest.raises(ModeMismatch):
        edit_latent(_z(), COND, GuidanceConfig(mode=GuidanceMode.NDCFG, scale=7.5), vanilla, dilated, schedule50)
    with pytest.raises(ModeMismatch):
        scalecrafter_latent(_z(), COND, GuidanceConfig(mode=GuidanceMode.NDCFGPP, scale=0.5), vanilla, dilated, schedule50)


def test_tau_beyond_schedule(scripted):
    schedule = build_schedule(1000, 20, 1e-4, 2e-2)
    vanilla, dilated = _pair(scripted, schedule)
    with pytest.raises(InvalidRange):
        edit_latent(_z(), COND, GuidanceConfig(tau=37), vanilla, dilated, schedule)


def test_ndcfgpp_reduces_to_cfgpp_without_dilation(scripted, schedule50):
    estimator = scripted(schedule50)
    z_T = _z(seed=1)
    nd, _ = edit_latent(z_T, COND, GuidanceConfig(mode=GuidanceMode.NDCFGPP, scale=0.7, tau=37), estimator, estimator, schedule50)
    pp, _ = edit_latent(z_T, COND, GuidanceConfig(mode=GuidanceMode.CFGPP, scale=0.7), estimator, estimator, schedule50)
    assert torch.allclose(nd, pp, rtol=1e-6, atol=1e-10)


def test_zero_lambda_is_unconditional_ddim(scripted, schedule50):
    estimator = scripted(schedule50)
    z_T = _z(seed=2)
    out, _ = edit_latent(z_T, COND, GuidanceConfig(scale=0.0, tau=25), estimator, estimator, schedule50)
    z = z_T
    for t in range(50, 0, -1):
        eps = estimator.predict(z, t, NULL)
        z = ddim_step(z, eps, eps, t, t - 1, schedule50)
    assert torch.equal(out, z)


def test_direction_is_fresh_vanilla_null(scripted, schedule50):
    vanilla, dilated = _pair(scripted, schedule50)
    cfg = GuidanceConfig(scale=0.5, tau=20)
    seen = []

    def check(t, out):
        seen.append((t, out))

    z_T = _z(seed=3)
    edit_latent(z_T, COND, cfg, vanilla, dilated, schedule50, callback=check)
    assert [t for t, _ in seen] == list(range(50, 0, -1))

    z = z_T
    for t, out in seen:
        if t <= 20:
            assert out.branch == NDCFGPP
            assert torch.equal(out.eps_direction, vanilla.predict(z, t, NULL))
        else:
            assert out.branch == CFGPP
            assert torch.equal(out.eps_direction, dilated.predict(z, t, NULL))
        z = out.z_prev


def test_edit_is_deterministic(schedule50):
    world = gray_levels_world()
    estimator = AnalyticEstimator(world, schedule50)
    z_T = _z(8, 8, seed=5)
    cfg = GuidanceConfig(scale=0.5, tau=37)
    a, _ = edit_latent(z_T, COND, cfg, estimator, estimator, schedule50)
    b, _ = edit_latent(z_T, COND, cfg, estimator, estimator, schedule50)
    assert torch.equal(a, b)


def test_trajectory_previews(scripted, schedule50):
    vanilla, dilated = _pair(scripted, schedule50)
    plan = plan_tiles(4, 4, 2, 2)
    cfg = GuidanceConfig(scale=0.5, tau=37, preview_every=5)
    _, trajectory = edit_latent(_z(), COND, cfg, vanilla, dilated, schedule50, record=True,
                                codec=IdentityCodec(1), plan=plan)
    assert len(trajectory.entries) == 50
    previews = trajectory.previews()
    assert len(previews) == 10
    assert [e.t for e in previews] == list(range(46, 0, -5))
    assert all(tuple(e.preview.shape) == (4, 4, 1) for e in previews)
    assert all(float(e.preview.min()) >= 0.0 and float(e.preview.max()) <= 1.0 for e in previews)
    for entry in trajectory.entries:
        assert (entry.residual is not None) == (entry.preview is not None)
        assert entry.residual_mean_abs >= 0.0
    assert trajectory.schedule_id == schedule50.schedule_id


def _invert_gray(schedule, seed, size=8):
    world = gray_levels_world()
    estimator = AnalyticEstimator(world, schedule)
    image = world_canvas(world, size, size, make_generator(seed, 0), label=0).to(torch.float64)
    inv = tiled_ddim_invert(image, plan_tiles(size, size, size, size), schedule, estimator, IdentityCodec(1), seed=seed)
    return world, estimator, image, inv


def test_zero_lambda_edit_equals_reconstruction(schedule50):
    _, estimator, _, inv = _invert_gray(schedule50, seed=0)
    edited, _ = edit_latent(inv.z_T_star, COND, GuidanceConfig(scale=0.0, tau=37), estimator, estimator, schedule50)
    assert torch.allclose(edited, reconstruct_latent(inv, schedule50, estimator), atol=1e-10)


def test_larger_lambda_moves_closer_to_target(schedule50):
    world, estimator, _, inv = _invert_gray(schedule50, seed=1)
    distances = {}
    for lam in (0.1, 0.9):
        z_0, _ = edit_latent(inv.z_T_star, COND, GuidanceConfig(scale=lam, tau=50), estimator, estimator, schedule50)
        distances[lam] = class_distance(world, z_0, COND)
    assert distances[0.9] < distances[0.1]


@pytest.mark.slow
def test_lambda_sweep_trends(schedule50):
    """Target distance falls and source fidelity worsens as lambda grows, averaged over seeds."""
    lams = [0.0, 0.25, 0.5, 0.75, 1.0]
    distance = {lam: 0.0 for lam in lams}
    rmse = {lam: 0.0 for lam in lams}
    for seed in range(20):
        world, estimator, image, inv = _invert_gray(schedule50, seed)
        for lam in lams:
            cfg = GuidanceConfig(scale=lam, tau=50)
            z_0, _ = edit_latent(inv.z_T_star, COND, cfg, estimator, estimator, schedule50)
            distance[lam] += class_distance(world, z_0, COND) / 20
            rmse[lam] += float(((z_0 - image) ** 2).mean().sqrt()) / 20
    values = [distance[lam] for lam in lams]
    assert all(b <= a + 1e-6 for a, b in zip(values, values[1:]))
    assert min(rmse, key=rmse.get) == 0.0
    print(f"✅ distance {values}")


@pytest.mark.slow
def test_conditional_sampling_matches_class_moments():
    """
    Unit-scale NDCFG with no dilation is conditional DDIM and recovers the class
    mean and covariance of a correlated 2-D world from 10^4 noise draws.

    T = 1000 keeps the deterministic sampler's variance shrink near 0.5%, a
    fraction of the 3 SE band.
    """
    world = GaussianMixtureWorld(
        dims=(1, 1, 2),
        means=[[-1.5, 1.0], [0.5, -0.3]],
        covariances=[[[0.6, 0.0], [0.0, 0.6]], [[1.0, 0.5], [0.5, 0.8]]],
        class_priors=[0.5, 0.5],
        class_names=("left", "right"),
    )
    schedule = build_schedule(1000, 1000, 1e-4, 2e-2)
    estimator = AnalyticEstimator(world, schedule)
    z_T = torch.randn(100, 100, 2, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    cfg = GuidanceConfig(mode=GuidanceMode.NDCFG, scale=1.0, tau=1000)
    z_0, _ = scalecrafter_latent(z_T, COND, cfg, estimator, estimator, schedule)

    draws = z_0.reshape(-1, 2)
    n = draws.shape[0]
    assert n == 10_000
    centered = draws - draws.mean(dim=0)
    covariance = centered.T @ centered / n
    for j in range(2):
        se = math.sqrt(float(covariance[j, j]) / n)
        assert abs(float(draws[:, j].mean()) - float(world.means[1, j])) < 3 * se, j
        for k in range(j, 2):
            products = centered[:, j] * centered[:, k]
            se = float(products.std()) / math.sqrt(n)
            assert abs(float(covariance[j, k]) - float(world.covariances[1, j, k])) < 3 * se, (j, k)
    print(f"✅ class moments mean={draws.mean(dim=0).tolist()} cov={covariance.tolist()}")


def test_three_step_scalar_oracle(scripted):
    """T = 3, tau = 2: one CFG++ step then two NDCFG++ steps, computed by hand."""
    schedule = NoiseSchedule.from_betas([0.1, 0.2, 0.3])
    vanilla, dilated = _pair(scripted, schedule)
    lam, z = 0.5, 0.8
    z_out, _ = edit_latent(torch.full((1, 1, 1), z, dtype=torch.float64), COND,
                           GuidanceConfig(scale=lam, tau=2), vanilla, dilated, schedule)
    bars = [1.0] + schedule.alpha_bars.tolist()
    for t in (3, 2, 1):
        ramp = t / 3
        v = math.tanh(0.5 * z) * ramp
        dn = math.tanh(0.8 * z) * ramp
        dc = math.tanh(0.8 * z + 0.6) * ramp
        anchor = v if t <= 2 else dn
        guided = anchor + lam * (dc - dn)
        a_t, a_prev = bars[t], bars[t - 1]
        z = math.sqrt(a_prev) * (z - math.sqrt(1 - a_t) * guided) / math.sqrt(a_t) + math.sqrt(1 - a_prev) * anchor
    assert float(z_out) == pytest.approx(z, rel=1e-12)


def test_scalecrafter_generate_unit_scale(scripted, schedule50):
    estimator = scripted(schedule50)
    z_T = _z(seed=6)
    pixels = scalecrafter_generate(z_T, COND, 1.0, 37, estimator, estimator, schedule50, IdentityCodec(1))
    z = z_T
    for t in range(50, 0, -1):
        eps = estimator.predict(z, t, COND)
        z = ddim_step(z, eps, eps, t, t - 1, schedule50)
    assert torch.allclose(pixels, z.clamp(0, 1), atol=1e-10)


def test_initial_noise_streams_are_per_tile():
    small = plan_tiles(16, 16, 8, 8)
    large = plan_tiles(16, 24, 8, 8)
    a = draw_initial_noise((16, 16, 4), seed=9, plan=small)
    b = draw_initial_noise((16, 24, 4), seed=9, plan=large)
    assert torch.equal(a[:8, :8], b[:8, :8])
    assert torch.equal(a[:8, :8], torch.randn((8, 8, 4), generator=make_generator(9, 0)))
    assert not torch.equal(a[:8, :8], a[:8, 8:])
    assert torch.equal(draw_initial_noise((4, 4, 1), seed=3), draw_initial_noise((4, 4, 1), seed=3))
    with pytest.raises(ShapeMismatch):
        draw_initial_noise((8, 8, 4), seed=9, plan=small)


def test_reconstruct_requires_cache(schedule50):
    _, estimator, _, inv = _invert_gray(schedule50, seed=0)
    with pytest.raises(MissingCache):
        reconstruct_latent(inv, schedule50, estimator, use_cache=True)


def test_cached_replay_rejects_another_schedule(schedule50):
    world = gray_levels_world()
    estimator = AnalyticEstimator(world, schedule50)
    image = world_canvas(world, 8, 8, make_generator(0, 0), label=0).to(torch.float64)
    inv = tiled_ddim_invert(image, plan_tiles(8, 8, 8, 8), schedule50, estimator, IdentityCodec(1), cache_eps=True)
    other = build_schedule(1000, 50, 1e-4, 1e-2)
    with pytest.raises(ModeMismatch):
        reconstruct_latent(inv, other, estimator, use_cache=True)
    assert reconstruct_latent(inv, schedule50, estimator, use_cache=True).shape == inv.z_T_star.shape


def test_zero_eps_reconstruction_rescales(scripted):
    schedule = NoiseSchedule.from_betas([0.1, 0.2])
    estimator = scripted(schedule, zero=True)
    z0 = _z(seed=7)
    inv = tiled_ddim_invert(z0, plan_tiles(4, 4, 2, 2), schedule, estimator, IdentityCodec(1))
    assert torch.allclose(inv.z_T_star, z0 * math.sqrt(schedule.alpha_bar(2)), atol=1e-12)
    assert torch.allclose(reconstruct_latent(inv, schedule, estimator), z0, atol=1e-12)


def test_edit_decodes_tile_wise(schedule50):
    _, estimator, image, inv = _invert_gray(schedule50, seed=4, size=8)
    inv_tiled = tiled_ddim_invert(image, plan_tiles(8, 8, 4, 4), schedule50, estimator, IdentityCodec(1))
    pixels, trajectory = edit(inv_tiled, COND, GuidanceConfig(scale=0.5, tau=37), estimator, estimator, schedule50,
                              IdentityCodec(1), record=True)
    assert tuple(pixels.shape) == (8, 8, 1)
    assert float(pixels.min()) >= 0.0 and float(pixels.max()) <= 1.0
    assert len(trajectory.entries) == 50
    z_0, _ = edit_latent(inv_tiled.z_T_star, COND, GuidanceConfig(scale=0.5, tau=37), estimator, estimator, schedule50)
    assert torch.allclose(pixels, z_0.clamp(0, 1))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
