"""
Guidance
CFG, CFG++, NDCFG and NDCFG++ combination and step rules over estimator outputs
"""

import logging
from dataclasses import dataclass
from typing import Optional

import torch

from .errors import ShapeMismatch
from .estimators import NULL, Conditioning, NoiseEstimator
from .schedule import NoiseSchedule, ddim_step, predict_clean
from .schema import GuidanceMode, TilePlan, check_scale
from .tiling import LATENT, crop_all, stitch

logger = logging.getLogger(__name__)

CFG = "cfg"
CFGPP = "cfgpp"
NDCFG = "ndcfg"
NDCFGPP = "ndcfgpp"


@dataclass(frozen=True)
class StepOutput:
    """
    Result of one guided reverse step.

    eps_uncond_vanilla is the unconditional prediction the step is anchored
    on: the vanilla estimator's for the ND rules, the dilated one's otherwise.
    eps_direction is exactly the tensor used as the renoising direction.
    """
    z_prev: torch.Tensor
    eps_guided: torch.Tensor
    eps_uncond_vanilla: torch.Tensor
    residual: torch.Tensor
    eps_direction: torch.Tensor
    x0_pred: torch.Tensor
    branch: str


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, omega: float) -> torch.Tensor:
    """
    eps_uncond + omega * (eps_cond - eps_uncond).

    Evaluated with lerp so omega = 0 and omega = 1 return the endpoints exactly.
    """
    _check_shapes(eps_cond, eps_uncond)
    return torch.lerp(eps_uncond, eps_cond, float(omega))


def _steer(base: torch.Tensor, residual: torch.Tensor, scale: float) -> torch.Tensor:
    _check_shapes(base, residual)
    return base + scale * residual


def predict_tiled(
    estimator: NoiseEstimator,
    z_t: torch.Tensor,
    t: int,
    cond: Conditioning,
    plan: TilePlan,
) -> torch.Tensor:
    """Evaluate an estimator tile by tile over a latent canvas and stitch the outputs."""
    tiles = crop_all(z_t, plan, LATENT)
    return stitch([estimator.predict(tile, t, cond) for tile in tiles], plan, LATENT)


def vanilla_unconditional(
    vanilla: NoiseEstimator,
    z_t: torch.Tensor,
    t: int,
    vanilla_tiles: Optional[TilePlan] = None,
) -> torch.Tensor:
    """eps_null from the undilated estimator, on the full canvas or tile-wise."""
    if vanilla_tiles is None:
        return vanilla.predict(z_t, t, NULL)
    return predict_tiled(vanilla, z_t, t, NULL, vanilla_tiles)


def _finish(
    z_t: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    guided: torch.Tensor,
    anchor: torch.Tensor,
    residual: torch.Tensor,
    direction: torch.Tensor,
    branch: str,
) -> StepOutput:
    return StepOutput(
        z_prev=ddim_step(z_t, direction, guided, t, t_prev, schedule),
        eps_guided=guided,
        eps_uncond_vanilla=anchor,
        residual=residual,
        eps_direction=direction,
        x0_pred=predict_clean(z_t, guided, t, schedule),
        branch=branch,
    )


def cfg_step(
    z_t: torch.Tensor,
    t: int,
    t_prev: int,
    dilated: NoiseEstimator,
    cond: Conditioning,
    omega: float,
    schedule: NoiseSchedule,
) -> StepOutput:
    """Plain CFG on the dilated estimator; clean estimate and direction both use the guided eps."""
    check_scale(GuidanceMode.CFG, omega)
    eps_c, eps_null = dilated.predict_pair(z_t, t, cond)
    guided = cfg_combine(eps_c, eps_null, omega)
    return _finish(z_t, t, t_prev, schedule, guided, eps_null, eps_c - eps_null, guided, CFG)


def ndcfg_step(
    z_t: torch.Tensor,
    t: int,
    t_prev: int,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    cond: Conditioning,
    omega: float,
    schedule: NoiseSchedule,
    vanilla_tiles: Optional[TilePlan] = None,
) -> StepOutput:
    """
    Noise-damped CFG step.

    eps = eps_null(vanilla) + omega * (eps~_c - eps~_null), renoised with eps itself.

    Raises:
        ShapeMismatch: estimator outputs disagree with z_t
        ScaleOutOfRange: omega < 0
    """
    check_scale(GuidanceMode.NDCFG, omega)
    eps_vanilla = vanilla_unconditional(vanilla, z_t, t, vanilla_tiles)
    eps_c, eps_null = dilated.predict_pair(z_t, t, cond)
    residual = eps_c - eps_null
    guided = _steer(eps_vanilla, residual, omega)
    return _finish(z_t, t, t_prev, schedule, guided, eps_vanilla, residual, guided, NDCFG)


def ndcfgpp_step(
    z_t: torch.Tensor,
    t: int,
    t_prev: int,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    cond: Conditioning,
    lam: float,
    schedule: NoiseSchedule,
    vanilla_tiles: Optional[TilePlan] = None,
) -> StepOutput:
    """
    Noise-damped CFG++ step.

    eps = eps_null(vanilla) + lam * (eps~_c - eps~_null) gives the clean
    estimate; the renoising direction is the vanilla eps_null itself.

    Raises:
        ShapeMismatch: estimator outputs disagree with z_t
        ScaleOutOfRange: lam outside [0, 1]
    """
    check_scale(GuidanceMode.NDCFGPP, lam)
    eps_vanilla = vanilla_unconditional(vanilla, z_t, t, vanilla_tiles)
    eps_c, eps_null = dilated.predict_pair(z_t, t, cond)
    residual = eps_c - eps_null
    guided = _steer(eps_vanilla, residual, lam)
    return _finish(z_t, t, t_prev, schedule, guided, eps_vanilla, residual, eps_vanilla, NDCFGPP)


def cfgpp_step(
    z_t: torch.Tensor,
    t: int,
    t_prev: int,
    dilated: NoiseEstimator,
    cond: Conditioning,
    lam: float,
    schedule: NoiseSchedule,
) -> StepOutput:
    """
    CFG++ on the dilated estimator: lerp(eps~_null, eps~_c, lam), renoised with eps~_null.

    lam = 0 and lam = 1 return the unconditional and conditional predictions exactly.
    """
    check_scale(GuidanceMode.CFGPP, lam)
    eps_c, eps_null = dilated.predict_pair(z_t, t, cond)
    residual = eps_c - eps_null
    guided = cfg_combine(eps_c, eps_null, lam)
    return _finish(z_t, t, t_prev, schedule, guided, eps_null, residual, eps_null, CFGPP)
