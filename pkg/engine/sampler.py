"""
Reverse Sampler
Tau-switched reverse diffusion from an inverted latent, the dilated-CFG comparison sampler and reconstruction
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import torch
from tqdm import tqdm

from .codec import LatentCodec, decode_canvas
from .errors import MissingCache, ModeMismatch, ShapeMismatch
from .estimators import NULL, Conditioning, NoiseEstimator
from .guidance import CFG, CFGPP, NDCFG, NDCFGPP, StepOutput, cfg_step, cfgpp_step, ndcfg_step, ndcfgpp_step
from .inversion import InvertedLatent
from .schedule import NoiseSchedule, ddim_step
from .schema import GuidanceConfig, GuidanceMode, TilePlan, VanillaEval
from .seeding import make_generator
from .tiling import crop, place, plan_tiles

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, StepOutput], None]


@dataclass
class TrajectoryEntry:
    """
    One reverse step. Full residual and preview tensors are kept on preview
    steps only; every step keeps the residual magnitude.
    """
    t: int
    branch: str
    residual_mean_abs: float
    direction_is_vanilla: bool
    residual: Optional[torch.Tensor] = None
    preview: Optional[torch.Tensor] = None


@dataclass
class TrajectoryRecord:
    entries: List[TrajectoryEntry] = field(default_factory=list)
    config: Optional[GuidanceConfig] = None
    seed: int = 0
    schedule_id: str = ""

    def branch_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for entry in self.entries:
            counts[entry.branch] = counts.get(entry.branch, 0) + 1
        return counts

    @property
    def branches(self) -> List[str]:
        return [entry.branch for entry in self.entries]

    @property
    def num_switches(self) -> int:
        return sum(1 for a, b in zip(self.branches, self.branches[1:]) if a != b)

    def previews(self) -> List[TrajectoryEntry]:
        return [entry for entry in self.entries if entry.preview is not None]


def _nd_active(t: int, cfg: GuidanceConfig) -> bool:
    return t > cfg.tau if cfg.invert_switch else t <= cfg.tau


def edit_branch(t: int, cfg: GuidanceConfig) -> str:
    """Branch the ++ sampler takes at step t."""
    if not cfg.mode.is_lambda_mode:
        raise ModeMismatch(f"{cfg.mode.value} is an omega mode; use the dilated-CFG sampler")
    if cfg.mode == GuidanceMode.CFGPP:
        return CFGPP
    return NDCFGPP if _nd_active(t, cfg) else CFGPP


def scalecrafter_branch(t: int, cfg: GuidanceConfig) -> str:
    """Branch the dilated-CFG sampler takes at step t."""
    if cfg.mode.is_lambda_mode:
        raise ModeMismatch(f"{cfg.mode.value} is a lambda mode; use the edit sampler")
    if cfg.mode == GuidanceMode.CFG:
        return CFG
    return NDCFG if _nd_active(t, cfg) else CFG


def _vanilla_plan(cfg: GuidanceConfig, vanilla: NoiseEstimator, z: torch.Tensor) -> Optional[TilePlan]:
    if cfg.vanilla_eval != VanillaEval.TILED:
        return None
    return plan_tiles(z.shape[0], z.shape[1], vanilla.base_height, vanilla.base_width)


def _bind(estimator: NoiseEstimator, schedule: NoiseSchedule) -> NoiseEstimator:
    return estimator if estimator.schedule is schedule else estimator.with_schedule(schedule)


def _run(
    z_T: torch.Tensor,
    cond: Conditioning,
    cfg: GuidanceConfig,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    schedule: NoiseSchedule,
    choose: Callable[[int, GuidanceConfig], str],
    record: bool,
    codec: Optional[LatentCodec],
    plan: Optional[TilePlan],
    callback: Optional[StepCallback],
    progress: bool,
    seed: int,
) -> Tuple[torch.Tensor, Optional[TrajectoryRecord]]:
    cfg.check_steps(schedule.num_steps)
    vanilla = _bind(vanilla, schedule)
    dilated = _bind(dilated, schedule)
    vanilla_tiles = _vanilla_plan(cfg, vanilla, z_T)
    trajectory = TrajectoryRecord(config=cfg, seed=seed, schedule_id=schedule.schedule_id) if record else None

    z = z_T
    T = schedule.num_steps
    for t in tqdm(range(T, 0, -1), desc=cfg.mode.value, disable=not progress):
        branch = choose(t, cfg)
        if branch == NDCFGPP:
            out = ndcfgpp_step(z, t, t - 1, vanilla, dilated, cond, cfg.scale, schedule, vanilla_tiles)
        elif branch == CFGPP:
            out = cfgpp_step(z, t, t - 1, dilated, cond, cfg.scale, schedule)
        elif branch == NDCFG:
            out = ndcfg_step(z, t, t - 1, vanilla, dilated, cond, cfg.scale, schedule, vanilla_tiles)
        else:
            out = cfg_step(z, t, t - 1, dilated, cond, cfg.scale, schedule)

        if callback is not None:
            callback(t, out)
        if trajectory is not None:
            step_number = T - t + 1
            keep = step_number % cfg.preview_every == 0
            preview = None
            if keep:
                preview = out.x0_pred.clone() if codec is None else _decode(codec, out.x0_pred, plan)
            trajectory.entries.append(TrajectoryEntry(
                t=t,
                branch=branch,
                residual_mean_abs=float(out.residual.abs().mean()),
                direction_is_vanilla=torch.equal(out.eps_direction, out.eps_uncond_vanilla),
                residual=out.residual.clone() if keep else None,
                preview=preview,
            ))
        logger.debug(f"Step t={t} ({branch})")
        z = out.z_prev

    if trajectory is not None:
        counts = ", ".join(f"{n} {b}" for b, n in trajectory.branch_counts().items())
        logger.info(f"✅ Reverse diffusion finished: {counts}")
    return z, trajectory


def _decode(codec: LatentCodec, latent: torch.Tensor, plan: Optional[TilePlan], one_pass: bool = False) -> torch.Tensor:
    if plan is None or tuple(latent.shape[:2]) != plan.latent_canvas_size:
        return codec.decode(latent)
    return decode_canvas(codec, latent, plan, one_pass)


def edit_latent(
    z_T: torch.Tensor,
    cond: Conditioning,
    cfg: GuidanceConfig,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    schedule: NoiseSchedule,
    record: bool = False,
    codec: Optional[LatentCodec] = None,
    plan: Optional[TilePlan] = None,
    callback: Optional[StepCallback] = None,
    progress: bool = False,
    seed: int = 0,
) -> Tuple[torch.Tensor, Optional[TrajectoryRecord]]:
    """
    Tau-switched NDCFG++ / CFG++ reverse diffusion, returning z_0 undecoded.

    For t = T..1 the step is NDCFG++ when t <= tau (t > tau with
    invert_switch), CFG++ otherwise; mode CFGPP runs CFG++ throughout.

    Raises:
        ModeMismatch: cfg carries an omega mode
        InvalidRange: tau > T
    """
    if not cfg.mode.is_lambda_mode:
        raise ModeMismatch(f"{cfg.mode.value} is an omega mode; use the dilated-CFG sampler")
    return _run(z_T, cond, cfg, vanilla, dilated, schedule, edit_branch, record, codec, plan, callback, progress, seed)


def edit(
    inv: InvertedLatent,
    cond: Conditioning,
    cfg: GuidanceConfig,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    record: bool = False,
    one_pass: bool = False,
    callback: Optional[StepCallback] = None,
    progress: bool = False,
) -> Tuple[torch.Tensor, Optional[TrajectoryRecord]]:
    """
    Edit an inverted image toward `cond` and decode it.

    Returns:
        (H, W, 3) edited pixels and the trajectory when record is set
    """
    z_0, trajectory = edit_latent(
        inv.z_T_star, cond, cfg, vanilla, dilated, schedule,
        record=record, codec=codec, plan=inv.plan, callback=callback, progress=progress, seed=inv.seed,
    )
    return decode_canvas(codec, z_0, inv.plan, one_pass), trajectory


def scalecrafter_latent(
    z_T: torch.Tensor,
    cond: Conditioning,
    cfg: GuidanceConfig,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    schedule: NoiseSchedule,
    record: bool = False,
    codec: Optional[LatentCodec] = None,
    plan: Optional[TilePlan] = None,
    callback: Optional[StepCallback] = None,
    progress: bool = False,
    seed: int = 0,
) -> Tuple[torch.Tensor, Optional[TrajectoryRecord]]:
    """NDCFG when t <= tau, dilated CFG otherwise; mode CFG runs dilated CFG throughout."""
    if cfg.mode.is_lambda_mode:
        raise ModeMismatch(f"{cfg.mode.value} is a lambda mode; use the edit sampler")
    return _run(z_T, cond, cfg, vanilla, dilated, schedule, scalecrafter_branch, record, codec, plan, callback, progress, seed)


def scalecrafter_generate(
    z_T: torch.Tensor,
    cond: Conditioning,
    omega: float,
    tau: int,
    vanilla: NoiseEstimator,
    dilated: NoiseEstimator,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    plan: Optional[TilePlan] = None,
    invert_switch: bool = False,
) -> torch.Tensor:
    """Generate pixels from z_T with the dilated-CFG comparison sampler."""
    cfg = GuidanceConfig(mode=GuidanceMode.NDCFG, scale=omega, tau=tau, invert_switch=invert_switch)
    z_0, _ = scalecrafter_latent(z_T, cond, cfg, vanilla, dilated, schedule)
    return _decode(codec, z_0, plan)


def draw_initial_noise(shape: Tuple[int, int, int], seed: int, plan: Optional[TilePlan] = None) -> torch.Tensor:
    """
    Standard-normal z_T of latent shape (h, w, c).

    With a plan each latent tile draws from its own stream (seed, tile), so
    the noise of a tile does not depend on canvas size or tile order.
    """
    if plan is None:
        return torch.randn(shape, generator=make_generator(seed, 0))
    if tuple(shape[:2]) != plan.latent_canvas_size:
        raise ShapeMismatch(f"noise shape {shape} does not match plan canvas {plan.latent_canvas_size}")
    noise = torch.zeros(shape)
    for index, rect in enumerate(plan.latent_rects()):
        tile = torch.randn((rect.height, rect.width, shape[2]), generator=make_generator(seed, index))
        place(noise, tile, rect)
    return noise


def reconstruct_latent(
    inv: InvertedLatent,
    schedule: NoiseSchedule,
    estimator: NoiseEstimator,
    use_cache: bool = False,
) -> torch.Tensor:
    """
    Unconditional DDIM reverse from z_T*, tile by tile.

    With use_cache each step reuses the eps its inversion step used, a pure
    algebraic replay; otherwise eps_null is evaluated fresh.

    Raises:
        MissingCache: use_cache without a stored eps cache
        ModeMismatch: use_cache with a schedule other than the inversion schedule
    """
    if use_cache and not inv.has_cache:
        raise MissingCache("inverted latent was saved without an eps cache")
    if use_cache and schedule.schedule_id != inv.schedule.schedule_id:
        raise ModeMismatch(
            f"eps cache was recorded on schedule {inv.schedule.schedule_id}, replay asked for {schedule.schedule_id}"
        )
    estimator = _bind(estimator, schedule)
    out = torch.zeros_like(inv.z_T_star)
    for index, rect in enumerate(inv.plan.latent_rects()):
        z = crop(inv.z_T_star, rect)
        for t in range(schedule.num_steps, 0, -1):
            eps = inv.eps_cache[index][t - 1] if use_cache else estimator.predict(z, t, NULL)
            z = ddim_step(z, eps, eps, t, t - 1, schedule)
        place(out, z, rect)
    logger.info(f"✅ Reconstructed {inv.plan.num_tiles} tiles ({'cached' if use_cache else 'fresh'} eps)")
    return out


def reconstruct(
    inv: InvertedLatent,
    schedule: NoiseSchedule,
    estimator: NoiseEstimator,
    codec: LatentCodec,
    use_cache: bool = False,
    one_pass: bool = False,
) -> torch.Tensor:
    return decode_canvas(codec, reconstruct_latent(inv, schedule, estimator, use_cache), inv.plan, one_pass)
