"""
Tiled DDIM Inversion
Null-conditioned per-tile DDIM inversion assembled into one high-resolution inverted latent
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from .codec import LatentCodec
from .errors import CountMismatch, ShapeMismatch
from .estimators import NULL, NoiseEstimator
from .schedule import NoiseSchedule, ddim_inverse_step
from .schema import TilePlan
from .tiling import crop, place

logger = logging.getLogger(__name__)


@dataclass
class InvertedLatent:
    """
    Assembled z_T* for a tiled canvas.

    eps_cache[i][k] is the eps used by tile i on the inversion step k -> k+1,
    so each tile holds exactly T entries. z_0 is the encoded source canvas.
    """
    z_T_star: torch.Tensor
    plan: TilePlan
    schedule: NoiseSchedule
    eps_cache: Optional[List[List[torch.Tensor]]] = None
    seed: int = 0
    z_0: Optional[torch.Tensor] = None
    backend_id: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.z_T_star.shape[:2]) != self.plan.latent_canvas_size:
            raise ShapeMismatch(
                f"inverted latent {tuple(self.z_T_star.shape)} does not match plan canvas {self.plan.latent_canvas_size}"
            )
        if self.eps_cache is not None:
            if len(self.eps_cache) != self.plan.num_tiles:
                raise CountMismatch(f"eps cache has {len(self.eps_cache)} tiles, plan has {self.plan.num_tiles}")
            for entries in self.eps_cache:
                if len(entries) != self.schedule.num_steps:
                    raise CountMismatch(f"eps cache tile has {len(entries)} steps, schedule has {self.schedule.num_steps}")

    @property
    def has_cache(self) -> bool:
        return self.eps_cache is not None


def invert_single_tile(
    z_0: torch.Tensor,
    schedule: NoiseSchedule,
    estimator: NoiseEstimator,
    cache_eps: bool = False,
) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """
    Run the DDIM inversion recursion z_0 -> z_T on one tile latent.

    Step t -> t+1 evaluates eps_null(z_t) at sampler index t+1, the noise
    level being entered.

    Returns:
        z_T and the eps sequence in step order (empty unless cache_eps)
    """
    z = z_0
    eps_list: List[torch.Tensor] = []
    for t in range(schedule.num_steps):
        eps = estimator.predict(z, t + 1, NULL)
        if cache_eps:
            eps_list.append(eps)
        z = ddim_inverse_step(z, eps, t, t + 1, schedule)
    return z, eps_list


def _check_tile_contract(estimator: NoiseEstimator, plan: TilePlan) -> None:
    tile_h, tile_w = plan.tile_latent_size
    if estimator.strict_size:
        if (tile_h, tile_w) != (estimator.base_height, estimator.base_width):
            raise ShapeMismatch(
                f"{estimator.backend_id} runs at {estimator.base_height}x{estimator.base_width}, "
                f"plan tiles are {tile_h}x{tile_w} latent cells"
            )
    elif tile_h % estimator.base_height or tile_w % estimator.base_width:
        raise ShapeMismatch(
            f"plan tiles {tile_h}x{tile_w} are not a multiple of {estimator.base_height}x{estimator.base_width}"
        )


def tiled_ddim_invert(
    image: torch.Tensor,
    plan: TilePlan,
    schedule: NoiseSchedule,
    estimator: NoiseEstimator,
    codec: LatentCodec,
    cache_eps: bool = False,
    seed: int = 0,
    workers: int = 1,
    order: Optional[Sequence[int]] = None,
    progress: bool = False,
) -> InvertedLatent:
    """
    Invert a high-resolution image tile by tile.

    Each pixel tile is encoded independently, inverted with the null
    condition only and placed at its latent rect.

    Args:
        image: (H, W, 3) pixels in [0, 1] matching the plan canvas
        plan: Tile plan whose tile size is the estimator's base resolution
        schedule: Sampling schedule; the estimator is rebound to it if needed
        estimator: Undilated eps_theta
        codec: Latent codec; its factor must equal the plan's latent factor
        cache_eps: Keep every eps for exact algebraic replay
        seed: Recorded run seed
        workers: Tile-parallel threads; outputs do not depend on it
        order: Tile processing order; outputs do not depend on it

    Raises:
        ShapeMismatch: image or tile sizes disagree with the plan or estimator
    """
    if tuple(image.shape[:2]) != (plan.canvas_height, plan.canvas_width):
        raise ShapeMismatch(
            f"image {tuple(image.shape)} does not match plan canvas {plan.canvas_height}x{plan.canvas_width}"
        )
    if codec.spatial_factor != plan.latent_factor:
        raise ShapeMismatch(f"codec factor {codec.spatial_factor} != plan latent factor {plan.latent_factor}")
    if estimator.schedule is not schedule:
        estimator = estimator.with_schedule(schedule)
    _check_tile_contract(estimator, plan)

    order = list(range(plan.num_tiles)) if order is None else list(order)
    if sorted(order) != list(range(plan.num_tiles)):
        raise CountMismatch(f"tile order must be a permutation of 0..{plan.num_tiles - 1}")

    latent_rects = plan.latent_rects()
    latents: List[Optional[torch.Tensor]] = [None] * plan.num_tiles
    inverted: List[Optional[torch.Tensor]] = [None] * plan.num_tiles
    caches: List[Optional[List[torch.Tensor]]] = [None] * plan.num_tiles

    def run(index: int) -> int:
        z_0 = codec.encode(crop(image, plan.rects[index]))
        z_T, eps_list = invert_single_tile(z_0, schedule, estimator, cache_eps)
        latents[index], inverted[index], caches[index] = z_0, z_T, eps_list
        return index

    bar = tqdm(total=plan.num_tiles, desc="invert", disable=not progress)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for index in pool.map(run, order):
                bar.update(1)
                logger.debug(f"Inverted tile {index}")
    else:
        for index in order:
            run(index)
            bar.update(1)
            logger.debug(f"Inverted tile {index}")
    bar.close()

    channels = inverted[0].shape[-1]
    height, width = plan.latent_canvas_size
    z_T_star = torch.zeros((height, width, channels), dtype=inverted[0].dtype)
    z_0 = torch.zeros_like(z_T_star)
    for index, rect in enumerate(latent_rects):
        place(z_T_star, inverted[index], rect)
        place(z_0, latents[index], rect)

    logger.info(f"✅ Inverted {plan.num_tiles} tiles into a {height}x{width}x{channels} latent")
    return InvertedLatent(
        z_T_star=z_T_star,
        plan=plan,
        schedule=schedule,
        eps_cache=[list(c) for c in caches] if cache_eps else None,
        seed=seed,
        z_0=z_0,
        backend_id=estimator.backend_id,
    )
