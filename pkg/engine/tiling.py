"""
Tiling
Crop and stitch maps between a high-resolution canvas and its base-resolution tiles
"""

import logging
from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F

from .errors import CountMismatch, InvalidFactor, InvalidRange, NotDivisible, OutOfBounds, ShapeMismatch
from .schema import TilePlan, TileRect

logger = logging.getLogger(__name__)

PIXEL = "pixel"
LATENT = "latent"


def plan_tiles(H: int, W: int, S_h: int, S_w: int, latent_factor: int = 1) -> TilePlan:
    """
    Partition an H x W canvas into non-overlapping S_h x S_w tiles, row-major.

    Args:
        H, W: Canvas size in pixels
        S_h, S_w: Tile size in pixels (the estimator's training resolution)
        latent_factor: Spatial downsampling of the codec

    Returns:
        TilePlan with (H / S_h) * (W / S_w) rects

    Raises:
        InvalidRange: non-positive sizes or tile larger than canvas
        NotDivisible: canvas is not an exact multiple of the tile
        InvalidFactor: tile is not a multiple of the latent factor
    """
    if min(H, W, S_h, S_w, latent_factor) <= 0:
        raise InvalidRange(f"sizes must be positive: H={H} W={W} S=({S_h}, {S_w}) f={latent_factor}")
    if H < S_h or W < S_w:
        raise InvalidRange(f"tile {S_h}x{S_w} larger than canvas {H}x{W}")
    if H % S_h or W % S_w:
        raise NotDivisible(f"canvas {H}x{W} is not a multiple of tile {S_h}x{S_w}")
    if S_h % latent_factor or S_w % latent_factor:
        raise InvalidFactor(f"tile {S_h}x{S_w} is not a multiple of latent factor {latent_factor}")

    rects = tuple(
        TileRect(row0=row, col0=col, height=S_h, width=S_w)
        for row in range(0, H, S_h)
        for col in range(0, W, S_w)
    )
    return TilePlan(
        canvas_height=H,
        canvas_width=W,
        tile_height=S_h,
        tile_width=S_w,
        rects=rects,
        latent_factor=latent_factor,
    )


def crop(canvas: torch.Tensor, rect: TileRect) -> torch.Tensor:
    """Copy of the rect's region of an (H, W, C) canvas."""
    if canvas.dim() != 3:
        raise ShapeMismatch(f"expected (H, W, C) canvas, got shape {tuple(canvas.shape)}")
    height, width = canvas.shape[0], canvas.shape[1]
    if rect.row0 + rect.height > height or rect.col0 + rect.width > width:
        raise OutOfBounds(f"rect {rect} outside canvas {height}x{width}")
    return canvas[rect.row0:rect.row0 + rect.height, rect.col0:rect.col0 + rect.width].clone()


def crop_all(canvas: torch.Tensor, plan: TilePlan, space: str = PIXEL) -> List[torch.Tensor]:
    rects = plan.rects if space == PIXEL else plan.latent_rects()
    return [crop(canvas, rect) for rect in rects]


def stitch(tiles: Sequence[torch.Tensor], plan: TilePlan, space: str = PIXEL) -> torch.Tensor:
    """
    Assemble tiles into a canvas in the plan's row-major order.

    Args:
        tiles: One (h, w, C) tensor per plan rect
        plan: Tile plan the tiles came from
        space: "pixel" for H x W output, "latent" for (H / f) x (W / f)

    Raises:
        CountMismatch: wrong number of tiles
        ShapeMismatch: a tile has the wrong size or channel count
    """
    if len(tiles) != plan.num_tiles:
        raise CountMismatch(f"expected {plan.num_tiles} tiles, got {len(tiles)}")
    if space == PIXEL:
        rects = list(plan.rects)
        height, width = plan.canvas_height, plan.canvas_width
    elif space == LATENT:
        rects = plan.latent_rects()
        height, width = plan.latent_canvas_size
    else:
        raise InvalidRange(f"unknown space: {space}")

    first = tiles[0]
    out = torch.zeros((height, width, first.shape[-1]), dtype=first.dtype, device=first.device)
    for tile, rect in zip(tiles, rects):
        if tuple(tile.shape) != (rect.height, rect.width, first.shape[-1]):
            raise ShapeMismatch(
                f"tile shape {tuple(tile.shape)} does not match rect {rect.height}x{rect.width}x{first.shape[-1]}"
            )
        out[rect.row0:rect.row0 + rect.height, rect.col0:rect.col0 + rect.width] = tile
    return out


def place(canvas: torch.Tensor, tile: torch.Tensor, rect: TileRect) -> None:
    """Write one tile into a preallocated canvas in place."""
    if tuple(tile.shape[:2]) != (rect.height, rect.width):
        raise ShapeMismatch(f"tile shape {tuple(tile.shape)} does not match rect {rect.height}x{rect.width}")
    if rect.row0 + rect.height > canvas.shape[0] or rect.col0 + rect.width > canvas.shape[1]:
        raise OutOfBounds(f"rect {rect} outside canvas {canvas.shape[0]}x{canvas.shape[1]}")
    canvas[rect.row0:rect.row0 + rect.height, rect.col0:rect.col0 + rect.width] = tile


def pad_to_multiple(image: torch.Tensor, S_h: int, S_w: int) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """
    Reflect-pad the bottom and right edges so the canvas divides into S_h x S_w tiles.

    Returns:
        Padded (H', W', C) image and the original (H, W)
    """
    height, width = image.shape[0], image.shape[1]
    pad_h = (-height) % S_h
    pad_w = (-width) % S_w
    if pad_h == 0 and pad_w == 0:
        return image.clone(), (height, width)
    if pad_h >= height or pad_w >= width:
        raise InvalidRange(f"reflect padding of {pad_h}x{pad_w} needs a canvas larger than {height}x{width}")

    chw = image.permute(2, 0, 1).unsqueeze(0)
    padded = F.pad(chw, (0, pad_w, 0, pad_h), mode="reflect")
    logger.info(f"Padded canvas {height}x{width} -> {height + pad_h}x{width + pad_w}")
    return padded.squeeze(0).permute(1, 2, 0).contiguous(), (height, width)


def crop_to_canvas(image: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    """Undo pad_to_multiple."""
    height, width = size
    return image[:height, :width].clone()
