"""
Demo Corpus
Procedural texture worlds for the toy denoiser and Gaussian-mixture presets for the analytic backend
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import torch

from .analytic import GaussianMixtureWorld, from_blocks
from .errors import InvalidRange, UnknownBackend

logger = logging.getLogger(__name__)

STRIPES = 0
CHECKERS = 1


@dataclass(frozen=True)
class TextureWorld:
    """
    Class-conditional procedural textures.

    Class 0 draws axis-aligned stripes, class 1 checkers; each sample picks a
    period, phase and two colors from the generator.
    """
    base_size: int = 32
    channels: int = 3
    min_period: int = 4
    max_period: int = 12
    class_names: Tuple[str, ...] = ("stripes", "checkers")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def generate(self, n: int, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
        """n base-size images (n, S, S, C) in [0, 1] and their labels."""
        labels = torch.randint(0, self.num_classes, (n,), generator=generator)
        images = torch.stack([
            self.render(int(label), self.base_size, self.base_size, generator) for label in labels
        ])
        return images, labels

    def render(self, label: int, height: int, width: int, generator: torch.Generator) -> torch.Tensor:
        period = int(torch.randint(self.min_period, self.max_period + 1, (1,), generator=generator))
        phase = int(torch.randint(0, period, (1,), generator=generator))
        vertical = bool(torch.randint(0, 2, (1,), generator=generator))
        colors = torch.rand(2, self.channels, generator=generator)
        return render_texture(label, height, width, period, phase, colors, vertical)


def render_texture(
    label: int,
    height: int,
    width: int,
    period: int,
    phase: int,
    colors: torch.Tensor,
    vertical: bool = False,
) -> torch.Tensor:
    """
    Rasterize one texture at any resolution.

    Args:
        label: STRIPES or CHECKERS
        period: Stripe / checker cell size in pixels (full cycle is 2 * period)
        colors: (2, C) foreground and background colors in [0, 1]

    Returns:
        (height, width, C) float32 image
    """
    if period <= 0:
        raise InvalidRange(f"period must be positive, got {period}")
    rows = torch.arange(height)[:, None]
    cols = torch.arange(width)[None, :]
    row_band = ((rows + phase) // period) % 2
    col_band = ((cols + phase) // period) % 2
    if label == STRIPES:
        mask = (col_band if vertical else row_band).expand(height, width)
    elif label == CHECKERS:
        mask = (row_band + col_band) % 2
    else:
        raise InvalidRange(f"unknown texture class {label}")
    mask = mask.to(torch.float32)[..., None]
    return (mask * colors[0] + (1.0 - mask) * colors[1]).to(torch.float32)


def texture_canvas(world: TextureWorld, label: int, height: int, width: int, generator: torch.Generator) -> torch.Tensor:
    """One texture spanning a whole high-resolution canvas."""
    return world.render(label, height, width, generator)


def two_tone_world() -> GaussianMixtureWorld:
    """Per-pixel RGB world with a warm and a cool class."""
    return GaussianMixtureWorld.diagonal(
        dims=(1, 1, 3),
        means=[[0.75, 0.40, 0.25], [0.25, 0.45, 0.75]],
        variances=[[0.01, 0.01, 0.01], [0.01, 0.01, 0.01]],
        class_names=("warm", "cool"),
        name="two-tone",
    )


def gray_levels_world() -> GaussianMixtureWorld:
    """Scalar world with dark and light classes; the scalar oracle world for tests."""
    return GaussianMixtureWorld.diagonal(
        dims=(1, 1, 1),
        means=[[0.25], [0.75]],
        variances=[[0.02], [0.02]],
        class_names=("dark", "light"),
        name="gray-levels",
    )


def patch_world(size: int = 2) -> GaussianMixtureWorld:
    """Correlated size x size grayscale patches; exercises full covariances."""
    d = size * size
    coords = torch.stack(torch.meshgrid(torch.arange(size), torch.arange(size), indexing="ij"), -1).reshape(d, 2)
    dist = torch.cdist(coords.double(), coords.double())
    smooth = 0.02 * torch.exp(-dist) + 1e-3 * torch.eye(d, dtype=torch.float64)
    rough = 0.02 * torch.eye(d, dtype=torch.float64)
    means = torch.stack([torch.full((d,), 0.3, dtype=torch.float64), torch.full((d,), 0.7, dtype=torch.float64)])
    return GaussianMixtureWorld(
        dims=(size, size, 1),
        means=means,
        covariances=torch.stack([smooth, rough]),
        class_priors=torch.tensor([0.5, 0.5], dtype=torch.float64),
        class_names=("smooth", "rough"),
        name=f"patch-{size}",
    )


ANALYTIC_PRESETS: Dict[str, Callable[[], GaussianMixtureWorld]] = {
    "two-tone": two_tone_world,
    "gray-levels": gray_levels_world,
    "patch-2": patch_world,
}


def analytic_preset(name: str) -> GaussianMixtureWorld:
    if name not in ANALYTIC_PRESETS:
        raise UnknownBackend(f"unknown analytic world '{name}', available: {sorted(ANALYTIC_PRESETS)}")
    return ANALYTIC_PRESETS[name]()


def world_canvas(
    world: GaussianMixtureWorld,
    height: int,
    width: int,
    generator: torch.Generator,
    label: Optional[int] = None,
) -> torch.Tensor:
    """A canvas of independent world blocks, all of one class when label is given."""
    h, w, _ = world.dims
    if height % h or width % w:
        raise InvalidRange(f"canvas {height}x{width} is not a grid of {h}x{w} blocks")
    if label is None:
        label = int(torch.multinomial(world.class_priors, 1, generator=generator))
    rows, _ = world.sample((height // h) * (width // w), generator, label=label)
    return from_blocks(rows, world.dims, height, width).to(torch.float32)
