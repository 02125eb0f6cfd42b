"""
Latent Codec
Encoder/decoder pair between pixel space ([0, 1] reals) and diffusion latent space
"""

import logging
from abc import ABC, abstractmethod
from typing import List

import torch

from .errors import NotDivisible, ShapeMismatch
from .schema import TilePlan
from .tiling import LATENT, PIXEL, crop, stitch

logger = logging.getLogger(__name__)


class LatentCodec(ABC):
    """
    Encoder E / decoder D with spatial factor f.

    Tensors are (H, W, C). encode maps (H, W, pixel_channels) to
    (H / f, W / f, latent_channels); decode maps back and clamps to [0, 1].
    """

    codec_id: str = "codec"
    spatial_factor: int = 1
    pixel_channels: int = 3
    latent_channels: int = 3

    @abstractmethod
    def _encode(self, image: torch.Tensor) -> torch.Tensor:
        ...

    @abstractmethod
    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        ...

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() != 3 or image.shape[-1] != self.pixel_channels:
            raise ShapeMismatch(
                f"{self.codec_id} expects (H, W, {self.pixel_channels}) images, got {tuple(image.shape)}"
            )
        f = self.spatial_factor
        if image.shape[0] % f or image.shape[1] % f:
            raise NotDivisible(f"image {image.shape[0]}x{image.shape[1]} not divisible by codec factor {f}")
        return self._encode(image)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.dim() != 3 or latent.shape[-1] != self.latent_channels:
            raise ShapeMismatch(
                f"{self.codec_id} expects (h, w, {self.latent_channels}) latents, got {tuple(latent.shape)}"
            )
        return self._decode(latent).clamp(0.0, 1.0)


class IdentityCodec(LatentCodec):
    """f = 1, latent == pixels. Used by the toy and analytic backends."""

    codec_id = "identity"
    spatial_factor = 1

    def __init__(self, channels: int = 3):
        self.pixel_channels = channels
        self.latent_channels = channels

    def _encode(self, image: torch.Tensor) -> torch.Tensor:
        return image.clone()

    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        return latent


def encode(codec: LatentCodec, image: torch.Tensor) -> torch.Tensor:
    return codec.encode(image)


def decode(codec: LatentCodec, latent: torch.Tensor) -> torch.Tensor:
    return codec.decode(latent)


def encode_tiles(codec: LatentCodec, image: torch.Tensor, plan: TilePlan) -> List[torch.Tensor]:
    """Encode each pixel tile independently."""
    return [codec.encode(crop(image, rect)) for rect in plan.rects]


def decode_canvas(codec: LatentCodec, latent: torch.Tensor, plan: TilePlan, one_pass: bool = False) -> torch.Tensor:
    """
    Decode a high-resolution latent, tile by tile unless `one_pass` is set.

    Raises:
        ShapeMismatch: latent does not match the plan's latent canvas
    """
    if tuple(latent.shape[:2]) != plan.latent_canvas_size:
        raise ShapeMismatch(f"latent {tuple(latent.shape)} does not match plan canvas {plan.latent_canvas_size}")
    if one_pass:
        return codec.decode(latent)
    tiles = [codec.decode(crop(latent, rect)) for rect in plan.latent_rects()]
    return stitch(tiles, plan, PIXEL)


def encode_canvas(codec: LatentCodec, image: torch.Tensor, plan: TilePlan) -> torch.Tensor:
    """Tile-wise encode then stitch into the full latent canvas."""
    return stitch(encode_tiles(codec, image, plan), plan, LATENT)
