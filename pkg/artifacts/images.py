"""
Image IO
8-bit RGB PNG load/save for [0, 1] (H, W, C) tensors
"""

import logging
import os

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from engine.errors import InputNotFound, ShapeMismatch

logger = logging.getLogger(__name__)


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """Quantize [0, 1] reals to 0..255 with round-half-up; 1-channel images become gray RGB."""
    if image.dim() != 3 or image.shape[-1] not in (1, 3):
        raise ShapeMismatch(f"expected (H, W, 1|3) image, got {tuple(image.shape)}")
    values = image.detach().cpu().to(torch.float64).clamp(0.0, 1.0)
    quantized = torch.floor(values * 255.0 + 0.5).to(torch.uint8)
    if quantized.shape[-1] == 1:
        quantized = quantized.expand(-1, -1, 3)
    return quantized.contiguous().numpy()


def save_image(path: str, image: torch.Tensor) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")
    logger.debug(f"Saved image {path} {image.shape[0]}x{image.shape[1]}")


def load_image(path: str, channels: int = 3) -> torch.Tensor:
    """
    Read any PIL-readable image as (H, W, channels) float32 in [0, 1].

    channels=1 keeps the red channel, the inverse of the gray expansion in to_uint8.

    Raises:
        InputNotFound: missing or undecodable file
    """
    if not os.path.exists(path):
        raise InputNotFound(f"input image not found: {path}", path=path)
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise InputNotFound(f"cannot decode image {path}: {e}", path=path) from e
    image = torch.from_numpy(array.astype(np.float32) / 255.0)
    return image[..., :1].clone() if channels == 1 else image
