"""
Tensor Container
LTSR1 binary format: magic, u32 rank, u32 dims, dtype tag, little-endian row-major float32 payload
"""

import logging
import os
from typing import Union

import numpy as np
import torch

from engine.errors import ContainerFormatError, InputNotFound

logger = logging.getLogger(__name__)

MAGIC = b"LTSR1"
DTYPE_TAG = b"f32"
_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")


def encode_container(tensor: torch.Tensor) -> bytes:
    values = np.ascontiguousarray(tensor.detach().cpu().to(torch.float32).numpy(), dtype=_F32)
    header = MAGIC + np.array([values.ndim], dtype=_U32).tobytes() + np.array(values.shape, dtype=_U32).tobytes()
    return header + DTYPE_TAG + values.tobytes(order="C")


def decode_container(data: bytes) -> torch.Tensor:
    """
    Parse container bytes.

    Raises:
        ContainerFormatError: bad magic, unknown dtype or wrong payload length
    """
    if not data.startswith(MAGIC):
        raise ContainerFormatError("missing LTSR1 magic")
    offset = len(MAGIC)
    if len(data) < offset + 4:
        raise ContainerFormatError("truncated header")
    rank = int(np.frombuffer(data, dtype=_U32, count=1, offset=offset)[0])
    offset += 4
    if len(data) < offset + 4 * rank + len(DTYPE_TAG):
        raise ContainerFormatError(f"truncated header for rank {rank}")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=_U32, count=rank, offset=offset))
    offset += 4 * rank
    tag = data[offset:offset + len(DTYPE_TAG)]
    if tag != DTYPE_TAG:
        raise ContainerFormatError(f"unsupported dtype tag {tag!r}")
    offset += len(DTYPE_TAG)

    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    if len(data) - offset != count * _F32.itemsize:
        raise ContainerFormatError(f"payload is {len(data) - offset} bytes, dims {dims} need {count * _F32.itemsize}")
    values = np.frombuffer(data, dtype=_F32, count=count, offset=offset).reshape(dims)
    return torch.from_numpy(values.astype(np.float32))


def write_container(path: Union[str, os.PathLike], tensor: torch.Tensor) -> None:
    with open(path, "wb") as f:
        f.write(encode_container(tensor))
    logger.debug(f"Wrote container {path} {tuple(tensor.shape)}")


def read_container(path: Union[str, os.PathLike]) -> torch.Tensor:
    if not os.path.exists(path):
        raise InputNotFound(f"container not found: {path}", path=str(path))
    with open(path, "rb") as f:
        return decode_container(f.read())
