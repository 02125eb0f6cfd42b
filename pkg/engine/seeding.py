"""
Seeding
One 64-bit run seed, mixed with (tile, step, ...) indices into independent random streams
"""

import torch

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """SplitMix64 output function: golden-ratio increment then two xor-shift-multiply rounds."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *indices: int) -> int:
    """
    Mix a run seed with stream indices.

    state_0 = splitmix64(seed); state_k = splitmix64(state_{k-1} xor index_k).
    The result depends only on (seed, indices), never on execution order.
    """
    state = splitmix64(seed & MASK64)
    for index in indices:
        state = splitmix64(state ^ (index & MASK64))
    return state


def make_generator(seed: int, *indices: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *indices) >> 1)
    return generator
