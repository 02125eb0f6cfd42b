"""
Toy Convolutional Denoiser
Small class-conditional noise estimator whose convolutions can be re-dilated per call
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from .corpus import TextureWorld
from .errors import DivergedTraining, InvalidRange, UnknownConditioning
from .estimators import Conditioning, ConditioningKind, NoiseEstimator
from .schedule import NoiseSchedule
from .schema import DilationProfile, default_profile
from .seeding import derive_seed, make_generator

logger = logging.getLogger(__name__)


class ReDilatableConv2d(nn.Conv2d):
    """Stride-1 'same' convolution whose dilation rate is chosen at call time."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__(in_channels, out_channels, kernel_size, padding=kernel_size // 2)

    def forward(self, x: torch.Tensor, rate: int = 1) -> torch.Tensor:
        padding = rate * (self.kernel_size[0] // 2)
        return F.conv2d(x, self.weight, self.bias, stride=1, padding=padding, dilation=rate)


def timestep_embedding(timesteps: torch.Tensor, dim: int, max_period: int = 10000) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (N,) -> (N, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = timesteps.float()[:, None] * freqs[None]
    embedding = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        embedding = torch.cat([embedding, torch.zeros_like(embedding[:, :1])], dim=-1)
    return embedding


class ResBlock(nn.Module):
    def __init__(self, width: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, width)
        self.conv1 = ReDilatableConv2d(width, width)
        self.emb_proj = nn.Linear(emb_dim, width)
        self.norm2 = nn.GroupNorm(groups, width)
        self.conv2 = ReDilatableConv2d(width, width)

    def forward(self, x: torch.Tensor, emb: torch.Tensor, rate1: int, rate2: int) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)), rate1)
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)), rate2)
        return x + h


class ToyDenoiser(nn.Module):
    """
    Resolution-free conv net eps(x, t, label); no down/upsampling, so every
    convolution is stride 1. Label `num_classes` is the learned null class.
    """

    def __init__(self, channels: int = 3, width: int = 32, num_classes: int = 2, num_blocks: int = 2, emb_dim: int = 64):
        super().__init__()
        self.config = {
            "channels": channels,
            "width": width,
            "num_classes": num_classes,
            "num_blocks": num_blocks,
            "emb_dim": emb_dim,
        }
        groups = 8 if width % 8 == 0 else 1
        self.emb_dim = emb_dim
        self.num_classes = num_classes
        self.time_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.class_emb = nn.Embedding(num_classes + 1, emb_dim)
        self.conv_in = ReDilatableConv2d(channels, width)
        self.blocks = nn.ModuleList([ResBlock(width, emb_dim, groups) for _ in range(num_blocks)])
        self.norm_out = nn.GroupNorm(groups, width)
        self.conv_out = ReDilatableConv2d(width, channels)

    @property
    def null_label(self) -> int:
        return self.num_classes

    def conv_layer_names(self) -> List[str]:
        return [name for name, module in self.named_modules() if isinstance(module, ReDilatableConv2d)]

    def forward(
        self,
        x: torch.Tensor,
        timesteps: torch.Tensor,
        labels: torch.Tensor,
        rates: Optional[Dict[str, int]] = None,
    ) -> torch.Tensor:
        rates = rates or {}
        emb = self.time_mlp(timestep_embedding(timesteps, self.emb_dim)) + self.class_emb(labels)
        h = self.conv_in(x, rates.get("conv_in", 1))
        for i, block in enumerate(self.blocks):
            h = block(h, emb, rates.get(f"blocks.{i}.conv1", 1), rates.get(f"blocks.{i}.conv2", 1))
        return self.conv_out(F.silu(self.norm_out(h)), rates.get("conv_out", 1))


class ToyConvEstimator(NoiseEstimator):
    """NoiseEstimator over a ToyDenoiser; dilated views share the module's weights."""

    supports_dilation = True

    def __init__(
        self,
        model: ToyDenoiser,
        schedule: NoiseSchedule,
        base_size: Tuple[int, int],
        class_names: Sequence[str] = (),
        profile: Optional[DilationProfile] = None,
        dilation_factor: int = 1,
        backend_id: str = "toy",
    ):
        super().__init__(schedule, base_size[0], base_size[1], model.config["channels"])
        self.model = model.eval()
        self.class_names = tuple(class_names)
        self.profile = profile
        self.dilation_factor = dilation_factor
        self.backend_id = backend_id if dilation_factor == 1 else f"{backend_id}@x{dilation_factor}"
        self._base_id = backend_id
        self._layer_names = model.conv_layer_names()

    def with_schedule(self, schedule: NoiseSchedule) -> "ToyConvEstimator":
        return ToyConvEstimator(
            self.model, schedule, (self.base_height, self.base_width), self.class_names,
            self.profile, self.dilation_factor, self._base_id,
        )

    def with_base_size(self, base_size: Tuple[int, int]) -> "ToyConvEstimator":
        return ToyConvEstimator(
            self.model, self.schedule, base_size, self.class_names,
            self.profile, self.dilation_factor, self._base_id,
        )

    def redilate(self, factor: int, profile: Optional[DilationProfile] = None) -> "ToyConvEstimator":
        return ToyConvEstimator(
            self.model, self.schedule, (self.base_height, self.base_width), self.class_names,
            profile or default_profile(factor), factor, self._base_id,
        )

    def label_index(self, cond: Conditioning) -> int:
        if cond.is_null:
            return self.model.null_label
        if cond.kind == ConditioningKind.CLASS_LABEL:
            label = int(cond.payload)
            if not 0 <= label < self.model.num_classes:
                raise UnknownConditioning(f"class {label} not in [0, {self.model.num_classes})")
            return label
        names = [name.lower() for name in self.class_names]
        if cond.text is not None and cond.text.lower() in names:
            return names.index(cond.text.lower())
        raise UnknownConditioning(f"{self.backend_id} cannot interpret {cond.describe()}")

    def rates_at(self, t: int) -> Optional[Dict[str, int]]:
        if self.profile is None:
            return None
        return self.profile.resolve_rates(self._layer_names, self.schedule.model_timestep(t))

    def _predict(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
        x = z_t.permute(2, 0, 1).unsqueeze(0).to(torch.float32)
        timesteps = torch.tensor([self.schedule.model_timestep(t)], dtype=torch.long)
        labels = torch.tensor([self.label_index(cond)], dtype=torch.long)
        with torch.no_grad():
            out = self.model(x, timesteps, labels, self.rates_at(t))
        return out[0].permute(1, 2, 0).to(z_t.dtype).contiguous()


def build_toy_estimator(
    schedule: NoiseSchedule,
    base_size: Tuple[int, int],
    seed: int,
    world: Optional[TextureWorld] = None,
    width: int = 32,
    num_blocks: int = 2,
) -> ToyConvEstimator:
    """Freshly initialized estimator; the same seed always yields the same weights."""
    world = world or TextureWorld()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, 0) >> 1)
        model = ToyDenoiser(channels=world.channels, width=width, num_classes=world.num_classes, num_blocks=num_blocks)
    return ToyConvEstimator(model, schedule, base_size, world.class_names)


def denoising_loss(
    model: ToyDenoiser,
    images: torch.Tensor,
    labels: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    p_uncond: float = 0.0,
) -> torch.Tensor:
    """
    Noise-prediction MSE on z_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.

    images are (N, H, W, C); t is drawn uniformly from sampler indices 1..T and
    labels are swapped for the null class with probability p_uncond.
    """
    n = images.shape[0]
    x0 = images.permute(0, 3, 1, 2).to(torch.float32)
    t = torch.randint(1, schedule.num_steps + 1, (n,), generator=generator)
    noise = torch.randn(x0.shape, generator=generator)
    alpha_bar = schedule.alpha_bars[t - 1].to(torch.float32)[:, None, None, None]
    z_t = alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * noise
    if p_uncond > 0:
        drop = torch.rand(n, generator=generator) < p_uncond
        labels = torch.where(drop, torch.full_like(labels, model.null_label), labels)
    model_t = torch.tensor([schedule.model_timestep(int(i)) for i in t], dtype=torch.long)
    return F.mse_loss(model(z_t, model_t, labels), noise)


def train_toy(
    world: TextureWorld,
    schedule: NoiseSchedule,
    epochs: int,
    seed: int,
    num_images: int = 512,
    batch_size: int = 32,
    learning_rate: float = 2e-3,
    p_uncond: float = 0.1,
    width: int = 32,
    num_blocks: int = 2,
    progress: bool = True,
) -> Tuple[ToyConvEstimator, List[float]]:
    """
    Train a ToyDenoiser on a procedural texture corpus.

    Args:
        world: Corpus recipe (classes, base resolution)
        schedule: Training schedule; the estimator is returned bound to it
        epochs: Passes over the corpus; 0 returns the initialized network
        seed: Run seed; fixes init, corpus, batching and noise

    Returns:
        Trained estimator and per-epoch mean losses

    Raises:
        DivergedTraining: a batch loss became non-finite
    """
    if epochs < 0:
        raise InvalidRange(f"epochs must be >= 0, got {epochs}")
    estimator = build_toy_estimator(schedule, (world.base_size, world.base_size), seed, world, width, num_blocks)
    model = estimator.model
    if epochs == 0:
        return estimator, []

    images, labels = world.generate(num_images, make_generator(seed, 1))
    generator = make_generator(seed, 2)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    history: List[float] = []

    model.train()
    for epoch in tqdm(range(epochs), desc="train", disable=not progress):
        order = torch.randperm(num_images, generator=generator)
        losses = []
        for start in range(0, num_images, batch_size):
            index = order[start:start + batch_size]
            loss = denoising_loss(model, images[index], labels[index], schedule, generator, p_uncond)
            if not torch.isfinite(loss):
                model.eval()
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        history.append(sum(losses) / len(losses))
        logger.info(f"Epoch {epoch + 1}/{epochs}, loss: {history[-1]:.4f}")
    model.eval()

    logger.info(f"✅ Trained toy denoiser for {epochs} epochs")
    return estimator, history
