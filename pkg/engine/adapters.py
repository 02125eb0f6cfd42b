"""
Pretrained Adapters
Wraps a Stable-Diffusion-style UNet, text encoder and autoencoder behind the estimator and codec contracts
"""

import logging
import os
import threading
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn as nn

from .codec import LatentCodec
from .errors import ModelUnavailable, UnknownConditioning
from .estimators import Conditioning, ConditioningKind, NoiseEstimator
from .schedule import NoiseSchedule, build_schedule
from .schema import DilationProfile, Spacing, default_profile

logger = logging.getLogger(__name__)

SD_SCALING_FACTOR = 0.18215
SD_LATENT_FACTOR = 8

# One pipeline per (model, cache, offline) so estimator and codec share weights
_pipelines: Dict[Tuple[str, Optional[str], bool], Any] = {}
_dilation_lock = threading.Lock()


def load_pipeline(model_id: str, cache_dir: Optional[str] = None, offline: Optional[bool] = None) -> Any:
    """
    Load (or reuse) a diffusers StableDiffusionPipeline.

    Raises:
        ModelUnavailable: diffusers missing or the model cannot be fetched
    """
    cache_dir = cache_dir or os.getenv("HIRES_EDIT_CACHE_DIR") or None
    if offline is None:
        offline = os.getenv("HIRES_EDIT_OFFLINE", "").lower() in ("1", "true", "yes")
    key = (model_id, cache_dir, offline)
    if key in _pipelines:
        return _pipelines[key]

    try:
        from diffusers import StableDiffusionPipeline

        pipeline = StableDiffusionPipeline.from_pretrained(
            model_id,
            cache_dir=cache_dir,
            local_files_only=offline,
            safety_checker=None,
        )
    except Exception as e:
        logger.error(f"❌ Failed to load pretrained model {model_id}: {e}")
        raise ModelUnavailable(f"cannot load '{model_id}': {e}", model=model_id) from e

    pipeline.unet.eval()
    pipeline.vae.eval()
    pipeline.text_encoder.eval()
    _pipelines[key] = pipeline
    logger.info(f"✅ Loaded pretrained model: {model_id}")
    return pipeline


def pipeline_schedule(pipeline: Any, num_sample_steps: int) -> NoiseSchedule:
    """Sampling schedule matching the pipeline's training betas."""
    config = pipeline.scheduler.config
    spacing = Spacing.QUADRATIC if config.get("beta_schedule") == "scaled_linear" else Spacing.LINEAR
    return build_schedule(
        int(config.get("num_train_timesteps", 1000)),
        num_sample_steps,
        float(config.get("beta_start", 0.00085)),
        float(config.get("beta_end", 0.012)),
        spacing,
    )


def dilatable_convs(unet: nn.Module) -> List[Tuple[str, nn.Conv2d]]:
    """Spatial (k > 1, stride 1) convolutions; these are the ones re-dilation touches."""
    return [
        (name, module)
        for name, module in unet.named_modules()
        if isinstance(module, nn.Conv2d) and module.kernel_size[0] > 1 and module.stride == (1, 1)
    ]


@contextmanager
def dilated(convs: List[Tuple[str, nn.Conv2d]], rates: Dict[str, int]) -> Iterator[None]:
    """Temporarily set dilation/padding of the named convolutions."""
    saved = []
    with _dilation_lock:
        for name, conv in convs:
            rate = rates.get(name, 1)
            if rate == 1:
                continue
            saved.append((conv, conv.dilation, conv.padding))
            conv.dilation = (rate, rate)
            conv.padding = (rate * (conv.kernel_size[0] // 2), rate * (conv.kernel_size[1] // 2))
        try:
            yield
        finally:
            for conv, dilation, padding in saved:
                conv.dilation = dilation
                conv.padding = padding


class PretrainedUNetEstimator(NoiseEstimator):
    """
    UNet2DConditionModel as eps_theta. Prompts are encoded with the pipeline's
    own text encoder; the null condition is the empty-prompt embedding.
    """

    strict_size = True
    supports_dilation = True

    def __init__(
        self,
        pipeline: Any,
        model_id: str,
        schedule: NoiseSchedule,
        profile: Optional[DilationProfile] = None,
        dilation_factor: int = 1,
    ):
        sample_size = int(pipeline.unet.config.sample_size)
        super().__init__(schedule, sample_size, sample_size, int(pipeline.unet.config.in_channels))
        self.pipeline = pipeline
        self.model_id = model_id
        self.profile = profile
        self.dilation_factor = dilation_factor
        self.backend_id = f"diffusers:{model_id}" + (f"@x{dilation_factor}" if dilation_factor > 1 else "")
        self._convs = dilatable_convs(pipeline.unet)
        self._embeddings: Dict[str, torch.Tensor] = {}

    def with_schedule(self, schedule: NoiseSchedule) -> "PretrainedUNetEstimator":
        return PretrainedUNetEstimator(self.pipeline, self.model_id, schedule, self.profile, self.dilation_factor)

    def redilate(self, factor: int, profile: Optional[DilationProfile] = None) -> "PretrainedUNetEstimator":
        return PretrainedUNetEstimator(
            self.pipeline, self.model_id, self.schedule, profile or default_profile(factor), factor
        )

    def layer_names(self) -> List[str]:
        return [name for name, _ in self._convs]

    def embed(self, cond: Conditioning) -> torch.Tensor:
        if cond.kind == ConditioningKind.CLASS_LABEL:
            raise UnknownConditioning(f"{self.backend_id} takes prompts, not class labels")
        if cond.kind == ConditioningKind.EMBEDDING and isinstance(cond.payload, torch.Tensor):
            return cond.payload
        text = "" if cond.is_null else (cond.text or "")
        if text not in self._embeddings:
            tokenizer = self.pipeline.tokenizer
            tokens = tokenizer(
                [text],
                padding="max_length",
                max_length=tokenizer.model_max_length,
                truncation=True,
                return_tensors="pt",
            )
            with torch.no_grad():
                self._embeddings[text] = self.pipeline.text_encoder(tokens.input_ids)[0]
        return self._embeddings[text]

    def _predict(self, z_t: torch.Tensor, t: int, cond: Conditioning) -> torch.Tensor:
        model_t = self.schedule.model_timestep(t)
        # scheduler and UNet count training steps from 0
        timestep = torch.tensor([model_t - 1], dtype=torch.long)
        x = z_t.permute(2, 0, 1).unsqueeze(0).to(self.pipeline.unet.dtype)
        rates = self.profile.resolve_rates(self.layer_names(), model_t) if self.profile else {}
        with torch.no_grad(), dilated(self._convs, rates):
            out = self.pipeline.unet(x, timestep, encoder_hidden_states=self.embed(cond)).sample
        return out[0].permute(1, 2, 0).to(z_t.dtype).contiguous()


class AutoencoderCodec(LatentCodec):
    """AutoencoderKL codec: f = 8, 4 latent channels, posterior mean on encode."""

    spatial_factor = SD_LATENT_FACTOR
    pixel_channels = 3
    latent_channels = 4

    def __init__(self, vae: Any, model_id: str, scaling_factor: Optional[float] = None):
        self.vae = vae
        self.codec_id = f"diffusers-vae:{model_id}"
        self.scaling_factor = scaling_factor or float(getattr(vae.config, "scaling_factor", SD_SCALING_FACTOR))
        self.latent_channels = int(getattr(vae.config, "latent_channels", 4))

    def _encode(self, image: torch.Tensor) -> torch.Tensor:
        x = (image.permute(2, 0, 1).unsqueeze(0) * 2.0 - 1.0).to(self.vae.dtype)
        with torch.no_grad():
            z = self.vae.encode(x).latent_dist.mean * self.scaling_factor
        return z[0].permute(1, 2, 0).to(torch.float32).contiguous()

    def _decode(self, latent: torch.Tensor) -> torch.Tensor:
        z = (latent.permute(2, 0, 1).unsqueeze(0) / self.scaling_factor).to(self.vae.dtype)
        with torch.no_grad():
            x = self.vae.decode(z).sample
        return ((x[0].permute(1, 2, 0).to(torch.float32) + 1.0) / 2.0).contiguous()


def pretrained_adapter(model_locator: str, num_sample_steps: int = 50) -> PretrainedUNetEstimator:
    """
    Estimator for a diffusers model id or local path.

    Args:
        model_locator: "diffusers:<model-id>" or a bare model id
        num_sample_steps: T of the bound sampling schedule

    Raises:
        ModelUnavailable: the model cannot be loaded
    """
    model_id = model_locator.split(":", 1)[1] if model_locator.startswith("diffusers:") else model_locator
    pipeline = load_pipeline(model_id)
    return PretrainedUNetEstimator(pipeline, model_id, pipeline_schedule(pipeline, num_sample_steps))


def pretrained_codec(model_locator: str) -> AutoencoderCodec:
    model_id = model_locator.split(":", 1)[1] if model_locator.startswith("diffusers:") else model_locator
    return AutoencoderCodec(load_pipeline(model_id).vae, model_id)
