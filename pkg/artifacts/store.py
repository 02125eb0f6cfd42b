"""
Artifact Store
On-disk layout for toy weights, inverted latents and recorded trajectories
"""

import json
import logging
import os
from typing import List, Optional

from pydantic import BaseModel

from engine.errors import ContainerFormatError, InputNotFound
from engine.inversion import InvertedLatent
from engine.sampler import TrajectoryEntry, TrajectoryRecord
from engine.schedule import NoiseSchedule, schedule_from_params
from engine.schema import GuidanceConfig, ScheduleParams, TilePlan
from engine.toy_denoiser import ToyConvEstimator, ToyDenoiser

from .container import read_container, write_container

logger = logging.getLogger(__name__)

MODEL_FILE = "model.json"
INDEX_FILE = "index.json"


class ToyModelCard(BaseModel):
    config: dict
    base_size: List[int]
    class_names: List[str] = []
    parameters: List[str] = []
    schedule: Optional[ScheduleParams] = None
    epochs: int = 0
    seed: int = 0


class InvertedHeader(BaseModel):
    plan: TilePlan
    schedule: Optional[ScheduleParams] = None
    betas: Optional[List[float]] = None
    seed: int = 0
    backend_id: str = ""
    has_cache: bool = False
    has_source: bool = False
    metadata: dict = {}


class TrajectoryIndexEntry(BaseModel):
    t: int
    branch: str
    residual_mean_abs: float
    direction_is_vanilla: bool
    residual: Optional[str] = None
    preview: Optional[str] = None


class TrajectoryIndex(BaseModel):
    config: Optional[GuidanceConfig] = None
    seed: int = 0
    schedule_id: str = ""
    entries: List[TrajectoryIndexEntry] = []


def _write_json(path: str, model: BaseModel) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(model.model_dump_json(indent=2))


def _read_json(path: str, model: type) -> BaseModel:
    if not os.path.exists(path):
        raise InputNotFound(f"file not found: {path}", path=path)
    with open(path, "r", encoding="utf-8") as f:
        return model.model_validate(json.load(f))


def save_estimator(
    estimator: ToyConvEstimator,
    directory: str,
    epochs: int = 0,
    seed: int = 0,
) -> None:
    """Write one container per parameter plus the model card."""
    os.makedirs(directory, exist_ok=True)
    state = estimator.model.state_dict()
    for name, tensor in state.items():
        write_container(os.path.join(directory, f"{name}.ltsr"), tensor)
    card = ToyModelCard(
        config=estimator.model.config,
        base_size=[estimator.base_height, estimator.base_width],
        class_names=list(estimator.class_names),
        parameters=list(state.keys()),
        schedule=estimator.schedule.params,
        epochs=epochs,
        seed=seed,
    )
    _write_json(os.path.join(directory, MODEL_FILE), card)
    logger.info(f"✅ Saved {len(state)} weight tensors to {directory}")


def load_toy_estimator(directory: str, schedule: NoiseSchedule) -> ToyConvEstimator:
    """
    Rebuild a ToyConvEstimator from save_estimator output, bound to `schedule`.

    Raises:
        InputNotFound: directory, model card or a weight file missing
    """
    card = _read_json(os.path.join(directory, MODEL_FILE), ToyModelCard)
    model = ToyDenoiser(**card.config)
    state = {name: read_container(os.path.join(directory, f"{name}.ltsr")) for name in card.parameters}
    model.load_state_dict(state)
    return ToyConvEstimator(
        model,
        schedule,
        (card.base_size[0], card.base_size[1]),
        card.class_names,
        backend_id=f"toy:{directory}",
    )


def _eps_dir(path: str) -> str:
    return f"{path}.eps"


def save_inverted(path: str, inv: InvertedLatent) -> None:
    """
    z_T* at `path`, header at `path`.json, encoded source at `path`.z0.ltsr and
    the optional eps cache under `path`.eps/.
    """
    write_container(path, inv.z_T_star)
    params = inv.schedule.params
    header = InvertedHeader(
        plan=inv.plan,
        schedule=params,
        betas=None if params is not None else inv.schedule.betas.tolist(),
        seed=inv.seed,
        backend_id=inv.backend_id,
        has_cache=inv.has_cache,
        has_source=inv.z_0 is not None,
        metadata=inv.metadata,
    )
    _write_json(f"{path}.json", header)
    if inv.z_0 is not None:
        write_container(f"{path}.z0.ltsr", inv.z_0)
    if inv.eps_cache is not None:
        os.makedirs(_eps_dir(path), exist_ok=True)
        for i, entries in enumerate(inv.eps_cache):
            for k, eps in enumerate(entries):
                write_container(os.path.join(_eps_dir(path), f"tile{i:04d}_step{k:04d}.ltsr"), eps)
    logger.info(f"✅ Saved inverted latent {tuple(inv.z_T_star.shape)} to {path}")


def load_inverted(path: str) -> InvertedLatent:
    """
    Raises:
        InputNotFound: container or header missing
        ContainerFormatError: header and container disagree
    """
    z_T_star = read_container(path)
    header = _read_json(f"{path}.json", InvertedHeader)
    if header.schedule is not None:
        schedule = schedule_from_params(header.schedule)
    elif header.betas is not None:
        schedule = NoiseSchedule.from_betas(header.betas)
    else:
        raise ContainerFormatError(f"{path}.json records no schedule")

    eps_cache = None
    if header.has_cache:
        eps_cache = [
            [
                read_container(os.path.join(_eps_dir(path), f"tile{i:04d}_step{k:04d}.ltsr"))
                for k in range(schedule.num_steps)
            ]
            for i in range(header.plan.num_tiles)
        ]
    z_0 = read_container(f"{path}.z0.ltsr") if header.has_source else None
    return InvertedLatent(
        z_T_star=z_T_star,
        plan=header.plan,
        schedule=schedule,
        eps_cache=eps_cache,
        seed=header.seed,
        z_0=z_0,
        backend_id=header.backend_id,
        metadata=header.metadata,
    )


def save_trajectory(directory: str, record: TrajectoryRecord) -> None:
    """index.json plus residual/preview containers named by step."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for entry in record.entries:
        residual_file = preview_file = None
        if entry.residual is not None:
            residual_file = f"t{entry.t:04d}_residual.ltsr"
            write_container(os.path.join(directory, residual_file), entry.residual)
        if entry.preview is not None:
            preview_file = f"t{entry.t:04d}_preview.ltsr"
            write_container(os.path.join(directory, preview_file), entry.preview)
        entries.append(TrajectoryIndexEntry(
            t=entry.t,
            branch=entry.branch,
            residual_mean_abs=entry.residual_mean_abs,
            direction_is_vanilla=entry.direction_is_vanilla,
            residual=residual_file,
            preview=preview_file,
        ))
    index = TrajectoryIndex(config=record.config, seed=record.seed, schedule_id=record.schedule_id, entries=entries)
    _write_json(os.path.join(directory, INDEX_FILE), index)
    logger.info(f"✅ Saved trajectory with {len(entries)} steps to {directory}")


def load_trajectory(directory: str) -> TrajectoryRecord:
    index = _read_json(os.path.join(directory, INDEX_FILE), TrajectoryIndex)
    record = TrajectoryRecord(config=index.config, seed=index.seed, schedule_id=index.schedule_id)
    for item in index.entries:
        record.entries.append(TrajectoryEntry(
            t=item.t,
            branch=item.branch,
            residual_mean_abs=item.residual_mean_abs,
            direction_is_vanilla=item.direction_is_vanilla,
            residual=read_container(os.path.join(directory, item.residual)) if item.residual else None,
            preview=read_container(os.path.join(directory, item.preview)) if item.preview else None,
        ))
    return record
