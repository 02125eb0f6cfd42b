"""
CLI Commands
Function-based command definitions for the hires-edit command line
"""

import argparse
import json
import logging
import os
import subprocess
import sys
from typing import Any, Dict, List, Optional

import torch

from artifacts.images import load_image, save_image
from artifacts.manifest import manifest_path, plan_summary, read_manifest, resolve_options, write_manifest
from artifacts.plotting import plot_trajectory, write_sweep_report
from artifacts.store import load_inverted, load_trajectory, save_estimator, save_inverted, save_trajectory
from engine.analytic import AnalyticEstimator, class_distance
from engine.backend_manager import Backend, get_backend_debug_info, resolve_backend
from engine.codec import decode_canvas
from engine.corpus import ANALYTIC_PRESETS, TextureWorld, analytic_preset, texture_canvas, world_canvas
from engine.errors import RUNTIME_ERROR, ConfigError, EngineError, create_error_response
from engine.estimators import Conditioning, NoiseEstimator, redilate
from engine.inversion import InvertedLatent, tiled_ddim_invert
from engine.sampler import draw_initial_noise, edit_latent, reconstruct_latent, scalecrafter_latent
from engine.schedule import schedule_from_params
from engine.schema import (
    DEFAULT_LAMBDA,
    GuidanceConfig,
    GuidanceMode,
    ScheduleParams,
    TilePlan,
    VanillaEval,
    default_dilation,
    default_tau,
    load_profile,
)
from engine.seeding import make_generator
from engine.tiling import crop_to_canvas, pad_to_multiple, plan_tiles
from engine.toy_denoiser import train_toy
from schemas import RunManifest

logger = logging.getLogger(__name__)

DEFAULT_OMEGA = 7.5
SWEEP_VALUES = "0,0.25,0.5,0.75,1.0"
DEFAULT_AGNOSTIC_TILE = 32

SCHEDULE_DEFAULTS = {
    "steps": 50,
    "train_steps": 1000,
    "beta_start": 1e-4,
    "beta_end": 2e-2,
    "spacing": "linear",
}
GUIDANCE_DEFAULTS = {
    "backend": None,
    "prompt": None,
    "class_label": None,
    "tau": None,
    "dilation_factor": None,
    "invert_switch": False,
    "vanilla_eval": None,
    "preview_every": 5,
    "profile": None,
    "one_pass": False,
    "scorer": None,
}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _flags(args: argparse.Namespace, defaults: Dict[str, Any]) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in defaults}


def _options(args: argparse.Namespace, defaults: Dict[str, Any]) -> Dict[str, Any]:
    return resolve_options(_flags(args, defaults), defaults, getattr(args, "config", None))


def _progress(args: argparse.Namespace) -> bool:
    return not getattr(args, "quiet", False) and logging.getLogger().isEnabledFor(logging.INFO)


def _schedule_params(opts: Dict[str, Any]) -> ScheduleParams:
    return ScheduleParams(
        num_train_steps=int(opts["train_steps"]),
        num_sample_steps=int(opts["steps"]),
        beta_start=float(opts["beta_start"]),
        beta_end=float(opts["beta_end"]),
        spacing=opts["spacing"],
    )


def _tile_size(backend: Backend, requested: Optional[int]) -> int:
    """Requested tile, the backend's configured tile, or its base size in pixels."""
    if requested:
        return int(requested)
    if backend.settings.get("tile_size"):
        return int(backend.settings["tile_size"])
    base = backend.estimator.base_height * backend.codec.spatial_factor
    if backend.estimator.resolution_agnostic:
        return base * max(1, DEFAULT_AGNOSTIC_TILE // base)
    return base


def _condition(opts: Dict[str, Any]) -> Conditioning:
    if opts.get("class_label") is not None:
        return Conditioning.label(int(opts["class_label"]))
    if opts.get("prompt"):
        return Conditioning.prompt(opts["prompt"])
    raise ConfigError("a target condition is required: pass --prompt or --class")


def _write_manifest(output: str, manifest: RunManifest) -> str:
    path = manifest_path(output)
    write_manifest(path, manifest)
    return path


def _inverted_backend(inv: InvertedLatent, locator: Optional[str]) -> Backend:
    locator = locator or inv.metadata.get("backend", "toy")
    params = inv.schedule.params or ScheduleParams(num_sample_steps=inv.schedule.num_steps)
    return resolve_backend(locator, params)


def _guidance(opts: Dict[str, Any], mode: GuidanceMode, scale: float, plan: TilePlan, vanilla: NoiseEstimator, num_steps: int) -> GuidanceConfig:
    rows, cols = plan.grid
    vanilla_eval = opts["vanilla_eval"] or (VanillaEval.TILED if vanilla.strict_size else VanillaEval.FULL)
    return GuidanceConfig(
        mode=mode,
        scale=scale,
        tau=opts["tau"] if opts["tau"] is not None else default_tau(rows * cols, num_steps),
        dilation_factor=opts["dilation_factor"] or default_dilation(rows, cols),
        invert_switch=bool(opts["invert_switch"]),
        vanilla_eval=vanilla_eval,
        preview_every=int(opts["preview_every"]),
    )


def _dilated(backend: Backend, cfg: GuidanceConfig, profile_path: Optional[str]) -> NoiseEstimator:
    profile = load_profile(profile_path, cfg.dilation_factor) if profile_path else backend.profile
    return redilate(backend.estimator, cfg.dilation_factor, profile)


def _finish_image(image: torch.Tensor, inv: InvertedLatent) -> torch.Tensor:
    size = inv.metadata.get("original_size")
    if size and tuple(size) != tuple(image.shape[:2]):
        return crop_to_canvas(image, (int(size[0]), int(size[1])))
    return image


def run_scorer(executable: str, image_path: str, prompt: Optional[str]) -> Optional[str]:
    """
    Invoke `<executable> <png> <prompt>` and return the first stdout token verbatim.

    Raises:
        ConfigError: the executable cannot be started
    """
    try:
        result = subprocess.run(
            [executable, image_path, prompt or ""],
            capture_output=True,
            text=True,
            check=False,
        )
    except OSError as e:
        raise ConfigError(f"cannot run scorer {executable}: {e}") from e
    if result.returncode != 0:
        logger.warning(f"Scorer exited with {result.returncode}: {result.stderr.strip()}")
    tokens = result.stdout.split()
    return tokens[0] if tokens else None


def _relative_error(estimate: torch.Tensor, target: torch.Tensor) -> float:
    return float((estimate - target).norm() / target.norm().clamp_min(1e-12))


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------

INVERT_DEFAULTS = {
    **SCHEDULE_DEFAULTS,
    "backend": "toy",
    "tile_size": None,
    "cache_eps": False,
    "seed": 0,
    "workers": 1,
    "pad": False,
}


def cmd_invert(args: argparse.Namespace) -> Dict[str, Any]:
    """Tiled null-conditioned DDIM inversion of a PNG into an inverted-latent container."""
    opts = _options(args, INVERT_DEFAULTS)
    backend = resolve_backend(opts["backend"], _schedule_params(opts))
    estimator, codec = backend.estimator, backend.codec

    image = load_image(args.input, codec.pixel_channels)
    original = (image.shape[0], image.shape[1])
    tile = _tile_size(backend, opts["tile_size"])
    if opts["pad"]:
        image, _ = pad_to_multiple(image, tile, tile)
    plan = plan_tiles(image.shape[0], image.shape[1], tile, tile, codec.spatial_factor)
    logger.info(f"📋 Inverting {plan.num_tiles} tiles of {tile}x{tile} with {estimator.backend_id}")

    inv = tiled_ddim_invert(
        image, plan, estimator.schedule, estimator, codec,
        cache_eps=bool(opts["cache_eps"]),
        seed=int(opts["seed"]),
        workers=int(opts["workers"]),
        progress=_progress(args),
    )
    inv.metadata.update({"backend": opts["backend"], "original_size": list(original), "source": args.input})
    save_inverted(args.out, inv)

    manifest = RunManifest(
        command="invert",
        argv=args.argv,
        config=opts,
        schedule=estimator.schedule.params,
        plan=plan_summary(plan),
        backends={"estimator": backend.describe()},
        seed=int(opts["seed"]),
        inputs={"image": args.input},
        outputs={"inverted": args.out},
        results={"latent_shape": list(inv.z_T_star.shape), "latent_factor": codec.spatial_factor},
    )
    _write_manifest(args.out, manifest)
    return {"outputs": manifest.outputs, "latent_shape": list(inv.z_T_star.shape)}


EDIT_DEFAULTS = {**GUIDANCE_DEFAULTS, "mode": GuidanceMode.NDCFGPP.value, "lam": None, "record": False, "record_dir": None}


def cmd_edit(args: argparse.Namespace) -> Dict[str, Any]:
    """Tau-switched NDCFG++ editing of an inverted latent."""
    opts = _options(args, EDIT_DEFAULTS)
    inv = load_inverted(args.inverted)
    backend = _inverted_backend(inv, opts["backend"])
    mode = GuidanceMode(opts["mode"])
    scale = float(opts["lam"]) if opts["lam"] is not None else DEFAULT_LAMBDA
    cfg = _guidance(opts, mode, scale, inv.plan, backend.estimator, inv.schedule.num_steps)
    cond = _condition(opts)
    dilated = _dilated(backend, cfg, opts["profile"])

    z_0, record = edit_latent(
        inv.z_T_star, cond, cfg, backend.estimator, dilated, inv.schedule,
        record=bool(opts["record"]), codec=backend.codec, plan=inv.plan,
        progress=_progress(args), seed=inv.seed,
    )
    image = _finish_image(decode_canvas(backend.codec, z_0, inv.plan, bool(opts["one_pass"])), inv)
    save_image(args.out, image)

    outputs = {"image": args.out}
    results: Dict[str, Any] = {"size": [image.shape[0], image.shape[1]]}
    if record is not None:
        record_dir = opts["record_dir"] or f"{args.out}.trajectory"
        save_trajectory(record_dir, record)
        outputs["trajectory"] = record_dir
        results["branch_counts"] = record.branch_counts()
    if opts["scorer"]:
        results["scorer"] = run_scorer(opts["scorer"], args.out, opts["prompt"])

    manifest = RunManifest(
        command="edit",
        argv=args.argv,
        config=opts,
        schedule=inv.schedule.params,
        guidance=cfg,
        plan=plan_summary(inv.plan),
        backends={"vanilla": backend.describe(), "dilated": dilated.backend_id},
        seed=inv.seed,
        inputs={"inverted": args.inverted},
        outputs=outputs,
        results=results,
    )
    _write_manifest(args.out, manifest)
    return {"outputs": outputs, **results}


GENERATE_DEFAULTS = {
    **GUIDANCE_DEFAULTS,
    **SCHEDULE_DEFAULTS,
    "mode": GuidanceMode.NDCFG.value,
    "omega": None,
    "height": None,
    "width": None,
    "tile_size": None,
    "seed": 0,
}


def cmd_generate(args: argparse.Namespace) -> Dict[str, Any]:
    """Dilated-CFG comparison sampler from fresh noise or from an inverted latent."""
    opts = _options(args, GENERATE_DEFAULTS)
    seed = int(opts["seed"])
    if args.inverted:
        inv = load_inverted(args.inverted)
        backend = _inverted_backend(inv, opts["backend"])
        plan, schedule, z_T = inv.plan, inv.schedule, inv.z_T_star
    else:
        if not opts["height"] or not opts["width"]:
            raise ConfigError("generate needs --height and --width or --inverted")
        backend = resolve_backend(opts["backend"] or "toy", _schedule_params(opts))
        tile = _tile_size(backend, opts["tile_size"])
        plan = plan_tiles(int(opts["height"]), int(opts["width"]), tile, tile, backend.codec.spatial_factor)
        schedule = backend.estimator.schedule
        h, w = plan.latent_canvas_size
        z_T = draw_initial_noise((h, w, backend.codec.latent_channels), seed, plan)
        inv = None

    mode = GuidanceMode(opts["mode"])
    scale = float(opts["omega"]) if opts["omega"] is not None else DEFAULT_OMEGA
    cfg = _guidance(opts, mode, scale, plan, backend.estimator, schedule.num_steps)
    cond = _condition(opts)
    dilated = _dilated(backend, cfg, opts["profile"])

    z_0, _ = scalecrafter_latent(z_T, cond, cfg, backend.estimator, dilated, schedule, progress=_progress(args), seed=seed)
    image = decode_canvas(backend.codec, z_0, plan, bool(opts["one_pass"]))
    if inv is not None:
        image = _finish_image(image, inv)
    save_image(args.out, image)

    manifest = RunManifest(
        command="generate",
        argv=args.argv,
        config=opts,
        schedule=schedule.params,
        guidance=cfg,
        plan=plan_summary(plan),
        backends={"vanilla": backend.describe(), "dilated": dilated.backend_id},
        seed=seed,
        inputs={"inverted": args.inverted} if args.inverted else {},
        outputs={"image": args.out},
        results={"size": [image.shape[0], image.shape[1]]},
    )
    _write_manifest(args.out, manifest)
    return {"outputs": manifest.outputs, **manifest.results}


RECONSTRUCT_DEFAULTS = {"backend": None, "use_cache": False, "one_pass": False}


def cmd_reconstruct(args: argparse.Namespace) -> Dict[str, Any]:
    """Unconditional reverse diffusion from z_T*, optionally replaying the cached eps."""
    opts = _options(args, RECONSTRUCT_DEFAULTS)
    inv = load_inverted(args.inverted)
    backend = _inverted_backend(inv, opts["backend"])

    z_0 = reconstruct_latent(inv, inv.schedule, backend.estimator, use_cache=bool(opts["use_cache"]))
    image = _finish_image(decode_canvas(backend.codec, z_0, inv.plan, bool(opts["one_pass"])), inv)
    save_image(args.out, image)

    results: Dict[str, Any] = {"size": [image.shape[0], image.shape[1]]}
    if inv.z_0 is not None:
        results["latent_relative_error"] = _relative_error(z_0, inv.z_0)
    manifest = RunManifest(
        command="reconstruct",
        argv=args.argv,
        config=opts,
        schedule=inv.schedule.params,
        plan=plan_summary(inv.plan),
        backends={"estimator": backend.describe()},
        seed=inv.seed,
        inputs={"inverted": args.inverted},
        outputs={"image": args.out},
        results=results,
    )
    _write_manifest(args.out, manifest)
    return {"outputs": manifest.outputs, **results}


SWEEP_DEFAULTS = {**GUIDANCE_DEFAULTS, "values": SWEEP_VALUES}


def _parse_values(text: str) -> List[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--values must be a comma-separated list of numbers: {text}") from e


def _source_pixels(inv: InvertedLatent, backend: Backend) -> Optional[torch.Tensor]:
    if inv.z_0 is not None:
        return decode_canvas(backend.codec, inv.z_0, inv.plan)
    source = inv.metadata.get("source")
    return load_image(source, backend.codec.pixel_channels) if source and os.path.exists(source) else None


def cmd_sweep_lambda(args: argparse.Namespace) -> Dict[str, Any]:
    """Edit once per lambda and tabulate source similarity against target alignment."""
    opts = _options(args, SWEEP_DEFAULTS)
    inv = load_inverted(args.inverted)
    backend = _inverted_backend(inv, opts["backend"])
    values = _parse_values(opts["values"])
    cond = _condition(opts)
    base = _guidance(opts, GuidanceMode.NDCFGPP, DEFAULT_LAMBDA, inv.plan, backend.estimator, inv.schedule.num_steps)
    dilated = _dilated(backend, base, opts["profile"])
    source = _source_pixels(inv, backend)
    if source is not None:
        source = _finish_image(source, inv)
    world = backend.estimator.world if isinstance(backend.estimator, AnalyticEstimator) else None

    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for lam in values:
        cfg = GuidanceConfig(**{**base.model_dump(), "scale": lam})
        z_0, _ = edit_latent(inv.z_T_star, cond, cfg, backend.estimator, dilated, inv.schedule, seed=inv.seed)
        image = _finish_image(decode_canvas(backend.codec, z_0, inv.plan, bool(opts["one_pass"])), inv)
        out_path = os.path.join(args.out_dir, f"lambda_{lam:.2f}.png")
        save_image(out_path, image)
        rows.append({
            "lambda": lam,
            "source_rmse": float((image - source).pow(2).mean().sqrt()) if source is not None else None,
            "target_distance": class_distance(world, z_0, cond) if world is not None else None,
            "scorer": run_scorer(opts["scorer"], out_path, opts["prompt"]) if opts["scorer"] else None,
            "output": out_path,
        })
        logger.info(f"✅ Swept lambda={lam}")

    report = os.path.join(args.out_dir, "report.csv")
    write_sweep_report(rows, report)
    manifest = RunManifest(
        command="sweep-lambda",
        argv=args.argv,
        config=opts,
        schedule=inv.schedule.params,
        guidance=base,
        plan=plan_summary(inv.plan),
        backends={"vanilla": backend.describe(), "dilated": dilated.backend_id},
        seed=inv.seed,
        inputs={"inverted": args.inverted},
        outputs={"report": report, **{row["output"]: row["output"] for row in rows}},
        results={"rows": rows},
    )
    _write_manifest(args.out_dir, manifest)
    return {"outputs": {"report": report}, "rows": len(rows)}


DEMO_DEFAULTS = {"world": "textures", "seed": 0, "height": 256, "width": 256, "count": 1}


def cmd_demo(args: argparse.Namespace) -> Dict[str, Any]:
    """Write reproducible demo canvases, `count` per class."""
    opts = _options(args, DEMO_DEFAULTS)
    seed, height, width = int(opts["seed"]), int(opts["height"]), int(opts["width"])
    os.makedirs(args.out_dir, exist_ok=True)

    if opts["world"] == "textures":
        world = TextureWorld()
        names = world.class_names
        render = lambda label, gen: texture_canvas(world, label, height, width, gen)
    else:
        gmm = analytic_preset(opts["world"])
        names = gmm.class_names or tuple(f"class{k}" for k in range(gmm.num_classes))
        render = lambda label, gen: world_canvas(gmm, height, width, gen, label)

    written = []
    for label, name in enumerate(names):
        for i in range(int(opts["count"])):
            path = os.path.join(args.out_dir, f"{opts['world']}_{name}_{i}.png")
            save_image(path, render(label, make_generator(seed, label, i)))
            written.append(path)
    logger.info(f"✅ Wrote {len(written)} demo images to {args.out_dir}")

    manifest = RunManifest(
        command="demo",
        argv=args.argv,
        config=opts,
        seed=seed,
        outputs={os.path.basename(p): p for p in written},
    )
    _write_manifest(args.out_dir, manifest)
    return {"outputs": written}


TRAIN_DEFAULTS = {
    **SCHEDULE_DEFAULTS,
    "epochs": 20,
    "seed": 0,
    "num_images": 512,
    "batch_size": 32,
    "lr": 2e-3,
    "width": 32,
    "blocks": 2,
}


def cmd_train_toy(args: argparse.Namespace) -> Dict[str, Any]:
    """Train the toy denoiser on the texture corpus and save its weights."""
    opts = _options(args, TRAIN_DEFAULTS)
    params = _schedule_params(opts)
    estimator, history = train_toy(
        TextureWorld(),
        schedule_from_params(params),
        epochs=int(opts["epochs"]),
        seed=int(opts["seed"]),
        num_images=int(opts["num_images"]),
        batch_size=int(opts["batch_size"]),
        learning_rate=float(opts["lr"]),
        width=int(opts["width"]),
        num_blocks=int(opts["blocks"]),
        progress=_progress(args),
    )
    save_estimator(estimator, args.out_dir, epochs=int(opts["epochs"]), seed=int(opts["seed"]))
    manifest = RunManifest(
        command="train-toy",
        argv=args.argv,
        config=opts,
        schedule=params,
        backends={"estimator": estimator.backend_id},
        seed=int(opts["seed"]),
        outputs={"weights": args.out_dir},
        results={"loss_history": history},
    )
    _write_manifest(args.out_dir, manifest)
    return {"outputs": manifest.outputs, "final_loss": history[-1] if history else None}


def cmd_plot(args: argparse.Namespace) -> Dict[str, Any]:
    """Render a recorded trajectory to a preview/residual grid."""
    record = load_trajectory(args.trajectory)
    panels = plot_trajectory(record, args.out)
    manifest = RunManifest(
        command="plot",
        argv=args.argv,
        guidance=record.config,
        seed=record.seed,
        inputs={"trajectory": args.trajectory},
        outputs={"grid": args.out},
        results={"panels": panels, "branch_counts": record.branch_counts()},
    )
    _write_manifest(args.out, manifest)
    return {"outputs": manifest.outputs, "panels": panels}


def cmd_pad(args: argparse.Namespace) -> Dict[str, Any]:
    """Reflect-pad an image so it divides into tiles."""
    image = load_image(args.input)
    padded, size = pad_to_multiple(image, args.tile_size, args.tile_size)
    save_image(args.out, padded)
    manifest = RunManifest(
        command="pad",
        argv=args.argv,
        config={"tile_size": args.tile_size},
        inputs={"image": args.input},
        outputs={"image": args.out},
        results={"original_size": list(size), "padded_size": [padded.shape[0], padded.shape[1]]},
    )
    _write_manifest(args.out, manifest)
    return {"outputs": manifest.outputs, **manifest.results}


def cmd_rerun(args: argparse.Namespace) -> Dict[str, Any]:
    """Re-execute the command line recorded in a manifest."""
    manifest = read_manifest(args.manifest)
    if not manifest.argv:
        raise ConfigError(f"manifest {args.manifest} records no command line")
    from main import main

    logger.info(f"📋 Re-running: {' '.join(manifest.argv)}")
    return {"rerun": manifest.command, "exit_code": main(list(manifest.argv))}


def cmd_backends(args: argparse.Namespace) -> Dict[str, Any]:
    """List registered backends."""
    return get_backend_debug_info()


# ---------------------------------------------------------------------------
# Parser setup
# ---------------------------------------------------------------------------

def add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of option values; flags override it")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")


def add_schedule_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--steps", type=int, help="DDIM sampling steps T (default 50)")
    parser.add_argument("--train-steps", type=int, help="Training schedule length (default 1000)")
    parser.add_argument("--beta-start", type=float)
    parser.add_argument("--beta-end", type=float)
    parser.add_argument("--spacing", choices=["linear", "quadratic"])


def add_condition_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--prompt", help="Target prompt text")
    group.add_argument("--class", dest="class_label", type=int, help="Target class index")


def add_guidance_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", help="Backend name or locator (default: the one used for inversion)")
    parser.add_argument("--tau", type=int, help="Switch timestep (default by scale factor)")
    parser.add_argument("--dilation-factor", type=int, help="Re-dilation factor (default by tile grid)")
    parser.add_argument("--invert-switch", action="store_true", default=None, help="Apply the ND rule when t > tau")
    parser.add_argument("--vanilla-eval", choices=[v.value for v in VanillaEval])
    parser.add_argument("--preview-every", type=int)
    parser.add_argument("--profile", help="Dilation profile JSON")
    parser.add_argument("--one-pass", action="store_true", default=None, help="Decode the canvas in one pass")
    parser.add_argument("--scorer", help="Executable called as <exe> <png> <prompt>")
    add_condition_options(parser)


def setup_inversion_commands(subparsers: argparse._SubParsersAction) -> None:
    """Setup inversion-side commands."""

    invert = subparsers.add_parser("invert", help="Tiled DDIM inversion of an image")
    add_common_options(invert)
    add_schedule_options(invert)
    invert.add_argument("--input", required=True)
    invert.add_argument("--out", required=True)
    invert.add_argument("--backend")
    invert.add_argument("--tile-size", type=int, help="Tile size in pixels (default: estimator base size)")
    invert.add_argument("--cache-eps", action="store_true", default=None)
    invert.add_argument("--seed", type=int)
    invert.add_argument("--workers", type=int)
    invert.add_argument("--pad", action="store_true", default=None, help="Reflect-pad to a tile multiple first")
    invert.set_defaults(handler=cmd_invert)

    recon = subparsers.add_parser("reconstruct", help="Unconditional reverse from an inverted latent")
    add_common_options(recon)
    recon.add_argument("--inverted", required=True)
    recon.add_argument("--out", required=True)
    recon.add_argument("--backend")
    recon.add_argument("--use-cache", action="store_true", default=None)
    recon.add_argument("--one-pass", action="store_true", default=None)
    recon.set_defaults(handler=cmd_reconstruct)

    pad = subparsers.add_parser("pad", help="Reflect-pad an image to a tile multiple")
    add_common_options(pad)
    pad.add_argument("--input", required=True)
    pad.add_argument("--tile-size", type=int, required=True)
    pad.add_argument("--out", required=True)
    pad.set_defaults(handler=cmd_pad)


def setup_editing_commands(subparsers: argparse._SubParsersAction) -> None:
    """Setup guided sampling commands."""

    edit = subparsers.add_parser("edit", help="NDCFG++ editing of an inverted latent")
    add_common_options(edit)
    add_guidance_options(edit)
    edit.add_argument("--inverted", required=True)
    edit.add_argument("--out", required=True)
    edit.add_argument("--lambda", dest="lam", type=float, help="Guidance scale in [0, 1] (default 0.5)")
    edit.add_argument("--mode", choices=[GuidanceMode.NDCFGPP.value, GuidanceMode.CFGPP.value])
    edit.add_argument("--record", action="store_true", default=None)
    edit.add_argument("--record-dir")
    edit.set_defaults(handler=cmd_edit)

    generate = subparsers.add_parser("generate", help="Dilated-CFG sampling from noise or an inverted latent")
    add_common_options(generate)
    add_guidance_options(generate)
    add_schedule_options(generate)
    generate.add_argument("--out", required=True)
    generate.add_argument("--inverted")
    generate.add_argument("--height", type=int)
    generate.add_argument("--width", type=int)
    generate.add_argument("--tile-size", type=int)
    generate.add_argument("--omega", type=float, help="Guidance scale >= 0 (default 7.5)")
    generate.add_argument("--mode", choices=[GuidanceMode.NDCFG.value, GuidanceMode.CFG.value])
    generate.add_argument("--seed", type=int)
    generate.set_defaults(handler=cmd_generate)

    sweep = subparsers.add_parser("sweep-lambda", help="Edit across lambda values and report")
    add_common_options(sweep)
    add_guidance_options(sweep)
    sweep.add_argument("--inverted", required=True)
    sweep.add_argument("--out-dir", required=True)
    sweep.add_argument("--values", help=f"Comma-separated lambdas (default {SWEEP_VALUES})")
    sweep.set_defaults(handler=cmd_sweep_lambda)


def setup_artifact_commands(subparsers: argparse._SubParsersAction) -> None:
    """Setup corpus, training, plotting and housekeeping commands."""

    demo = subparsers.add_parser("demo", help="Write procedural demo images")
    add_common_options(demo)
    demo.add_argument("--world", choices=["textures", *ANALYTIC_PRESETS])
    demo.add_argument("--seed", type=int)
    demo.add_argument("--height", type=int)
    demo.add_argument("--width", type=int)
    demo.add_argument("--count", type=int, help="Images per class")
    demo.add_argument("--out-dir", required=True)
    demo.set_defaults(handler=cmd_demo)

    train = subparsers.add_parser("train-toy", help="Train the toy conv denoiser")
    add_common_options(train)
    add_schedule_options(train)
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--num-images", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--width", type=int)
    train.add_argument("--blocks", type=int)
    train.add_argument("--out-dir", required=True)
    train.set_defaults(handler=cmd_train_toy)

    plot = subparsers.add_parser("plot", help="Render a recorded trajectory")
    add_common_options(plot)
    plot.add_argument("--trajectory", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(handler=cmd_plot)

    rerun = subparsers.add_parser("rerun", help="Re-execute a command from its manifest")
    add_common_options(rerun)
    rerun.add_argument("--manifest", required=True)
    rerun.set_defaults(handler=cmd_rerun)

    backends = subparsers.add_parser("backends", help="Show registered backends")
    add_common_options(backends)
    backends.set_defaults(handler=cmd_backends)


def run_command(args: argparse.Namespace) -> int:
    """Run a parsed command; print one JSON result line and return the exit code."""
    try:
        result = args.handler(args)
        print(json.dumps({"success": True, "command": args.command, **result}, default=str))
        return int(result.get("exit_code", 0))
    except EngineError as e:
        logger.error(f"❌ {args.command} failed: {e.code}: {e.detail}")
        print(json.dumps(e.to_response()), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"❌ {args.command} failed unexpectedly")
        print(json.dumps(create_error_response("internal-error", str(e))), file=sys.stderr)
        return RUNTIME_ERROR
