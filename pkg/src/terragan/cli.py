"""Operator entry point: prepare data, train both GAN stages, generate and
interpolate terrain, and export engine-ready files.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. All
randomness in a command flows from its --seed flag, so reruns with identical
inputs produce byte-identical artifacts (the training log's wall-time column
excepted).
"""
from __future__ import annotations

import functools
import json
from pathlib import Path

import click
import numpy as np

from . import baselines, generation
from .data_pipeline import (
    FilterConfig,
    from_model_range,
    load_world_rasters,
    prepare_dataset,
    read_manifest,
    to_model_range,
)
from .export import (
    MeshConfig,
    heightmap_to_obj,
    read_heightmap_png16,
    write_heightmap_png16,
    write_texture_png,
    write_unity_raw,
)
from .losses import LossConfig
from .models import CheckpointError, load_checkpoint, load_model
from .training import TrainingConfig, config_hash, train_heightmap_gan, train_texture_gan

CONFIG_SECTIONS = {"filter", "training", "loss", "generation", "mesh"}


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise click.UsageError(f"cannot read config file {path}: {e}")
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - CONFIG_SECTIONS
    if unknown:
        raise click.UsageError(f"unknown config sections {sorted(unknown)}; expected {sorted(CONFIG_SECTIONS)}")
    return cfg


def _section(cfg: dict, name: str, known_keys: set[str]) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise click.UsageError(f"config section {name!r} must be an object")
    unknown = set(sec) - known_keys
    if unknown:
        raise click.UsageError(f"unknown keys {sorted(unknown)} in config section {name!r}")
    return sec


def _resolve(ctx, flag_name: str, file_value, default):
    """Precedence: explicit command-line flag > config file > default."""
    src = ctx.get_parameter_source(flag_name)
    if src is not None and src.name == "COMMANDLINE":
        return ctx.params[flag_name]
    if file_value is not None:
        return file_value
    return default if ctx.params.get(flag_name) is None else ctx.params[flag_name]


def _write_effective_config(out_dir, payload: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def runtime_errors_to_exit1(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, OSError, CheckpointError, RuntimeError) as e:
            raise click.ClickException(str(e))

    return wrapper


@click.group()
def main():
    """Two-stage GAN terrain pipeline: heightmaps from noise, textures from heightmaps."""


@main.command("prepare-data")
@click.option("--heightmap", "heightmap_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--texture", "texture_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--tile-size", type=int, default=512, show_default=True)
@click.option("--stride", type=int, default=512, show_default=True)
@click.option("--max-black-fraction", type=float, default=0.9, show_default=True)
@click.option("--black-threshold", type=float, default=0.05, show_default=True)
@click.option("--reference", "reference_path", type=click.Path(exists=True, dir_okay=False),
              help="Reference texture tile for biome ranking; defaults to the first surviving tile.")
@click.option("--top-m", type=int, default=1000, show_default=True)
@click.option("--val-fraction", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@runtime_errors_to_exit1
def cmd_prepare_data(ctx, heightmap_path, texture_path, config_path, tile_size, stride,
                     max_black_fraction, black_threshold, reference_path, top_m,
                     val_fraction, seed, out_dir):
    """Slide a window over the world rasters, filter, rank, and persist tiles."""
    cfg = _load_config_file(config_path)
    sec = _section(cfg, "filter", {"tile_size", "stride", "max_black_fraction",
                                   "black_intensity_threshold", "top_m", "val_fraction"})
    tile_size = _resolve(ctx, "tile_size", sec.get("tile_size"), 512)
    stride = _resolve(ctx, "stride", sec.get("stride"), 512)
    max_black_fraction = _resolve(ctx, "max_black_fraction", sec.get("max_black_fraction"), 0.9)
    black_threshold = _resolve(ctx, "black_threshold", sec.get("black_intensity_threshold"), 0.05)
    top_m = _resolve(ctx, "top_m", sec.get("top_m"), 1000)
    val_fraction = _resolve(ctx, "val_fraction", sec.get("val_fraction"), 0.1)

    world = load_world_rasters(heightmap_path, texture_path)
    reference = None
    if reference_path:
        from PIL import Image

        reference = np.asarray(Image.open(reference_path).convert("RGB"), dtype=np.float64) / 255.0
        if reference.shape[:2] != (tile_size, tile_size):
            raise click.UsageError(
                f"reference tile is {reference.shape[:2]}, expected {(tile_size, tile_size)}"
            )
    filter_cfg = FilterConfig(
        tile_size=tile_size,
        stride=stride,
        max_black_fraction=max_black_fraction,
        black_intensity_threshold=black_threshold,
        reference_texture=reference,
        top_m=top_m,
    )
    manifest, counts = prepare_dataset(world, filter_cfg, out_dir, val_fraction=val_fraction, seed=seed)
    if counts["after_black_filter"] < top_m:
        click.echo(f"warning: --top-m {top_m} exceeds {counts['after_black_filter']} surviving tiles; keeping all")
    _write_effective_config(out_dir, {
        "command": "prepare-data",
        "filter": filter_cfg.header_dict(),
        "val_fraction": val_fraction,
        "seed": seed,
        "heightmap": str(heightmap_path),
        "texture": str(texture_path),
        "reference": str(reference_path) if reference_path else None,
    })
    click.echo(f"candidate tiles:     {counts['candidates']}")
    click.echo(f"after black filter:  {counts['after_black_filter']}")
    click.echo(f"selected (top M):    {counts['selected']}")
    click.echo(f"train/val split:     {counts['train']}/{counts['val']}")
    click.echo(f"manifest: {Path(out_dir) / 'manifest.jsonl'}")


def _training_options(fn):
    for opt in reversed([
        click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False)),
        click.option("--steps", type=int, default=2000, show_default=True),
        click.option("--batch-size", type=int, default=16, show_default=True),
        click.option("--lr", type=float, default=1e-4, show_default=True),
        click.option("--resolution", type=int, default=32, show_default=True),
        click.option("--base-channels", type=int, default=64, show_default=True),
        click.option("--loss-variant", type=click.Choice(["least_squares", "cross_entropy"]),
                     default="least_squares", show_default=True),
        click.option("--checkpoint-every", type=int, default=500, show_default=True),
        click.option("--resume", is_flag=True, help="Continue from checkpoints in --out."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False)),
    ]):
        fn = opt(fn)
    return fn


def _build_training_config(ctx, config_path, stage, steps, batch_size, lr, resolution,
                           base_channels, loss_variant, checkpoint_every, seed,
                           latent_dim=100, recon_weight=100.0, distance="l1"):
    cfg = _load_config_file(config_path)
    tsec = _section(cfg, "training", {"steps", "batch_size", "learning_rate", "resolution",
                                      "base_channels", "checkpoint_every", "latent_dim",
                                      "rmsprop_decay", "rmsprop_epsilon"})
    lsec = _section(cfg, "loss", {"variant", "reconstruction_weight", "distance"})
    steps = _resolve(ctx, "steps", tsec.get("steps"), 2000)
    batch_size = _resolve(ctx, "batch_size", tsec.get("batch_size"), 16)
    lr = _resolve(ctx, "lr", tsec.get("learning_rate"), 1e-4)
    resolution = _resolve(ctx, "resolution", tsec.get("resolution"), 32)
    base_channels = _resolve(ctx, "base_channels", tsec.get("base_channels"), 64)
    checkpoint_every = _resolve(ctx, "checkpoint_every", tsec.get("checkpoint_every"), 500)
    loss_variant = _resolve(ctx, "loss_variant", lsec.get("variant"), "least_squares")
    if "lambda_weight" in ctx.params:
        recon_weight = _resolve(ctx, "lambda_weight", lsec.get("reconstruction_weight"), 100.0)
    if "distance" in ctx.params:
        distance = _resolve(ctx, "distance", lsec.get("distance"), "l1")
    loss = LossConfig(variant=loss_variant, reconstruction_weight=recon_weight, distance=distance)
    return TrainingConfig(
        total_steps=steps,
        resolution=resolution,
        batch_size=batch_size,
        learning_rate=lr,
        rmsprop_decay=tsec.get("rmsprop_decay", 0.99),
        rmsprop_epsilon=tsec.get("rmsprop_epsilon", 1e-8),
        loss=loss,
        seed=seed,
        checkpoint_every=checkpoint_every,
        base_channels=base_channels,
        latent_dim=tsec.get("latent_dim", latent_dim),
    )


def _run_training(stage, train_fn, manifest_path, config, resume, out_dir):
    from .report import plot_training_curves

    manifest = read_manifest(manifest_path)
    manifest_dir = Path(manifest_path).parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resume_from = None
    if resume:
        g_path = out_dir / "generator_latest.ckpt"
        d_path = out_dir / "discriminator_latest.ckpt"
        if not (g_path.exists() and d_path.exists()):
            raise click.ClickException(f"--resume: no checkpoints found in {out_dir}")
        resume_from = (load_checkpoint(g_path), load_checkpoint(d_path))
    result = train_fn(manifest, config, manifest_dir, out_dir=out_dir, resume_from=resume_from)
    result.log.write_csv(out_dir / "training_log.csv", append=bool(resume))
    full_log = result.log
    if resume:
        from .training import TrainingLog

        full_log = TrainingLog.read_csv(out_dir / "training_log.csv")
    plot_training_curves(full_log, out_dir / "loss_curve.png", title=f"{stage} GAN training")
    click.echo(f"defaults: optimizer=RMSProp lr={config.learning_rate} "
               f"loss={config.loss.variant} lambda={config.loss.reconstruction_weight}")
    click.echo(f"trained {stage} GAN to step {result.generator.training_step}; "
               f"checkpoints and log in {out_dir}")
    return result


@main.command("train-heightmap")
@_training_options
@click.option("--latent-dim", type=int, default=100, show_default=True)
@click.pass_context
@runtime_errors_to_exit1
def cmd_train_heightmap(ctx, manifest_path, config_path, steps, batch_size, lr, resolution,
                        base_channels, loss_variant, checkpoint_every, resume, seed, out_dir,
                        latent_dim):
    """Train the noise->heightmap GAN."""
    config = _build_training_config(ctx, config_path, "heightmap", steps, batch_size, lr,
                                    resolution, base_channels, loss_variant, checkpoint_every,
                                    seed, latent_dim=latent_dim)
    _write_effective_config(out_dir, {
        "command": "train-heightmap",
        "training": {k: v for k, v in vars(config).items() if k != "loss"},
        "loss": vars(config.loss),
        "config_hash": config_hash(config),
        "manifest": str(manifest_path),
    })
    _run_training("heightmap", train_heightmap_gan, manifest_path, config, resume, out_dir)


@main.command("train-texture")
@_training_options
@click.option("--lambda", "lambda_weight", type=float, default=100.0, show_default=True,
              help="Reconstruction loss weight.")
@click.option("--distance", type=click.Choice(["l1", "l2"]), default="l1", show_default=True)
@click.pass_context
@runtime_errors_to_exit1
def cmd_train_texture(ctx, manifest_path, config_path, steps, batch_size, lr, resolution,
                      base_channels, loss_variant, checkpoint_every, resume, seed, out_dir,
                      lambda_weight, distance):
    """Train the heightmap->texture translation GAN."""
    config = _build_training_config(ctx, config_path, "texture", steps, batch_size, lr,
                                    resolution, base_channels, loss_variant, checkpoint_every,
                                    seed, recon_weight=lambda_weight, distance=distance)
    _write_effective_config(out_dir, {
        "command": "train-texture",
        "training": {k: v for k, v in vars(config).items() if k != "loss"},
        "loss": vars(config.loss),
        "config_hash": config_hash(config),
        "manifest": str(manifest_path),
    })
    _run_training("texture", train_texture_gan, manifest_path, config, resume, out_dir)


def _gray_to_rgb(img: np.ndarray) -> np.ndarray:
    return np.repeat(img[:, :, None], 3, axis=2)


@main.command("generate")
@click.option("--generator", "generator_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--texture-generator", "texture_generator_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--n", "count", type=int, default=1, show_default=True)
@click.option("--blur-radius", type=float, default=0.4, show_default=True)
@click.option("--montage", "montage_grid", type=str, help="Grid like 3x3; cells are [heightmap|texture] pairs.")
@click.option("--no-texture", is_flag=True, help="Emit heightmaps only.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@runtime_errors_to_exit1
def cmd_generate(ctx, generator_path, texture_generator_path, config_path, count, blur_radius,
                 montage_grid, no_texture, seed, out_dir):
    """Sample latents and write heightmap/texture pairs, optionally as a paired grid."""
    cfg = _load_config_file(config_path)
    gsec = _section(cfg, "generation", {"count", "blur_radius_px", "emit_texture"})
    count = _resolve(ctx, "count", gsec.get("count"), 1)
    blur_radius = _resolve(ctx, "blur_radius", gsec.get("blur_radius_px"), 0.4)
    if blur_radius < 0:
        raise click.UsageError("--blur-radius must be >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    g_h, _ = load_model(generator_path, expect_kind="heightmap", expect_role="generator")
    g_t = None
    if texture_generator_path and not no_texture:
        g_t, _ = load_model(texture_generator_path, expect_kind="texture", expect_role="generator")
    emit_texture = g_t is not None

    latents = generation.sample_latent(g_h.spec.latent_dim, count, seed)
    heightmaps = []
    textures = []
    for i in range(count):
        if emit_texture:
            hm, tex = generation.generate_pair(g_h, g_t, latents[i], blur_radius)
            textures.append(tex)
        else:
            hm = generation.gaussian_blur(generation.generate_heightmaps(g_h, latents[i : i + 1])[0], blur_radius)
            hm = np.clip(hm, -1.0, 1.0)
        heightmaps.append(hm)
        write_heightmap_png16(hm, out_dir / f"heightmap_{i:03d}.png")
        if emit_texture:
            write_texture_png(textures[i], out_dir / f"texture_{i:03d}.png")

    (out_dir / "seeds.json").write_text(json.dumps({"seed": seed, "count": count}, sort_keys=True) + "\n")
    if montage_grid:
        try:
            rows, cols = (int(v) for v in montage_grid.lower().split("x"))
        except ValueError:
            raise click.UsageError(f"--montage must look like 3x3, got {montage_grid!r}")
        if emit_texture:
            cells = [np.concatenate([_gray_to_rgb(h), t], axis=1) for h, t in zip(heightmaps, textures)]
        else:
            cells = [_gray_to_rgb(h) for h in heightmaps]
        grid = generation.montage(cells, rows, cols)
        write_texture_png(grid, out_dir / "montage.png")
    _write_effective_config(out_dir, {
        "command": "generate",
        "generation": {"count": count, "seed": seed, "blur_radius_px": blur_radius,
                       "emit_texture": emit_texture, "montage": montage_grid},
        "generator": str(generator_path),
        "texture_generator": str(texture_generator_path) if texture_generator_path else None,
    })
    click.echo(f"wrote {count} heightmap(s)" + (f" and {count} texture(s)" if emit_texture else "") + f" to {out_dir}")


@main.command("interpolate")
@click.option("--generator", "generator_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--steps", type=int, default=5, show_default=True)
@click.option("--blur-radius", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@runtime_errors_to_exit1
def cmd_interpolate(generator_path, steps, blur_radius, seed, out_dir):
    """Decode a linear latent interpolation between two seeds as an image strip."""
    if steps < 2:
        raise click.UsageError("--steps must be >= 2")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g_h, _ = load_model(generator_path, expect_kind="heightmap", expect_role="generator")
    endpoints = generation.sample_latent(g_h.spec.latent_dim, 2, seed)
    path = generation.interpolate_latents(endpoints[0], endpoints[1], steps)
    frames = generation.generate_heightmaps(g_h, path)
    if blur_radius > 0:
        frames = np.stack([np.clip(generation.gaussian_blur(f, blur_radius), -1, 1) for f in frames])
    for i, frame in enumerate(frames):
        write_heightmap_png16(frame, out_dir / f"frame_{i:03d}.png")
    strip = generation.montage(list(frames), 1, steps)
    write_heightmap_png16(strip, out_dir / "montage.png")
    _write_effective_config(out_dir, {
        "command": "interpolate",
        "generation": {"steps": steps, "seed": seed, "blur_radius_px": blur_radius},
        "generator": str(generator_path),
    })
    click.echo(f"wrote {steps} frames and montage to {out_dir}")


@main.command("export")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="16-bit heightmap PNG to convert.")
@click.option("--format", "fmt", required=True, type=click.Choice(["png16", "raw", "obj"]))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--horizontal-scale", type=float, default=1000.0, show_default=True)
@click.option("--vertical-scale", type=float, default=4000.0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
@runtime_errors_to_exit1
def cmd_export(ctx, input_path, fmt, config_path, horizontal_scale, vertical_scale, out_dir):
    """Re-emit a heightmap as PNG16, Unity RAW, or an OBJ terrain mesh."""
    cfg = _load_config_file(config_path)
    msec = _section(cfg, "mesh", {"horizontal_scale", "vertical_scale"})
    horizontal_scale = _resolve(ctx, "horizontal_scale", msec.get("horizontal_scale"), 1000.0)
    vertical_scale = _resolve(ctx, "vertical_scale", msec.get("vertical_scale"), 4000.0)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    heightmap = read_heightmap_png16(input_path)
    stem = Path(input_path).stem
    if fmt == "png16":
        target = out_dir / f"{stem}.png"
        write_heightmap_png16(heightmap, target)
    elif fmt == "raw":
        target = out_dir / f"{stem}.raw"
        write_unity_raw(heightmap, target)
    else:
        target = out_dir / f"{stem}.obj"
        heightmap_to_obj(heightmap, MeshConfig(horizontal_scale, vertical_scale), target)
    _write_effective_config(out_dir, {
        "command": "export",
        "format": fmt,
        "input": str(input_path),
        "mesh": {"horizontal_scale": horizontal_scale, "vertical_scale": vertical_scale},
    })
    click.echo(f"wrote {target}")


@main.command("baseline")
@click.option("--n", "exponent", type=int, default=5, show_default=True, help="Grid exponent; output is (2^n+1) squared.")
@click.option("--roughness", type=float, default=0.5, show_default=True)
@click.option("--corners", type=str, default="0.5,0.5,0.5,0.5", show_default=True,
              help="Corner heights TL,TR,BL,BR in [0,1].")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@runtime_errors_to_exit1
def cmd_baseline(exponent, roughness, corners, seed, out_dir):
    """Generate a diamond-square heightmap as a classical comparison fixture."""
    try:
        corner_values = tuple(float(v) for v in corners.split(","))
        if len(corner_values) != 4:
            raise ValueError
    except ValueError:
        raise click.UsageError(f"--corners must be four comma-separated floats, got {corners!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = baselines.DiamondSquareConfig(
        exponent=exponent, roughness=roughness, corner_values=corner_values, seed=seed
    )
    grid = baselines.diamond_square(cfg)
    target = out_dir / "diamond_square.png"
    write_heightmap_png16(to_model_range(grid), target)
    _write_effective_config(out_dir, {
        "command": "baseline",
        "baseline": {"exponent": exponent, "roughness": roughness,
                     "corners": list(corner_values), "seed": seed},
    })
    click.echo(f"wrote {target} ({grid.shape[0]}x{grid.shape[1]})")


if __name__ == "__main__":
    main()
