"""Alternating-update training loops for both GAN stages over a dataset
manifest, with CSV logging, checkpointing, and deterministic resumption.

Determinism contract: all per-step randomness (batch indices, latent draws)
derives from (seed, step), and parameters/optimizer state round-trip through
checkpoints losslessly, so a resumed run reproduces the uninterrupted loss
trace on the same device class.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data_pipeline import DatasetManifest, load_entry_heightmap, load_entry_texture
from .losses import (
    LossConfig,
    heightmap_discriminator_objective,
    heightmap_generator_objective,
    texture_discriminator_objective,
    texture_generator_objective,
)
from .models import (
    Checkpoint,
    CheckpointError,
    DiscriminatorSpec,
    GeneratorSpec,
    build_heightmap_discriminator,
    build_heightmap_generator,
    build_texture_discriminator,
    build_texture_generator,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    total_steps: int
    resolution: int = 32
    batch_size: int = 16
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    checkpoint_every: int = 500
    base_channels: int = 64
    latent_dim: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.resolution < 8 or self.resolution & (self.resolution - 1):
            raise ValueError("resolution must be a power of two >= 8")


@dataclass
class LogRecord:
    step: int
    generator_loss: float
    discriminator_loss: float
    wall_time_s: float


@dataclass
class TrainingLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, step: int, g_loss: float, d_loss: float, wall_time_s: float) -> None:
        if self.records and step <= self.records[-1].step:
            raise ValueError("log steps must be strictly increasing")
        self.records.append(LogRecord(step, g_loss, d_loss, wall_time_s))

    def write_csv(self, path, append: bool = False) -> None:
        path = Path(path)
        new_file = not (append and path.exists())
        with open(path, "a" if append else "w", newline="") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(["step", "g_loss", "d_loss", "wall_time_s"])
            for r in self.records:
                writer.writerow([r.step, f"{r.generator_loss:.8g}", f"{r.discriminator_loss:.8g}", f"{r.wall_time_s:.4f}"])

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        log = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                log.append(int(row["step"]), float(row["g_loss"]), float(row["d_loss"]), float(row["wall_time_s"]))
        return log


@dataclass
class TrainingResult:
    generator: Checkpoint
    discriminator: Checkpoint
    log: TrainingLog


def config_hash(config: TrainingConfig) -> str:
    """Hash of everything that must match for a resumed run to be coherent."""
    payload = asdict(config)
    payload.pop("total_steps")  # extending a run is legitimate
    payload.pop("checkpoint_every")
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def resolution_depth(resolution: int) -> int:
    """DCGAN depth for a 4x4 stem: resolution == 4 * 2^depth."""
    return int(math.log2(resolution)) - 2


def default_specs(config: TrainingConfig, stage: str):
    depth = resolution_depth(config.resolution)
    if stage == "heightmap":
        g = GeneratorSpec(
            kind="heightmap",
            output_resolution=config.resolution,
            base_channels=config.base_channels,
            depth=depth,
            output_channels=1,
            latent_dim=config.latent_dim,
        )
        d = DiscriminatorSpec(
            kind="heightmap",
            input_resolution=config.resolution,
            base_channels=config.base_channels,
            depth=depth,
            input_channels=1,
        )
    elif stage == "texture":
        g = GeneratorSpec(
            kind="texture",
            output_resolution=config.resolution,
            base_channels=config.base_channels,
            depth=depth,
            output_channels=3,
            skip_connections=True,
        )
        d = DiscriminatorSpec(
            kind="texture",
            input_resolution=config.resolution,
            base_channels=config.base_channels,
            depth=max(1, depth - 1),
            input_channels=4,
        )
    else:
        raise ValueError(f"unknown stage {stage!r}")
    return g, d


def _resize_batch(t: torch.Tensor, resolution: int) -> torch.Tensor:
    if t.shape[-1] == resolution and t.shape[-2] == resolution:
        return t
    return F.interpolate(t, size=(resolution, resolution), mode="bilinear", align_corners=False)


def load_training_tensors(
    manifest: DatasetManifest, manifest_dir, resolution: int, with_textures: bool, split: str = "train"
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Load manifest crops as float32 tensors in [-1, 1], resized to the
    training resolution. Entries with an empty split tag count as train."""
    entries = [e for e in manifest.entries if not e.split or e.split == split]
    if not entries:
        raise ValueError(f"manifest has no {split!r} entries")
    hms = np.stack([load_entry_heightmap(manifest_dir, e) for e in entries])
    x = torch.from_numpy(hms.astype(np.float32))[:, None, :, :]
    x = _resize_batch(x, resolution)
    y = None
    if with_textures:
        texs = np.stack([load_entry_texture(manifest_dir, e) for e in entries])
        y = torch.from_numpy(texs.astype(np.float32)).permute(0, 3, 1, 2)
        y = _resize_batch(y, resolution)
    return x, y


# --- single-model update steps (kept separate so parameter isolation between
#     the two players is directly testable) ---------------------------------

def heightmap_discriminator_step(g, d, opt_d, real, z, loss_cfg: LossConfig) -> float:
    with torch.no_grad():
        fake = g(z)
    loss = heightmap_discriminator_objective(d(real), d(fake), loss_cfg)
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    return float(loss.detach())


def heightmap_generator_step(g, d, opt_g, z, loss_cfg: LossConfig) -> float:
    loss = heightmap_generator_objective(d(g(z)), loss_cfg)
    opt_g.zero_grad()
    loss.backward()
    opt_g.step()
    return float(loss.detach())


def texture_discriminator_step(g, d, opt_d, x, y, loss_cfg: LossConfig) -> float:
    with torch.no_grad():
        fake = g(x)
    loss = texture_discriminator_objective(d(x, y), d(x, fake), loss_cfg)
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    return float(loss.detach())


def texture_generator_step(g, d, opt_g, x, y, loss_cfg: LossConfig) -> float:
    y_hat = g(x)
    loss = texture_generator_objective(d(x, y_hat), y, y_hat, loss_cfg)
    opt_g.zero_grad()
    loss.backward()
    opt_g.step()
    return float(loss.detach())


# ---------------------------------------------------------------------------

def _make_optimizer(model, config: TrainingConfig):
    return torch.optim.RMSprop(
        model.parameters(),
        lr=config.learning_rate,
        alpha=config.rmsprop_decay,
        eps=config.rmsprop_epsilon,
    )


def _init_or_resume(config: TrainingConfig, stage: str, resume_from=None):
    expected_hash = config_hash(config)
    if resume_from is not None:
        g_ckpt, d_ckpt = resume_from
        for ck in (g_ckpt, d_ckpt):
            if ck.config_hash != expected_hash:
                raise CheckpointError(
                    "resume refused: checkpoint config hash "
                    f"{ck.config_hash} does not match current config {expected_hash}"
                )
        if g_ckpt.training_step != d_ckpt.training_step:
            raise CheckpointError("resume refused: generator/discriminator steps disagree")
        g = restore_model(g_ckpt)
        d = restore_model(d_ckpt)
        opt_g = _make_optimizer(g, config)
        opt_d = _make_optimizer(d, config)
        restore_optimizer(opt_g, g_ckpt)
        restore_optimizer(opt_d, d_ckpt)
        start_step = g_ckpt.training_step
    else:
        torch.manual_seed(config.seed)
        g_spec, d_spec = default_specs(config, stage)
        if stage == "heightmap":
            g = build_heightmap_generator(g_spec)
            d = build_heightmap_discriminator(d_spec)
        else:
            g = build_texture_generator(g_spec)
            d = build_texture_discriminator(d_spec)
        opt_g = _make_optimizer(g, config)
        opt_d = _make_optimizer(d, config)
        start_step = 0
    return g, d, opt_g, opt_d, start_step, expected_hash


def _snapshot(g, d, opt_g, opt_d, step, chash, out_dir=None, tag="latest") -> tuple[Checkpoint, Checkpoint]:
    import tempfile

    def to_ckpt(model, optimizer, name):
        if out_dir is not None:
            path = Path(out_dir) / f"{name}_{tag}.ckpt"
        else:
            path = Path(tempfile.mkstemp(suffix=".ckpt")[1])
        save_checkpoint(model, path, training_step=step, config_hash=chash, optimizer=optimizer)
        from .models import load_checkpoint

        ck = load_checkpoint(path)
        if out_dir is None:
            path.unlink()
        return ck

    return to_ckpt(g, opt_g, "generator"), to_ckpt(d, opt_d, "discriminator")


def _dump_and_abort(step, g_loss, d_loss, g, d, opt_g, opt_d, chash, out_dir, cause=None):
    if out_dir is not None:
        dump = Path(out_dir) / f"diverged_step_{step}"
        dump.mkdir(parents=True, exist_ok=True)
        try:
            _snapshot(g, d, opt_g, opt_d, step, chash, out_dir=dump, tag="diverged")
        except Exception:  # state may itself be non-finite; the dump is best-effort
            pass
        (dump / "losses.json").write_text(json.dumps({"step": step, "g_loss": g_loss, "d_loss": d_loss}))
    raise TrainingDiverged(f"non-finite loss at step {step}: g={g_loss}, d={d_loss}") from cause


def _run_step(step_fn, step, g, d, opt_g, opt_d, chash, out_dir) -> float:
    """Run one update; a non-finite activation or loss aborts with a state dump."""
    try:
        loss = step_fn()
    except ValueError as e:
        if "non-finite" in str(e):
            _dump_and_abort(step, float("nan"), float("nan"), g, d, opt_g, opt_d, chash, out_dir, cause=e)
        raise
    if not math.isfinite(loss):
        _dump_and_abort(step, loss, loss, g, d, opt_g, opt_d, chash, out_dir)
    return loss


def train_heightmap_gan(
    manifest: DatasetManifest,
    config: TrainingConfig,
    manifest_dir,
    out_dir=None,
    resume_from: tuple[Checkpoint, Checkpoint] | None = None,
) -> TrainingResult:
    """Train the noise->heightmap GAN: per step, one discriminator update on a
    real batch vs generated fakes, then one generator update on fresh latents."""
    real_data, _ = load_training_tensors(manifest, manifest_dir, config.resolution, with_textures=False)
    n = real_data.shape[0]
    g, d, opt_g, opt_d, start_step, chash = _init_or_resume(config, "heightmap", resume_from)
    g.train()
    d.train()
    log = TrainingLog()
    t0 = time.monotonic()
    for step in range(start_step + 1, config.total_steps + 1):
        rng = np.random.default_rng([config.seed, step])
        idx = rng.integers(0, n, config.batch_size)
        real = real_data[torch.from_numpy(idx)]
        z_d = torch.from_numpy(rng.standard_normal((config.batch_size, config.latent_dim)).astype(np.float32))
        d_loss = _run_step(
            lambda: heightmap_discriminator_step(g, d, opt_d, real, z_d, config.loss),
            step, g, d, opt_g, opt_d, chash, out_dir,
        )
        z_g = torch.from_numpy(rng.standard_normal((config.batch_size, config.latent_dim)).astype(np.float32))
        g_loss = _run_step(
            lambda: heightmap_generator_step(g, d, opt_g, z_g, config.loss),
            step, g, d, opt_g, opt_d, chash, out_dir,
        )
        log.append(step, g_loss, d_loss, time.monotonic() - t0)
        if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            _snapshot(g, d, opt_g, opt_d, step, chash, out_dir=out_dir)
    final_step = max(start_step, config.total_steps)
    g_ck, d_ck = _snapshot(g, d, opt_g, opt_d, final_step, chash, out_dir=out_dir)
    return TrainingResult(generator=g_ck, discriminator=d_ck, log=log)


def train_texture_gan(
    manifest: DatasetManifest,
    config: TrainingConfig,
    manifest_dir,
    out_dir=None,
    resume_from: tuple[Checkpoint, Checkpoint] | None = None,
) -> TrainingResult:
    """Train the heightmap->texture GAN on real (x, y) pairs: discriminator on
    (x, y) vs (x, G(x)), then generator with adversarial + weighted L1 terms."""
    x_data, y_data = load_training_tensors(manifest, manifest_dir, config.resolution, with_textures=True)
    n = x_data.shape[0]
    g, d, opt_g, opt_d, start_step, chash = _init_or_resume(config, "texture", resume_from)
    g.train()
    d.train()
    log = TrainingLog()
    t0 = time.monotonic()
    for step in range(start_step + 1, config.total_steps + 1):
        rng = np.random.default_rng([config.seed, step])
        idx = torch.from_numpy(rng.integers(0, n, config.batch_size))
        x = x_data[idx]
        y = y_data[idx]
        d_loss = _run_step(
            lambda: texture_discriminator_step(g, d, opt_d, x, y, config.loss),
            step, g, d, opt_g, opt_d, chash, out_dir,
        )
        g_loss = _run_step(
            lambda: texture_generator_step(g, d, opt_g, x, y, config.loss),
            step, g, d, opt_g, opt_d, chash, out_dir,
        )
        log.append(step, g_loss, d_loss, time.monotonic() - t0)
        if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            _snapshot(g, d, opt_g, opt_d, step, chash, out_dir=out_dir)
    final_step = max(start_step, config.total_steps)
    g_ck, d_ck = _snapshot(g, d, opt_g, opt_d, final_step, chash, out_dir=out_dir)
    return TrainingResult(generator=g_ck, discriminator=d_ck, log=log)


def resume(
    checkpoints: tuple[Checkpoint, Checkpoint],
    manifest: DatasetManifest,
    config: TrainingConfig,
    manifest_dir,
    out_dir=None,
) -> TrainingResult:
    """Continue a run from saved (generator, discriminator) checkpoints."""
    stage = checkpoints[0].kind
    train = train_heightmap_gan if stage == "heightmap" else train_texture_gan
    return train(manifest, config, manifest_dir, out_dir=out_dir, resume_from=checkpoints)
