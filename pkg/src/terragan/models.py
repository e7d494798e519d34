"""The four networks: noise->heightmap generator, heightmap discriminator,
heightmap->texture generator (encoder-decoder with skips), and the two-input
texture discriminator. All are built from declarative resolution-parameterized
specs so full 512px models and small desk-scale models share one code path.

Checkpoints are a self-describing binary container: a JSON header (version,
kind, spec, step, normalization contract, config hash, array directory)
followed by raw little-endian blobs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

CHECKPOINT_MAGIC = b"TGCKPT1\n"
CHECKPOINT_VERSION = 1
MODEL_RANGE = "[-1,1]"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str  # "heightmap" | "texture"
    output_resolution: int = 512
    base_channels: int = 64
    depth: int = 7
    output_channels: int = 1
    skip_connections: bool = False
    latent_dim: int = 100

    def __post_init__(self):
        if self.kind not in ("heightmap", "texture"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.base_channels < 1 or self.depth < 1:
            raise ValueError("base_channels and depth must be >= 1")
        if not _is_pow2(self.output_resolution):
            raise ValueError(f"output_resolution {self.output_resolution} is not a power of two")
        if self.kind == "heightmap":
            if self.output_resolution != 4 * 2**self.depth:
                raise ValueError(
                    f"heightmap generator needs output_resolution == 4*2^depth; "
                    f"got {self.output_resolution} with depth {self.depth}"
                )
            if self.output_channels != 1:
                raise ValueError("heightmap generator emits 1 channel")
            if self.latent_dim < 1:
                raise ValueError("latent_dim must be >= 1")
        else:
            if not self.skip_connections:
                raise ValueError("texture generator requires skip_connections")
            if self.output_channels != 3:
                raise ValueError("texture generator emits 3 channels")
            if self.output_resolution % 2**self.depth != 0 or self.output_resolution < 2**self.depth:
                raise ValueError(
                    f"texture depth {self.depth} too deep for resolution {self.output_resolution}"
                )


@dataclass(frozen=True)
class DiscriminatorSpec:
    kind: str  # "heightmap" | "texture"
    input_resolution: int = 512
    base_channels: int = 64
    depth: int = 7
    input_channels: int = 1

    def __post_init__(self):
        if self.kind not in ("heightmap", "texture"):
            raise ValueError(f"unknown discriminator kind {self.kind!r}")
        if self.base_channels < 1 or self.depth < 1:
            raise ValueError("base_channels and depth must be >= 1")
        if self.kind == "heightmap":
            if self.input_resolution != 4 * 2**self.depth:
                raise ValueError(
                    f"heightmap discriminator needs input_resolution == 4*2^depth; "
                    f"got {self.input_resolution} with depth {self.depth}"
                )
            if self.input_channels != 1:
                raise ValueError("heightmap discriminator consumes 1 channel")
        else:
            if self.input_channels != 4:
                raise ValueError("texture discriminator consumes 1+3=4 channels")
            if self.input_resolution % 2**self.depth != 0 or self.input_resolution < 2**self.depth:
                raise ValueError(
                    f"texture depth {self.depth} too deep for resolution {self.input_resolution}"
                )


def _channel_ladder(base: int, depth: int, cap_mult: int = 8) -> list[int]:
    return [min(base * 2**i, base * cap_mult) for i in range(depth)]


class HeightmapGenerator(nn.Module):
    """DCGAN-style: project the latent to a 4x4 feature map, then a stack of
    fractionally-strided convolutions up to the output resolution, tanh out."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        assert spec.kind == "heightmap"
        self.spec = spec
        cs = list(reversed(_channel_ladder(spec.base_channels, spec.depth)))
        self.project = nn.Linear(spec.latent_dim, cs[0] * 4 * 4)
        blocks = []
        for i in range(spec.depth - 1):
            blocks += [
                nn.ConvTranspose2d(cs[i], cs[i + 1], 4, stride=2, padding=1),
                nn.BatchNorm2d(cs[i + 1]),
                nn.ReLU(inplace=True),
            ]
        blocks += [
            nn.ConvTranspose2d(cs[-1], spec.output_channels, 4, stride=2, padding=1),
            nn.Tanh(),
        ]
        self.head = nn.Sequential(
            nn.BatchNorm2d(cs[0]),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(*blocks)
        self._c0 = cs[0]

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(
                f"expected latents of shape (n, {self.spec.latent_dim}), got {tuple(z.shape)}"
            )
        h = self.project(z).view(-1, self._c0, 4, 4)
        return self.blocks(self.head(h))


class HeightmapDiscriminator(nn.Module):
    """Stride-2 convolution stack down to 4x4, then a valid conv to a single
    linear score per sample (no output squashing)."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        assert spec.kind == "heightmap"
        self.spec = spec
        cs = _channel_ladder(spec.base_channels, spec.depth)
        layers = []
        in_ch = spec.input_channels
        for i, out_ch in enumerate(cs):
            layers.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, 4, stride=1, padding=0))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        res = self.spec.input_resolution
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels or x.shape[2:] != (res, res):
            raise ValueError(
                f"expected input of shape (n, {self.spec.input_channels}, {res}, {res}), "
                f"got {tuple(x.shape)}"
            )
        return self.net(x).view(x.shape[0])


class TextureGenerator(nn.Module):
    """Encoder-decoder with skip connections (U-Net), heightmap in, RGB out."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        assert spec.kind == "texture"
        self.spec = spec
        d = spec.depth
        enc = _channel_ladder(spec.base_channels, d)
        self.down_convs = nn.ModuleList()
        self.down_norms = nn.ModuleList()
        in_ch = 1
        for i, out_ch in enumerate(enc):
            self.down_convs.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            self.down_norms.append(nn.BatchNorm2d(out_ch) if i > 0 else nn.Identity())
            in_ch = out_ch
        self.up_convs = nn.ModuleList()
        self.up_norms = nn.ModuleList()
        for j in range(d):
            up_in = enc[d - 1] if j == 0 else enc[d - 1 - j] * 2  # decoder + skip concat
            up_out = enc[d - 2 - j] if j < d - 1 else spec.output_channels
            self.up_convs.append(nn.ConvTranspose2d(up_in, up_out, 4, stride=2, padding=1))
            self.up_norms.append(nn.BatchNorm2d(up_out) if j < d - 1 else nn.Identity())
        self.act_down = nn.LeakyReLU(0.2, inplace=False)
        self.act_up = nn.ReLU(inplace=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        res = self.spec.output_resolution
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (res, res):
            raise ValueError(f"expected input of shape (n, 1, {res}, {res}), got {tuple(x.shape)}")
        skips = []
        h = x
        for conv, norm in zip(self.down_convs, self.down_norms):
            h = self.act_down(norm(conv(h)))
            skips.append(h)
        h = skips[-1]
        d = self.spec.depth
        for j, (conv, norm) in enumerate(zip(self.up_convs, self.up_norms)):
            if j > 0:
                h = torch.cat([h, skips[d - 1 - j]], dim=1)
            h = conv(h)
            if j < d - 1:
                h = self.act_up(norm(h))
        return torch.tanh(h)


class TextureDiscriminator(nn.Module):
    """Patch-style: judges channel-concatenated (heightmap, texture) pairs and
    averages the patch scores to one linear scalar per sample."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        assert spec.kind == "texture"
        self.spec = spec
        cs = _channel_ladder(spec.base_channels, spec.depth)
        layers = []
        in_ch = spec.input_channels
        for i, out_ch in enumerate(cs):
            layers.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, 3, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, heightmap: torch.Tensor, texture: torch.Tensor) -> torch.Tensor:
        if heightmap.ndim != 4 or texture.ndim != 4:
            raise ValueError("expected 4-D (n, c, h, w) inputs")
        if heightmap.shape[2:] != texture.shape[2:]:
            raise ValueError(
                f"spatial mismatch between heightmap {tuple(heightmap.shape[2:])} "
                f"and texture {tuple(texture.shape[2:])}"
            )
        if heightmap.shape[1] != 1 or texture.shape[1] != 3:
            raise ValueError("expected 1-channel heightmap and 3-channel texture")
        pair = torch.cat([heightmap, texture], dim=1)
        patches = self.net(pair)
        return patches.mean(dim=(1, 2, 3))


def build_heightmap_generator(spec: GeneratorSpec) -> HeightmapGenerator:
    if spec.kind != "heightmap":
        raise ValueError("spec.kind must be 'heightmap'")
    return HeightmapGenerator(spec)


def build_heightmap_discriminator(spec: DiscriminatorSpec) -> HeightmapDiscriminator:
    if spec.kind != "heightmap":
        raise ValueError("spec.kind must be 'heightmap'")
    return HeightmapDiscriminator(spec)


def build_texture_generator(spec: GeneratorSpec) -> TextureGenerator:
    if spec.kind != "texture":
        raise ValueError("spec.kind must be 'texture'")
    return TextureGenerator(spec)


def build_texture_discriminator(spec: DiscriminatorSpec) -> TextureDiscriminator:
    if spec.kind != "texture":
        raise ValueError("spec.kind must be 'texture'")
    return TextureDiscriminator(spec)


def build_model(spec):
    if isinstance(spec, GeneratorSpec):
        return build_heightmap_generator(spec) if spec.kind == "heightmap" else build_texture_generator(spec)
    if isinstance(spec, DiscriminatorSpec):
        return (
            build_heightmap_discriminator(spec)
            if spec.kind == "heightmap"
            else build_texture_discriminator(spec)
        )
    raise TypeError(f"unknown spec type {type(spec)!r}")


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    role: str  # "generator" | "discriminator"
    spec: GeneratorSpec | DiscriminatorSpec
    training_step: int
    config_hash: str | None
    state: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray]
    optimizer_meta: dict

    @property
    def kind(self) -> str:
        return self.spec.kind


class CheckpointError(Exception):
    pass


def _spec_role(spec) -> str:
    return "generator" if isinstance(spec, GeneratorSpec) else "discriminator"


def _flatten_optimizer(optimizer) -> tuple[dict[str, np.ndarray], dict]:
    sd = optimizer.state_dict()
    arrays: dict[str, np.ndarray] = {}
    meta = {"param_groups": sd["param_groups"], "scalars": {}}
    for idx, st in sd["state"].items():
        for key, val in st.items():
            if torch.is_tensor(val):
                arrays[f"{idx}::{key}"] = val.detach().cpu().numpy()
            else:
                meta["scalars"][f"{idx}::{key}"] = val
    return arrays, meta


def restore_optimizer(optimizer, ckpt: Checkpoint) -> None:
    """Load serialized optimizer state back into a freshly built optimizer."""
    if not ckpt.optimizer_meta:
        return
    state: dict[int, dict] = {}
    for flat_key, arr in ckpt.optimizer_state.items():
        idx, key = flat_key.split("::", 1)
        state.setdefault(int(idx), {})[key] = torch.from_numpy(arr.copy())
    for flat_key, val in ckpt.optimizer_meta.get("scalars", {}).items():
        idx, key = flat_key.split("::", 1)
        state.setdefault(int(idx), {})[key] = val
    optimizer.load_state_dict(
        {"state": state, "param_groups": ckpt.optimizer_meta["param_groups"]}
    )


def save_checkpoint(
    model: nn.Module,
    path,
    training_step: int = 0,
    config_hash: str | None = None,
    optimizer=None,
) -> None:
    spec = model.spec
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    opt_arrays, opt_meta = _flatten_optimizer(optimizer) if optimizer is not None else ({}, {})

    blobs: list[tuple[str, np.ndarray]] = []
    for name, arr in state.items():
        blobs.append((f"param::{name}", arr))
    for name, arr in opt_arrays.items():
        blobs.append((f"opt::{name}", arr))

    directory = []
    payload = bytearray()
    for name, arr in blobs:
        shape = list(arr.shape)  # ascontiguousarray promotes 0-d arrays to 1-d
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        directory.append(
            {"name": name, "dtype": arr.dtype.str.replace(">", "<"), "shape": shape,
             "offset": len(payload), "nbytes": len(raw)}
        )
        payload.extend(raw)

    header = {
        "version": CHECKPOINT_VERSION,
        "role": _spec_role(spec),
        "kind": spec.kind,
        "spec": asdict(spec),
        "training_step": int(training_step),
        "normalization": MODEL_RANGE,
        "config_hash": config_hash,
        "arrays": directory,
        "optimizer_meta": opt_meta,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(bytes(payload))


def load_checkpoint(path, expect_kind: str | None = None, expect_role: str | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (head_len,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off : off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    off += head_len
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if expect_kind is not None and header["kind"] != expect_kind:
        raise CheckpointError(f"{path}: kind is {header['kind']!r}, expected {expect_kind!r}")
    if expect_role is not None and header["role"] != expect_role:
        raise CheckpointError(f"{path}: role is {header['role']!r}, expected {expect_role!r}")

    spec_cls = GeneratorSpec if header["role"] == "generator" else DiscriminatorSpec
    spec_fields = {f.name for f in spec_cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    spec_dict = header["spec"]
    unknown = set(spec_dict) - spec_fields
    if unknown:
        raise CheckpointError(f"{path}: unknown spec fields {sorted(unknown)}")
    spec = spec_cls(**spec_dict)

    state: dict[str, np.ndarray] = {}
    opt_arrays: dict[str, np.ndarray] = {}
    for rec in header["arrays"]:
        start = off + rec["offset"]
        raw = data[start : start + rec["nbytes"]]
        if len(raw) != rec["nbytes"]:
            raise CheckpointError(f"{path}: truncated blob {rec['name']!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
        if rec["name"].startswith("param::"):
            state[rec["name"][len("param::"):]] = arr
        elif rec["name"].startswith("opt::"):
            opt_arrays[rec["name"][len("opt::"):]] = arr
    return Checkpoint(
        role=header["role"],
        spec=spec,
        training_step=header["training_step"],
        config_hash=header.get("config_hash"),
        state=state,
        optimizer_state=opt_arrays,
        optimizer_meta=header.get("optimizer_meta") or {},
    )


def restore_model(ckpt: Checkpoint) -> nn.Module:
    """Rebuild the module a checkpoint describes and load its parameters."""
    model = build_model(ckpt.spec)
    tensors = {k: torch.from_numpy(v.copy()) for k, v in ckpt.state.items()}
    model.load_state_dict(tensors)
    return model


def load_model(path, expect_kind: str | None = None, expect_role: str | None = None) -> tuple[nn.Module, Checkpoint]:
    ckpt = load_checkpoint(path, expect_kind=expect_kind, expect_role=expect_role)
    return restore_model(ckpt), ckpt
