"""Dataset preparation: slide a window over co-registered world rasters,
filter out mostly-black tiles, rank the survivors by Euclidean distance to a
reference texture, keep the top M, and persist everything behind a manifest.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from PIL import Image

from .export import read_heightmap_png16, read_texture_png, write_heightmap_png16, write_texture_png

MANIFEST_ENTRY_FIELDS = (
    "id",
    "origin_x",
    "origin_y",
    "size",
    "black_fraction",
    "ref_distance",
    "split",
    "heightmap_path",
    "texture_path",
)


@dataclass
class WorldImagePair:
    """A pair of co-registered world rasters, intensities in [0, 1]."""

    heightmap: np.ndarray  # (H, W)
    texture: np.ndarray  # (H, W, 3)
    meters_per_pixel: float = 1000.0

    def __post_init__(self):
        self.heightmap = np.asarray(self.heightmap, dtype=np.float64)
        self.texture = np.asarray(self.texture, dtype=np.float64)
        if self.heightmap.ndim != 2:
            raise ValueError(f"heightmap must be 2-D, got shape {self.heightmap.shape}")
        if self.texture.ndim != 3 or self.texture.shape[2] != 3:
            raise ValueError(f"texture must be HxWx3, got shape {self.texture.shape}")
        if self.heightmap.shape != self.texture.shape[:2]:
            raise ValueError(
                f"raster dimension mismatch: heightmap {self.heightmap.shape} "
                f"vs texture {self.texture.shape[:2]}"
            )
        for name, arr in (("heightmap", self.heightmap), ("texture", self.texture)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} intensities must lie in [0, 1]")


@dataclass
class TilePair:
    """An aligned (heightmap crop, texture crop) training sample."""

    id: str
    origin_x: int
    origin_y: int
    size: int
    heightmap: np.ndarray
    texture: np.ndarray
    black_fraction: float
    ref_distance: Optional[float] = None


@dataclass
class FilterConfig:
    tile_size: int = 512
    stride: int = 512
    max_black_fraction: float = 0.9
    black_intensity_threshold: float = 0.05
    reference_texture: Optional[np.ndarray] = None
    top_m: int = 1000

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0.0 <= self.max_black_fraction <= 1.0:
            raise ValueError("max_black_fraction must lie in [0, 1]")
        if self.top_m < 1:
            raise ValueError("top_m must be >= 1")

    def header_dict(self) -> dict:
        return {
            "tile_size": self.tile_size,
            "stride": self.stride,
            "max_black_fraction": self.max_black_fraction,
            "black_intensity_threshold": self.black_intensity_threshold,
            "top_m": self.top_m,
        }


@dataclass
class ManifestEntry:
    id: str
    origin_x: int
    origin_y: int
    size: int
    black_fraction: float
    ref_distance: Optional[float]
    split: str  # "train" | "val" | "" before splitting
    heightmap_path: str
    texture_path: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("manifest entry ids must be unique")


def black_fraction(heightmap: np.ndarray, black_threshold: float) -> float:
    """Fraction of pixels with intensity strictly below black_threshold."""
    arr = np.asarray(heightmap)
    if arr.size == 0:
        raise ValueError("empty heightmap")
    return float(np.count_nonzero(arr < black_threshold)) / arr.size


def tile_id(origin_y: int, origin_x: int) -> str:
    return f"tile_{origin_y:06d}_{origin_x:06d}"


def extract_tiles(
    world: WorldImagePair,
    tile_size: int,
    stride: int,
    black_threshold: float = 0.05,
) -> Iterator[TilePair]:
    """Slide a tile_size window through both rasters simultaneously.

    Yields tiles in row-major order at every origin where the full window
    fits; heightmap and texture crops share the same offsets.
    """
    h, w = world.heightmap.shape
    if tile_size > min(h, w):
        raise ValueError(f"tile_size {tile_size} exceeds raster dims {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    for y in range(0, h - tile_size + 1, stride):
        for x in range(0, w - tile_size + 1, stride):
            hm = world.heightmap[y : y + tile_size, x : x + tile_size]
            tex = world.texture[y : y + tile_size, x : x + tile_size]
            yield TilePair(
                id=tile_id(y, x),
                origin_x=x,
                origin_y=y,
                size=tile_size,
                heightmap=hm,
                texture=tex,
                black_fraction=black_fraction(hm, black_threshold),
            )


def filter_black(tiles: Iterable[TilePair], max_black_fraction: float) -> Iterator[TilePair]:
    """Keep tiles whose black fraction is strictly below the cutoff."""
    for tile in tiles:
        if tile.black_fraction is None:
            raise ValueError(f"tile {tile.id} has no black_fraction")
        if tile.black_fraction < max_black_fraction:
            yield tile


def texture_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two textures over all pixel-channel positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"texture shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def rank_by_reference(tiles: list[TilePair], reference: np.ndarray) -> list[TilePair]:
    """Attach ref_distance to every tile and sort ascending by (distance, id)."""
    for tile in tiles:
        tile.ref_distance = texture_distance(tile.texture, reference)
    return sorted(tiles, key=lambda t: (t.ref_distance, t.id))


def select_top_m(tiles: list[TilePair], reference: np.ndarray, m: int) -> list[TilePair]:
    """The m tiles closest to the reference texture, distance ties broken by id."""
    if not tiles:
        raise ValueError("no tiles to select from; dataset is unusable")
    if m < 1:
        raise ValueError("m must be >= 1")
    return rank_by_reference(list(tiles), reference)[:m]


def split_entries(entries: list[ManifestEntry], val_fraction: float, seed: int) -> None:
    """Deterministically tag round(val_fraction * N) entries as val, the rest train."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must lie in [0, 1)")
    n = len(entries)
    n_val = int(round(val_fraction * n))
    rng = np.random.default_rng(seed)
    val_idx = set(rng.permutation(n)[:n_val].tolist())
    for i, entry in enumerate(entries):
        entry.split = "val" if i in val_idx else "train"


def split_manifest(manifest: DatasetManifest, val_fraction: float, seed: int) -> DatasetManifest:
    split_entries(manifest.entries, val_fraction, seed)
    return manifest


def to_model_range(image: np.ndarray) -> np.ndarray:
    """Affine map [0, 1] -> [-1, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("input outside [0, 1]")
    return 2.0 * arr - 1.0


def from_model_range(image: np.ndarray) -> np.ndarray:
    """Inverse affine map [-1, 1] -> [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
        raise ValueError("input outside [-1, 1]")
    return (arr + 1.0) / 2.0


def raster_checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def persist_tiles(tiles: list[TilePair], out_dir) -> list[ManifestEntry]:
    """Write each tile's crops as PNGs (16-bit heightmap, 8-bit texture)."""
    out_dir = Path(out_dir)
    crops = out_dir / "crops"
    crops.mkdir(parents=True, exist_ok=True)
    entries = []
    for tile in tiles:
        hm_path = crops / f"{tile.id}_h.png"
        tex_path = crops / f"{tile.id}_t.png"
        write_heightmap_png16(to_model_range(tile.heightmap), hm_path)
        write_texture_png(to_model_range(tile.texture), tex_path)
        entries.append(
            ManifestEntry(
                id=tile.id,
                origin_x=tile.origin_x,
                origin_y=tile.origin_y,
                size=tile.size,
                black_fraction=tile.black_fraction,
                ref_distance=tile.ref_distance,
                split="",
                heightmap_path=str(hm_path.relative_to(out_dir)),
                texture_path=str(tex_path.relative_to(out_dir)),
            )
        )
    return entries


def write_manifest(manifest: DatasetManifest, path) -> None:
    """JSON Lines: one header line, then one entry per line."""
    lines = [json.dumps(manifest.header, sort_keys=True)]
    for entry in manifest.entries:
        lines.append(json.dumps(dataclasses.asdict(entry), sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    entries = []
    for line in lines[1:]:
        rec = json.loads(line)
        unknown = set(rec) - set(MANIFEST_ENTRY_FIELDS)
        if unknown:
            raise ValueError(f"{path}: unknown manifest fields {sorted(unknown)}")
        entries.append(ManifestEntry(**rec))
    return DatasetManifest(entries=entries, header=header)


def load_entry_heightmap(manifest_dir, entry: ManifestEntry) -> np.ndarray:
    """Heightmap crop in model range [-1, 1]."""
    return read_heightmap_png16(Path(manifest_dir) / entry.heightmap_path)


def load_entry_texture(manifest_dir, entry: ManifestEntry) -> np.ndarray:
    """Texture crop in model range [-1, 1]."""
    return read_texture_png(Path(manifest_dir) / entry.texture_path)


def prepare_dataset(
    world: WorldImagePair,
    config: FilterConfig,
    out_dir,
    val_fraction: float = 0.1,
    seed: int = 0,
) -> tuple[DatasetManifest, dict]:
    """Run extract -> filter -> rank -> top-M -> split -> persist.

    Returns the manifest (also written to out_dir/manifest.jsonl) and per-stage
    counts for reporting.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidates = list(
        extract_tiles(world, config.tile_size, config.stride, config.black_intensity_threshold)
    )
    survivors = list(filter_black(candidates, config.max_black_fraction))
    if not survivors:
        raise ValueError("no tiles survive the black-fraction filter; dataset is unusable")
    reference = config.reference_texture
    if reference is None:
        reference = survivors[0].texture
    selected = select_top_m(survivors, reference, config.top_m)
    entries = persist_tiles(selected, out_dir)
    split_entries(entries, val_fraction, seed)
    header = config.header_dict()
    header["source_checksums"] = {
        "heightmap": raster_checksum(world.heightmap),
        "texture": raster_checksum(world.texture),
    }
    manifest = DatasetManifest(entries=entries, header=header)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    counts = {
        "candidates": len(candidates),
        "after_black_filter": len(survivors),
        "selected": len(selected),
        "val": sum(1 for e in entries if e.split == "val"),
        "train": sum(1 for e in entries if e.split == "train"),
    }
    return manifest, counts


def load_world_rasters(heightmap_path, texture_path, meters_per_pixel: float = 1000.0) -> WorldImagePair:
    """Load source rasters from image files; heightmap is averaged to grayscale if RGB."""
    hm_img = Image.open(str(heightmap_path))
    hm = np.array(hm_img)
    if hm.dtype == np.uint16:
        hm = hm.astype(np.float64) / 65535.0
    else:
        hm = np.asarray(hm_img.convert("RGB"), dtype=np.float64).mean(axis=2) / 255.0
    if hm.ndim == 3:
        hm = hm.mean(axis=2)
    tex = np.asarray(Image.open(str(texture_path)).convert("RGB"), dtype=np.float64) / 255.0
    return WorldImagePair(heightmap=hm, texture=tex, meters_per_pixel=meters_per_pixel)
