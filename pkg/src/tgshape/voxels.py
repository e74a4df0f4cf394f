"""Voxel shapes, query-point sampling, grid interpolation, and the TGSV file format.

Coordinates live in [-0.5, 0.5]^3 with voxel cell centers at
((i + 0.5)/r - 0.5). Grids are indexed [x, y, z] with z pointing up; flat
orderings (files, grid batches) are x-fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TGSV_MAGIC = b"TGSV"
TGSV_VERSION = 1

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.80, 0.10, 0.10),
    "blue": (0.10, 0.20, 0.80),
    "green": (0.10, 0.70, 0.20),
    "brown": (0.55, 0.35, 0.15),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "gray": (0.50, 0.50, 0.50),
    "yellow": (0.90, 0.85, 0.10),
}


def palette_array() -> tuple[list[str], np.ndarray]:
    names = list(PALETTE)
    return names, np.array([PALETTE[n] for n in names])


def nearest_palette_color(rgb) -> str:
    names, arr = palette_array()
    d = np.linalg.norm(arr - np.asarray(rgb, dtype=float), axis=1)
    return names[int(d.argmin())]


class VoxelFormatError(ValueError):
    """Malformed voxel file payload."""


@dataclass
class VoxelShape:
    resolution: int
    occ: np.ndarray    # (r,r,r) uint8 in {0,1}
    rgb: np.ndarray    # (r,r,r,3) float in [0,1], zero outside the shape

    def __post_init__(self):
        r = self.resolution
        if r < 1 or (r & (r - 1)) != 0:
            raise VoxelFormatError(f"resolution must be a power of two, got {r}")
        self.occ = np.ascontiguousarray(self.occ, dtype=np.uint8)
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.float64)
        if self.occ.shape != (r, r, r) or self.rgb.shape != (r, r, r, 3):
            raise VoxelFormatError(
                f"array shapes {self.occ.shape}/{self.rgb.shape} do not match resolution {r}")
        if self.occ.max(initial=0) > 1:
            raise VoxelFormatError("occupancy values must be 0/1")
        if self.rgb.min(initial=0.0) < 0.0 or self.rgb.max(initial=0.0) > 1.0:
            raise VoxelFormatError("color channels must lie in [0,1]")

    @classmethod
    def empty(cls, resolution: int) -> "VoxelShape":
        return cls(resolution, np.zeros((resolution,) * 3, dtype=np.uint8),
                   np.zeros((resolution,) * 3 + (3,)))


def encode_voxels(shape: VoxelShape) -> bytes:
    r = shape.resolution
    occ_flat = shape.occ.flatten(order="F")                       # x-fastest
    rgb_u8 = np.rint(shape.rgb * 255.0).astype(np.uint8)
    rgb_flat = rgb_u8.reshape(-1, 3)[
        np.arange(r ** 3).reshape((r, r, r), order="C").flatten(order="F")]
    return (TGSV_MAGIC + bytes([TGSV_VERSION]) + struct.pack("<I", r)
            + occ_flat.tobytes() + rgb_flat.tobytes())


def save_voxels(shape: VoxelShape, path: str | Path) -> None:
    Path(path).write_bytes(encode_voxels(shape))


def decode_voxels(buf: bytes, source: str = "buffer") -> VoxelShape:
    if len(buf) < 9 or buf[:4] != TGSV_MAGIC:
        raise VoxelFormatError(f"not a TGSV payload: {source}")
    if buf[4] != TGSV_VERSION:
        raise VoxelFormatError(f"unsupported TGSV version {buf[4]}")
    (r,) = struct.unpack_from("<I", buf, 5)
    if r < 1 or (r & (r - 1)) != 0:
        raise VoxelFormatError(f"resolution {r} is not a power of two")
    n = r ** 3
    if len(buf) != 9 + n + 3 * n:
        raise VoxelFormatError(f"payload size {len(buf)} wrong for resolution {r}")
    occ = np.frombuffer(buf, dtype=np.uint8, count=n, offset=9)
    if occ.max(initial=0) > 1:
        raise VoxelFormatError("occupancy bytes must be 0/1")
    rgb = np.frombuffer(buf, dtype=np.uint8, count=3 * n, offset=9 + n).reshape(n, 3)
    occ3 = occ.reshape((r, r, r), order="F")
    inv = np.empty(n, dtype=np.int64)
    inv[np.arange(n).reshape((r, r, r), order="C").flatten(order="F")] = np.arange(n)
    rgb3 = (rgb[inv].reshape((r, r, r, 3)) / 255.0)
    return VoxelShape(r, occ3.copy(), rgb3)


def load_voxels(path: str | Path) -> VoxelShape:
    return decode_voxels(Path(path).read_bytes(), source=str(path))


# -- sampling ----------------------------------------------------------------


@dataclass
class SampleBatch:
    """Query points with ground-truth targets read from an enclosing voxel."""

    points: np.ndarray            # (N,3) in [-0.5,0.5]^3
    occ: np.ndarray               # (N,) float 0/1; doubles as the inside indicator
    rgb: np.ndarray               # (N,3) float
    grid_res: int | None = None   # set when this is a full r^3 grid batch
    fallback_uniform: bool = False

    @property
    def n(self) -> int:
        return self.points.shape[0]


def grid_points(r: int) -> np.ndarray:
    """Cell centers of an r^3 lattice over [-0.5,0.5]^3, x-fastest order."""
    if r < 1:
        raise ValueError("grid resolution must be >= 1")
    c = (np.arange(r) + 0.5) / r - 0.5
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([x.flatten(order="F"), y.flatten(order="F"),
                     z.flatten(order="F")], axis=1)


def point_to_voxel(points: np.ndarray, r: int) -> tuple[np.ndarray, ...]:
    idx = np.floor((points + 0.5) * r).astype(np.int64)
    idx = np.clip(idx, 0, r - 1)
    return idx[:, 0], idx[:, 1], idx[:, 2]


def lookup_targets(shape: VoxelShape, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ix, iy, iz = point_to_voxel(points, shape.resolution)
    return shape.occ[ix, iy, iz].astype(np.float64), shape.rgb[ix, iy, iz]


def grid_sample(shape: VoxelShape, r: int) -> SampleBatch:
    if r < 1:
        raise ValueError("grid resolution must be >= 1")
    if r != shape.resolution and shape.resolution % r != 0:
        raise ValueError(f"grid resolution {r} must divide shape resolution {shape.resolution}")
    pts = grid_points(r)
    occ, rgb = lookup_targets(shape, pts)
    return SampleBatch(pts, occ, rgb, grid_res=r)


def surface_mask(occ: np.ndarray) -> np.ndarray:
    """Voxels within one cell of an occupancy change along any axis (outside counts empty)."""
    o = occ.astype(bool)
    padded = np.pad(o, 1, constant_values=False)
    mixed = np.zeros_like(o)
    for axis in range(3):
        for shift in (-1, 1):
            neighbor = np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
            mixed |= o != neighbor
    return mixed


def surface_biased_sample(shape: VoxelShape, n: int, surface_fraction: float = 0.5,
                          rng_seed: int = 0) -> SampleBatch:
    if n < 1:
        raise ValueError("sample count must be >= 1")
    if not 0.0 <= surface_fraction <= 1.0:
        raise ValueError("surface_fraction must lie in [0,1]")
    r = shape.resolution
    rng = np.random.default_rng(rng_seed)
    surf = np.argwhere(surface_mask(shape.occ))
    n_surf = int(surface_fraction * n)
    fallback = False
    if surf.shape[0] == 0:
        n_surf = 0
        fallback = surface_fraction > 0
    parts = []
    if n_surf:
        pick = surf[rng.integers(0, surf.shape[0], size=n_surf)]
        jitter = rng.random((n_surf, 3))
        parts.append((pick + jitter) / r - 0.5)
    n_uni = n - n_surf
    if n_uni:
        parts.append(rng.random((n_uni, 3)) - 0.5)
    pts = np.concatenate(parts, axis=0)
    occ, rgb = lookup_targets(shape, pts)
    return SampleBatch(pts, occ, rgb, grid_res=None, fallback_uniform=fallback)


# -- grid interpolation ------------------------------------------------------


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """1-D cell-center interpolation weights (dst x src), clamped at the ends."""
    u = (np.arange(dst) + 0.5) * src / dst - 0.5
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    lo = np.clip(i0, 0, src - 1)
    hi = np.clip(i0 + 1, 0, src - 1)
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample_grid(values: np.ndarray, target_r: int) -> np.ndarray:
    """Trilinear cell-center upsampling of an (r,r,r,C) grid to (R,R,R,C)."""
    if values.ndim != 4:
        raise ValueError("expected an (r,r,r,C) grid")
    r = values.shape[0]
    if values.shape[1] != r or values.shape[2] != r:
        raise ValueError("grid must be cubic")
    if target_r < r:
        raise ValueError(f"target resolution {target_r} < source {r}")
    m = _interp_matrix(r, target_r)
    out = values
    for axis in range(3):
        out = np.moveaxis(np.moveaxis(out, axis, -1) @ m.T, -1, axis)
    return out


def voxelize_samples(occ_pred: np.ndarray, rgb_pred: np.ndarray, r: int) -> VoxelShape:
    """Turn grid-batch predictions back into a shape. Threshold 0.5, ties occupied."""
    occ_pred = np.asarray(occ_pred, dtype=np.float64).reshape(-1)
    rgb_pred = np.asarray(rgb_pred, dtype=np.float64).reshape(-1, 3)
    if occ_pred.shape[0] != r ** 3 or rgb_pred.shape[0] != r ** 3:
        raise ValueError(f"predictions are not an r^3 grid batch (r={r})")
    occ = (occ_pred >= 0.5).astype(np.uint8)
    rgb = np.clip(rgb_pred, 0.0, 1.0) * occ[:, None]
    # undo the x-fastest flat ordering
    occ3 = occ.reshape((r, r, r), order="F")
    order = np.arange(r ** 3).reshape((r, r, r), order="C").flatten(order="F")
    inv = np.empty(r ** 3, dtype=np.int64)
    inv[order] = np.arange(r ** 3)
    rgb3 = rgb[inv].reshape((r, r, r, 3))
    return VoxelShape(r, occ3.copy(), rgb3)


def downsample_majority(shape: VoxelShape, r: int) -> VoxelShape:
    """Block-reduce to resolution r: occupancy by >= half-full blocks, color by occupied mean."""
    R = shape.resolution
    if R % r != 0:
        raise ValueError(f"{r} does not divide {R}")
    k = R // r
    occ_blocks = shape.occ.reshape(r, k, r, k, r, k).astype(np.float64)
    counts = occ_blocks.sum(axis=(1, 3, 5))
    occ = (counts >= (k ** 3) / 2.0).astype(np.uint8)
    rgb_blocks = (shape.rgb * shape.occ[..., None]).reshape(r, k, r, k, r, k, 3)
    sums = rgb_blocks.sum(axis=(1, 3, 5))
    with np.errstate(invalid="ignore"):
        mean = np.where(counts[..., None] > 0, sums / np.maximum(counts[..., None], 1), 0.0)
    return VoxelShape(r, occ, mean * occ[..., None])
