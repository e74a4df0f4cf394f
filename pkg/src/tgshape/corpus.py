"""Procedural text-shape corpus: parametric colored chairs and tables.

Each shape is rendered into a voxel grid (z up) and paired with one to five
template captions that always name the shape's primary color. Attributes are
recorded alongside so text-shape consistency can be checked mechanically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .voxels import PALETTE, VoxelShape, save_voxels

NUMBER_WORDS = {3: "three", 4: "four", 5: "five", 6: "six"}


@dataclass
class Attributes:
    category: str          # "chair" | "table"
    leg_count: int
    leg_shape: str         # "round" | "square"
    leg_thickness: str     # "thin" | "thick"
    seat_shape: str        # "round" | "square"
    back: bool
    armrests: bool
    height_class: str      # "short" | "tall"
    primary_color: str
    leg_color: str


@dataclass
class CorpusRecord:
    id: str
    caption: str
    voxel_path: str
    attributes: Attributes | None = None


@dataclass
class CorpusConfig:
    count: int = 16
    resolution: int = 32
    out_dir: str = "corpus"


def _disk_mask(r: int, cx: float, cy: float, radius: float) -> np.ndarray:
    x, y = np.meshgrid(np.arange(r) + 0.5, np.arange(r) + 0.5, indexing="ij")
    return (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2


def _square_mask(r: int, cx: float, cy: float, half: float) -> np.ndarray:
    x, y = np.meshgrid(np.arange(r) + 0.5, np.arange(r) + 0.5, indexing="ij")
    return (np.abs(x - cx) <= half) & (np.abs(y - cy) <= half)


def _leg_footprints(r: int, n_legs: int, leg_shape: str, hw: float,
                    ring_radius: float, angle0: float) -> list[np.ndarray]:
    center = r / 2.0
    masks = []
    for k in range(n_legs):
        a = angle0 + 2.0 * np.pi * k / n_legs
        cx = center + ring_radius * np.cos(a)
        cy = center + ring_radius * np.sin(a)
        if leg_shape == "round":
            masks.append(_disk_mask(r, cx, cy, hw + 0.45))
        else:
            masks.append(_square_mask(r, cx, cy, hw))
    return masks


def _footprints_separated(masks: list[np.ndarray], min_gap: int = 2) -> bool:
    # every pair of legs must be >= min_gap cells apart (Chebyshev) so the
    # bottom-slab connected-component count equals the leg count
    boxes = []
    for m in masks:
        if not m.any():
            return False
        xs, ys = np.nonzero(m)
        boxes.append((xs.min(), xs.max(), ys.min(), ys.max()))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            dx = max(boxes[j][0] - boxes[i][1], boxes[i][0] - boxes[j][1], 0)
            dy = max(boxes[j][2] - boxes[i][3], boxes[i][2] - boxes[j][3], 0)
            if max(dx, dy) < min_gap:
                return False
    return True


def build_shape(r: int, attrs: Attributes) -> VoxelShape:
    """Render one parametric shape; deterministic in (r, attrs)."""
    occ = np.zeros((r, r, r), dtype=np.uint8)
    rgb = np.zeros((r, r, r, 3))
    primary = np.array(PALETTE[attrs.primary_color])
    leg_rgb = np.array(PALETTE[attrs.leg_color])
    center = r / 2.0

    total_h = int(r * (0.88 if attrs.height_class == "tall" else 0.62))
    seat_half = r * 0.36 if attrs.seat_shape == "square" else r * 0.38
    seat_t = max(2, r // 14)
    if attrs.category == "table":
        leg_h = int(total_h * 0.72)
    else:
        leg_h = int(total_h * 0.42)
    leg_h = max(leg_h, int(np.ceil(0.2 * r)) + 1)  # legs must pierce the bottom slab
    seat_z0 = 1 + leg_h

    # legs span >= 3 cells so a coordinate-conditioned field can resolve them
    hw = max(1.5, r / 21.0) if attrs.leg_thickness == "thin" \
        else max(2.5, r / 13.0)
    ring = seat_half - hw - 1.5
    angle0 = np.pi / attrs.leg_count + (np.pi / 4.0 if attrs.leg_count == 4 else 0.0)
    masks = _leg_footprints(r, attrs.leg_count, attrs.leg_shape, hw, ring, angle0)
    while not _footprints_separated(masks) and hw > 1.0:
        hw -= 0.5  # shrink legs until the ring has room for all of them
        masks = _leg_footprints(r, attrs.leg_count, attrs.leg_shape, hw, ring, angle0)
    for m in masks:
        region = m[:, :, None] & np.ones(leg_h, dtype=bool)[None, None, :]
        occ[:, :, 1:1 + leg_h][region] = 1
        rgb[:, :, 1:1 + leg_h][region] = leg_rgb

    if attrs.seat_shape == "round":
        seat = _disk_mask(r, center, center, seat_half)
    else:
        seat = _square_mask(r, center, center, seat_half)
    z1 = min(seat_z0 + seat_t, r)
    occ[:, :, seat_z0:z1][seat] = 1
    rgb[:, :, seat_z0:z1][seat] = primary

    if attrs.back:
        back_t = max(2, r // 16)
        back_top = min(1 + total_h, r)
        xg, yg = np.meshgrid(np.arange(r) + 0.5, np.arange(r) + 0.5, indexing="ij")
        strip = seat & (yg >= center + seat_half - back_t)
        occ[:, :, z1:back_top][strip] = 1
        rgb[:, :, z1:back_top][strip] = primary
        if attrs.armrests:
            arm_t = max(1, r // 20)
            arm_top = min(z1 + (back_top - z1) // 2, r)
            arms = seat & ((xg <= center - seat_half + arm_t)
                           | (xg >= center + seat_half - arm_t)) \
                        & (yg < center + seat_half - back_t)
            occ[:, :, z1:arm_top][arms] = 1
            rgb[:, :, z1:arm_top][arms] = primary

    # the caption names the primary color; keep it dominant so a mean-color
    # probe of the voxels recovers it
    n_occ = int(occ.sum())
    n_primary = int((occ & np.all(np.isclose(rgb, primary), axis=-1)).sum())
    if n_occ and n_primary / n_occ < 0.8:
        leg_region = (occ == 1) & np.all(np.isclose(rgb, leg_rgb), axis=-1)
        rgb[leg_region] = primary
        attrs.leg_color = attrs.primary_color
    return VoxelShape(r, occ, rgb * occ[..., None])


def _captions(attrs: Attributes, rng: np.random.Generator) -> list[str]:
    c, cat = attrs.primary_color, attrs.category
    n_word = NUMBER_WORDS[attrs.leg_count]
    pool = [
        f"a {c} {cat}",
        f"a {c} {attrs.seat_shape} {cat}",
        f"a {c} {cat} with {n_word} legs",
        f"a {c} {cat} with {n_word} {attrs.leg_thickness} legs",
        f"a {attrs.height_class} {c} {cat}",
        f"a {c} {attrs.seat_shape} {cat} with {n_word} {attrs.leg_thickness} legs",
        f"a {attrs.height_class} {c} {cat} with {n_word} legs",
    ]
    if cat == "chair" and attrs.armrests:
        pool.append(f"a {c} chair with armrests")
    k = int(rng.integers(1, 6))
    idx = rng.permutation(len(pool))[:k]
    return [pool[i] for i in sorted(idx)]


def sample_attributes(rng: np.random.Generator) -> Attributes:
    back = bool(rng.random() < 0.55)
    colors = list(PALETTE)
    primary = colors[int(rng.integers(len(colors)))]
    leg = primary if rng.random() < 0.7 else colors[int(rng.integers(len(colors)))]
    return Attributes(
        category="chair" if back else "table",
        leg_count=int(rng.integers(3, 7)),
        leg_shape=["round", "square"][int(rng.integers(2))],
        leg_thickness=["thin", "thick"][int(rng.integers(2))],
        seat_shape=["round", "square"][int(rng.integers(2))],
        back=back,
        armrests=back and bool(rng.random() < 0.4),
        height_class=["short", "tall"][int(rng.integers(2))],
        primary_color=primary,
        leg_color=leg,
    )


def generate_synthetic_corpus(config: CorpusConfig, rng_seed: int = 0) -> list[CorpusRecord]:
    if config.resolution < 16:
        raise ValueError("resolution below 16 cannot render the thinnest parts")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[CorpusRecord] = []
    for i in range(config.count):
        rng = np.random.default_rng(np.random.SeedSequence((rng_seed, i)))
        attrs = sample_attributes(rng)
        shape = build_shape(config.resolution, attrs)
        vox_path = out / f"shape_{i:04d}.tgsv"
        save_voxels(shape, vox_path)
        for k, caption in enumerate(_captions(attrs, rng)):
            records.append(CorpusRecord(
                id=f"{i:04d}_{k}", caption=caption,
                voxel_path=str(vox_path), attributes=attrs))
    write_manifest(out / "manifest.jsonl", records)
    return records


def write_manifest(path: str | Path, records: list[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {"id": rec.id, "caption": rec.caption, "voxel_path": rec.voxel_path}
            if rec.attributes is not None:
                row["attributes"] = asdict(rec.attributes)
            fh.write(json.dumps(row) + "\n")


def load_manifest(path: str | Path) -> list[CorpusRecord]:
    records = []
    base = Path(path).parent
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if not row.get("caption"):
            raise ValueError(f"record {row.get('id')} has an empty caption")
        vp = row["voxel_path"]
        if not Path(vp).is_absolute() and not Path(vp).exists():
            cand = base / Path(vp).name
            if cand.exists():
                vp = str(cand)
        if not Path(vp).exists():
            raise FileNotFoundError(f"voxel file missing for record {row['id']}: {vp}")
        attrs = Attributes(**row["attributes"]) if "attributes" in row else None
        records.append(CorpusRecord(row["id"], row["caption"], vp, attrs))
    return records
