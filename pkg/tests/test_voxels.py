"""Voxel format, sampling, and interpolation tests against brute-force oracles."""

import numpy as np
import pytest

from tgshape.voxels import (VoxelFormatError, VoxelShape, downsample_majority,
                            grid_points, grid_sample, load_voxels,
                            nearest_palette_color, save_voxels, surface_biased_sample,
                            surface_mask, upsample_grid, voxelize_samples)


def random_shape(r=8, seed=0, fill=0.4):
    rng = np.random.default_rng(seed)
    occ = (rng.random((r, r, r)) < fill).astype(np.uint8)
    rgb = rng.random((r, r, r, 3)) * occ[..., None]
    # quantize to byte-representable values so file round trips are exact
    rgb = np.rint(rgb * 255.0) / 255.0
    return VoxelShape(r, occ, rgb)


def sphere_shape(r=24, radius_frac=0.35, color=(0.8, 0.1, 0.1)):
    c = (np.arange(r) + 0.5) / r - 0.5
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    occ = (x ** 2 + y ** 2 + z ** 2 <= radius_frac ** 2).astype(np.uint8)
    rgb = np.zeros((r, r, r, 3))
    rgb[occ == 1] = color
    return VoxelShape(r, occ, rgb)


class TestFileFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        shape = random_shape(8, seed=3)
        p = tmp_path / "s.tgsv"
        save_voxels(shape, p)
        back = load_voxels(p)
        assert back.resolution == 8
        assert np.array_equal(back.occ, shape.occ)
        assert np.array_equal(back.rgb, shape.rgb)
        save_voxels(back, tmp_path / "s2.tgsv")
        assert (tmp_path / "s.tgsv").read_bytes() == (tmp_path / "s2.tgsv").read_bytes()

    def test_empty_shape(self, tmp_path):
        p = tmp_path / "e.tgsv"
        save_voxels(VoxelShape.empty(16), p)
        back = load_voxels(p)
        assert back.occ.sum() == 0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.tgsv"
        p.write_bytes(b"XXXX" + b"\x00" * 100)
        with pytest.raises(VoxelFormatError):
            load_voxels(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.tgsv"
        save_voxels(random_shape(8), p)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(VoxelFormatError):
            load_voxels(p)

    def test_non_power_of_two_resolution(self):
        with pytest.raises(VoxelFormatError):
            VoxelShape(12, np.zeros((12, 12, 12), dtype=np.uint8),
                       np.zeros((12, 12, 12, 3)))

    def test_x_fastest_layout(self, tmp_path):
        shape = VoxelShape.empty(2)
        shape.occ[1, 0, 0] = 1  # x=1 => second byte in x-fastest order
        p = tmp_path / "o.tgsv"
        save_voxels(shape, p)
        occ_bytes = p.read_bytes()[9:9 + 8]
        assert occ_bytes[1] == 1 and sum(occ_bytes) == 1


class TestGridSample:
    def test_counts(self):
        batch = grid_sample(sphere_shape(16), 16)
        assert batch.n == 4096 and batch.grid_res == 16

    def test_all_occupied(self):
        shape = VoxelShape(4, np.ones((4, 4, 4), dtype=np.uint8),
                           np.full((4, 4, 4, 3), 0.5))
        assert np.all(grid_sample(shape, 4).occ == 1)

    def test_full_resolution_bijection(self):
        shape = random_shape(8, seed=5)
        batch = grid_sample(shape, 8)
        back = voxelize_samples(batch.occ, batch.rgb, 8)
        assert np.array_equal(back.occ, shape.occ)
        assert np.allclose(back.rgb, shape.rgb)

    def test_downsampled_targets_read_enclosing_voxel(self):
        shape = random_shape(8, seed=6)
        batch = grid_sample(shape, 4)
        # the 4-grid cell center falls inside a known 8-grid voxel
        p0 = batch.points[0]
        ix = np.floor((p0 + 0.5) * 8).astype(int)
        assert batch.occ[0] == shape.occ[ix[0], ix[1], ix[2]]

    def test_points_in_unit_cube(self):
        pts = grid_points(5)
        assert pts.min() >= -0.5 and pts.max() <= 0.5

    def test_non_divisor_rejected(self):
        with pytest.raises(ValueError):
            grid_sample(random_shape(8), 3)


class TestVoxelize:
    def test_threshold_ties_occupied(self):
        occ = np.full(8, 0.4999)
        occ[3] = 0.5
        shape = voxelize_samples(occ, np.zeros((8, 3)), 2)
        assert shape.occ.sum() == 1

    def test_colors_masked_outside(self):
        occ = np.zeros(8)
        rgb = np.full((8, 3), 0.7)
        shape = voxelize_samples(occ, rgb, 2)
        assert np.all(shape.rgb == 0)


class TestSurfaceSample:
    def test_counts_and_determinism(self):
        shape = sphere_shape(16)
        b1 = surface_biased_sample(shape, 4096, 0.5, rng_seed=9)
        b2 = surface_biased_sample(shape, 4096, 0.5, rng_seed=9)
        assert b1.n == 4096
        assert np.array_equal(b1.points, b2.points)
        b3 = surface_biased_sample(shape, 4096, 0.5, rng_seed=10)
        assert not np.array_equal(b1.points, b3.points)

    def test_surface_fraction_statistic(self):
        # over 100 seeds on a sphere the mixed-neighborhood fraction must not
        # undershoot the requested surface fraction by more than 0.05
        shape = sphere_shape(16)
        mixed = surface_mask(shape.occ)
        total, hit = 0, 0
        for seed in range(100):
            batch = surface_biased_sample(shape, 256, 0.5, rng_seed=seed)
            ix = np.clip(np.floor((batch.points + 0.5) * 16).astype(int), 0, 15)
            hit += int(mixed[ix[:, 0], ix[:, 1], ix[:, 2]].sum())
            total += batch.n
        assert hit / total >= 0.5 - 0.05

    def test_no_surface_falls_back_uniform(self):
        batch = surface_biased_sample(VoxelShape.empty(8), 64, 0.5, rng_seed=0)
        assert batch.fallback_uniform and batch.n == 64


def brute_force_trilinear(values: np.ndarray, target_r: int) -> np.ndarray:
    """Scalar-loop interpolation oracle with explicit index clamping."""
    r = values.shape[0]
    C = values.shape[3]
    out = np.zeros((target_r, target_r, target_r, C))
    for tx in range(target_r):
        for ty in range(target_r):
            for tz in range(target_r):
                acc = np.zeros(C)
                ws = []
                for t in (tx, ty, tz):
                    s = (t + 0.5) * r / target_r - 0.5
                    i0 = int(np.floor(s))
                    f = s - i0
                    lo = min(max(i0, 0), r - 1)
                    hi = min(max(i0 + 1, 0), r - 1)
                    ws.append([(lo, 1.0 - f), (hi, f)])
                for ix, wx in ws[0]:
                    for iy, wy in ws[1]:
                        for iz, wz in ws[2]:
                            acc += wx * wy * wz * values[ix, iy, iz]
                out[tx, ty, tz] = acc
    return out


class TestUpsample:
    def test_constant_preserved(self):
        g = np.full((3, 3, 3, 2), 1.25)
        assert np.allclose(upsample_grid(g, 9), 1.25)

    def test_one_hot_corner_hand_weights(self):
        g = np.zeros((2, 2, 2, 1))
        g[0, 0, 0, 0] = 1.0
        out = upsample_grid(g, 4)[..., 0]
        w = np.array([1.0, 0.75, 0.25, 0.0])  # per-axis hat weights after clamping
        expect = w[:, None, None] * w[None, :, None] * w[None, None, :]
        assert np.allclose(out, expect, atol=1e-12)

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            g = rng.normal(size=(4, 4, 4, 2))
            assert np.allclose(upsample_grid(g, 7), brute_force_trilinear(g, 7), atol=1e-12)

    def test_ramp_reproduced(self):
        g = np.zeros((4, 4, 4, 1))
        g[..., 0] = (np.arange(4)[:, None, None] + 0.5) * np.ones((4, 4))
        out = upsample_grid(g, 8)[..., 0]
        expect = (np.arange(8) + 0.5) / 2.0
        assert np.allclose(out[1:7, 0, 0], expect[1:7])

    def test_downscale_rejected(self):
        with pytest.raises(ValueError):
            upsample_grid(np.zeros((4, 4, 4, 1)), 2)


class TestDownsample:
    def test_majority_blocks(self):
        shape = VoxelShape.empty(4)
        shape.occ[:2, :2, :2] = 1  # one full 2^3 block
        shape.rgb[:2, :2, :2] = (0.5, 0.25, 0.75)
        small = downsample_majority(shape, 2)
        assert small.occ[0, 0, 0] == 1 and small.occ.sum() == 1
        assert np.allclose(small.rgb[0, 0, 0], (0.5, 0.25, 0.75))


def test_nearest_palette_color():
    assert nearest_palette_color((0.79, 0.12, 0.1)) == "red"
    assert nearest_palette_color((0.1, 0.1, 0.1)) == "black"
    assert nearest_palette_color((0.88, 0.84, 0.12)) == "yellow"
