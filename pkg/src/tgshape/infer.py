"""Inference: field evaluation, diversified generation, and text edits.

All operations are pure functions of (inputs, loaded parameters); nothing
here mutates the model, so concurrent calls are safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat_cols, no_grad
from .config import Profile, load_config
from .models import sample_noise, tile_rows
from .text import Vocab
from .train import (STAGES, Pipeline, find_latest_checkpoint)
from .voxels import VoxelShape, grid_points, voxelize_samples

MAX_FIELD_RES = 128
DEFAULT_CHUNK = 4096


@dataclass
class LatentFeature:
    """One shape's latent code, split into shape and color halves."""
    f_s: np.ndarray
    f_c: np.ndarray

    @property
    def concat(self) -> np.ndarray:
        return np.concatenate([self.f_s, self.f_c], axis=1)


@dataclass
class GeneratedShape:
    feature: LatentFeature
    grid: VoxelShape
    caption: str
    noise_seed: int


def sample_seed(master_seed: int, index: int) -> int:
    """Per-sample noise seed derived from a master seed; recorded per shape.

    Index 0 is the master itself, so feeding a recorded sample seed back as
    the seed of a single-sample or edit request replays that exact sample.
    """
    if index == 0:
        return int(master_seed)
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1)[0])


class InferenceSession:
    """Loaded model state plus the decode helpers built on it."""

    def __init__(self, pipeline: Pipeline, stage: str):
        self.pipe = pipeline
        self.profile = pipeline.profile
        self.stage = stage
        self.request_count = 0

    @classmethod
    def from_run_dir(cls, run_dir: str | Path, profile: Profile | None = None,
                     stage: str | None = None) -> "InferenceSession":
        """Load the newest checkpoint, or the newest of one training stage."""
        run = Path(run_dir)
        if stage is not None and stage not in STAGES:
            raise ValueError(f"unknown stage '{stage}'")
        if profile is None:
            profile = load_config(run / "config.ini")
        vocab = Vocab.load(run / "vocab.txt")
        pipe = Pipeline(profile, vocab)
        candidates = [stage] if stage is not None else list(reversed(STAGES))
        for st in candidates:
            ckpt = find_latest_checkpoint(run, st)
            if ckpt is not None:
                pipe.load(ckpt)
                return cls(pipe, st)
        raise FileNotFoundError(f"no checkpoint found in {run}")

    # -- text and field plumbing --------------------------------------------

    def text_features(self, caption: str) -> tuple[Tensor, LatentFeature]:
        if not caption.strip():
            raise ValueError("empty caption")
        with no_grad():
            words, fb_s, fb_c = self.pipe.text_features(caption)
        return words, LatentFeature(fb_s.data.copy(), fb_c.data.copy())

    def field_values(self, feature: LatentFeature, words_shape: Tensor,
                     pts: np.ndarray, words_color: Tensor | None = None,
                     chunk: int = DEFAULT_CHUNK) -> tuple[np.ndarray, np.ndarray]:
        """Raw (pre-threshold) occupancy and color at arbitrary points.

        Each branch queries attention with its own latent half, mirroring the
        trained decoder: occupancy never sees f_c, color never sees f_s.
        """
        if words_color is None:
            words_color = words_shape
        pipe = self.pipe
        dtype = pipe.dtype
        f_s = Tensor(feature.f_s.astype(dtype))
        f_c = Tensor(feature.f_c.astype(dtype))
        ws, _ = pipe.text.word_halves(words_shape)
        _, wc = pipe.text.word_halves(words_color)
        occ_parts, rgb_parts = [], []
        with no_grad():
            for lo in range(0, pts.shape[0], chunk):
                p = pts[lo:lo + chunk]
                pt = Tensor(p.astype(dtype))
                loc_s, _, r_s = pipe.wlst_s(
                    ws, concat_cols([tile_rows(f_s, p.shape[0]), pt]))
                loc_c, _, _ = pipe.wlst_c(
                    wc, concat_cols([tile_rows(f_c, p.shape[0]), pt]))
                occ_parts.append(pipe.sdec.occupancy(f_s, p, loc_s, r_s).data)
                rgb_parts.append(pipe.sdec.color(f_c, p, loc_c).data)
        return np.concatenate(occ_parts, axis=0), np.concatenate(rgb_parts, axis=0)

    def evaluate_field(self, feature: LatentFeature, words: Tensor, r: int,
                       words_color: Tensor | None = None) -> VoxelShape:
        if r <= 0:
            raise ValueError("resolution must be positive")
        if r > MAX_FIELD_RES:
            raise ValueError(f"resolution {r} exceeds cap {MAX_FIELD_RES}")
        pts = grid_points(r)
        occ, rgb = self.field_values(feature, words, pts, words_color)
        return voxelize_samples(occ, rgb, r)

    # -- generation ----------------------------------------------------------

    def feature_from_noise(self, text_feature: LatentFeature,
                           seed: int) -> LatentFeature:
        z = sample_noise(self.profile.d_z, 1, seed, dtype=self.pipe.dtype)
        with no_grad():
            fh_s, fh_c = self.pipe.gen(Tensor(text_feature.concat.astype(self.pipe.dtype)),
                                       Tensor(z))
        return LatentFeature(fh_s.data.copy(), fh_c.data.copy())

    def generate(self, caption: str, m: int, rng_seed: int,
                 resolution: int | None = None) -> list[GeneratedShape]:
        if m < 1:
            raise ValueError("need at least one sample")
        r = resolution or self.profile.resolution
        words, text_feat = self.text_features(caption)
        out = []
        for i in range(m):
            seed = sample_seed(rng_seed, i)
            feat = self.feature_from_noise(text_feat, seed)
            grid = self.evaluate_field(feat, words, r)
            out.append(GeneratedShape(feat, grid, caption, seed))
        self.request_count += 1
        return out

    def manipulate(self, original: str, edited: str, mode: str, seed: int,
                   resolution: int | None = None) -> tuple[GeneratedShape, GeneratedShape]:
        if mode not in ("shape-edit", "color-edit"):
            raise ValueError(f"unknown mode '{mode}'")
        r = resolution or self.profile.resolution
        words_o, feat_o = self.text_features(original)
        words_e, feat_e = self.text_features(edited)
        z_seed = sample_seed(seed, 0)
        before_feat = self.feature_from_noise(feat_o, z_seed)
        before = GeneratedShape(before_feat,
                                self.evaluate_field(before_feat, words_o, r),
                                original, z_seed)
        if mode == "shape-edit":
            mixed = LatentFeature(feat_e.f_s, feat_o.f_c)
            words_shape, words_color = words_e, words_o
        else:
            mixed = LatentFeature(feat_o.f_s, feat_e.f_c)
            words_shape, words_color = words_o, words_e
        after_feat = self.feature_from_noise(mixed, z_seed)
        after = GeneratedShape(after_feat,
                               self.evaluate_field(after_feat, words_shape, r,
                                                   words_color),
                               edited, z_seed)
        self.request_count += 1
        return before, after

    # -- mesh extraction -----------------------------------------------------

    def extract_mesh(self, feature: LatentFeature, words: Tensor, r: int,
                     iso: float = 0.5):
        from .mesh import marching_cubes
        if r <= 0 or r > MAX_FIELD_RES:
            raise ValueError(f"resolution {r} out of range")
        pts = grid_points(r)
        occ, _ = self.field_values(feature, words, pts)
        fieldvals = np.reshape(occ[:, 0], (r, r, r), order="F")

        def color_fn(verts: np.ndarray) -> np.ndarray:
            _, rgb = self.field_values(feature, words, verts)
            return rgb

        return marching_cubes(fieldvals, iso, color_fn)

    # -- encoder access for metrics -----------------------------------------

    def encode_shape(self, shape: VoxelShape) -> LatentFeature:
        with no_grad():
            f_s, f_c = self.pipe.encode_shape(shape)
        return LatentFeature(f_s.data.copy(), f_c.data.copy())
