"""Model components: shape encoder, decoupled implicit decoders, word-level
spatial transformer, spatial-aware decoders, and the style-based latent generator.

Geometry and appearance stay structurally decoupled throughout: occupancy heads
never see the color feature and color heads never see the shape feature.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (ShapeError, Tensor, clamp_st, concat_cols, conv3d,
                       layer_norm, leaky_relu, slice_cols, softmax_rows)
from .nn import LEAKY_SLOPE, Linear, MLP, merge_params
from .voxels import VoxelShape

DECODER_WIDTHS = [512, 512, 512, 256, 256, 128]


def tile_rows(row: Tensor, n: int) -> Tensor:
    """Repeat a (1,C) row n times differentiably (gradient sums over copies)."""
    if row.data.ndim != 2 or row.shape[0] != 1:
        raise ShapeError(f"tile_rows expects a (1,C) row, got {row.shape}")
    ones = Tensor(np.ones((n, 1), dtype=row.dtype))
    return ones @ row


class ShapeEncoder:
    """Strided 3D-conv encoder from a 4-channel voxel grid to f = (f_s, f_c)."""

    def __init__(self, rng: np.random.Generator, resolution: int, d: int,
                 base_channels: int = 32, dtype=np.float64):
        if resolution < 8 or (resolution & (resolution - 1)) != 0:
            raise ValueError(f"encoder resolution must be a power of two >= 8, got {resolution}")
        self.resolution = resolution
        self.d = d
        self.dtype = dtype
        self.convs: list[tuple[Tensor, Tensor]] = []
        c_in = 4
        c_out = base_channels
        r = resolution
        while r > 4:  # stride-2 stages halve down to 4^3
            self._add_conv(rng, c_in, c_out)
            c_in, c_out, r = c_out, c_out * 2, r // 2
        self._add_conv(rng, c_in, c_out)  # valid 4^3 -> 1^3
        self.final_channels = c_out
        self.proj = Linear(rng, c_out, 2 * d, dtype=dtype)

    def _add_conv(self, rng, c_in, c_out):
        scale = 1.0 / np.sqrt(c_in * 64)
        w = Tensor(rng.normal(0.0, scale, (c_out, c_in, 4, 4, 4)).astype(self.dtype),
                   requires_grad=True)
        b = Tensor(np.zeros(c_out, dtype=self.dtype), requires_grad=True)
        self.convs.append((w, b))

    def __call__(self, shape: VoxelShape) -> tuple[Tensor, Tensor]:
        if shape.resolution != self.resolution:
            raise ShapeError(
                f"encoder built for {self.resolution}^3, got {shape.resolution}^3")
        grid = np.concatenate(
            [shape.occ[None].astype(self.dtype),
             np.moveaxis(shape.rgb, -1, 0).astype(self.dtype)], axis=0)
        return self.encode_grid(Tensor(grid))

    def encode_grid(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Encode a (4,r,r,r) tensor; differentiable w.r.t. the input grid."""
        for i, (w, b) in enumerate(self.convs):
            last = i == len(self.convs) - 1
            x = conv3d(x, w, b, stride=1 if last else 2, pad=0 if last else 1)
            x = leaky_relu(x, LEAKY_SLOPE)
        flat = x.reshape(1, self.final_channels)
        f = self.proj(flat)
        return slice_cols(f, 0, self.d), slice_cols(f, self.d, 2 * self.d)

    def params(self, prefix: str = "E") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"{prefix}.conv{i}.w"] = w
            out[f"{prefix}.conv{i}.b"] = b
        out.update(self.proj.params(f"{prefix}.proj"))
        return out


class ImplicitDecoder:
    """Seven FC + leaky-ReLU layers from a feature-point concatenation to a
    clamped [0,1] output (occupancy when out_dim=1, RGB when out_dim=3)."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int,
                 widths: list[int] | None = None, dtype=np.float64):
        ws = list(widths) if widths is not None else list(DECODER_WIDTHS)
        self.layers = [Linear(rng, a, b, dtype=dtype)
                       for a, b in zip([in_dim] + ws, ws + [out_dim])]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = leaky_relu(layer(x), LEAKY_SLOPE)
        # straight-through clamp: saturated outputs keep a training signal
        return clamp_st(self.layers[-1](x), 0.0, 1.0)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.fc{i}"))
        return out


class DecoupledDecoder:
    """D = {D_s, D_c}: separate trunks for occupancy and color."""

    def __init__(self, rng: np.random.Generator, d: int,
                 widths: list[int] | None = None, dtype=np.float64):
        self.d = d
        self.ds = ImplicitDecoder(rng, d + 3, 1, widths, dtype=dtype)
        self.dc = ImplicitDecoder(rng, d + 3, 3, widths, dtype=dtype)

    def occupancy(self, f_s: Tensor, points: np.ndarray) -> Tensor:
        n = points.shape[0]
        x = concat_cols([tile_rows(f_s, n), Tensor(points.astype(f_s.data.dtype))])
        return self.ds(x)

    def color(self, f_c: Tensor, points: np.ndarray) -> Tensor:
        n = points.shape[0]
        x = concat_cols([tile_rows(f_c, n), Tensor(points.astype(f_c.data.dtype))])
        return self.dc(x)

    def params(self) -> dict[str, Tensor]:
        return merge_params(self.ds.params("Ds"), self.dc.params("Dc"))


class WLST:
    """Word-level spatial transformer: cross-attention from projected per-point
    features to projected word features, whose values it aggregates, followed by
    a residual feed-forward block with layer normalization."""

    def __init__(self, rng: np.random.Generator, spatial_dim: int, word_dim: int,
                 d_l: int = 32, dtype=np.float64):
        self.d_l = d_l
        self.proj_spatial = Linear(rng, spatial_dim, d_l, dtype=dtype)
        self.proj_word = Linear(rng, word_dim, d_l, dtype=dtype)
        self.f_q = Linear(rng, d_l, d_l, dtype=dtype)
        self.f_k = Linear(rng, d_l, d_l, dtype=dtype)
        self.f_v = Linear(rng, d_l, d_l, dtype=dtype)
        self.ff1 = Linear(rng, d_l, 4 * d_l, dtype=dtype)
        self.ff2 = Linear(rng, 4 * d_l, d_l, dtype=dtype)
        self.ln_gain = Tensor(np.ones(d_l, dtype=dtype), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(d_l, dtype=dtype), requires_grad=True)

    def project(self, words: Tensor, spatial: Tensor) -> tuple[Tensor, Tensor]:
        return self.proj_spatial(spatial), self.proj_word(words)

    def attention(self, r: Tensor, w: Tensor) -> Tensor:
        scores = (self.f_k(r) @ self.f_q(w).T) * (1.0 / np.sqrt(self.d_l))
        return softmax_rows(scores)

    def __call__(self, words: Tensor, spatial: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Return (local features N x d_l, attention N x K, projected spatial R)."""
        if words.shape[0] < 1:
            raise ShapeError("WLST needs at least one word")
        r, w = self.project(words, spatial)
        a = self.attention(r, w)
        attended = a @ self.f_v(w)
        ff = self.ff2(leaky_relu(self.ff1(attended), LEAKY_SLOPE))
        out = layer_norm(attended + ff, self.ln_gain, self.ln_bias)
        return out, a, r

    def literal_pre_ff(self, words: Tensor, spatial: Tensor) -> Tensor:
        """Value source taken from the projected spatial rows instead of the
        words: the row-stochastic weights then collapse, Σ_j a_ij F_V(R_i) =
        F_V(R_i). Kept only as the degenerate-variant regression witness."""
        r, w = self.project(words, spatial)
        a = self.attention(r, w)
        values = self.f_v(r)                      # per-point values
        return Tensor(values.data * a.data.sum(axis=1, keepdims=True))

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = merge_params(
            self.proj_spatial.params(f"{prefix}.proj_spatial"),
            self.proj_word.params(f"{prefix}.proj_word"),
            self.f_q.params(f"{prefix}.fq"), self.f_k.params(f"{prefix}.fk"),
            self.f_v.params(f"{prefix}.fv"), self.ff1.params(f"{prefix}.ff1"),
            self.ff2.params(f"{prefix}.ff2"))
        out[f"{prefix}.ln.gain"] = self.ln_gain
        out[f"{prefix}.ln.bias"] = self.ln_bias
        return out


class SpatialDecoder:
    """D' = {D'_s, D'_c}: decoders with word-conditioned local features.

    The occupancy trunk additionally consumes the projected spatial row R_i;
    the color trunk takes only its local feature. Decoupling is preserved.
    """

    def __init__(self, rng: np.random.Generator, d: int, d_l: int = 32,
                 widths: list[int] | None = None, dtype=np.float64):
        self.d = d
        self.d_l = d_l
        self.dps = ImplicitDecoder(rng, d + 3 + 2 * d_l, 1, widths, dtype=dtype)
        self.dpc = ImplicitDecoder(rng, d + 3 + d_l, 3, widths, dtype=dtype)

    def occupancy(self, f_s: Tensor, points: np.ndarray, local_s: Tensor,
                  r_rows: Tensor) -> Tensor:
        n = points.shape[0]
        x = concat_cols([tile_rows(f_s, n), Tensor(points.astype(f_s.data.dtype)),
                         local_s, r_rows])
        return self.dps(x)

    def color(self, f_c: Tensor, points: np.ndarray, local_c: Tensor) -> Tensor:
        n = points.shape[0]
        x = concat_cols([tile_rows(f_c, n), Tensor(points.astype(f_c.data.dtype)),
                         local_c])
        return self.dpc(x)

    def params(self) -> dict[str, Tensor]:
        return merge_params(self.dps.params("Dps"), self.dpc.params("Dpc"))


class StyleGenerator:
    """Latent generator G: a mapping MLP turns noise into two style codes that
    modulate a 4-layer trunk on the text feature via adaptive layer norm."""

    def __init__(self, rng: np.random.Generator, d: int, d_z: int = 128,
                 width: int = 512, map_width: int = 512, dtype=np.float64):
        self.d = d
        self.d_z = d_z
        self.width = width
        self.map1 = Linear(rng, d_z, map_width, dtype=dtype)
        self.map2 = Linear(rng, map_width, map_width, dtype=dtype)
        self.map3 = Linear(rng, map_width, 4 * width, dtype=dtype)  # two (gain,bias) codes
        self.fc1 = Linear(rng, 2 * d, width, dtype=dtype)
        self.fc2 = Linear(rng, width, width, dtype=dtype)
        self.fc3 = Linear(rng, width, width, dtype=dtype)
        self.fc4 = Linear(rng, width, 2 * d, dtype=dtype)

    def style_codes(self, z: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        h = leaky_relu(self.map1(z), LEAKY_SLOPE)
        h = leaky_relu(self.map2(h), LEAKY_SLOPE)
        codes = self.map3(h)
        w = self.width
        # gains sit at 1 + raw so an untrained mapping starts near identity
        g1 = slice_cols(codes, 0, w) + 1.0
        b1 = slice_cols(codes, w, 2 * w)
        g2 = slice_cols(codes, 2 * w, 3 * w) + 1.0
        b2 = slice_cols(codes, 3 * w, 4 * w)
        return g1, b1, g2, b2

    def __call__(self, f_bar: Tensor, z: Tensor) -> tuple[Tensor, Tensor]:
        """Map (f̄_s ⊕ f̄_c, z) to (f̂_s, f̂_c)."""
        if f_bar.shape != (1, 2 * self.d):
            raise ShapeError(f"generator expects (1,{2 * self.d}) text features, got {f_bar.shape}")
        if z.shape != (1, self.d_z):
            raise ShapeError(f"noise must be (1,{self.d_z}), got {z.shape}")
        g1, b1, g2, b2 = self.style_codes(z)
        h = self.fc1(f_bar)
        h = layer_norm(h, g1.reshape(self.width), b1.reshape(self.width))
        h = leaky_relu(h, LEAKY_SLOPE)
        h = leaky_relu(self.fc2(h), LEAKY_SLOPE)
        h = self.fc3(h)
        h = layer_norm(h, g2.reshape(self.width), b2.reshape(self.width))
        h = leaky_relu(h, LEAKY_SLOPE)
        out = self.fc4(h)
        return slice_cols(out, 0, self.d), slice_cols(out, self.d, 2 * self.d)

    def params(self, prefix: str = "G") -> dict[str, Tensor]:
        return merge_params(
            self.map1.params(f"{prefix}.map1"), self.map2.params(f"{prefix}.map2"),
            self.map3.params(f"{prefix}.map3"), self.fc1.params(f"{prefix}.fc1"),
            self.fc2.params(f"{prefix}.fc2"), self.fc3.params(f"{prefix}.fc3"),
            self.fc4.params(f"{prefix}.fc4"))


def sample_noise(d_z: int, m: int, rng_seed: int, dtype=np.float64) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal((m, d_z)).astype(dtype)


def generate_feature_set(gen: StyleGenerator, f_bar: Tensor, m: int,
                         rng_seed: int) -> tuple[list[tuple[Tensor, Tensor]], np.ndarray]:
    """Draw m noises and map each through G. Returns ([(f̂_s, f̂_c)], noises)."""
    if m < 1:
        raise ValueError("feature-set size m must be >= 1")
    noises = sample_noise(gen.d_z, m, rng_seed, dtype=f_bar.data.dtype)
    feats = [gen(f_bar, Tensor(noises[i:i + 1])) for i in range(m)]
    return feats, noises
