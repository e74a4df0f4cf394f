"""Loss terms for every training stage.

All losses are sums of squared differences (not means), weighted by the
configured lambda factors, and exactly zero at their fixed points. The color
reconstruction term is gated by the inside-shape indicator so outside points
contribute nothing, values and gradients alike.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, l2_loss
from .voxels import SampleBatch


def loss_ae(occ_pred: Tensor, rgb_pred: Tensor, batch: SampleBatch,
            lambda_s: float = 2.0, lambda_c: float = 1.0) -> Tensor:
    """Reconstruction: weighted occupancy L2 plus indicator-masked color L2."""
    dtype = occ_pred.data.dtype
    occ_t = Tensor(batch.occ.reshape(-1, 1).astype(dtype))
    rgb_t = Tensor(batch.rgb.astype(dtype))
    mask = Tensor(np.repeat(batch.occ.reshape(-1, 1), 3, axis=1).astype(dtype))
    occ_term = l2_loss(occ_pred, occ_t)
    col_term = l2_loss(rgb_pred, rgb_t, mask=mask)
    return occ_term * lambda_s + col_term * lambda_c


def loss_reg(fbar_s: Tensor, fbar_c: Tensor, f_s: Tensor, f_c: Tensor,
             lambda_r: float = 1.0) -> Tensor:
    """Text-feature regression toward encoder features over the full (f_s, f_c)."""
    return (l2_loss(fbar_s, f_s) + l2_loss(fbar_c, f_c)) * lambda_r


def loss_cyc(fcyc_s: Tensor, fcyc_c: Tensor, f_s: Tensor, f_c: Tensor,
             lambda_cyc: float = 0.005) -> Tensor:
    """Cyclic feature consistency between the re-encoded generation and f."""
    return (l2_loss(fcyc_s, f_s) + l2_loss(fcyc_c, f_c)) * lambda_cyc


def feature_distance_sq(a_s: Tensor, a_c: Tensor, b_s: Tensor, b_c: Tensor) -> float:
    d_s = float(((a_s.data - b_s.data) ** 2).sum())
    d_c = float(((a_c.data - b_c.data) ** 2).sum())
    return d_s + d_c


def imle_select(feats: list[tuple[Tensor, Tensor]], f_s: Tensor, f_c: Tensor) -> int:
    """Index of the generated feature nearest to f in squared L2; ties -> lowest."""
    if not feats:
        raise ValueError("empty feature set")
    dists = [feature_distance_sq(fs, fc, f_s, f_c) for fs, fc in feats]
    return int(np.argmin(dists))


def loss_imle(feats: list[tuple[Tensor, Tensor]], f_s: Tensor, f_c: Tensor) -> tuple[Tensor, int]:
    """L2 pull of the nearest generated feature toward the target feature.

    The target enters as constant data so gradients reach only the generator
    through the selected feature pair.
    """
    k = imle_select(feats, f_s, f_c)
    fs_k, fc_k = feats[k]
    target_s = Tensor(f_s.data.copy())
    target_c = Tensor(f_c.data.copy())
    return l2_loss(fs_k, target_s) + l2_loss(fc_k, target_c), k


def voxel_iou(occ_a: np.ndarray, occ_b: np.ndarray) -> float:
    """Occupancy IoU; two empty shapes count as identical (IoU 1)."""
    a = occ_a.astype(bool)
    b = occ_b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def manipulation_gate(occ_a: np.ndarray, occ_b: np.ndarray, t: float = 0.01) -> bool:
    """The two-way cyclic term applies only to overlapping shape pairs."""
    return voxel_iou(occ_a, occ_b) > t
