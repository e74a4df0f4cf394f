"""Loss terms checked against hand arithmetic and brute-force selection."""

import numpy as np
import pytest

from tgshape.autodiff import Tensor
from tgshape.losses import (feature_distance_sq, imle_select, loss_ae,
                            loss_cyc, loss_imle, loss_reg, manipulation_gate,
                            voxel_iou)
from tgshape.voxels import SampleBatch

from util import check_grads, rng


def small_batch() -> SampleBatch:
    pts = np.array([[0.1, 0.0, 0.0], [-0.2, 0.1, 0.3], [0.0, 0.0, 0.0]])
    occ = np.array([1.0, 0.0, 1.0])
    rgb = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.0, 0.0, 1.0]])
    return SampleBatch(points=pts, occ=occ, rgb=rgb, grid_res=32,
                       fallback_uniform=False)


class TestLossAE:
    def test_hand_value(self):
        batch = small_batch()
        occ_pred = Tensor(np.array([[0.8], [0.3], [1.0]]))
        rgb_pred = Tensor(np.array([[0.9, 0.1, 0.0],
                                    [0.0, 0.0, 0.0],
                                    [0.2, 0.0, 1.0]]))
        # occupied-sum: (0.8-1)^2 + (0.3-0)^2 + 0 = 0.13
        # color error counts only rows 0 and 2: (0.01+0.01+0)+(0.04+0+0) = 0.06
        loss = loss_ae(occ_pred, rgb_pred, batch, lambda_s=2.0, lambda_c=1.0)
        assert loss.item() == pytest.approx(2.0 * 0.13 + 0.06, abs=1e-12)

    def test_empty_voxels_carry_no_color_error(self):
        batch = small_batch()
        occ_pred = Tensor(np.zeros((3, 1)))
        base = Tensor(batch.rgb.copy())
        wild = batch.rgb.copy()
        wild[1] = [99.0, -99.0, 42.0]  # row 1 is unoccupied
        loss_a = loss_ae(occ_pred, base, batch)
        loss_b = loss_ae(occ_pred, Tensor(wild), batch)
        assert loss_a.item() == pytest.approx(loss_b.item(), abs=0.0)

    def test_lambda_scaling(self):
        batch = small_batch()
        occ_pred = Tensor(np.full((3, 1), 0.5))
        rgb_pred = Tensor(np.zeros((3, 3)))
        l1 = loss_ae(occ_pred, rgb_pred, batch, lambda_s=1.0, lambda_c=0.0)
        l2 = loss_ae(occ_pred, rgb_pred, batch, lambda_s=3.0, lambda_c=0.0)
        assert l2.item() == pytest.approx(3.0 * l1.item(), rel=1e-12)

    def test_gradients(self):
        batch = small_batch()
        r = rng(0)
        occ_pred = Tensor(r.standard_normal((3, 1)), requires_grad=True)
        rgb_pred = Tensor(r.standard_normal((3, 3)), requires_grad=True)
        check_grads(lambda: loss_ae(occ_pred, rgb_pred, batch),
                    {"occ": occ_pred, "rgb": rgb_pred})

    def test_unoccupied_rgb_gradient_is_zero(self):
        batch = small_batch()
        rgb_pred = Tensor(rng(1).standard_normal((3, 3)), requires_grad=True)
        occ_pred = Tensor(np.zeros((3, 1)))
        loss_ae(occ_pred, rgb_pred, batch).backward()
        assert np.all(rgb_pred.grad[1] == 0.0)
        assert np.any(rgb_pred.grad[0] != 0.0)


class TestFeatureLosses:
    def test_reg_hand_value(self):
        fb_s = Tensor(np.array([[1.0, 2.0]]))
        fb_c = Tensor(np.array([[0.0, 1.0]]))
        f_s = Tensor(np.array([[0.0, 0.0]]))
        f_c = Tensor(np.array([[1.0, 1.0]]))
        # (1+4) + (1+0) = 6
        assert loss_reg(fb_s, fb_c, f_s, f_c, lambda_r=1.0).item() == pytest.approx(6.0)
        assert loss_reg(fb_s, fb_c, f_s, f_c, lambda_r=0.5).item() == pytest.approx(3.0)

    def test_cyc_scaling(self):
        r = rng(2)
        args = [Tensor(r.standard_normal((1, 8))) for _ in range(4)]
        full = loss_cyc(*args, lambda_cyc=1.0).item()
        scaled = loss_cyc(*args, lambda_cyc=0.005).item()
        assert scaled == pytest.approx(0.005 * full, rel=1e-12)

    def test_distance_matches_manual(self):
        r = rng(3)
        a_s, a_c, b_s, b_c = [r.standard_normal((1, 5)) for _ in range(4)]
        want = ((a_s - b_s) ** 2).sum() + ((a_c - b_c) ** 2).sum()
        got = feature_distance_sq(Tensor(a_s), Tensor(a_c), Tensor(b_s), Tensor(b_c))
        assert got == pytest.approx(want, rel=1e-12)


class TestIMLE:
    def test_select_brute_force(self):
        r = rng(4)
        for trial in range(1000):
            m = int(r.integers(1, 17))
            d = int(r.integers(1, 6))
            feats = [(Tensor(r.standard_normal((1, d))),
                      Tensor(r.standard_normal((1, d)))) for _ in range(m)]
            f_s = Tensor(r.standard_normal((1, d)))
            f_c = Tensor(r.standard_normal((1, d)))
            best, best_d = 0, np.inf
            for i, (fs, fc) in enumerate(feats):
                dist = float(((fs.data - f_s.data) ** 2).sum()
                             + ((fc.data - f_c.data) ** 2).sum())
                if dist < best_d:
                    best, best_d = i, dist
            assert imle_select(feats, f_s, f_c) == best

    def test_select_tie_prefers_lowest_index(self):
        a = Tensor(np.array([[1.0, 0.0]]))
        b = Tensor(np.array([[0.0, 0.0]]))
        feats = [(a, b), (a, b), (Tensor(np.array([[5.0, 0.0]])), b)]
        assert imle_select(feats, Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2)))) == 0

    def test_loss_only_selected_sample_gets_gradient(self):
        r = rng(5)
        feats = [(Tensor(r.standard_normal((1, 4)), requires_grad=True),
                  Tensor(r.standard_normal((1, 4)), requires_grad=True))
                 for _ in range(5)]
        f_s = Tensor(feats[2][0].data + 0.01)
        f_c = Tensor(feats[2][1].data + 0.01)
        loss, k = loss_imle(feats, f_s, f_c)
        assert k == 2
        loss.backward()
        for i, (fs, fc) in enumerate(feats):
            if i == k:
                assert fs.grad is not None and np.any(fs.grad != 0.0)
                assert fc.grad is not None and np.any(fc.grad != 0.0)
            else:
                assert fs.grad is None or np.all(fs.grad == 0.0)

    def test_loss_targets_receive_no_gradient(self):
        r = rng(6)
        feats = [(Tensor(r.standard_normal((1, 3)), requires_grad=True),
                  Tensor(r.standard_normal((1, 3)), requires_grad=True))]
        f_s = Tensor(r.standard_normal((1, 3)), requires_grad=True)
        f_c = Tensor(r.standard_normal((1, 3)), requires_grad=True)
        loss, _ = loss_imle(feats, f_s, f_c)
        loss.backward()
        assert f_s.grad is None
        assert f_c.grad is None

    def test_loss_value_matches_selected_distance(self):
        r = rng(7)
        feats = [(Tensor(r.standard_normal((1, 6))), Tensor(r.standard_normal((1, 6))))
                 for _ in range(4)]
        f_s = Tensor(r.standard_normal((1, 6)))
        f_c = Tensor(r.standard_normal((1, 6)))
        loss, k = loss_imle(feats, f_s, f_c)
        want = feature_distance_sq(feats[k][0], feats[k][1], f_s, f_c)
        assert loss.item() == pytest.approx(want, rel=1e-9)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            loss_imle([], Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))))


class TestIoUAndGate:
    def test_hand_values(self):
        a = np.zeros((4, 4, 4), dtype=np.uint8)
        b = np.zeros((4, 4, 4), dtype=np.uint8)
        a[:2] = 1
        b[1:3] = 1
        # intersection one slab (16), union three slabs (48)
        assert voxel_iou(a, b) == pytest.approx(16 / 48)
        assert voxel_iou(a, a) == 1.0

    def test_empty_pair_counts_as_full_overlap(self):
        z = np.zeros((2, 2, 2), dtype=np.uint8)
        assert voxel_iou(z, z) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), dtype=np.uint8)
        b = np.zeros((4, 4, 4), dtype=np.uint8)
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert voxel_iou(a, b) == 0.0

    def test_gate_is_strict(self):
        a = np.zeros((10, 10, 10), dtype=np.uint8)
        b = np.zeros((10, 10, 10), dtype=np.uint8)
        a[:, :, :1] = 1
        b[:, :, :1] = 1
        b[:, :, 1:] = 0
        # identical slabs: IoU 1 > any reasonable threshold
        assert manipulation_gate(a, b, t=0.01)
        # exact threshold must not pass
        a2 = np.zeros((100, 1, 1), dtype=np.uint8)
        b2 = np.zeros((100, 1, 1), dtype=np.uint8)
        a2[:50] = 1
        b2[49:99] = 1
        iou = voxel_iou(a2, b2)
        assert manipulation_gate(a2, b2, t=iou) is False
        assert manipulation_gate(a2, b2, t=iou - 1e-9) is True
