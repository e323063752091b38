import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ultralbm.gradcheck import finite_diff_gradcheck
from ultralbm.losses import bce_dice_loss
from ultralbm.metrics import dsc, iou


def strip_case():
    # P is a 2x2 block, G an adjacent 2x2 block sharing a 2x1 strip
    p = torch.zeros(1, 1, 4, 4)
    g = torch.zeros(1, 1, 4, 4)
    p[0, 0, 0:2, 0:2] = 1.0
    g[0, 0, 0:2, 1:3] = 1.0
    return p, g


class TestIoU:
    def test_perfect(self):
        g = (torch.rand(1, 1, 8, 8) > 0.5).float()
        assert iou(g, g) == 1.0

    def test_disjoint(self):
        p = torch.zeros(1, 1, 4, 4)
        g = torch.zeros(1, 1, 4, 4)
        p[0, 0, 0, 0] = 1.0
        g[0, 0, 3, 3] = 1.0
        assert iou(p, g) == 0.0

    def test_strip_overlap(self):
        p, g = strip_case()
        assert abs(iou(p, g) - 2.0 / 6.0) < 1e-12

    def test_both_empty_convention(self):
        z = torch.zeros(1, 1, 4, 4)
        assert iou(z, z) == 1.0 and dsc(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            iou(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 8, 8))


class TestDsc:
    def test_perfect(self):
        g = (torch.rand(1, 1, 8, 8) > 0.5).float()
        assert dsc(g, g) == 1.0

    def test_strip_overlap_and_identity(self):
        p, g = strip_case()
        d, j = dsc(p, g), iou(p, g)
        assert abs(d - 0.5) < 1e-12
        assert abs(d - 2 * j / (1 + j)) < 1e-12

    @settings(deadline=None, max_examples=100)
    @given(seed=st.integers(0, 100_000))
    def test_dsc_iou_identity_property(self, seed):
        g = torch.Generator().manual_seed(seed)
        pred = (torch.rand(1, 1, 8, 8, generator=g) > 0.5).float()
        gt = (torch.rand(1, 1, 8, 8, generator=g) > 0.5).float()
        j, d = iou(pred, gt), dsc(pred, gt)
        assert abs(d - 2 * j / (1 + j)) < 1e-9
        assert 0.0 <= j <= 1.0 and 0.0 <= d <= 1.0


class TestFiniteDiffGradcheck:
    def test_quadratic(self):
        x = torch.randn(8, dtype=torch.float64)
        res = finite_diff_gradcheck(lambda t: 0.5 * (t ** 2).sum(), x)
        assert res.max_rel_err < 1e-9

    def test_sin_sum(self):
        x = torch.randn(8, dtype=torch.float64)
        res = finite_diff_gradcheck(lambda t: torch.sin(t).sum(), x)
        assert res.max_rel_err < 1e-7

    def test_bce_dice_wrt_pred(self):
        g = torch.Generator().manual_seed(4)
        pred = torch.rand(1, 1, 4, 4, generator=g, dtype=torch.float64) * 0.8 + 0.1
        target = (torch.rand(1, 1, 4, 4, generator=g) > 0.5).double()
        res = finite_diff_gradcheck(lambda t: bce_dice_loss(t, target), pred)
        assert res.max_rel_err < 1e-4

    def test_point_is_not_modified(self):
        x = torch.randn(5, dtype=torch.float64)
        x0 = x.clone()
        finite_diff_gradcheck(lambda t: (t ** 3).sum(), x)
        assert torch.equal(x, x0)

    def test_nonfinite_evaluation_reported(self):
        x = torch.zeros(3, dtype=torch.float64)

        def fn(t):
            return torch.log(t).sum()  # log(-eps) -> nan at the probe

        with pytest.raises(ValueError, match="coordinate"):
            finite_diff_gradcheck(fn, x)
