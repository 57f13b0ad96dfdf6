import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchgame.rasterizer import (
    LineSet,
    RasterConfig,
    default_sigma2,
    ink_per_segment,
    point_segment_distance,
    rasterize,
)


def brute_segment_distance(p, a, b, samples=20001):
    """Independent oracle: dense sampling along the segment."""
    ts = torch.linspace(0, 1, samples, dtype=torch.float64)
    pts = torch.tensor(a, dtype=torch.float64) + ts[:, None] * (
        torch.tensor(b, dtype=torch.float64) - torch.tensor(a, dtype=torch.float64)
    )
    d = (pts - torch.tensor(p, dtype=torch.float64)).norm(dim=1)
    return d.min().item()


class TestPointSegmentDistance:
    def test_point_on_segment(self):
        assert point_segment_distance((0.5, 0.5), (0.0, 0.5), (1.0, 0.5)).item() == pytest.approx(0.0)

    def test_perpendicular_foot_at_endpoint(self):
        assert point_segment_distance((0.0, 0.0), (1.0, 0.0), (1.0, 1.0)).item() == pytest.approx(1.0)

    def test_degenerate_segment_is_point_distance(self):
        assert point_segment_distance((2.0, 0.0), (0.0, 0.0), (0.0, 0.0)).item() == pytest.approx(2.0)

    def test_matches_brute_force_sampling(self):
        gen = torch.Generator().manual_seed(7)
        for _ in range(50):
            p, a, b = (torch.rand(2, generator=gen, dtype=torch.float64) for _ in range(3))
            got = point_segment_distance(p, a, b).item()
            want = brute_segment_distance(p.tolist(), a.tolist(), b.tolist())
            assert got == pytest.approx(want, abs=1e-4)


class TestRasterConfig:
    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError):
            RasterConfig(resolution=4)

    def test_rejects_nonpositive_sigma2(self):
        with pytest.raises(ValueError):
            RasterConfig(resolution=32, sigma2=0.0)
        with pytest.raises(ValueError):
            RasterConfig(resolution=32, sigma2=-1.0)

    def test_default_sigma2_gives_two_pixel_fwhm(self):
        res = 64
        s2 = default_sigma2(res)
        # half-max ink exactly one pixel from the stroke axis
        assert math.exp(-((1.0 / res) ** 2) / s2) == pytest.approx(0.5)


class TestLineSet:
    def test_rejects_out_of_range(self):
        bad = torch.zeros(20, 4)
        bad[3, 2] = 1.5
        with pytest.raises(ValueError):
            LineSet(bad)

    def test_rejects_wrong_count(self):
        with pytest.raises(ValueError):
            LineSet(torch.rand(19, 4))

    def test_flat_roundtrip(self):
        flat = torch.rand(80)
        ls = LineSet.from_flat(flat)
        assert torch.equal(ls.tensor.reshape(-1), flat)


class TestRasterize:
    def test_empty_lineset_is_blank(self):
        img = rasterize(torch.zeros(0, 4), RasterConfig(resolution=16))
        assert torch.equal(img, torch.ones(16, 16))

    def test_pixel_on_stroke_is_full_ink(self):
        # horizontal stroke through row-5 pixel centers of a 16x16 canvas
        y = (5 + 0.5) / 16
        lines = torch.tensor([[0.0, y, 1.0, y]])
        img = rasterize(lines, RasterConfig(resolution=16))
        assert img[5].max().item() == pytest.approx(0.0, abs=1e-12)

    def test_value_at_sigma_distance(self):
        # place a pixel center exactly at d^2 == sigma2 from the stroke
        res = 16
        s2 = 4.0 / res**2
        y_line = 0.5 / res + math.sqrt(s2)
        lines = torch.tensor([[0.0, y_line, 1.0, y_line]], dtype=torch.float64)
        img = rasterize(lines, RasterConfig(resolution=res, sigma2=s2))
        assert img[0].min().item() == pytest.approx(1.0 - math.exp(-1.0), abs=1e-9)

    def test_permutation_invariance_bit_exact(self):
        gen = torch.Generator().manual_seed(0)
        lines = torch.rand(20, 4, generator=gen)
        cfg = RasterConfig(resolution=32)
        base = rasterize(lines, cfg)
        for seed in range(5):
            perm = torch.randperm(20, generator=torch.Generator().manual_seed(seed))
            assert torch.equal(rasterize(lines[perm], cfg), base)

    def test_batched_matches_single(self):
        gen = torch.Generator().manual_seed(1)
        lines = torch.rand(3, 20, 4, generator=gen)
        cfg = RasterConfig(resolution=24)
        batched = rasterize(lines, cfg)
        for i in range(3):
            assert torch.equal(batched[i], rasterize(lines[i], cfg))

    def test_degenerate_segment_renders_a_dot(self):
        lines = torch.tensor([[0.5, 0.5, 0.5, 0.5]])
        img = rasterize(lines, RasterConfig(resolution=17))
        assert img.min() < 0.5  # ink present
        assert img[0, 0] > 0.99  # corner stays blank

    @given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=20))
    @settings(max_examples=30, deadline=None)
    def test_range_property(self, seed, n):
        lines = torch.rand(n, 4, generator=torch.Generator().manual_seed(seed))
        img = rasterize(lines, RasterConfig(resolution=16))
        assert img.ge(0).all() and img.le(1).all()

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_monotonicity_more_ink_only_darkens(self, seed):
        gen = torch.Generator().manual_seed(seed)
        lines = torch.rand(6, 4, generator=gen)
        cfg = RasterConfig(resolution=16)
        img_small = rasterize(lines[:5], cfg)
        img_full = rasterize(lines, cfg)
        assert (img_full <= img_small + 1e-12).all()


class TestGradients:
    def test_analytic_matches_central_differences(self):
        from gradutils import grad_check_passes, rasterizer_grad_errors, sample_checkable_lineset

        cfg = RasterConfig(resolution=32)
        for seed in range(20):
            lines, mask = sample_checkable_lineset(seed, cfg)
            analytic, numeric = rasterizer_grad_errors(lines, mask, cfg)
            assert grad_check_passes(analytic, numeric), f"gradient mismatch at seed {seed}"

    def test_gradients_finite_in_float32(self):
        gen = torch.Generator().manual_seed(3)
        lines = torch.rand(20, 4, generator=gen).requires_grad_(True)
        rasterize(lines, RasterConfig(resolution=32)).sum().backward()
        assert torch.isfinite(lines.grad).all()

    def test_degenerate_segment_gradient_finite(self):
        lines = torch.tensor([[0.5, 0.5, 0.5, 0.5]], requires_grad=True)
        rasterize(lines, RasterConfig(resolution=16)).sum().backward()
        assert torch.isfinite(lines.grad).all()
