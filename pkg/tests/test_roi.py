import numpy as np
import pytest
from hypothesis import given, strategies as st

from cmr_forge.phantom import cavity_radius, generate_phantom, render_frames
from cmr_forge.roi import (ScoredCircle, crop_roi, crop_window, extract_roi, hough_circles,
                           temporal_activity_image, vote_center)
from cmr_forge.types import CineSequence
from conftest import small_config


class TestActivity:
    def test_constant_sequence_zero(self):
        assert np.all(temporal_activity_image(np.ones((8, 5, 5))) == 0)

    def test_pure_first_harmonic(self):
        T = 20
        f = np.zeros((T, 3, 3))
        f[:, 1, 2] = np.cos(2 * np.pi * np.arange(T) / T)
        act = temporal_activity_image(f)
        assert act[1, 2] == pytest.approx(T / 2)
        assert act[0, 0] == pytest.approx(0, abs=1e-12)

    def test_invariant_to_temporal_constant(self):
        f = np.random.default_rng(0).random((6, 7, 7))
        assert np.allclose(temporal_activity_image(f), temporal_activity_image(f + 3.0))

    def test_argmax_in_swept_annulus(self):
        cfg = small_config(n_papillary=0)
        act = temporal_activity_image(render_frames(cfg))
        r = cavity_radius(cfg, np.arange(cfg.T))
        pk = np.unravel_index(np.argmax(act), act.shape)
        d = np.hypot(pk[0] - 32, pk[1] - 32)
        assert r.min() - 1 <= d <= r.max() + 1


def ring(radius, center=(96, 96), shape=(192, 192)):
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]]
    d = np.hypot(rows - center[0], cols - center[1])
    return np.clip(1.5 - np.abs(d - radius), 0, 1)


class TestHough:
    def test_ring_recovered(self):
        top = hough_circles(ring(15), 8, 30)[0]
        assert np.hypot(top.center[0] - 96, top.center[1] - 96) <= 2
        assert abs(top.radius - 15) <= 2

    def test_blank(self):
        assert hough_circles(np.zeros((40, 40))) == []

    def test_top_k_sorted(self):
        seq, _ = generate_phantom(small_config(grid=(96, 96), lv_center_px=(48.0, 48.0),
                                               body_semi_axes_px=(40.0, 42.0), noise_sigma=0.02))
        circles = hough_circles(temporal_activity_image(seq), 8, 30, top_k=10)
        assert 0 < len(circles) <= 10
        scores = [c.score for c in circles]
        assert scores == sorted(scores, reverse=True)
        assert all(8 <= c.radius <= 30 and c.score >= 0 for c in circles)

    def test_bad_radius_range(self):
        with pytest.raises(ValueError):
            hough_circles(np.ones((5, 5)), 10, 10)


class TestVote:
    def test_single(self):
        assert vote_center([ScoredCircle((50, 60), 10, 1.0)]) == (50, 60)

    def test_equal_centres(self):
        cs = [ScoredCircle((20, 30), 10, 5.0), ("s2", ScoredCircle((20, 30), 12, 0.5))]
        assert vote_center(cs, 5.0, (64, 64)) == (20, 30)

    def test_dominant(self):
        cs = [ScoredCircle((40, 40), 10, 3.0), ScoredCircle((80, 80), 10, 1.0)]
        assert vote_center(cs, 4.0, (120, 120)) == (40, 40)

    def test_tie_breaks_row_major(self):
        cs = [ScoredCircle((10, 30), 5, 1.0), ScoredCircle((30, 10), 5, 1.0)]
        assert vote_center(cs, 2.0, (50, 50)) == (10, 30)

    def test_empty(self):
        with pytest.raises(ValueError):
            vote_center([])

    @given(st.lists(st.tuples(st.integers(20, 60), st.integers(20, 60), st.floats(0.5, 5)),
                    min_size=1, max_size=5),
           st.integers(-10, 10), st.integers(-10, 10), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
    def test_equivariance_and_scale_invariance(self, raw, dr, dc, k):
        cs = [ScoredCircle((r, c), 10, s) for r, c, s in raw]
        base = vote_center(cs, 5.0, (100, 100))
        moved = vote_center([ScoredCircle((r + dr, c + dc), 10, s) for r, c, s in raw], 5.0, (100, 100))
        scaled = vote_center([ScoredCircle((r, c), 10, s * k) for r, c, s in raw], 5.0, (100, 100))
        assert moved == (base[0] + dr, base[1] + dc)
        assert scaled == base


class TestCrop:
    def test_centered(self):
        assert crop_window((96, 96), 80, (192, 192)) == (56, 56)

    def test_clamped(self):
        assert crop_window((10, 10), 80, (192, 192)) == (0, 0)
        assert crop_window((190, 190), 80, (192, 192)) == (112, 112)

    def test_crop_all_frames(self, random_seq):
        out = crop_roi(random_seq, (8, 8), 8)
        assert out.shape == (6, 8, 8)
        assert np.array_equal(out.frames, random_seq.frames[:, 4:12, 4:12])

    def test_invalid_size(self, random_seq):
        with pytest.raises(ValueError):
            crop_roi(random_seq, (8, 8), 32)
        with pytest.raises(ValueError):
            crop_roi(random_seq, (8, 8), 7)

    def test_pipeline_deterministic(self):
        seq, truth = generate_phantom(small_config(grid=(128, 128), lv_center_px=(60.0, 70.0),
                                                   body_semi_axes_px=(55.0, 58.0), noise_sigma=0.02, T=20))
        a, b = extract_roi(seq, size=64), extract_roi(seq, size=64)
        assert a.center == b.center
        assert np.array_equal(a.crop.frames, b.crop.frames)
        assert np.hypot(a.center[0] - 60, a.center[1] - 70) <= 4
