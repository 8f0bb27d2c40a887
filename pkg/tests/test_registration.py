import json

import numpy as np
import pytest

from fruitband.errors import (
    InsufficientCorrespondences,
    MatchFailure,
    NoModelFound,
    SingularHomography,
)
from fruitband.registration import (
    Correspondence,
    Homography,
    MatcherConfig,
    estimate_homography_dlt,
    load_sidecar_correspondences,
    match_grid_ncc,
    ransac_homography,
    register_pair,
    reprojection_errors,
    warp_and_crop,
)
from fruitband.synth import build_scene, render_view

QUAD = [(10.0, 10.0), (100.0, 12.0), (90.0, 120.0), (15.0, 110.0)]


def random_homography(rng):
    return np.array([
        [1 + rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-20, 20)],
        [rng.uniform(-0.05, 0.05), 1 + rng.uniform(-0.05, 0.05), rng.uniform(-20, 20)],
        [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
    ])


def apply_h(h, pts):
    pts = np.asarray(pts, float)
    q = np.hstack([pts, np.ones((len(pts), 1))]) @ h.T
    return q[:, :2] / q[:, 2:3]


class TestDlt:
    def test_identity(self):
        h = estimate_homography_dlt([Correspondence(p, p) for p in QUAD])
        assert np.abs(h.h - np.eye(3)).max() < 1e-9

    def test_pure_translation(self):
        h = estimate_homography_dlt([Correspondence(p, (p[0] + 5, p[1] + 3)) for p in QUAD])
        assert h.h[0, 2] == pytest.approx(5.0, abs=1e-9)
        assert h.h[1, 2] == pytest.approx(3.0, abs=1e-9)
        off_diag = h.h - np.array([[1, 0, 5], [0, 1, 3], [0, 0, 1]])
        assert np.abs(off_diag).max() < 1e-9
        # oracle: the recovered map must reproduce the shifted points
        recovered = h.apply(np.array(QUAD))
        assert np.abs(recovered - (np.array(QUAD) + [5, 3])).max() < 1e-9

    def test_too_few_points(self):
        with pytest.raises(InsufficientCorrespondences):
            estimate_homography_dlt([Correspondence(p, p) for p in QUAD[:3]])

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_recovery_of_random_homographies(self, seed):
        rng = np.random.default_rng(seed)
        h_true = random_homography(rng)
        pts = rng.uniform(0, 900, (8, 2))
        corrs = [Correspondence(tuple(p), tuple(q)) for p, q in zip(pts, apply_h(h_true, pts))]
        h_est = estimate_homography_dlt(corrs)
        assert reprojection_errors(h_est, corrs).max() <= 1e-6

    def test_normalization_invariance_under_similarity(self):
        rng = np.random.default_rng(5)
        h_true = random_homography(rng)
        pts = rng.uniform(0, 400, (10, 2))
        corrs = [Correspondence(tuple(p), tuple(q)) for p, q in zip(pts, apply_h(h_true, pts))]
        h_plain = estimate_homography_dlt(corrs)
        s = np.array([[2.0, 0, 30.0], [0, 2.0, -40.0], [0, 0, 1.0]])
        moved = [Correspondence(tuple(apply_h(s, [c.src])[0]), tuple(apply_h(s, [c.dst])[0]))
                 for c in corrs]
        h_moved = estimate_homography_dlt(moved)
        conjugate = s @ h_plain.h @ np.linalg.inv(s)
        conjugate /= conjugate[2, 2]
        assert np.abs(h_moved.h - conjugate).max() < 1e-6


class TestRansac:
    def _translation_set(self, rng, n_good=20, n_bad=5):
        base = rng.uniform(10, 200, (n_good, 2))
        good = [Correspondence(tuple(p), (p[0] + 8, p[1] + 5)) for p in base]
        bad = [Correspondence(tuple(rng.uniform(10, 200, 2)), tuple(rng.uniform(10, 200, 2)))
               for _ in range(n_bad)]
        return good + bad

    def test_recovers_exact_inlier_set(self):
        rng = np.random.default_rng(3)
        corrs = self._translation_set(rng)
        h, inliers = ransac_homography(corrs, inlier_threshold_px=2.0,
                                       max_iterations=500, seed=7)
        # oracle: residuals under the known ground-truth translation
        truth = Homography.from_matrix([[1, 0, 8], [0, 1, 5], [0, 0, 1]])
        expected = [i for i, e in enumerate(reprojection_errors(truth, corrs)) if e <= 2.0]
        assert inliers == expected == list(range(20))

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(4)
        corrs = self._translation_set(rng)
        a = ransac_homography(corrs, 2.0, 300, seed=11)
        b = ransac_homography(corrs, 2.0, 300, seed=11)
        assert np.array_equal(a[0].h, b[0].h)
        assert a[1] == b[1]

    def test_collinear_points_fail(self):
        corrs = [Correspondence((float(i), float(i)), (float(i) + 2, float(i) + 2))
                 for i in range(10)]
        with pytest.raises(NoModelFound):
            ransac_homography(corrs, 2.0, 200, seed=0)

    def test_consensus_residuals_within_threshold(self):
        rng = np.random.default_rng(9)
        corrs = self._translation_set(rng, n_good=15, n_bad=10)
        h, inliers = ransac_homography(corrs, 2.0, 500, seed=2)
        residuals = reprojection_errors(h, [corrs[i] for i in inliers])
        assert residuals.max() <= 2.0


class TestWarpAndCrop:
    def test_identity_is_center_crop(self):
        rng = np.random.default_rng(0)
        img = (rng.uniform(0, 1, (240, 300)) * 255).astype(np.uint8)
        out = warp_and_crop(img, Homography.identity(), out_size=(200, 180))
        y0, x0 = (240 - 180) // 2, (300 - 200) // 2
        assert np.array_equal(out, img[y0:y0 + 180, x0:x0 + 200])

    def test_translation_shifts_pixels(self):
        rng = np.random.default_rng(1)
        img = (rng.uniform(0, 1, (240, 300)) * 255).astype(np.uint8)
        baseline = warp_and_crop(img, Homography.identity(), out_size=(200, 180))
        shifted = warp_and_crop(img, Homography.from_matrix([[1, 0, 8], [0, 1, 0], [0, 0, 1]]),
                                out_size=(200, 180))
        # oracle: direct index shift on the interior
        assert np.array_equal(shifted[:, 8:], baseline[:, :-8])

    def test_output_size_is_standardized(self):
        img = np.zeros((1024, 1280), dtype=np.uint8)
        out = warp_and_crop(img, Homography.identity())
        assert out.shape == (830, 960)

    def test_identity_idempotent_on_exact_size(self):
        rng = np.random.default_rng(2)
        img = (rng.uniform(0, 1, (830, 960)) * 255).astype(np.uint8)
        once = warp_and_crop(img, Homography.identity())
        twice = warp_and_crop(once, Homography.identity())
        assert np.array_equal(once, img)
        assert np.array_equal(twice, once)

    def test_singular_matrix_rejected(self):
        with pytest.raises(SingularHomography):
            Homography.from_matrix(np.zeros((3, 3)))

    def test_color_images_supported(self):
        rng = np.random.default_rng(3)
        img = (rng.uniform(0, 1, (60, 80, 3)) * 255).astype(np.uint8)
        out = warp_and_crop(img, Homography.identity(), out_size=(40, 30))
        assert out.shape == (30, 40, 3)


@pytest.fixture(scope="module")
def textured():
    scene = build_scene("stain", 0, master_seed=21)
    img, _ = render_view(scene, 40.0, "band", noise_sigma=0.05)
    return img


class TestRegisterPair:

    def test_self_registration_is_identity(self, textured):
        _, h, diag = register_pair(textured, textured)
        corners = np.array([[0, 0], [255, 0], [255, 221], [0, 221]], float)
        assert np.abs(h.apply(corners) - corners).max() < 0.1
        assert diag.status == "ok"
        assert diag.n_inliers >= 4

    def test_translation_recovered_within_one_pixel(self, textured):
        truth = Homography.from_matrix([[1, 0, 8], [0, 1, 5], [0, 0, 1]])
        moving = warp_and_crop(textured, truth, out_size=(256, 222))
        _, h_est, _ = register_pair(moving, textured)
        corners = np.array([[0, 0], [255, 0], [255, 221], [0, 221]], float)
        # ground-truth composition should return each corner to itself
        err = np.abs(h_est.apply(truth.apply(corners)) - corners)
        assert err.mean() < 1.0

    def test_uniform_images_fail(self):
        flat = np.full((222, 256), 128, dtype=np.uint8)
        with pytest.raises(MatchFailure):
            register_pair(flat, flat)

    def test_sidecar_correspondences(self, textured, tmp_path):
        truth = Homography.from_matrix([[1, 0, 6], [0, 1, -4], [0, 0, 1]])
        moving = warp_and_crop(textured, truth, out_size=(256, 222))
        rng = np.random.default_rng(0)
        pts = rng.uniform(40, 200, (12, 2))
        entries = [{"src": list(truth.apply(p[None])[0]), "dst": list(p)} for p in pts]
        sidecar = tmp_path / "pair.json"
        sidecar.write_text(json.dumps(entries))
        corrs = load_sidecar_correspondences(sidecar)
        _, h_est, diag = register_pair(moving, textured, correspondences=corrs)
        corners = np.array([[0, 0], [255, 0], [255, 221], [0, 221]], float)
        assert np.abs(h_est.apply(truth.apply(corners)) - corners).mean() < 0.5
        assert diag.n_matches == 12

    def test_grid_matcher_produces_correspondences(self, textured):
        corrs = match_grid_ncc(textured, textured, MatcherConfig())
        assert len(corrs) >= 10
        for c in corrs:
            assert c.src == c.dst
