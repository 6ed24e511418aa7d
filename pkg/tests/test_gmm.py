import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lesionforge.gmm import (
    GmmParams,
    TissueModel,
    TooFewPixelsError,
    fit_em,
    fit_tissue_model,
    log_density,
    morph_cleanup,
    segment_gmm,
    segment_pixels,
)
from oracles import flood_components, gaussian_mc_mass, has_holes

SLACK = 1e-7


def two_clusters(rng, n=5000, sigma=0.05):
    a = rng.normal(0.2, sigma, (n // 2, 3))
    b = rng.normal(0.8, sigma, (n - n // 2, 3))
    return np.vstack([a, b])


def assert_monotone(trace):
    diffs = np.diff(np.asarray(trace))
    assert np.all(diffs >= -SLACK), diffs.min()


class TestFitEm:
    def test_k1_closed_form(self, rng):
        x = rng.random((400, 3))
        g = fit_em(x, 1, seed=0)
        mean = x.mean(axis=0)
        cov = np.cov(x, rowvar=False, bias=True)
        cov_reg = cov + 1e-6 * np.trace(cov) / 3 * np.eye(3)
        np.testing.assert_allclose(g.weights, [1.0], atol=1e-12)
        assert np.abs(g.means[0] - mean).max() <= 1e-9
        assert np.abs(g.covs[0] - cov_reg).max() <= 1e-9

    def test_two_cluster_recovery(self):
        x = two_clusters(np.random.default_rng(2024))
        g = fit_em(x, 2, seed=0)
        order = np.argsort(g.means[:, 0])
        np.testing.assert_allclose(g.means[order], [[0.2] * 3, [0.8] * 3], atol=0.02)
        np.testing.assert_allclose(g.weights[order], [0.5, 0.5], atol=0.05)
        assert_monotone(g.trace)

    def test_weights_sum_and_covariance_floor(self, rng):
        g = fit_em(rng.random((600, 3)), 4, seed=3)
        assert abs(g.weights.sum() - 1) <= 1e-9
        for cov in g.covs:
            np.testing.assert_allclose(cov, cov.T)
            assert np.linalg.eigvalsh(cov).min() > 0

    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(40, 400))
    @settings(max_examples=25, deadline=None)
    def test_log_likelihood_monotone(self, seed, k, n):
        r = np.random.default_rng(seed)
        centers = r.random((3, 3))
        x = centers[r.integers(0, 3, n)] + r.normal(0, r.uniform(0.01, 0.2), (n, 3))
        g = fit_em(x, k, seed=seed)
        assert_monotone(g.trace)

    def test_monotone_on_quantized_pixels(self, rng):
        # 8-bit colours with many exact duplicates
        x = np.round(rng.normal(0.5, 0.03, (3000, 3)) * 255) / 255
        assert_monotone(fit_em(x, 3, seed=1).trace)

    def test_deterministic(self, rng):
        x = rng.random((500, 3))
        a, b = fit_em(x, 3, seed=9), fit_em(x, 3, seed=9)
        assert a.means.tobytes() == b.means.tobytes()
        assert a.covs.tobytes() == b.covs.tobytes()

    def test_too_few_pixels(self, rng):
        with pytest.raises(TooFewPixelsError):
            fit_em(rng.random((29, 3)), 3)

    def test_degenerate_data(self):
        x = np.tile([0.3, 0.4, 0.5], (100, 1))
        g = fit_em(x, 3)
        assert g.n_components == 1
        np.testing.assert_array_equal(g.means[0], [0.3, 0.4, 0.5])
        assert np.isfinite(log_density([0.3, 0.4, 0.5], g))


class TestLogDensity:
    def test_standard_normal_at_mode(self):
        g = GmmParams(np.ones(1), np.zeros((1, 3)), np.eye(3)[None])
        assert log_density(np.zeros(3), g) == pytest.approx(-1.5 * np.log(2 * np.pi), abs=1e-12)
        assert log_density(np.zeros(3), g) == pytest.approx(-2.7568, abs=1e-4)

    def test_integrates_to_one(self):
        g = GmmParams(
            np.array([0.3, 0.7]),
            np.array([[0.4, 0.5, 0.5], [0.6, 0.5, 0.4]]),
            np.array([np.eye(3) * 0.01, np.diag([0.02, 0.01, 0.015])]),
        )
        mass = gaussian_mc_mass(lambda p: log_density(p, g), [0.0] * 3, [1.0] * 3, 400_000, np.random.default_rng(0))
        assert mass == pytest.approx(1.0, rel=0.03)

    @pytest.mark.parametrize("scale", [1.0, 1e3, 1e6])
    def test_finite_far_from_components(self, scale):
        g = GmmParams(np.array([0.5, 0.5]), np.array([[0.1] * 3, [0.9] * 3]), np.array([np.eye(3) * 1e-4] * 2))
        v = log_density(np.array([scale, -scale, scale]), g)
        assert np.isfinite(v) and v < 0

    def test_batch_matches_single(self, rng):
        g = fit_em(rng.random((300, 3)), 2)
        pts = rng.random((5, 3))
        np.testing.assert_allclose(log_density(pts, g), [log_density(p, g) for p in pts])


def dark_light_model(p_lesion=0.5):
    dark = GmmParams(np.ones(1), np.array([[0.2, 0.15, 0.1]]), (np.eye(3) * 0.005)[None])
    light = GmmParams(np.ones(1), np.array([[0.85, 0.7, 0.6]]), (np.eye(3) * 0.005)[None])
    return TissueModel(dark, light, p_lesion, 1 - p_lesion)


class TestSegmentPixels:
    def test_equal_models_tie_to_skin(self, rng):
        g = GmmParams(np.ones(1), np.array([[0.5] * 3]), np.eye(3)[None] * 0.1)
        mask = segment_pixels(rng.random((3, 10, 12)), TissueModel(g, g, 0.5, 0.5))
        assert mask.sum() == 0

    def test_half_dark_half_light(self):
        img = np.empty((3, 20, 30))
        img[:, :, :15] = np.array([0.2, 0.15, 0.1])[:, None, None]
        img[:, :, 15:] = np.array([0.85, 0.7, 0.6])[:, None, None]
        mask = segment_pixels(img, dark_light_model())
        expected = np.zeros((20, 30), np.uint8)
        expected[:, :15] = 1
        np.testing.assert_array_equal(mask, expected)

    def test_prior_monotonicity(self, rng):
        img = rng.random((3, 30, 30))
        prev = None
        for p in np.linspace(0.01, 0.99, 15):
            mask = segment_pixels(img, dark_light_model(p)).astype(bool)
            if prev is not None:
                assert np.all(mask >= prev)
            prev = mask

    def test_pixel_permutation_equivariance(self, rng):
        img = rng.random((3, 16, 16))
        model = dark_light_model(0.4)
        perm = rng.permutation(256)
        flat = img.reshape(3, -1)
        permuted = flat[:, perm].reshape(3, 16, 16)
        a = segment_pixels(img, model).ravel()[perm]
        b = segment_pixels(permuted, model).ravel()
        np.testing.assert_array_equal(a, b)


def disk_mask(h, w, cy, cx, r):
    yy, xx = np.mgrid[:h, :w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)


class TestMorphCleanup:
    def test_fills_hole(self):
        disk = disk_mask(40, 40, 20, 20, 12)
        holed = disk.copy()
        holed[18:23, 18:23] = 0
        np.testing.assert_array_equal(morph_cleanup(holed), disk)

    def test_keeps_largest_blob(self):
        m = np.zeros((40, 40), np.uint8)
        m[2:12, 2:12] = 1  # 100 pixels
        m[25:31, 25:30] = 1  # 30 pixels
        out = morph_cleanup(m)
        comps = flood_components(out)
        assert len(comps) == 1 and len(comps[0]) == 100
        assert out[5, 5] == 1 and out[27, 27] == 0

    def test_empty(self):
        assert morph_cleanup(np.zeros((8, 8), np.uint8)).sum() == 0

    def test_diagonal_pixels_are_one_component(self):
        m = np.zeros((5, 5), np.uint8)
        m[1, 1] = m[2, 2] = m[3, 3] = 1
        m[0, 4] = 1
        out = morph_cleanup(m)
        assert out.sum() == 3

    @given(st.integers(0, 100_000))
    @settings(max_examples=40, deadline=None)
    def test_single_component_without_holes(self, seed):
        r = np.random.default_rng(seed)
        m = (r.random((18, 18)) < r.uniform(0.2, 0.7)).astype(np.uint8)
        out = morph_cleanup(m)
        comps = flood_components(out)
        assert len(comps) <= 1
        assert not has_holes(out)
        if comps:
            biggest = max(len(c) for c in flood_components(m))
            assert len(comps[0]) >= biggest


class TestTissueBootstrap:
    def test_dark_disk_on_light_skin(self):
        r = np.random.default_rng(5)
        truth = disk_mask(224, 224, 110, 100, 30)
        img = np.where(truth[None] > 0, np.array([0.3, 0.2, 0.15])[:, None, None], np.array([0.85, 0.7, 0.6])[:, None, None])
        img = np.clip(img + r.normal(0, 0.02, img.shape), 0, 1)
        mask = segment_gmm(img, 3, seed=0)
        inter = np.logical_and(mask, truth).sum()
        union = np.logical_or(mask, truth).sum()
        assert inter / union > 0.95

    def test_no_contrast_gives_no_model(self):
        assert fit_tissue_model(np.full((3, 20, 20), 0.5)) is None
        assert segment_gmm(np.full((3, 20, 20), 0.5)).sum() == 0

    def test_priors_are_seed_fractions(self):
        truth = disk_mask(50, 50, 25, 25, 10)
        img = np.where(truth[None] > 0, 0.2, 0.8) + np.random.default_rng(1).normal(0, 0.01, (3, 50, 50))
        model = fit_tissue_model(img, 2, seed=0)
        assert model.p_lesion == pytest.approx(truth.mean())
        assert model.p_lesion + model.p_skin == pytest.approx(1.0)
