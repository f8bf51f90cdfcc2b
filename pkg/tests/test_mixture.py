import numpy as np
import pytest

from ganreg import mixture


def test_plane_normal_matches_derived_vector():
    spec = mixture.MixtureSpec()
    expected = np.array([-0.5, -0.5, np.sqrt(2.0) / 2.0])
    np.testing.assert_allclose(spec.plane_normal(), expected, atol=1e-15)


def test_samples_lie_on_plane(rng):
    spec = mixture.MixtureSpec()
    pts = mixture.sample_mixture(spec, 5000, rng)
    n_hat = spec.plane_normal()
    t = np.asarray(spec.translation)
    off = (pts - t) @ n_hat
    assert np.max(np.abs(off)) < 1e-12


def test_sample_mean_near_translation(rng):
    spec = mixture.MixtureSpec()
    n = 1_000_000
    pts = mixture.sample_mixture(spec, n, rng)
    # per-coordinate spread is dominated by the unit circle geometry
    sd = pts.std(axis=0, ddof=1)
    err = np.abs(pts.mean(axis=0) - np.asarray(spec.translation))
    assert np.all(err < 3.0 * sd / np.sqrt(n) + 5e-3)


def test_single_mode_degenerate_std(rng):
    spec = mixture.MixtureSpec(n_modes=1, mode_std=1e-15)
    pts = mixture.sample_mixture(spec, 50, rng)
    center = spec.mode_centers()[0]
    assert np.max(np.abs(pts - center)) < 1e-12


def test_mode_balance_binomial(rng):
    spec = mixture.MixtureSpec()
    n = 1_000_000
    pts = mixture.sample_mixture(spec, n, rng)
    inplane, _ = spec.project(pts)
    centers = spec.mode_centers_2d()
    d2 = ((inplane[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    counts = np.bincount(np.argmin(d2, axis=1), minlength=7)
    p = 1.0 / 7.0
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 5.0 * sigma)


def test_rotation_preserves_pairwise_distances(rng):
    spec = mixture.MixtureSpec()
    pts2d = rng.standard_normal((40, 2))
    emb = spec.embed(pts2d)
    d_before = np.linalg.norm(pts2d[:, None, :] - pts2d[None, :, :], axis=2)
    d_after = np.linalg.norm(emb[:, None, :] - emb[None, :, :], axis=2)
    np.testing.assert_allclose(d_after, d_before, atol=1e-12)


def test_project_inverts_embed(rng):
    spec = mixture.MixtureSpec()
    pts2d = rng.standard_normal((20, 2))
    back, off = spec.project(spec.embed(pts2d))
    np.testing.assert_allclose(back, pts2d, atol=1e-13)
    np.testing.assert_allclose(off, 0.0, atol=1e-13)


def test_density_at_mode_center():
    spec = mixture.MixtureSpec()
    center3d = spec.mode_centers()[0]
    val = mixture.mixture_density_inplane(spec, center3d)
    # (1/7) / (2 pi sigma^2); the nearest other mode is ~0.87 away
    assert val == pytest.approx(1.0 / (7.0 * 2.0 * np.pi * 1e-4), rel=1e-6)
    assert val == pytest.approx(227.36, rel=1e-3)


def test_density_center_equidistant_sum():
    spec = mixture.MixtureSpec()
    center = spec.embed(np.zeros((1, 2)))[0]
    val = mixture.mixture_density_inplane(spec, center)
    var = spec.mode_std**2
    direct = np.exp(-0.5 / var) / (2.0 * np.pi * var)  # all 7 terms equal
    assert val == pytest.approx(direct, rel=1e-12)


def test_density_off_plane_zero():
    spec = mixture.MixtureSpec()
    pt = spec.mode_centers()[0] + 0.5 * spec.plane_normal()
    assert mixture.mixture_density_inplane(spec, pt) == 0.0


def test_mixture_spec_validation():
    with pytest.raises(ValueError):
        mixture.MixtureSpec(mode_std=0.0)
    with pytest.raises(ValueError):
        mixture.MixtureSpec(rotation_axis=(1.0, 0.0, 0.1))


def test_scott_factor_closed_form():
    assert mixture.scott_factor(10_000, 2) == pytest.approx(10_000 ** (-1.0 / 6.0))
    assert mixture.scott_factor(10_000, 2) == pytest.approx(0.21544, abs=1e-5)


def test_kde_integrates_to_one(rng):
    pts = rng.standard_normal((400, 2))
    model = mixture.kde_fit(pts)
    g = np.linspace(-6, 6, 121)
    xx, yy = np.meshgrid(g, g)
    q = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = mixture.kde_eval(model, q)
    cell = (g[1] - g[0]) ** 2
    assert abs(dens.sum() * cell - 1.0) < 1e-2


def test_kde_identical_points_floor_peak():
    pts = np.array([[1.0, 2.0], [1.0, 2.0]])
    model = mixture.kde_fit(pts)
    assert np.all(model.bandwidth >= 1e-8 * mixture.scott_factor(2, 2))
    at_peak = mixture.kde_eval(model, np.array([[1.0, 2.0]]))[0]
    nearby = mixture.kde_eval(model, np.array([[1.1, 2.0]]))[0]
    assert at_peak > nearby


def test_kde_matches_inplane_density(rng):
    """With mode widths the Scott bandwidth can resolve (the rule uses the
    global std, circle-dominated here, so sigma must not be much below it)
    the KDE field tracks the analytic density pointwise."""
    spec = mixture.MixtureSpec(embedded=False, mode_std=0.25)
    pts = mixture.sample_mixture(spec, 100_000, rng)
    model = mixture.kde_fit(pts)
    g = np.linspace(-1.6, 1.6, 41)
    xx, yy = np.meshgrid(g, g)
    q = np.stack([xx.ravel(), yy.ravel()], axis=1)
    kde_vals = mixture.kde_eval(model, q)
    true_vals = mixture.mixture_density_inplane(spec, q)
    r = np.corrcoef(kde_vals, true_vals)[0, 1]
    assert r > 0.99


def test_kde_requires_two_samples():
    with pytest.raises(ValueError):
        mixture.kde_fit(np.zeros((1, 3)))


def test_latent_sample_moments(rng):
    z = mixture.latent_sample(1_000_000, 2, rng)
    cov = np.cov(z.T)
    se = 3.0 / np.sqrt(z.shape[0])
    assert np.all(np.abs(cov - np.eye(2)) < 3.0 * se + 2e-3)
    assert np.all(np.abs(z.mean(axis=0)) < 3.0 / np.sqrt(z.shape[0]))


def test_latent_sample_deterministic():
    a = mixture.latent_sample(16, 2, np.random.default_rng(9))
    b = mixture.latent_sample(16, 2, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_latent_dim_default_matches_config():
    from ganreg.training import TrainConfig

    assert TrainConfig().latent_dim == 2


def test_sample_csv_round_trip(tmp_path, rng):
    spec = mixture.MixtureSpec()
    pts = mixture.sample_mixture(spec, 10, rng)
    model = mixture.kde_fit(pts)
    dens = mixture.kde_eval(model, pts)
    path = tmp_path / "s.csv"
    mixture.write_sample_csv(path, pts, dens)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,kde_density"
    assert len(lines) == 11
    got = np.array([[float(v) for v in l.split(",")] for l in lines[1:]])
    np.testing.assert_array_equal(got[:, :3], pts)
    np.testing.assert_array_equal(got[:, 3], dens)
