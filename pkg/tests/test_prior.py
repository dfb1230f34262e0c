import numpy as np
import pytest

from bayestomo import mesh as M
from bayestomo import prior as P


def test_matern_at_zero():
    assert P.matern(0.0, P.MaternParams(3.0, 0.4)) == 1.0


def test_matern_half_is_exponential():
    p = P.MaternParams(0.5, 0.7)
    d = np.linspace(0.0, 3.0, 13)
    assert np.allclose(P.matern(d, p), np.exp(-d / 0.7), atol=1e-12)


def test_matern_three_halves_closed_form():
    p = P.MaternParams(1.5, 1.0)
    # (1 + sqrt(3) d/l) exp(-sqrt(3) d/l) at d = l
    expected = (1 + np.sqrt(3)) * np.exp(-np.sqrt(3))
    assert P.matern(1.0, p) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5, 3.0, 5.0])
@pytest.mark.parametrize("ell", [0.2, 0.4, 1.0])
def test_matern_nonincreasing(nu, ell):
    p = P.MaternParams(nu, ell)
    d = np.linspace(0.0, 5 * ell, 200)
    k = P.matern(d, p)
    assert np.all(np.diff(k) <= 1e-12)


def test_build_prior_single_point():
    gp = P.build_prior([[0.1, 0.2]], P.MaternParams(), jitter=0.0)
    assert gp.cov.shape == (1, 1)
    assert gp.cov[0, 0] == 1.0
    assert gp.chol[0, 0] == 1.0
    assert gp.jitter == 0.0


def test_build_prior_coincident_points_uses_ladder():
    gp = P.build_prior([[0.0, 0.0], [0.0, 0.0]], P.MaternParams())
    assert gp.jitter > 0
    recon = gp.chol @ gp.chol.T
    target = gp.cov + gp.jitter * np.eye(2)
    assert np.allclose(recon, target, rtol=1e-8)


def test_build_prior_hundred_points():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.7, 0.7, (100, 2))
    jitter = 1e-8
    gp = P.build_prior(pts, P.MaternParams(3.0, 0.4), jitter=jitter)
    assert np.all(gp.cov > 0) and np.all(gp.cov <= 1.0)
    assert np.array_equal(np.diag(gp.cov + gp.jitter * np.eye(100)),
                          np.full(100, 1.0 + gp.jitter))
    resid = gp.chol @ gp.chol.T - (gp.cov + gp.jitter * np.eye(100))
    assert np.abs(resid).max() <= 1e-8


def test_sample_gp_monte_carlo_covariance():
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, (5, 2))
    gp = P.build_prior(pts, P.MaternParams(3.0, 0.4))
    rng = np.random.default_rng(2)
    draws = np.array([P.sample_gp(gp, rng) for _ in range(10_000)])
    emp = np.cov(draws.T, bias=True)
    assert np.abs(emp - gp.cov).max() <= 0.05
    # CLT bound on the mean
    bound = 4 / np.sqrt(10_000) * np.sqrt(np.diag(gp.cov))
    assert np.all(np.abs(draws.mean(axis=0)) <= bound)


def test_sample_gp_deterministic_per_seed():
    gp = P.build_prior(np.random.default_rng(2).uniform(-0.5, 0.5, (10, 2)), P.MaternParams())
    a = P.sample_gp(gp, np.random.default_rng(7))
    b = P.sample_gp(gp, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_level_set_single_band_constant():
    spec = P.LevelSetSpec(thresholds=(-1e9, 1e9), values=(2.5,))
    w = np.random.default_rng(0).normal(size=50)
    assert np.all(P.level_set_map(w, spec) == 2.5)


def test_level_set_midpoint_band():
    spec = P.LevelSetSpec(thresholds=(-1.0, 1.0, 3.0), values=(1.0, 2.0))
    w = np.zeros(10)  # midpoint of the first band
    assert np.all(P.level_set_map(w, spec) == 1.0)


def test_level_set_sign_partition():
    spec = P.LevelSetSpec(thresholds=(-10.0, 0.0, 10.0), values=(1.0, 2.0))
    w = np.random.default_rng(3).normal(size=500)
    out = P.level_set_map(w, spec)
    # independent oracle: direct sign test
    assert np.array_equal(out, np.where(w >= 0, 2.0, 1.0))


def test_level_set_values_only_from_spec():
    spec = P.default_level_set()
    w = np.random.default_rng(4).normal(0, 5, size=1000)
    out = P.level_set_map(w, spec)
    assert set(np.unique(out)) <= set(spec.values.tolist())


def test_level_set_affine_invariance():
    rng = np.random.default_rng(5)
    w = rng.normal(size=300)
    c = np.array([-2.0, -0.3, 0.4, 1.7])
    vals = (1.0, 2.0, 3.0)
    base = P.level_set_map(w, P.LevelSetSpec(c, vals))
    for a, b in [(2.0, 0.5), (0.3, -1.0), (10.0, 3.0)]:
        spec2 = P.LevelSetSpec(a * c + b, vals)
        assert np.array_equal(P.level_set_map(a * w + b, spec2), base)


def test_level_set_bad_thresholds():
    with pytest.raises(P.PriorError):
        P.LevelSetSpec(thresholds=(1.0, 0.0), values=(1.0,))


def test_star_psi_zero_covers_disk():
    mesh = M.build_disk_mesh(2)
    spec = P.StarShapeSpec(
        centers=[[0.0, 0.0]],
        fourier_coeffs=[np.zeros(3)],  # psi = 0, radius exp(0) = 1
        kappas=[0.15, 0.05],
    )
    out = P.star_shape_map(mesh, spec)
    assert np.all(out == 0.15)


def test_star_disk_area():
    mesh = M.build_disk_mesh(3)
    # off-center placement avoids worst-case alignment of the structured rings
    spec = P.StarShapeSpec(
        centers=[[0.2, 0.15]],
        fourier_coeffs=[np.array([np.log(0.3), 0.0, 0.0])],
        kappas=[0.15, 0.05],
    )
    out = P.star_shape_map(mesh, spec)
    area = M.signed_areas(mesh)[out == 0.15].sum()
    assert area == pytest.approx(np.pi * 0.09, rel=0.05)


def test_star_no_inclusions_is_background():
    mesh = M.build_disk_mesh(2)
    spec = P.StarShapeSpec(centers=np.empty((0, 2)), fourier_coeffs=[], kappas=[0.07])
    assert np.all(P.star_shape_map(mesh, spec) == 0.07)


def test_star_region_is_star_shaped():
    mesh = M.build_disk_mesh(3)
    rng = np.random.default_rng(6)
    coeffs = P.sample_star_prior(8, 2.0, rng)
    coeffs[0] += np.log(0.4)
    center = np.array([0.1, -0.1])
    spec = P.StarShapeSpec(centers=[center], fourier_coeffs=[coeffs], kappas=[1.0, 2.0])
    out = P.star_shape_map(mesh, spec)
    cents = M.centroids(mesh)
    inside = cents[out == 1.0]
    # every point on the segment from a member centroid to the center is a member
    for p in inside[:: max(1, len(inside) // 20)]:
        for s in np.linspace(0.0, 1.0, 8):
            q = center + s * (p - center)
            dx, dy = q - center
            assert np.hypot(dx, dy) <= np.exp(P.eval_psi(coeffs, np.arctan2(dy, dx))) + 1e-12


def test_star_values_only_kappas():
    mesh = M.build_disk_mesh(2)
    rng = np.random.default_rng(7)
    spec = P.StarShapeSpec(
        centers=[[-0.3, 0.0], [0.4, 0.2]],
        fourier_coeffs=[P.sample_star_prior(6, 2.0, rng) for _ in range(2)],
        kappas=[0.2, 0.1, 0.05],
    )
    out = P.star_shape_map(mesh, spec)
    assert set(np.unique(out)) <= {0.2, 0.1, 0.05}


def test_sample_star_prior_variances():
    rng = np.random.default_rng(8)
    draws = np.array([P.sample_star_prior(4, 2.0, rng) for _ in range(10_000)])
    # a_2 has variance k^(-2 decay) = 2^-4
    assert draws[:, 2].var() == pytest.approx(2.0**-4, rel=0.1)


def test_sample_star_prior_deterministic():
    a = P.sample_star_prior(5, 2.0, np.random.default_rng(3))
    b = P.sample_star_prior(5, 2.0, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_sample_star_prior_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(P.PriorError):
        P.sample_star_prior(0, 2.0, rng)
    with pytest.raises(P.PriorError):
        P.sample_star_prior(4, 0.4, rng)


def test_constant_only_coeffs_give_circle():
    mesh = M.build_disk_mesh(3)
    coeffs = np.array([np.log(0.5), 0.0, 0.0])  # K=1 with zero harmonics
    spec = P.StarShapeSpec(centers=[[0.0, 0.0]], fourier_coeffs=[coeffs], kappas=[1.0, 2.0])
    out = P.star_shape_map(mesh, spec)
    cents = M.centroids(mesh)
    r = np.hypot(cents[:, 0], cents[:, 1])
    assert np.array_equal(out == 1.0, r <= 0.5)


def test_rotate_star_coeffs():
    rng = np.random.default_rng(9)
    coeffs = P.sample_star_prior(6, 2.0, rng)
    angle = 0.7
    rotated = P.rotate_star_coeffs(coeffs, angle)
    theta = np.linspace(0, 2 * np.pi, 50)
    assert np.allclose(P.eval_psi(rotated, theta), P.eval_psi(coeffs, theta - angle))


def test_diagonal_prior_and_nodal_interp():
    gp = P.diagonal_prior([1.0, 2.0, 3.0])
    s = P.sample_gp(gp, np.random.default_rng(0))
    assert s.shape == (3,)
    mesh = M.build_disk_mesh(1)
    nodal = np.arange(mesh.node_count, dtype=float)
    tri_vals = P.nodal_to_triangle(mesh, nodal)
    assert tri_vals.shape == (mesh.tri_count,)
    assert np.allclose(tri_vals, nodal[mesh.triangles].mean(axis=1))
