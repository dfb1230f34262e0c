import numpy as np
import pytest
from scipy.stats import norm

from bayestomo import analysis as A
from bayestomo import mcmc as MC
from bayestomo import mesh as M
from bayestomo import prior as P
from bayestomo.fem import ParamField


@pytest.fixture(scope="module")
def small_mesh():
    return M.build_disk_mesh(2)


def field(mesh, values, kind="conductivity"):
    return ParamField(np.asarray(values, dtype=float), kind, mesh)


def make_chain(samples):
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    return MC.Chain(samples, np.zeros(n), np.zeros(n, bool), [(0, 0.1)], 0.0, 0)


def test_error_metrics_exact_cases(small_mesh):
    n = small_mesh.tri_count
    truth = field(small_mesh, np.full(n, 1.5))
    assert A.error_metrics(truth, truth) == A.ErrorReport(0.0, 0.0, 0.0, 0.0)
    offset = field(small_mesh, truth.values + 0.25)
    rep = A.error_metrics(offset, truth)
    assert rep.mae == pytest.approx(0.25)
    assert rep.mse == pytest.approx(0.0625)
    assert rep.linf == pytest.approx(0.25)
    one_off = truth.values.copy()
    one_off[3] += 2.0
    rep2 = A.error_metrics(field(small_mesh, one_off), truth)
    assert rep2.mae == pytest.approx(2.0 / n)
    assert rep2.mse == pytest.approx(4.0 / n)
    assert rep2.linf == pytest.approx(2.0)


def test_error_metrics_random_inequalities(small_mesh):
    rng = np.random.default_rng(0)
    n = small_mesh.tri_count
    for _ in range(10):
        a = field(small_mesh, np.exp(rng.normal(size=n)))
        b = field(small_mesh, np.exp(rng.normal(size=n)))
        rep = A.error_metrics(a, b)
        assert rep.mae <= rep.linf + 1e-15
        assert rep.mae**2 <= rep.mse + 1e-15


def test_error_metrics_support_mismatch(small_mesh):
    other = M.build_disk_mesh(1)
    with pytest.raises(A.AnalysisError):
        A.error_metrics(
            field(small_mesh, np.ones(small_mesh.tri_count)),
            field(other, np.ones(other.tri_count)),
        )


def test_credible_bounds_constant_chain(small_mesh):
    n = small_mesh.tri_count
    latent = np.ones(8)

    def pmap(q):
        return field(small_mesh, np.full(n, q.sum()))

    chain = make_chain(np.tile(latent, (5, 1)))
    lo, hi = A.credible_bounds(chain, pmap, 0.2)
    assert np.array_equal(lo.values, hi.values)
    assert np.all(lo.values == 8.0)


def test_credible_bounds_two_values(small_mesh):
    n = small_mesh.tri_count

    def pmap(q):
        return field(small_mesh, np.full(n, float(q[0])))

    chain = make_chain(np.array([[1.0], [2.0], [1.0], [2.0]]))
    lo, hi = A.credible_bounds(chain, pmap, 0.2)
    assert np.all(lo.values >= 1.0) and np.all(hi.values <= 2.0)
    assert np.all(lo.values <= hi.values)


def test_credible_bounds_normal_quantile_oracle(small_mesh):
    rng = np.random.default_rng(1)
    n_samples = 10_000
    samples = rng.standard_normal((n_samples, 1))
    vals = np.zeros(small_mesh.tri_count)

    def pmap(q):
        return field(small_mesh, vals + q[0], kind="latent")

    chain = make_chain(samples)
    lo, hi = A.credible_bounds(chain, pmap, 0.2)
    # independent oracle: high-accuracy normal quantile
    assert lo.values[0] == pytest.approx(norm.ppf(0.2), abs=0.05)
    assert hi.values[0] == pytest.approx(norm.ppf(0.8), abs=0.05)


def test_credible_bounds_level_converges_to_median(small_mesh):
    rng = np.random.default_rng(2)
    samples = rng.standard_normal((4001, 1))
    median = np.median(samples)

    def pmap(q):
        return field(small_mesh, np.full(small_mesh.tri_count, q[0]), kind="latent")

    chain = make_chain(samples)
    gaps = []
    for eps in (0.2, 0.05, 0.01):
        lo, hi = A.credible_bounds(chain, pmap, 0.5 - eps)
        assert lo.values[0] <= median <= hi.values[0]
        gaps.append(hi.values[0] - lo.values[0])
    assert gaps[0] > gaps[1] > gaps[2]


def test_credible_bounds_validation(small_mesh):
    def pmap(q):
        return field(small_mesh, np.full(small_mesh.tri_count, q[0]))

    with pytest.raises(A.AnalysisError):
        A.credible_bounds(make_chain(np.empty((0, 1))), pmap, 0.2)
    with pytest.raises(A.AnalysisError):
        A.credible_bounds(make_chain(np.ones((3, 1))), pmap, 0.7)


def gaussian_1d_hellinger(m1, m2, s1, s2):
    return np.sqrt(
        1.0 - np.sqrt(2 * s1 * s2 / (s1**2 + s2**2))
        * np.exp(-((m1 - m2) ** 2) / (4 * (s1**2 + s2**2)))
    )


def test_hellinger_identical_potentials_zero():
    prior = P.diagonal_prior([1.0])
    phi = lambda w: float(w[0] ** 2)
    rng = np.random.default_rng(3)
    assert A.hellinger_estimate(prior, phi, phi, 500, rng) == 0.0


def test_hellinger_constant_potentials_zero():
    prior = P.diagonal_prior([1.0])
    rng = np.random.default_rng(4)
    est = A.hellinger_estimate(prior, lambda w: 0.0, lambda w: 7.0, 500, rng)
    assert est == pytest.approx(0.0, abs=1e-12)


def test_hellinger_gaussian_oracle():
    # prior N(0,1); potentials (w-1)^2/2 and (w-1.2)^2/2 give posteriors
    # N(0.5, 1/2) and N(0.6, 1/2)
    prior = P.diagonal_prior([1.0])
    phi1 = lambda w: 0.5 * float((w[0] - 1.0) ** 2)
    phi2 = lambda w: 0.5 * float((w[0] - 1.2) ** 2)
    rng = np.random.default_rng(5)
    est = A.hellinger_estimate(prior, phi1, phi2, 100_000, rng)
    s = np.sqrt(0.5)
    assert est == pytest.approx(gaussian_1d_hellinger(0.5, 0.6, s, s), abs=0.02)


def test_hellinger_shift_invariance():
    prior = P.diagonal_prior([1.0, 1.0])
    rng_draws = np.random.default_rng(6)
    phi = lambda w: 0.5 * float(((w - 0.3) ** 2).sum())
    phi_t = lambda w: 0.5 * float(((w - 0.7) ** 2).sum())
    base = A.hellinger_estimate(prior, phi, phi_t, 2000, np.random.default_rng(7))
    shifted = A.hellinger_estimate(
        prior, lambda w: phi(w) + 5.0, lambda w: phi_t(w) + 5.0, 2000, np.random.default_rng(7)
    )
    assert abs(base - shifted) <= 1e-10
    assert 0.0 <= base <= 1.0


def test_hellinger_bounded_in_unit_interval():
    prior = P.diagonal_prior([1.0])
    rng = np.random.default_rng(8)
    # wildly different potentials: distance saturates toward 1 but never beyond
    est = A.hellinger_estimate(prior, lambda w: 0.0, lambda w: 200.0 * float(w[0] ** 2),
                               500, rng)
    assert 0.0 <= est <= 1.0


def test_hellinger_underflow_reported():
    prior = P.diagonal_prior([1.0])
    with pytest.raises(A.AnalysisError):
        A.hellinger_estimate(prior, lambda w: np.inf, lambda w: 1.0, 200,
                             np.random.default_rng(9))
    with pytest.raises(A.AnalysisError):
        A.hellinger_estimate(prior, lambda w: 0.0, lambda w: 1.0, 50,
                             np.random.default_rng(9))


def test_surrogate_l2mu_error_cases():
    prior = P.diagonal_prior(np.ones(4))
    rng = np.random.default_rng(10)
    fem = MC.CallableBackend(lambda q: np.outer(q[:2], q[2:]))
    same = MC.CallableBackend(lambda q: np.outer(q[:2], q[2:]))
    assert A.surrogate_l2mu_error(fem, same, prior, 200, rng) == 0.0
    c = 0.37
    offset = MC.CallableBackend(lambda q: np.outer(q[:2], q[2:]) + c)
    est = A.surrogate_l2mu_error(fem, offset, prior, 200, np.random.default_rng(11))
    assert est == pytest.approx(np.sqrt(4) * c, rel=1e-12)
    bad = MC.CallableBackend(lambda q: np.zeros((3, 3)))
    with pytest.raises(A.AnalysisError):
        A.surrogate_l2mu_error(fem, bad, prior, 100, np.random.default_rng(12))


def test_field_dump_csv(tmp_path, small_mesh):
    vals = np.arange(small_mesh.tri_count, dtype=float) + 1.0
    A.write_field_csv(field(small_mesh, vals), tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "element_id,x_centroid,y_centroid,value"
    assert len(lines) == 1 + small_mesh.tri_count
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[3]) == 1.0


def test_scaling_csv(tmp_path):
    rows = [(10, 0.5, 0.1), (40, 2.0, 0.2), (160, 9.0, 0.4)]
    A.write_scaling_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "dim,fem_seconds,net_seconds"
    assert len(lines) == 4
