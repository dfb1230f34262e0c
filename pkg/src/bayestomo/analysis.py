"""Reconstructions, credible bounds, error metrics and surrogate-quality gauges.

The Hellinger estimator is self-normalized: both evidence terms are Monte
Carlo means over the same prior draws, and potentials are shifted by their
maximum before exponentiation so shared constants cancel exactly and no
normalizer can underflow while any potential is finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import ParamField
from .mcmc import Chain, ForwardBackend
from .prior import GPPrior, sample_gp


class AnalysisError(RuntimeError):
    """Estimator failure (degenerate normalizers, shape mismatch)."""


@dataclass
class ErrorReport:
    """Reconstruction error summary plus inversion wall time."""

    mae: float
    mse: float
    linf: float
    inv_time_seconds: float = 0.0

    def row(self) -> str:
        return ",".join(
            repr(float(v)) for v in (self.mae, self.mse, self.linf, self.inv_time_seconds)
        )


@dataclass
class Reconstruction:
    """Posterior point estimate with elementwise credible bounds."""

    field: ParamField
    lower: ParamField
    upper: ParamField
    meta: dict = field(default_factory=dict)


def error_metrics(recon: ParamField, truth: ParamField, inv_time_seconds: float = 0.0) -> ErrorReport:
    """Mean absolute, mean squared and maximum elementwise errors."""
    if recon.mesh is not truth.mesh or len(recon.values) != len(truth.values):
        raise AnalysisError("reconstruction and truth live on different supports")
    diff = recon.values - truth.values
    return ErrorReport(
        mae=float(np.mean(np.abs(diff))),
        mse=float(np.mean(diff**2)),
        linf=float(np.max(np.abs(diff))),
        inv_time_seconds=inv_time_seconds,
    )


def credible_bounds(chain: Chain, param_map, level: float = 0.2):
    """Elementwise posterior quantile bands of the mapped samples.

    ``param_map`` sends a latent vector to a ParamField; the bounds are the
    ``level`` and ``1 - level`` empirical quantiles per element (linear
    interpolation between order statistics).
    """
    if chain.samples.shape[0] == 0:
        raise AnalysisError("chain holds no stored samples")
    if not 0 < level < 0.5:
        raise AnalysisError("level must lie in (0, 0.5)")
    first = param_map(chain.samples[0])
    mapped = np.empty((chain.samples.shape[0], len(first.values)))
    mapped[0] = first.values
    for i in range(1, chain.samples.shape[0]):
        mapped[i] = param_map(chain.samples[i]).values
    lo = np.quantile(mapped, level, axis=0)
    hi = np.quantile(mapped, 1.0 - level, axis=0)
    lower = ParamField(lo, first.kind, first.mesh)
    upper = ParamField(hi, first.kind, first.mesh)
    return lower, upper


def _potential_weights(phis: np.ndarray) -> np.ndarray:
    """Self-normalized weights exp(-phi)/mean(exp(-phi)) with max rescaling."""
    a = -np.asarray(phis, dtype=float)
    finite = np.isfinite(a)
    if not np.any(finite):
        raise AnalysisError("all potentials are infinite; normalizer underflows to zero")
    shift = a[finite].max()
    e = np.where(finite, np.exp(a - shift), 0.0)
    return e / e.mean()


def hellinger_estimate(
    prior: GPPrior,
    phi_exact,
    phi_surrogate,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo Hellinger distance between two potential-tilted posteriors.

    Draws latents from the prior, forms self-normalized densities for both
    potentials on the same draws, and returns
    ``sqrt(0.5 * mean (sqrt(u) - sqrt(v))^2)``, which lies in [0, 1] by
    construction.
    """
    if n_samples < 100:
        raise AnalysisError("need at least 100 prior draws")
    draws = [sample_gp(prior, rng) for _ in range(n_samples)]
    u = _potential_weights(np.array([phi_exact(w) for w in draws]))
    v = _potential_weights(np.array([phi_surrogate(w) for w in draws]))
    return float(np.sqrt(0.5 * np.mean((np.sqrt(u) - np.sqrt(v)) ** 2)))


def gaussian_potential(y: np.ndarray, backend_fn, sigma: float):
    """Potential w -> ||y - G(w)||_F^2 / (2 sigma^2) for Hellinger studies."""

    def phi(w):
        resid = y - backend_fn(w)
        return float(np.sum(resid * resid)) / (2.0 * sigma * sigma)

    return phi


def surrogate_l2mu_error(
    fem_backend: ForwardBackend,
    net_backend: ForwardBackend,
    prior: GPPrior,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Root mean squared Frobenius mismatch between backends over prior draws."""
    total = 0.0
    for _ in range(n_samples):
        w = sample_gp(prior, rng)
        a = fem_backend.evaluate(w)
        b = net_backend.evaluate(w)
        if a.shape != b.shape:
            raise AnalysisError(f"backend output shapes differ: {a.shape} vs {b.shape}")
        total += float(np.sum((a - b) ** 2))
    return float(np.sqrt(total / n_samples))


class _TimedBackend(ForwardBackend):
    """Accumulates the wall time spent inside another backend's evaluate."""

    def __init__(self, inner: ForwardBackend):
        super().__init__()
        self.inner = inner
        self.kind = inner.kind
        self.seconds = 0.0

    def _evaluate(self, q):
        import time

        t0 = time.perf_counter()
        out = self.inner.evaluate(q)
        self.seconds += time.perf_counter() - t0
        return out


def scaling_study(problem: str, refinement_levels, iterations: int, seed: int = 0):
    """Fixed-iteration chains per backend across mesh resolutions.

    Surrogates are freshly initialized per level: only evaluation cost is
    measured, which does not depend on the weights.  The recorded seconds are
    the wall time spent inside each backend's forward evaluations during its
    chain; the sampler's own prior-draw cost is identical for both backends
    and would otherwise drown the comparison at large dimensions.  Returns
    rows of (latent dimension, fem seconds, net seconds).
    """
    from . import problems as pr
    from .fem import add_noise
    from .mcmc import PcnConfig, run_chain

    levels = list(refinement_levels)
    if len(levels) < 3:
        raise AnalysisError("scaling study needs at least 3 refinement levels")
    rows = []
    for lv in levels:
        problem_obj = pr.build_problem(problem, refinement=lv)
        rng = np.random.default_rng(seed)
        truth = problem_obj.example_phantom_latent()
        y_obs = add_noise(problem_obj.forward(truth), 0.01, rng)
        q0 = np.zeros(problem_obj.latent_dim)
        cfg = PcnConfig(delta=0.05, burn_in=0, samples=iterations, seed=seed)
        fem_backend = _TimedBackend(problem_obj.fem_backend())
        run_chain(cfg, problem_obj.prior, fem_backend, y_obs, q0)
        net = problem_obj.fresh_net(channels=16, rng=np.random.default_rng(seed))
        net_backend = _TimedBackend(problem_obj.net_backend(net))
        run_chain(cfg, problem_obj.prior, net_backend, y_obs, q0)
        rows.append((problem_obj.latent_dim, fem_backend.seconds, net_backend.seconds))
    return rows


def write_field_csv(field: ParamField, path) -> None:
    """Dump ``element_id,x_centroid,y_centroid,value`` rows for plotting."""
    from .mesh import centroids

    cents = centroids(field.mesh)
    if len(field.values) != field.mesh.tri_count:
        raise AnalysisError("field dump requires per-triangle values")
    with open(path, "w") as fh:
        fh.write("element_id,x_centroid,y_centroid,value\n")
        for t, ((x, y), v) in enumerate(zip(cents, field.values)):
            fh.write(f"{t},{float(x)!r},{float(y)!r},{float(v)!r}\n")


def write_scaling_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("dim,fem_seconds,net_seconds\n")
        for dim, fs, ns in rows:
            fh.write(f"{dim},{float(fs)!r},{float(ns)!r}\n")
