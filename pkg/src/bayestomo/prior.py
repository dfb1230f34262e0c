"""Gaussian-process priors and the latent-to-coefficient parametrizations.

Two maps turn latent samples into admissible physical fields: thresholding a
continuous latent function into piecewise-constant bands (conductivity and
absorption phantoms), and star-shaped inclusions whose boundary radius is
``exp(psi(theta))`` around a fixed center (photoacoustic absorption).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .mesh import TriMesh, centroids


class PriorError(ValueError):
    """Prior construction failed (e.g. covariance factorization)."""


@dataclass
class MaternParams:
    """Smoothness ``nu`` and length scale ``ell`` of the Matern family.

    The sampler configuration keeps ``nu >= 3`` so latent draws are smooth
    enough for the thresholding maps; smaller values remain available for
    closed-form unit checks.
    """

    nu: float = 3.0
    ell: float = 0.4

    def __post_init__(self):
        if self.nu <= 0 or self.ell <= 0:
            raise PriorError("nu and ell must be positive")


def matern(d, p: MaternParams):
    """Matern covariance k(d) with k(0) = 1.

    Evaluates ``2^(1-nu)/Gamma(nu) * x^nu * K_nu(x)`` with
    ``x = d*sqrt(2*nu)/ell``; the d -> 0 limit is taken explicitly.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise PriorError("distances must be nonnegative")
    x = d * np.sqrt(2.0 * p.nu) / p.ell
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(over="ignore"):
        val = (2.0 ** (1.0 - p.nu) / gamma_fn(p.nu)) * xp**p.nu * kv(p.nu, xp)
    out[pos] = np.where(np.isfinite(val), val, 0.0)  # kv underflow for large x
    return out if out.ndim else float(out)


@dataclass
class GPPrior:
    """Zero-mean Gaussian prior with a precomputed Cholesky factor.

    ``cov`` excludes the jitter; ``chol`` factors ``cov + jitter*I``.
    ``points`` is kept for diagnostics and may be None for synthetic
    (e.g. diagonal) priors.
    """

    points: np.ndarray | None
    cov: np.ndarray
    chol: np.ndarray
    jitter: float

    @property
    def dim(self) -> int:
        return self.cov.shape[0]


_JITTER_LADDER = (1e-10, 1e-8, 1e-6)


def build_prior(points, p: MaternParams, jitter: float = 0.0) -> GPPrior:
    """Matern covariance over the given points, factorized with a jitter ladder.

    Factorization is attempted at the requested jitter, then at 1e-10, 1e-8
    and 1e-6 before giving up.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 1:
        raise PriorError("at least one evaluation point required")
    if jitter < 0:
        raise PriorError("jitter must be nonnegative")
    cov = matern(cdist(points, points), p)
    cov = 0.5 * (cov + cov.T)
    ladder = [jitter] + [j for j in _JITTER_LADDER if j > jitter]
    for j in ladder:
        try:
            chol = np.linalg.cholesky(cov + j * np.eye(cov.shape[0]))
            return GPPrior(points=points, cov=cov, chol=chol, jitter=j)
        except np.linalg.LinAlgError:
            continue
    raise PriorError("covariance factorization failed after jitter ladder 1e-10..1e-6")


def diagonal_prior(stds) -> GPPrior:
    """Independent zero-mean Gaussian prior with the given standard deviations."""
    stds = np.asarray(stds, dtype=float)
    if np.any(stds <= 0):
        raise PriorError("standard deviations must be positive")
    return GPPrior(points=None, cov=np.diag(stds**2), chol=np.diag(stds), jitter=0.0)


def sample_gp(prior: GPPrior, rng: np.random.Generator) -> np.ndarray:
    """One latent draw ``chol @ z`` with z standard normal."""
    return prior.chol @ rng.standard_normal(prior.dim)


@dataclass
class LevelSetSpec:
    """Thresholds c_0 < ... < c_M and the band values sigma_1 ... sigma_M."""

    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.thresholds) <= 0):
            raise PriorError("thresholds must be strictly increasing")
        if len(self.values) != len(self.thresholds) - 1:
            raise PriorError("need exactly one value per threshold band")
        if np.any(self.values <= 0):
            raise PriorError("band values must be strictly positive")


def default_level_set() -> LevelSetSpec:
    """Binary background/anomaly bands split at zero."""
    return LevelSetSpec(thresholds=(-1e9, 0.0, 1e9), values=(1.0, 2.0))


def level_set_map(w: np.ndarray, spec: LevelSetSpec) -> np.ndarray:
    """Threshold a latent field into the band values.

    Element t gets ``values[i]`` when ``thresholds[i] <= w[t] < thresholds[i+1]``;
    values outside the outermost thresholds clamp to the first/last band.
    """
    w = np.asarray(w, dtype=float)
    idx = np.searchsorted(spec.thresholds, w, side="right") - 1
    idx = np.clip(idx, 0, len(spec.values) - 1)
    return spec.values[idx]


@dataclass
class StarShapeSpec:
    """Star-shaped inclusions over a background.

    centers : (N, 2) interior points.
    fourier_coeffs : list of N vectors ``[a0, a_1..a_K, b_1..b_K]`` for the
        radial log-deformation psi of each inclusion.
    kappas : N+1 positive values; the last one is the background.
    """

    centers: np.ndarray
    fourier_coeffs: list
    kappas: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.kappas = np.asarray(self.kappas, dtype=float)
        if np.any(np.hypot(self.centers[:, 0], self.centers[:, 1]) >= 1):
            raise PriorError("inclusion centers must lie strictly inside the disk")
        if np.any(self.kappas <= 0):
            raise PriorError("kappa values must be positive")
        if len(self.kappas) != len(self.fourier_coeffs) + 1:
            raise PriorError("need one kappa per inclusion plus a background value")

    @property
    def n_inclusions(self) -> int:
        return len(self.fourier_coeffs)


def eval_psi(coeffs: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Evaluate psi(theta) = a0 + sum a_k cos(k theta) + b_k sin(k theta)."""
    coeffs = np.asarray(coeffs, dtype=float)
    K = (len(coeffs) - 1) // 2
    out = np.full_like(np.asarray(theta, dtype=float), coeffs[0])
    for k in range(1, K + 1):
        out += coeffs[k] * np.cos(k * theta) + coeffs[K + k] * np.sin(k * theta)
    return out


def star_shape_map(mesh: TriMesh, spec: StarShapeSpec) -> np.ndarray:
    """Per-triangle absorption from star-shaped inclusions.

    A centroid belongs to inclusion i when its polar radius about the center
    satisfies ``r <= exp(psi_i(theta))``; the first matching inclusion wins
    and everything else is background.  Inclusions reaching outside the disk
    are clipped by the mesh implicitly.
    """
    cents = centroids(mesh)
    out = np.full(mesh.tri_count, spec.kappas[-1])
    unassigned = np.ones(mesh.tri_count, dtype=bool)
    for i in range(spec.n_inclusions):
        dx = cents - spec.centers[i]
        r = np.hypot(dx[:, 0], dx[:, 1])
        theta = np.arctan2(dx[:, 1], dx[:, 0])
        inside = r <= np.exp(eval_psi(spec.fourier_coeffs[i], theta))
        take = inside & unassigned
        out[take] = spec.kappas[i]
        unassigned &= ~inside
    return out


def sample_star_prior(
    K: int, decay: float, rng: np.random.Generator, const_scale: float = 0.3
) -> np.ndarray:
    """Random Fourier coefficients for a smooth radial deformation psi.

    a_k, b_k ~ N(0, k^(-2*decay)) for k = 1..K, constant term N(0, const_scale^2).
    decay > 3/2 yields almost-surely continuously differentiable psi.
    """
    if K < 1:
        raise PriorError("truncation order K must be at least 1")
    if decay <= 0.5:
        raise PriorError("decay must exceed 1/2 for a summable series")
    stds = star_coeff_stds(K, decay, const_scale)
    return stds * rng.standard_normal(2 * K + 1)


def star_coeff_stds(K: int, decay: float, const_scale: float = 0.3) -> np.ndarray:
    """Standard deviations of the star-prior coefficients, in eval_psi order."""
    k = np.arange(1, K + 1, dtype=float)
    return np.concatenate([[const_scale], k**-decay, k**-decay])


def rotate_star_coeffs(coeffs: np.ndarray, angle: float) -> np.ndarray:
    """Coefficients of psi(theta - angle): rotates the inclusion by ``angle``."""
    coeffs = np.asarray(coeffs, dtype=float)
    K = (len(coeffs) - 1) // 2
    out = coeffs.copy()
    for k in range(1, K + 1):
        ca, sa = np.cos(k * angle), np.sin(k * angle)
        a, b = coeffs[k], coeffs[K + k]
        out[k] = a * ca - b * sa
        out[K + k] = a * sa + b * ca
    return out


def nodal_to_triangle(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    """Evaluate a piecewise-linear nodal field at triangle centroids."""
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape[0] != mesh.node_count:
        raise PriorError("nodal field length does not match the mesh")
    return nodal[mesh.triangles].mean(axis=1)
