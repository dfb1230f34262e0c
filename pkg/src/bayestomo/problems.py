"""Problem definitions wiring meshes, priors and solvers into backends.

Each problem fixes a latent space for the sampler, the parametrization from
latents to physical coefficient fields, the exact forward map, and the input
the surrogate network sees:

* impedance: latent is a nodal level-set function; conductivity is its
  thresholded field; the measurement is the 16x16 electrode resistivity map
  and the network consumes the latent directly.
* diffusion: latent lives on triangles; absorption is a clipped background
  shift; the measurement is the 16x16 illumination/readout table.
* photoacoustic: latent is the stack of star-inclusion Fourier deviations
  around fixed centers; the network consumes the mapped per-triangle
  absorption field, matching its fixed input width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem, mesh as mesh_mod, prior as prior_mod, surrogate
from .fem import Measurement, ParamField
from .mcmc import CallableBackend, ForwardBackend


@dataclass
class ProblemConfig:
    refinement: int = 4
    electrodes: int = 16
    coverage: float = 0.5
    contact_impedance: float = 0.01
    nu: float = 3.0
    ell: float | None = None  # per-problem default: 0.4 impedance, 0.2 diffusion
    jitter: float = 1e-10
    rho: float = 0.1
    # level-set bands (impedance)
    sigma_background: float = 1.0
    sigma_anomaly: float = 2.0
    # absorption shift map (diffusion)
    mu_background: float = 1.0
    mu_band: tuple = (0.05, 20.0)
    anomaly_amplitude: float = 3.0
    # star parametrization (photoacoustic)
    star_K: int = 16
    star_decay: float = 2.0
    star_const_scale: float = 0.3
    kappa_inclusion: float = 0.15
    kappa_background: float = 0.05
    star_centers: tuple = ((-0.35, 0.25), (0.35, -0.3))
    star_base_radii: tuple = (0.3, 0.25)
    circle_radius_range: tuple = (0.1, 0.4)
    circle_center_max: float = 0.6


class Problem:
    """Shared surface for the three inverse problems."""

    name = ""
    needs_electrodes = True
    default_ell = 0.4

    def __init__(self, cfg: ProblemConfig):
        if cfg.ell is None:
            cfg.ell = self.default_ell
        self.cfg = cfg
        self.mesh = mesh_mod.build_disk_mesh(cfg.refinement)
        self.layout = (
            mesh_mod.assign_electrodes(self.mesh, cfg.electrodes, cfg.coverage, cfg.contact_impedance)
            if self.needs_electrodes
            else None
        )
        self.prior = self._build_prior()

    # latent interface -----------------------------------------------------
    @property
    def latent_dim(self) -> int:
        return self.prior.dim

    @property
    def net_input_dim(self) -> int:
        raise NotImplementedError

    def _build_prior(self):
        raise NotImplementedError

    def map_to_field(self, latent: np.ndarray) -> ParamField:
        """Physical coefficient field for a latent vector."""
        raise NotImplementedError

    def forward(self, latent: np.ndarray) -> Measurement:
        """Exact forward measurement for a latent vector."""
        raise NotImplementedError

    def net_input(self, latent: np.ndarray) -> np.ndarray:
        """What the surrogate network sees for this latent."""
        raise NotImplementedError

    def forward_from_input(self, net_in: np.ndarray) -> Measurement:
        """Exact measurement for a network-input vector (training targets)."""
        raise NotImplementedError

    def training_input(self, category: str, rng: np.random.Generator) -> np.ndarray:
        """Draw one training input of the given phantom category."""
        raise NotImplementedError

    def example_phantom_latent(self) -> np.ndarray:
        """Deterministic single-anomaly phantom used by benches and examples."""
        raise NotImplementedError

    # backends ---------------------------------------------------------------
    def fem_backend(self) -> ForwardBackend:
        return CallableBackend(lambda q: self.forward(q).data, kind="fem")

    def net_backend(self, net: surrogate.SurrogateNet) -> ForwardBackend:
        if net.input_dim != self.net_input_dim:
            raise ValueError(
                f"net input dim {net.input_dim} != problem input dim {self.net_input_dim}"
            )
        return CallableBackend(
            lambda q: surrogate.net_forward(net, self.net_input(q)), kind="surrogate"
        )

    def fresh_net(self, channels: int = 16, conv_count: int = 4, final_relu: bool = False,
                  rng: np.random.Generator | None = None) -> surrogate.SurrogateNet:
        return surrogate.init_net(self.net_input_dim, channels, conv_count, final_relu, rng)

    def _circle_indicator(self, points: np.ndarray, rng: np.random.Generator):
        r = rng.uniform(*self.cfg.circle_radius_range)
        ang = rng.uniform(0.0, 2 * np.pi)
        rad = self.cfg.circle_center_max * np.sqrt(rng.uniform())
        center = rad * np.array([np.cos(ang), np.sin(ang)])
        dist = np.hypot(points[:, 0] - center[0], points[:, 1] - center[1])
        return r, center, dist


class EitProblem(Problem):
    name = "eit"

    def __init__(self, cfg: ProblemConfig):
        super().__init__(cfg)
        self.levelset = prior_mod.LevelSetSpec(
            thresholds=(-1e9, 0.0, 1e9),
            values=(cfg.sigma_background, cfg.sigma_anomaly),
        )

    def _build_prior(self):
        return prior_mod.build_prior(
            self.mesh.nodes, prior_mod.MaternParams(self.cfg.nu, self.cfg.ell), self.cfg.jitter
        )

    @property
    def net_input_dim(self) -> int:
        return self.mesh.node_count

    def map_to_field(self, latent) -> ParamField:
        w_tri = prior_mod.nodal_to_triangle(self.mesh, latent)
        return ParamField(prior_mod.level_set_map(w_tri, self.levelset), "conductivity", self.mesh)

    def forward(self, latent) -> Measurement:
        R = fem.resistivity_matrix(self.mesh, self.layout, self.map_to_field(latent))
        return Measurement(R, noise_sigma=0.0, kind="eit")

    def net_input(self, latent):
        return latent

    def forward_from_input(self, net_in) -> Measurement:
        return self.forward(net_in)

    def training_input(self, category, rng):
        if category == "gp":
            return prior_mod.sample_gp(self.prior, rng)
        if category == "circle":
            r, _, dist = self._circle_indicator(self.mesh.nodes, rng)
            return r - dist  # level-set of the disk anomaly, positive inside
        raise ValueError(f"unknown phantom category {category!r} for eit")

    def example_phantom_latent(self):
        dist = np.hypot(self.mesh.nodes[:, 0] - 0.3, self.mesh.nodes[:, 1] - 0.2)
        return 0.25 - dist


class DotProblem(Problem):
    name = "dot"
    default_ell = 0.2

    def __init__(self, cfg: ProblemConfig):
        super().__init__(cfg)
        self.sources = fem.illumination_patterns(self.mesh, self.layout)

    def _build_prior(self):
        return prior_mod.build_prior(
            mesh_mod.centroids(self.mesh),
            prior_mod.MaternParams(self.cfg.nu, self.cfg.ell),
            self.cfg.jitter,
        )

    @property
    def net_input_dim(self) -> int:
        return self.mesh.tri_count

    def map_to_field(self, latent) -> ParamField:
        lo, hi = self.cfg.mu_band
        mu = np.clip(self.cfg.mu_background + np.asarray(latent, dtype=float), lo, hi)
        return ParamField(mu, "absorption", self.mesh)

    def forward(self, latent) -> Measurement:
        return fem.solve_dot(self.mesh, self.layout, self.map_to_field(latent),
                             self.cfg.rho, self.sources)

    def net_input(self, latent):
        return latent

    def forward_from_input(self, net_in) -> Measurement:
        return self.forward(net_in)

    def training_input(self, category, rng):
        if category == "gp":
            return prior_mod.sample_gp(self.prior, rng)
        if category == "circle":
            cents = mesh_mod.centroids(self.mesh)
            r, _, dist = self._circle_indicator(cents, rng)
            return np.where(dist <= r, self.cfg.anomaly_amplitude, 0.0)
        raise ValueError(f"unknown phantom category {category!r} for dot")

    def example_phantom_latent(self):
        cents = mesh_mod.centroids(self.mesh)
        dist = np.hypot(cents[:, 0] + 0.25, cents[:, 1] - 0.25)
        return np.where(dist <= 0.3, self.cfg.anomaly_amplitude, 0.0)


class QpatProblem(Problem):
    name = "qpat"
    needs_electrodes = False

    def __init__(self, cfg: ProblemConfig):
        super().__init__(cfg)
        self.n_inclusions = len(cfg.star_centers)
        self.coeff_len = 2 * cfg.star_K + 1

    def _build_prior(self):
        stds = prior_mod.star_coeff_stds(
            self.cfg.star_K, self.cfg.star_decay, self.cfg.star_const_scale
        )
        return prior_mod.diagonal_prior(np.tile(stds, len(self.cfg.star_centers)))

    @property
    def net_input_dim(self) -> int:
        return self.mesh.tri_count

    def star_spec(self, latent) -> prior_mod.StarShapeSpec:
        """Star spec whose zero latent is the base circular inclusions."""
        latent = np.asarray(latent, dtype=float)
        coeffs = []
        for i in range(self.n_inclusions):
            c = latent[i * self.coeff_len : (i + 1) * self.coeff_len].copy()
            c[0] += np.log(self.cfg.star_base_radii[i])
            coeffs.append(c)
        kappas = [self.cfg.kappa_inclusion] * self.n_inclusions + [self.cfg.kappa_background]
        return prior_mod.StarShapeSpec(
            centers=np.array(self.cfg.star_centers), fourier_coeffs=coeffs, kappas=kappas
        )

    def map_to_field(self, latent) -> ParamField:
        return ParamField(
            prior_mod.star_shape_map(self.mesh, self.star_spec(latent)),
            "qpat_absorption",
            self.mesh,
        )

    def forward(self, latent) -> Measurement:
        return fem.solve_qpat(self.mesh, self.map_to_field(latent), self.cfg.rho)

    def net_input(self, latent):
        return self.map_to_field(latent).values

    def forward_from_input(self, net_in) -> Measurement:
        gamma = ParamField(net_in, "qpat_absorption", self.mesh)
        return fem.solve_qpat(self.mesh, gamma, self.cfg.rho)

    def _phantom_deviation(self) -> np.ndarray:
        """Star-and-kite pair: a five-lobed inclusion and a bean-shaped one."""
        K = self.cfg.star_K
        dev = np.zeros(2 * self.coeff_len)
        dev[5] = 0.18  # cos(5 theta) lobes on the first inclusion
        second = self.coeff_len
        dev[second + 1] = 0.12  # cos(theta)
        dev[second + 2] = 0.18  # cos(2 theta)
        return dev

    def training_input(self, category, rng):
        cents = mesh_mod.centroids(self.mesh)
        if category == "circle":
            r, _, dist = self._circle_indicator(cents, rng)
            return np.where(dist <= r, self.cfg.kappa_inclusion, self.cfg.kappa_background)
        if category == "star":
            latent = np.concatenate(
                [
                    prior_mod.sample_star_prior(
                        self.cfg.star_K, self.cfg.star_decay, rng, self.cfg.star_const_scale
                    )
                    for _ in range(self.n_inclusions)
                ]
            )
            return self.net_input(latent)
        if category == "rotated":
            dev = self._phantom_deviation()
            rotated = []
            for i in range(self.n_inclusions):
                c = dev[i * self.coeff_len : (i + 1) * self.coeff_len]
                rotated.append(prior_mod.rotate_star_coeffs(c, rng.uniform(-np.pi, np.pi)))
            return self.net_input(np.concatenate(rotated))
        raise ValueError(f"unknown phantom category {category!r} for qpat")

    def example_phantom_latent(self):
        return self._phantom_deviation()


_BUILDERS = {"eit": EitProblem, "dot": DotProblem, "qpat": QpatProblem}


def build_problem(name: str, **overrides) -> Problem:
    """Construct one of the named problems with config overrides."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(_BUILDERS)}")
    return _BUILDERS[name](ProblemConfig(**overrides))
