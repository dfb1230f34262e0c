"""Piecewise-linear finite element solvers for the three elliptic forward models.

All three problems share P1 elements on a :class:`~bayestomo.mesh.TriMesh`
with coefficients constant per triangle:

* electrode model: ``-div(sigma grad u) = 0`` with current-carrying boundary
  arcs, solved for nodal potentials plus one voltage unknown per electrode;
* photon diffusion: ``-div(rho grad u) + mu u = 0`` with a Robin condition
  ``u + 2 rho du/dn = f`` and arc-averaged boundary readings;
* photoacoustic: ``-div(rho grad u) + gamma u = 0`` with Dirichlet data,
  observed as the heating field ``H = gamma*u`` rasterized on a fixed grid.

Contact impedances are conductivity-relative: the electrode coupling per
edge is ``sigma/z_l`` with sigma taken from the adjacent triangle, which
makes the voltage map exactly (-1)-homogeneous in sigma (doubling sigma
halves every voltage).  Grounding is enforced by solving in the zero-sum
electrode-voltage subspace, so voltages sum to zero by construction.

Assembly data that depends only on geometry is cached on the mesh; the
factorization itself is redone for every coefficient field, which is
precisely the per-iteration cost a trained surrogate removes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import ElectrodeLayout, TriMesh, centroids, electrode_angles, signed_areas


class SolverError(RuntimeError):
    """A forward solve failed (singular or non-finite system)."""


class FormatError(ValueError):
    """Malformed measurement file."""


_PHYSICAL_KINDS = ("conductivity", "absorption", "qpat_absorption")
_KINDS = _PHYSICAL_KINDS + ("latent",)


@dataclass
class ParamField:
    """Coefficient field over a mesh.

    Physical kinds live on triangles and must be strictly positive and
    bounded; latent fields may live on triangles or nodes and are
    unrestricted.
    """

    values: np.ndarray
    kind: str
    mesh: TriMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in _KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.kind in _PHYSICAL_KINDS:
            if len(self.values) != self.mesh.tri_count:
                raise ValueError("physical fields are per-triangle")
            if np.any(self.values <= 0):
                raise ValueError(f"{self.kind} values must be strictly positive")
        elif len(self.values) not in (self.mesh.tri_count, self.mesh.node_count):
            raise ValueError("latent field length matches neither triangles nor nodes")


@dataclass
class CurrentPatterns:
    """J linearly independent zero-sum current patterns on L electrodes."""

    patterns: np.ndarray

    def __post_init__(self):
        self.patterns = np.atleast_2d(np.asarray(self.patterns, dtype=float))
        sums = np.abs(self.patterns.sum(axis=1))
        if np.any(sums > 1e-12):
            raise ValueError(f"current patterns must sum to zero (max |sum| {sums.max():.2e})")
        if np.linalg.matrix_rank(self.patterns, tol=1e-10) < self.J:
            raise ValueError("current patterns must be linearly independent")

    @property
    def J(self) -> int:
        return self.patterns.shape[0]

    @property
    def L(self) -> int:
        return self.patterns.shape[1]


def trig_patterns(mesh: TriMesh, layout: ElectrodeLayout, J: int | None = None) -> CurrentPatterns:
    """Trigonometric current patterns cos(j*theta_l) / sin(j*theta_l).

    With L electrodes the zero-sum space has dimension L-1, so J defaults to
    L-1: cosines up to frequency L/2 followed by sines.
    """
    theta = electrode_angles(mesh, layout)
    L = layout.L
    if J is None:
        J = L - 1
    if J > L - 1:
        raise ValueError(f"at most {L - 1} independent zero-sum patterns exist")
    rows = []
    for j in range(1, L // 2 + 1):
        rows.append(np.cos(j * theta))
    for j in range(1, (L + 1) // 2):
        rows.append(np.sin(j * theta))
    pats = np.array(rows[:J])
    pats -= pats.mean(axis=1, keepdims=True)  # kill floating-point drift in the sums
    return CurrentPatterns(pats)


@dataclass
class Measurement:
    """Forward-model output: a real matrix plus the noise level baked into it."""

    data: np.ndarray
    noise_sigma: float = 0.0
    kind: str = "eit"

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if not np.all(np.isfinite(self.data)):
            raise ValueError("measurement entries must be finite")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def shape(self):
        return self.data.shape


# ---------------------------------------------------------------------------
# geometric precomputations, cached per mesh


def _p1_basis(mesh: TriMesh) -> dict:
    """Per-triangle P1 stiffness/mass blocks and scatter indices."""
    basis = mesh.cache.get("p1")
    if basis is not None:
        return basis
    pts = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    area = signed_areas(mesh)
    # gradients of barycentric coordinates: grad(lambda_i) = (b_i, c_i) / (2A)
    b = pts[:, [1, 2, 0], 1] - pts[:, [2, 0, 1], 1]
    c = pts[:, [2, 0, 1], 0] - pts[:, [1, 2, 0], 0]
    k_loc = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area)[
        :, None, None
    ]
    m_pattern = (np.ones((3, 3)) + np.eye(3)) / 12.0
    m_loc = area[:, None, None] * m_pattern
    rows = np.repeat(mesh.triangles, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.triangles, (1, 3)).reshape(-1)
    owner = {}
    for t, (i, j, k) in enumerate(mesh.triangles):
        for a_, b_ in ((i, j), (j, k), (k, i)):
            owner[(min(a_, b_), max(a_, b_))] = t
    basis = {
        "area": area,
        "k_loc": k_loc,
        "m_loc": m_loc,
        "rows": rows,
        "cols": cols,
        "edge_owner": owner,
    }
    mesh.cache["p1"] = basis
    return basis


def _edge_arrays(mesh: TriMesh, edges: np.ndarray) -> dict:
    basis = _p1_basis(mesh)
    n0, n1 = edges[:, 0], edges[:, 1]
    length = np.hypot(*(mesh.nodes[n1] - mesh.nodes[n0]).T)
    owner = np.array([basis["edge_owner"][(min(i, j), max(i, j))] for i, j in edges])
    return {"n0": n0, "n1": n1, "len": length, "tri": owner}


def _cem_structure(mesh: TriMesh, layout: ElectrodeLayout) -> dict:
    """Scatter indices for the coupled node/electrode system, reduced to the
    zero-sum voltage subspace via the basis n_k = e_k - e_{L-1}."""
    key = ("cem", id(layout))
    st = mesh.cache.get(key)
    if st is not None:
        return st
    N = mesh.node_count
    L = layout.L
    elec = []
    for l, edges in enumerate(layout.electrode_edges):
        ea = _edge_arrays(mesh, edges)
        ea["elec"] = l
        ea["z"] = layout.contact_impedances[l]
        elec.append(ea)
    rows, cols, slots = [], [], []
    # slots describe how to build the sigma-dependent data vector:
    # (tri index, constant factor) per structural nonzero
    tri_idx, factor = [], []

    basis = _p1_basis(mesh)
    rows.append(basis["rows"])
    cols.append(basis["cols"])
    tri_idx.append(np.repeat(np.arange(mesh.tri_count), 9))
    factor.append(basis["k_loc"].reshape(-1))

    for ea in elec:
        n0, n1, ln, tz = ea["n0"], ea["n1"], ea["len"], ea["tri"]
        l = ea["elec"]
        w = 1.0 / ea["z"]
        # edge mass (1/z) * len/6 * [[2,1],[1,2]] on nodes
        for (ra, ca, f) in (
            (n0, n0, 2.0),
            (n0, n1, 1.0),
            (n1, n0, 1.0),
            (n1, n1, 2.0),
        ):
            rows.append(ra)
            cols.append(ca)
            tri_idx.append(tz)
            factor.append(w * f * ln / 6.0)
        # node-voltage coupling -(1/z) * len/2 per edge node, both blocks
        lcol = np.full(len(ln), N + l)
        for nn in (n0, n1):
            rows.append(nn)
            cols.append(lcol)
            tri_idx.append(tz)
            factor.append(-w * ln / 2.0)
            rows.append(lcol)
            cols.append(nn)
            tri_idx.append(tz)
            factor.append(-w * ln / 2.0)
        # voltage diagonal (1/z) * len
        rows.append(lcol)
        cols.append(lcol)
        tri_idx.append(tz)
        factor.append(w * ln)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    tri_idx = np.concatenate(tri_idx)
    factor = np.concatenate(factor)

    # reduction Q: identity on nodes, zero-sum basis e_k - e_{L-1} on voltages
    qr = list(range(N)) + list(range(N, N + L - 1)) + [N + L - 1] * (L - 1)
    qc = list(range(N)) + list(range(N, N + L - 1)) + list(range(N, N + L - 1))
    qd = [1.0] * (N + L - 1) + [-1.0] * (L - 1)
    Q = sp.csr_matrix((qd, (qr, qc)), shape=(N + L, N + L - 1))

    st = {
        "rows": rows,
        "cols": cols,
        "tri": tri_idx,
        "factor": factor,
        "Q": Q,
        "N": N,
        "L": L,
        "layout": layout,  # keeps the id() key valid while cached
    }
    mesh.cache[key] = st
    return st


def _cem_factor(mesh: TriMesh, layout: ElectrodeLayout, sigma_values: np.ndarray):
    st = _cem_structure(mesh, layout)
    data = sigma_values[st["tri"]] * st["factor"]
    N, L = st["N"], st["L"]
    full = sp.coo_matrix((data, (st["rows"], st["cols"])), shape=(N + L, N + L)).tocsr()
    Q = st["Q"]
    reduced = (Q.T @ full @ Q).tocsc()
    try:
        factor = splu(reduced)
    except RuntimeError as exc:  # pragma: no cover - defensive
        raise SolverError(f"singular electrode system: {exc}") from exc
    return factor, st


def _check_sigma(mesh: TriMesh, sigma: ParamField) -> np.ndarray:
    if sigma.mesh is not mesh:
        raise ValueError("field belongs to a different mesh")
    if sigma.kind != "conductivity":
        raise ValueError(f"expected a conductivity field, got {sigma.kind!r}")
    if np.any(sigma.values <= 0):
        raise ValueError("conductivity must be strictly positive")
    return sigma.values


def solve_cem(
    mesh: TriMesh,
    layout: ElectrodeLayout,
    sigma: ParamField,
    patterns: CurrentPatterns,
) -> Measurement:
    """Electrode voltages for each applied current pattern.

    Returns a J x L matrix whose row j solves the electrode model for
    pattern j; voltages are grounded to sum zero.
    """
    sig = _check_sigma(mesh, sigma)
    if patterns.L != layout.L:
        raise ValueError("pattern width does not match electrode count")
    factor, st = _cem_factor(mesh, layout, sig)
    N, L = st["N"], st["L"]
    rhs = np.zeros((N + L - 1, patterns.J))
    rhs[N:, :] = patterns.patterns[:, : L - 1].T - patterns.patterns[:, L - 1]
    x = factor.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("electrode solve produced non-finite values")
    red = x[N:, :]
    U = np.vstack([red, -red.sum(axis=0)]).T  # back to L voltages, zero-sum
    return Measurement(U, noise_sigma=0.0, kind="eit")


def resistivity_matrix(mesh: TriMesh, layout: ElectrodeLayout, sigma: ParamField) -> np.ndarray:
    """L x L map R(sigma) from zero-sum currents to grounded voltages.

    Columns are responses to the canonical basis-complement patterns
    e_j - (1/L) 1, so the matrix applied to any zero-sum pattern reproduces
    :func:`solve_cem`; reciprocity of the self-adjoint problem makes it
    symmetric.
    """
    sig = _check_sigma(mesh, sigma)
    factor, st = _cem_factor(mesh, layout, sig)
    N, L = st["N"], st["L"]
    rhs = np.zeros((N + L - 1, L))
    rhs[N : N + L - 1, : L - 1] = np.eye(L - 1)
    rhs[N:, L - 1] = -1.0
    x = factor.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("electrode solve produced non-finite values")
    red = x[N:, :]
    return np.vstack([red, -red.sum(axis=0)])  # column j = voltages for pattern e_j


def illumination_patterns(mesh: TriMesh, layout: ElectrodeLayout, J: int | None = None) -> np.ndarray:
    """Boundary illumination amplitudes per arc for the diffusion model.

    Row 0 is uniform light; higher rows are cos/sin profiles over the arc
    center angles.  Unlike injected currents these need not sum to zero, so
    J defaults to L.
    """
    theta = electrode_angles(mesh, layout)
    L = layout.L
    if J is None:
        J = L
    rows = [np.ones(L)]
    for j in range(1, L // 2 + 1):
        rows.append(np.cos(j * theta))
    for j in range(1, (L + 1) // 2):
        rows.append(np.sin(j * theta))
    return np.array(rows[:J])


def _dot_structure(mesh: TriMesh, layout: ElectrodeLayout) -> dict:
    key = ("dot", id(layout))
    st = mesh.cache.get(key)
    if st is not None:
        return st
    basis = _p1_basis(mesh)
    N = mesh.node_count
    ea = _edge_arrays(mesh, mesh.boundary_edges)
    n0, n1, ln = ea["n0"], ea["n1"], ea["len"]
    # Robin boundary mass len/6 * [[2,1],[1,2]] over the whole boundary
    br = np.concatenate([n0, n0, n1, n1])
    bc = np.concatenate([n0, n1, n0, n1])
    bd = np.concatenate([ln / 3.0, ln / 6.0, ln / 6.0, ln / 3.0])
    bmass = sp.coo_matrix((bd, (br, bc)), shape=(N, N)).tocsr()
    # per-electrode load vectors int_{e_l} phi_i dS and arc lengths
    load = np.zeros((N, layout.L))
    arclen = np.zeros(layout.L)
    for l, edges in enumerate(layout.electrode_edges):
        eal = _edge_arrays(mesh, edges)
        np.add.at(load[:, l], eal["n0"], eal["len"] / 2.0)
        np.add.at(load[:, l], eal["n1"], eal["len"] / 2.0)
        arclen[l] = eal["len"].sum()
    st = {
        "bmass": bmass,
        "load": load,
        "arclen": arclen,
        "rows": basis["rows"],
        "cols": basis["cols"],
        "k_loc": basis["k_loc"],
        "m_loc": basis["m_loc"],
        "N": N,
        "layout": layout,
    }
    mesh.cache[key] = st
    return st


def solve_dot(
    mesh: TriMesh,
    layout: ElectrodeLayout,
    mu: ParamField,
    rho: float,
    sources: np.ndarray,
) -> Measurement:
    """Arc-averaged photon density readings for each illumination pattern.

    ``sources`` is a (J, L) array of Robin data amplitudes per arc; the
    result is J x L with entry (j, l) the average of u over arc l under
    pattern j.
    """
    if mu.mesh is not mesh:
        raise ValueError("field belongs to a different mesh")
    if mu.kind != "absorption":
        raise ValueError(f"expected an absorption field, got {mu.kind!r}")
    if np.any(mu.values <= 0):
        raise ValueError("absorption must be strictly positive")
    if rho <= 0:
        raise ValueError("diffusion coefficient must be positive")
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    st = _dot_structure(mesh, layout)
    if sources.shape[1] != layout.L:
        raise ValueError("source pattern width does not match electrode count")
    N = st["N"]
    data = (rho * st["k_loc"] + mu.values[:, None, None] * st["m_loc"]).reshape(-1)
    A = sp.coo_matrix((data, (st["rows"], st["cols"])), shape=(N, N)).tocsr()
    A = (A + 0.5 * st["bmass"]).tocsc()
    rhs = 0.5 * (st["load"] @ sources.T)  # weak form of the Robin data f/2
    try:
        u = splu(A).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular diffusion system: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolverError("diffusion solve produced non-finite values")
    readings = (st["load"].T @ u) / st["arclen"][:, None]
    return Measurement(readings.T, noise_sigma=0.0, kind="dot")


RASTER_SIZE = 16


def _raster_map(mesh: TriMesh, n: int = RASTER_SIZE) -> np.ndarray:
    """Map raster cells over [-1, 1]^2 to containing triangles (-1 outside disk).

    Cell centers inside the disk but outside the polygonal mesh (a thin
    boundary sliver) are assigned to the nearest triangle.
    """
    key = ("raster", n)
    cellmap = mesh.cache.get(key)
    if cellmap is not None:
        return cellmap
    xs = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside_disk = np.hypot(pts[:, 0], pts[:, 1]) <= 1.0
    tri_pts = mesh.nodes[mesh.triangles]
    a, b, c = tri_pts[:, 0], tri_pts[:, 1], tri_pts[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    cellmap = np.full(pts.shape[0], -1, dtype=np.int64)
    d = pts[:, None, :] - a[None, :, :]
    w1 = (d[:, :, 0] * (c[:, 1] - a[:, 1]) - d[:, :, 1] * (c[:, 0] - a[:, 0])) / det
    w2 = (d[:, :, 1] * (b[:, 0] - a[:, 0]) - d[:, :, 0] * (b[:, 1] - a[:, 1])) / det
    hit = (w1 >= -1e-12) & (w2 >= -1e-12) & (w1 + w2 <= 1 + 1e-12)
    found = hit.any(axis=1)
    cellmap[found & inside_disk] = np.argmax(hit[found & inside_disk], axis=1)
    stray = inside_disk & ~found
    if np.any(stray):
        cents = centroids(mesh)
        d2 = ((pts[stray, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        cellmap[stray] = np.argmin(d2, axis=1)
    cellmap = cellmap.reshape(n, n)
    cellmap.setflags(write=False)
    mesh.cache[key] = cellmap
    return cellmap


def solve_qpat(
    mesh: TriMesh,
    gamma: ParamField,
    rho: float,
    g=1.0,
    admissible_band: tuple = (0.01, 100.0),
) -> Measurement:
    """Heating field H = gamma*u rasterized on the fixed observation grid.

    ``g`` is the Dirichlet illumination: a constant or a callable of the
    boundary coordinates.  Raster cells outside the disk are exactly zero.
    """
    if gamma.mesh is not mesh:
        raise ValueError("field belongs to a different mesh")
    if gamma.kind != "qpat_absorption":
        raise ValueError(f"expected a qpat_absorption field, got {gamma.kind!r}")
    lo, hi = admissible_band
    if np.any(gamma.values < lo) or np.any(gamma.values > hi):
        raise ValueError(f"gamma outside the admissible band [{lo}, {hi}]")
    if rho <= 0:
        raise ValueError("diffusion coefficient must be positive")
    basis = _p1_basis(mesh)
    N = mesh.node_count
    data = (rho * basis["k_loc"] + gamma.values[:, None, None] * basis["m_loc"]).reshape(-1)
    A = sp.coo_matrix((data, (basis["rows"], basis["cols"])), shape=(N, N)).tocsr()
    bnodes = np.unique(mesh.boundary_edges)
    mask = np.ones(N, dtype=bool)
    mask[bnodes] = False
    inodes = np.nonzero(mask)[0]
    if callable(g):
        ub = np.array([float(g(x, y)) for x, y in mesh.nodes[bnodes]])
    else:
        ub = np.full(len(bnodes), float(g))
    rhs = -A[inodes][:, bnodes] @ ub
    try:
        ui = splu(A[inodes][:, inodes].tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular photoacoustic system: {exc}") from exc
    if not np.all(np.isfinite(ui)):
        raise SolverError("photoacoustic solve produced non-finite values")
    u = np.empty(N)
    u[inodes] = ui
    u[bnodes] = ub
    h_tri = gamma.values * u[mesh.triangles].mean(axis=1)
    cellmap = _raster_map(mesh)
    raster = np.where(cellmap >= 0, h_tri[np.clip(cellmap, 0, None)], 0.0)
    return Measurement(raster, noise_sigma=0.0, kind="qpat")


def add_noise(m: Measurement, level: float, rng: np.random.Generator) -> Measurement:
    """Additive i.i.d. Gaussian noise scaled to the signal RMS.

    ``sigma = level * RMS(entries)`` is recorded on the result; level 0
    returns an identical copy with sigma 0.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return Measurement(m.data.copy(), noise_sigma=0.0, kind=m.kind)
    sigma = level * float(np.sqrt(np.mean(m.data**2)))
    noisy = m.data + rng.normal(0.0, sigma, size=m.data.shape)
    return Measurement(noisy, noise_sigma=sigma, kind=m.kind)


def write_measurement_csv(m: Measurement, path) -> None:
    """CSV dump: header ``kind,rows,cols,noise_sigma`` then row-major values."""
    r, c = m.shape
    with open(path, "w") as fh:
        fh.write(f"{m.kind},{r},{c},{float(m.noise_sigma)!r}\n")
        for row in m.data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_measurement_csv(path) -> Measurement:
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        if len(head) != 4:
            raise FormatError(f"malformed measurement header in {path}")
        kind, r, c, sigma = head[0], int(head[1]), int(head[2]), float(head[3])
        rows = [ln for ln in fh.read().split("\n") if ln.strip()]
    if len(rows) != r:
        raise FormatError(f"measurement file {path} truncated")
    data = np.array([[float(v) for v in ln.split(",")] for ln in rows])
    if data.shape != (r, c):
        raise FormatError(f"measurement shape mismatch in {path}")
    return Measurement(data, noise_sigma=sigma, kind=kind)
