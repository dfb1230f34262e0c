"""Triangular meshes of the unit disk and boundary electrode layouts.

The disk is meshed by an octagonal fan around the origin that is refined
uniformly: every triangle splits into four via edge midpoints, and midpoints
of boundary edges are projected back onto the unit circle.  The construction
is fully deterministic, so meshes can be rebuilt from a refinement level
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh construction request or corrupt mesh file."""


@dataclass
class TriMesh:
    """Conforming triangulation of the unit disk.

    nodes : (N, 2) float array of vertex coordinates.
    triangles : (T, 3) int array of counterclockwise node triples.
    boundary_edges : (E, 2) int array, directed counterclockwise around the
        domain and ordered by angle so consecutive rows share a node.

    Geometry is immutable after construction.  ``cache`` holds solver
    precomputations keyed by consumer modules and carries no geometric state.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64)
        for arr in (self.nodes, self.triangles, self.boundary_edges):
            arr.setflags(write=False)

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def tri_count(self) -> int:
        return self.triangles.shape[0]


@dataclass
class ElectrodeLayout:
    """Contiguous boundary arcs acting as electrodes.

    electrode_edges : tuple of L int arrays, each (k_l, 2), listing the
        directed boundary edges of one electrode in counterclockwise order.
    contact_impedances : (L,) positive floats, one per electrode.
    """

    electrode_edges: tuple
    contact_impedances: np.ndarray

    def __post_init__(self):
        self.contact_impedances = np.asarray(self.contact_impedances, dtype=float)
        if np.any(self.contact_impedances <= 0):
            raise MeshError("contact impedances must be positive")

    @property
    def L(self) -> int:
        return len(self.electrode_edges)


def signed_areas(mesh: TriMesh) -> np.ndarray:
    """Signed area per triangle (positive for counterclockwise vertices)."""
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def centroids(mesh: TriMesh) -> np.ndarray:
    """(T, 2) array of triangle centroids (vertex means)."""
    return mesh.nodes[mesh.triangles].mean(axis=1)


def _ordered_boundary(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Directed boundary edges sorted counterclockwise by midpoint angle.

    A directed edge of a CCW triangle lies on the boundary exactly when its
    reverse never occurs, and it is then automatically oriented CCW around
    the domain.
    """
    directed = set()
    for a, b, c in triangles:
        directed.update(((int(a), int(b)), (int(b), int(c)), (int(c), int(a))))
    bnd = [e for e in directed if (e[1], e[0]) not in directed]
    mid = np.array([(nodes[i] + nodes[j]) / 2.0 for i, j in bnd])
    ang = np.arctan2(mid[:, 1], mid[:, 0]) % (2 * np.pi)
    order = np.argsort(ang)
    return np.array(bnd, dtype=np.int64)[order]


def _base_mesh() -> TriMesh:
    """Octagonal fan around the origin: 9 nodes, 8 CCW triangles."""
    ang = 2 * np.pi * np.arange(8) / 8
    nodes = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    tris = [(0, 1 + k, 1 + (k + 1) % 8) for k in range(8)]
    tris = np.array(tris, dtype=np.int64)
    return TriMesh(nodes, tris, _ordered_boundary(nodes, tris))


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four via edge midpoints.

    Midpoints of boundary edges are projected radially onto the unit circle;
    interior midpoints are plain averages, so interior triangle areas are
    preserved exactly by the 4-way split.  Parent nodes keep their indices.
    """
    nodes = [tuple(p) for p in mesh.nodes]
    boundary = {(min(i, j), max(i, j)) for i, j in mesh.boundary_edges}
    mid_index: dict = {}

    def midpoint(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        idx = mid_index.get(key)
        if idx is None:
            p = 0.5 * (mesh.nodes[i] + mesh.nodes[j])
            if key in boundary:
                p = p / np.hypot(p[0], p[1])
            idx = len(nodes)
            nodes.append((p[0], p[1]))
            mid_index[key] = idx
        return idx

    children = np.empty((4 * mesh.tri_count, 3), dtype=np.int64)
    for t, (a, b, c) in enumerate(mesh.triangles):
        mab = midpoint(a, b)
        mbc = midpoint(b, c)
        mca = midpoint(c, a)
        children[4 * t : 4 * t + 4] = [
            (a, mab, mca),
            (mab, b, mbc),
            (mca, mbc, c),
            (mab, mbc, mca),
        ]
    node_arr = np.array(nodes)
    return TriMesh(node_arr, children, _ordered_boundary(node_arr, children))


def build_disk_mesh(refinement: int) -> TriMesh:
    """Uniform triangulation of the unit disk at the given refinement level.

    Level 0 is the 8-triangle base fan; each level quadruples the triangle
    count.  Deterministic for a fixed level.
    """
    if not isinstance(refinement, (int, np.integer)) or refinement < 0 or refinement > 8:
        raise MeshError(f"refinement must be an integer in [0, 8], got {refinement!r}")
    mesh = _base_mesh()
    for _ in range(int(refinement)):
        mesh = refine_uniform(mesh)
    return mesh


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def assign_electrodes(
    mesh: TriMesh,
    L: int,
    coverage: float = 0.5,
    contact_impedance: float = 0.01,
    start_angle: float = 0.0,
) -> ElectrodeLayout:
    """Place L equally spaced electrode arcs on the boundary.

    Each electrode covers a fraction ``coverage / L`` of the circumference,
    centered at angles ``start_angle + 2*pi*l/L``; the rest of the boundary
    is insulating.  Edges are assigned by midpoint angle, so arcs are
    contiguous runs of boundary edges.
    """
    if not 0 < coverage < 1:
        raise MeshError("coverage must lie strictly between 0 and 1")
    n_edges = len(mesh.boundary_edges)
    if n_edges < 4 * L:
        raise MeshError(
            f"mesh has {n_edges} boundary edges; at least {4 * L} required for L={L}"
        )
    mids = (mesh.nodes[mesh.boundary_edges[:, 0]] + mesh.nodes[mesh.boundary_edges[:, 1]]) / 2.0
    ang = np.arctan2(mids[:, 1], mids[:, 0])
    half_width = coverage * np.pi / L
    arcs = []
    for l in range(L):
        center = start_angle + 2 * np.pi * l / L
        sel = np.abs(_wrap_angle(ang - center)) < half_width
        idx = np.nonzero(sel)[0]
        if idx.size == 0:
            raise MeshError(f"electrode {l} received no boundary edges")
        arcs.append(mesh.boundary_edges[idx])
    z = np.full(L, float(contact_impedance)) if np.isscalar(contact_impedance) else np.asarray(
        contact_impedance, dtype=float
    )
    return ElectrodeLayout(tuple(arcs), z)


def electrode_angles(mesh: TriMesh, layout: ElectrodeLayout) -> np.ndarray:
    """Center angle of each electrode arc, used for smooth drive patterns."""
    out = np.empty(layout.L)
    for l, edges in enumerate(layout.electrode_edges):
        mids = (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]]) / 2.0
        # average on the circle to survive the -pi/pi seam
        out[l] = np.arctan2(mids[:, 1].mean(), mids[:, 0].mean())
    return out


def validate_mesh(mesh: TriMesh) -> None:
    """Raise MeshError if any structural invariant fails.

    Checks positive orientation, duplicate nodes, boundary edges owned by
    exactly one triangle, containment in the closed unit disk, and (for
    meshes refined at least twice) total area within 2% of pi.
    """
    if np.any(signed_areas(mesh) <= 0):
        raise MeshError("triangle with non-positive signed area")
    rounded = np.round(mesh.nodes, 12)
    if len(np.unique(rounded, axis=0)) != mesh.node_count:
        raise MeshError("duplicate nodes")
    if np.any(np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1]) > 1 + 1e-9):
        raise MeshError("node outside the unit disk")
    counts: dict = {}
    for a, b, c in mesh.triangles:
        for i, j in ((a, b), (b, c), (c, a)):
            key = (min(i, j), max(i, j))
            counts[key] = counts.get(key, 0) + 1
    if any(v > 2 for v in counts.values()):
        raise MeshError("edge shared by more than two triangles")
    for i, j in mesh.boundary_edges:
        if counts.get((min(i, j), max(i, j)), 0) != 1:
            raise MeshError("boundary edge not owned by exactly one triangle")
    once = sum(1 for v in counts.values() if v == 1)
    if once != len(mesh.boundary_edges):
        raise MeshError("boundary edge list incomplete")
    if len(mesh.boundary_edges) >= 32:  # refinement >= 2
        area = signed_areas(mesh).sum()
        if abs(area - np.pi) > 0.02 * np.pi:
            raise MeshError(f"total area {area} deviates from pi by more than 2%")


def write_mesh(mesh: TriMesh, path) -> None:
    """Write the plain-text mesh format: header then nodes, triangles, edges."""
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.node_count} tris {mesh.tri_count} edges {len(mesh.boundary_edges)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        for i, j in mesh.boundary_edges:
            fh.write(f"{i} {j}\n")


def read_mesh(path) -> TriMesh:
    """Read the plain-text mesh format written by :func:`write_mesh`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != "nodes" or header[2] != "tris" or header[4] != "edges":
            raise MeshError(f"malformed mesh header in {path}")
        n, t, e = int(header[1]), int(header[3]), int(header[5])
        lines = fh.read().split("\n")
    if len([ln for ln in lines if ln.strip()]) != n + t + e:
        raise MeshError(f"mesh file {path} truncated")
    nodes = np.array([[float(v) for v in lines[i].split()] for i in range(n)])
    tris = np.array([[int(v) for v in lines[n + i].split()] for i in range(t)], dtype=np.int64)
    edges = np.array(
        [[int(v) for v in lines[n + t + i].split()] for i in range(e)], dtype=np.int64
    )
    return TriMesh(nodes, tris, edges)
