"""Uniform triangulation of the unit square and the boundary electrode layout.

Vertex ``(i, j)`` sits at ``(i h, j h)`` with index ``j (n + 1) + i``. Cell
``(ci, cj)`` is split by its lower-left to upper-right diagonal into a lower
triangle ``(v00, v10, v11)`` and an upper triangle ``(v00, v11, v01)``; both
are counter-clockwise. Triangles are stored row-major over cells (``cj`` outer),
lower before upper, so cell ``(ci, cj)`` owns triangles ``2 (cj n + ci)`` and
``2 (cj n + ci) + 1``.

Local edge ``k`` of a triangle is the edge opposite local vertex ``k``.
"""

from dataclasses import dataclass

import numpy as np

GAP = -1


class MeshError(ValueError):
    pass


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    n_subdiv: int
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3)
    edges: np.ndarray  # (ne, 2) vertex indices, sorted
    edge_length: np.ndarray  # (ne,)
    tri_edges: np.ndarray  # (nt, 3) edge index of local edge k
    tri_normals: np.ndarray  # (nt, 3, 2) unit outward normals
    edge_tris: np.ndarray  # (ne, 2) incident triangles, -1 if absent
    area: np.ndarray  # (nt,)

    @property
    def h(self):
        return 1.0 / self.n_subdiv

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary(self):
        return self.edge_tris[:, 1] < 0

    @property
    def h_T(self):
        return np.sqrt(self.area)

    @property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def interior_edges(self):
        return np.flatnonzero(~self.boundary)


def build_uniform_mesh(n_subdiv, strict=True):
    """Triangulate (0,1)^2 with ``n_subdiv`` cells per side.

    With ``strict`` (the default) ``n_subdiv`` must be a multiple of 8 so that
    the electrode endpoints at multiples of 1/8 are mesh nodes. ``strict=False``
    admits any positive resolution; such meshes serve TV and unit tests but
    generally cannot host the 16-electrode layout.
    """
    n = int(n_subdiv)
    if n != n_subdiv or n < 1:
        raise MeshError(f"n_subdiv must be a positive integer, got {n_subdiv!r}")
    if strict and (n < 8 or n % 8):
        raise MeshError(
            f"n_subdiv={n} is not a multiple of 8; electrode endpoints at "
            "multiples of 1/8 would not be mesh nodes"
        )
    h = 1.0 / n
    idx = np.arange(n + 1)
    I, J = np.meshgrid(idx, idx, indexing="xy")  # J row, I column
    vertices = np.column_stack([I.ravel() * h, J.ravel() * h])

    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    v00 = cj * (n + 1) + ci
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return mesh_from_triangles(n, vertices, triangles)


def mesh_from_triangles(n, vertices, triangles):
    """Edge topology, normals and areas for CCW ``triangles``; ``n`` is the nominal resolution."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    nt = len(triangles)
    a = triangles[:, [1, 2, 0]]
    b = triangles[:, [2, 0, 1]]
    pairs = np.sort(np.stack([a, b], axis=-1).reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(nt, 3)

    edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
    flat_t = np.repeat(np.arange(nt), 3)
    flat_e = tri_edges.ravel()
    order = np.lexsort((flat_t, flat_e))
    fe, ft = flat_e[order], flat_t[order]
    first = np.ones(len(fe), dtype=bool)
    first[1:] = fe[1:] != fe[:-1]
    edge_tris[fe[first], 0] = ft[first]
    edge_tris[fe[~first], 1] = ft[~first]

    P = vertices[triangles]
    d = P[:, [2, 0, 1]] - P[:, [1, 2, 0]]  # local edge k: v_{k+1} -> v_{k+2}
    lengths = np.hypot(d[..., 0], d[..., 1])
    normals = np.stack([d[..., 1], -d[..., 0]], axis=-1) / lengths[..., None]
    edge_length = np.empty(len(edges))
    edge_length[tri_edges.ravel()] = lengths.ravel()

    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if np.any(area <= 0):
        raise MeshError("triangulation contains non-positive areas")

    return Mesh(
        n_subdiv=n,
        vertices=_frozen(vertices),
        triangles=_frozen(triangles.astype(np.int64)),
        edges=_frozen(edges.astype(np.int64)),
        edge_length=_frozen(edge_length),
        tri_edges=_frozen(tri_edges.astype(np.int64)),
        tri_normals=_frozen(normals),
        edge_tris=_frozen(edge_tris),
        area=_frozen(area),
    )


@dataclass(frozen=True, eq=False)
class ElectrodeMap:
    L: int
    segments: np.ndarray  # (L, 2, 2) start / end points, counter-clockwise
    edge_assignment: np.ndarray  # (ne,) electrode index, GAP for gaps / interior

    def edges_of(self, l):
        return np.flatnonzero(self.edge_assignment == l)

    def electrode_lengths(self, mesh):
        out = np.zeros(self.L)
        on = self.edge_assignment >= 0
        np.add.at(out, self.edge_assignment[on], mesh.edge_length[on])
        return out


def _side_point(side, s):
    return {
        0: (s, 0.0),
        1: (1.0, s),
        2: (1.0 - s, 1.0),
        3: (0.0, 1.0 - s),
    }[side]


def _boundary_param(mesh, edge):
    """Side index and side-local node positions (in units of h) of a boundary edge."""
    n = mesh.n_subdiv
    v = mesh.edges[edge]
    i = v % (n + 1)
    j = v // (n + 1)
    if j[0] == 0 and j[1] == 0:
        return 0, np.sort(i)
    if i[0] == n and i[1] == n:
        return 1, np.sort(j)
    if j[0] == n and j[1] == n:
        return 2, np.sort(n - i)
    if i[0] == 0 and i[1] == 0:
        return 3, np.sort(n - j)
    raise MeshError(f"edge {edge} is not on the boundary")


def electrode_layout(mesh, L=16, elec_len=0.125):
    """Place ``L`` electrodes, ``L/4`` per side, anchored at the corners.

    On each side (traversed counter-clockwise starting at (0,0)) electrode
    ``j`` occupies side-local ``[4j/L, 4j/L + elec_len]``. For ``L=16`` these
    are [0,1/8], [1/4,3/8], [1/2,5/8], [3/4,7/8]. Every electrode endpoint must
    be a mesh node.
    """
    L = int(L)
    if L < 4 or L % 4:
        raise MeshError(f"L={L} must be a positive multiple of 4")
    per_side = L // 4
    spacing = 1.0 / per_side
    if elec_len <= 0 or elec_len >= spacing or elec_len * L > 4.0:
        raise MeshError(f"electrode length {elec_len} does not fit {per_side} electrodes per side")
    n = mesh.n_subdiv
    segments = np.zeros((L, 2, 2))
    node_range = np.zeros((L, 2), dtype=np.int64)
    for side in range(4):
        for j in range(per_side):
            l = side * per_side + j
            s0, s1 = j * spacing, j * spacing + elec_len
            for k, s in enumerate((s0, s1)):
                pos = s * n
                if abs(pos - round(pos)) > 1e-9:
                    x, y = _side_point(side, s)
                    raise MeshError(
                        f"electrode {l} endpoint ({x:.6g}, {y:.6g}) is not a mesh node "
                        f"for n_subdiv={n}"
                    )
                node_range[l, k] = int(round(pos))
                segments[l, k] = _side_point(side, s)

    assignment = np.full(mesh.n_edges, GAP, dtype=np.int64)
    for e in np.flatnonzero(mesh.boundary):
        side, (a, b) = _boundary_param(mesh, e)
        for j in range(per_side):
            l = side * per_side + j
            lo, hi = node_range[l]
            if a >= lo and b <= hi:
                assignment[e] = l
                break
    return ElectrodeMap(L=L, segments=_frozen(segments), edge_assignment=_frozen(assignment))


def write_mesh(path, mesh, electrodes=None):
    """Plain-text export: vertices, triangles, then boundary edges with electrode ids."""
    bnd = np.flatnonzero(mesh.boundary)
    assign = electrodes.edge_assignment if electrodes is not None else np.full(mesh.n_edges, GAP)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# vertices {len(mesh.vertices)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"# boundary_edges {len(bnd)}\n")
        for e in bnd:
            i, j = mesh.edges[e]
            fh.write(f"{i} {j} {assign[e]}\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`; returns ``(vertices, triangles, boundary)``."""
    sections = {}
    current = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                current = line.split()[1]
                sections[current] = []
                continue
            sections[current].append(line.split())
    verts = np.array(sections["vertices"], dtype=float)
    tris = np.array(sections["triangles"], dtype=np.int64)
    bnd = np.array(sections["boundary_edges"], dtype=np.int64).reshape(-1, 3)
    return verts, tris, bnd
