"""Conforming simplicial meshes of rectangles and boxes.

A :class:`SimplicialMesh` stores cells plus derived face/edge tables and the
geometric quantities the assembly routines need: cell volumes, barycentric
gradients, face normals/measures and edge tangents.  Meshes are immutable
after construction.
"""

from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


@dataclass(frozen=True)
class CellGeometry:
    volume: float
    grad_lambda: np.ndarray       # (d+1, d) barycentric gradients
    barycenter: np.ndarray        # (d,)
    face_barycenters: np.ndarray  # (d+1, d); row k is opposite local vertex k


@dataclass
class SimplicialMesh:
    """Triangulation (d=2) or tetrahedralization (d=3).

    Faces are (d-1)-simplices stored as sorted vertex tuples.  The unit
    normal ``face_normals[f]`` points outward from the first adjacent cell
    ``face_cells[f, 0]`` (the owner).  Edge tangents ``edge_tangents[e]``
    point from the lower- to the higher-indexed endpoint and have length
    ``edge_lengths[e]``.
    """

    dim: int
    vertices: np.ndarray          # (nv, d)
    cells: np.ndarray             # (nc, d+1) positively oriented

    faces: np.ndarray = field(init=False)          # (nf, d)
    face_cells: np.ndarray = field(init=False)     # (nf, 2), -1 if boundary
    face_normals: np.ndarray = field(init=False)   # (nf, d)
    face_measures: np.ndarray = field(init=False)  # (nf,)
    face_barycenters: np.ndarray = field(init=False)
    cell_faces: np.ndarray = field(init=False)     # (nc, d+1), local face k opposite vertex k
    edges: np.ndarray = field(init=False)          # (ne, 2) with i < j
    edge_tangents: np.ndarray = field(init=False)  # (ne, d), tau_E = x_j - x_i
    edge_lengths: np.ndarray = field(init=False)
    volumes: np.ndarray = field(init=False)        # (nc,)
    grads: np.ndarray = field(init=False)          # (nc, d+1, d)
    barycenters: np.ndarray = field(init=False)    # (nc, d)
    boundary_face: np.ndarray = field(init=False)  # (nf,) bool
    boundary_vertex: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        d = self.dim
        if d not in (2, 3):
            raise MeshError(f"dimension must be 2 or 3, got {d}")
        if self.vertices.shape[1] != d or self.cells.shape[1] != d + 1:
            raise MeshError("vertex/cell array shapes inconsistent with dim")
        self._orient_cells()
        self._compute_geometry()
        self._build_faces()
        self._build_edges()

    # -- construction helpers -------------------------------------------------

    def _orient_cells(self):
        X = self.vertices[self.cells]
        M = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(M)
        flip = det < 0
        if np.any(flip):
            c = self.cells.copy()
            c[flip, -1], c[flip, -2] = self.cells[flip, -2], self.cells[flip, -1]
            self.cells = c

    def _compute_geometry(self):
        d = self.dim
        X = self.vertices[self.cells]
        M = X[:, 1:, :] - X[:, :1, :]
        det = np.linalg.det(M)
        if np.any(det <= 0):
            bad = int(np.argmax(det <= 0))
            raise MeshError(f"degenerate or inverted cell {bad}")
        self.volumes = det / np.prod(np.arange(1, d + 1))
        Minv = np.linalg.inv(M)
        grads = np.empty((len(self.cells), d + 1, d))
        grads[:, 1:, :] = np.transpose(Minv, (0, 2, 1))
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        self.grads = grads
        self.barycenters = X.mean(axis=1)

    def _build_faces(self):
        d = self.dim
        nc = len(self.cells)
        locals_ = [tuple(j for j in range(d + 1) if j != k) for k in range(d + 1)]
        index = {}
        faces = []
        face_cells = []
        owner_local = []
        cell_faces = np.empty((nc, d + 1), dtype=np.int64)
        for c in range(nc):
            cell = self.cells[c]
            for k, loc in enumerate(locals_):
                key = tuple(sorted(cell[j] for j in loc))
                f = index.get(key)
                if f is None:
                    f = len(faces)
                    index[key] = f
                    faces.append(key)
                    face_cells.append([c, -1])
                    owner_local.append(k)
                else:
                    if face_cells[f][1] != -1:
                        raise MeshError(f"face {key} shared by more than two cells")
                    face_cells[f][1] = c
                cell_faces[c, k] = f
        self.faces = np.array(faces, dtype=np.int64)
        self.face_cells = np.array(face_cells, dtype=np.int64)
        self.cell_faces = cell_faces
        owner_local = np.array(owner_local, dtype=np.int64)
        # Outward normal of the owner cell: -grad(lambda_k) normalized, where
        # k is the owner-local vertex opposite the face.
        g = self.grads[self.face_cells[:, 0], owner_local, :]
        self.face_normals = -g / np.linalg.norm(g, axis=1, keepdims=True)
        fverts = self.vertices[self.faces]
        if d == 2:
            self.face_measures = np.linalg.norm(fverts[:, 1] - fverts[:, 0], axis=1)
        else:
            cr = np.cross(fverts[:, 1] - fverts[:, 0], fverts[:, 2] - fverts[:, 0])
            self.face_measures = 0.5 * np.linalg.norm(cr, axis=1)
        self.face_barycenters = fverts.mean(axis=1)
        self.boundary_face = self.face_cells[:, 1] < 0
        self.boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_vertex[self.faces[self.boundary_face].ravel()] = True

    def _build_edges(self):
        if self.dim == 2:
            edges = self.faces
        else:
            pairs = []
            for a, b in combinations(range(4), 2):
                pairs.append(np.sort(self.cells[:, [a, b]], axis=1))
            edges = np.unique(np.vstack(pairs), axis=0)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        self.edges = np.ascontiguousarray(edges[order])
        self.edge_tangents = (self.vertices[self.edges[:, 1]]
                              - self.vertices[self.edges[:, 0]])
        self.edge_lengths = np.linalg.norm(self.edge_tangents, axis=1)

    # -- queries --------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def mesh_size(self) -> float:
        return float(np.max(self.volumes ** (1.0 / self.dim)))

    def cell_geometry(self, cell: int) -> CellGeometry:
        if not 0 <= cell < self.n_cells:
            raise IndexError(f"invalid cell id {cell}")
        return CellGeometry(
            volume=float(self.volumes[cell]),
            grad_lambda=self.grads[cell].copy(),
            barycenter=self.barycenters[cell].copy(),
            face_barycenters=self.face_barycenters[self.cell_faces[cell]].copy(),
        )

    def face_sign(self, cell: int, face: int) -> int:
        """+1 if the stored normal of `face` is outward for `cell`."""
        return 1 if self.face_cells[face, 0] == cell else -1


def uniform_rectangle_mesh(xrange, yrange, nx: int, ny: int,
                           pattern: str = "right") -> SimplicialMesh:
    """Uniform triangulation of a rectangle.

    pattern "right": each grid square split along one diagonal (2*nx*ny
    triangles).  pattern "alternating": diagonal direction alternates in a
    checkerboard (2*nx*ny right triangles, criss-cross appearance).
    pattern "crisscross": extra vertex at each square center (4*nx*ny
    triangles).
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be positive, got {nx}, {ny}")
    x0, x1 = map(float, xrange)
    y0, y1 = map(float, yrange)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    if pattern == "right":
        for i in range(nx):
            for j in range(ny):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                cells.append((a, b, c))
                cells.append((a, c, d))
    elif pattern == "alternating":
        for i in range(nx):
            for j in range(ny):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                if (i + j) % 2 == 0:
                    cells += [(a, b, c), (a, c, d)]
                else:
                    cells += [(a, b, d), (b, c, d)]
    elif pattern == "crisscross":
        centers = []
        base = len(verts)
        for i in range(nx):
            for j in range(ny):
                centers.append([0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])])
        verts = np.vstack([verts, np.array(centers)])
        for i in range(nx):
            for j in range(ny):
                m = base + i * ny + j
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                cells += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return SimplicialMesh(2, verts, np.array(cells))


def uniform_box_mesh(xrange, yrange, zrange, n: int) -> SimplicialMesh:
    """Uniform tetrahedralization of a box: each cube split into 6 tets
    (Kuhn/Freudenthal split), 6*n^3 cells total."""
    if n < 1:
        raise ValueError(f"subdivision count must be positive, got {n}")
    xs = np.linspace(*map(float, xrange), n + 1)
    ys = np.linspace(*map(float, yrange), n + 1)
    zs = np.linspace(*map(float, zrange), n + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    cells = []
    perms = list(permutations(range(3)))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for perm in perms:
                    idx = [np.array([i, j, k])]
                    for ax in perm:
                        step = idx[-1].copy()
                        step[ax] += 1
                        idx.append(step)
                    cells.append(tuple(vid(*p) for p in idx))
    return SimplicialMesh(3, verts, np.array(cells))


def quad_refine(mesh: SimplicialMesh) -> SimplicialMesh:
    """Split every triangle into 4 congruent children via edge midpoints."""
    if mesh.dim != 2:
        raise MeshError("quad refinement only supports 2D meshes")
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    emap = {tuple(e): nv + i for i, e in enumerate(map(tuple, mesh.edges))}

    def mid(a, b):
        return emap[(a, b) if a < b else (b, a)]

    cells = []
    for a, b, c in mesh.cells:
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        cells += [(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)]
    return SimplicialMesh(2, verts, np.array(cells))
