"""Discrete spaces on a simplicial mesh.

Velocity fields combine a vector P1 part (values at every vertex, including
Dirichlet boundary values) with normal face bubbles on interior faces.  The
pressure is piecewise constant.  RT0 fields with unit face-flux dofs carry
the BDM postprocessing of bubble functions.
"""

from dataclasses import dataclass, field as dfield
from typing import Callable, Optional

import numpy as np

from .mesh import SimplicialMesh
from .quadrature import physical_points, simplex_rule

# Normalization of the face bubble: phi_F = BUBBLE_SCALE[d] * prod of the
# hat functions of the face vertices.  The 3D scale fixes the BDM
# interpolation constant at |F|/15 (it would be |F|/60 for the plain
# product); the scaling leaves the discrete space and the schemes unchanged.
BUBBLE_SCALE = {2: 1.0, 3: 4.0}

# Postprocessing factors: Pi_h(phi_F n_F) = BUBBLE_BDM_FACTOR[d] * |F| * phi_F^RT.
# The factor equals the face-flux moment int_F phi_F dS / |F| and also
# INT_BUBBLE_FACTOR[d] / d, which is exactly what the commuting property
# div(Pi_h v) = P_h div(v) requires.
BUBBLE_BDM_FACTOR = {2: 1.0 / 6.0, 3: 1.0 / 15.0}


@dataclass
class DofLayout:
    """Global index maps for the condensable block system.

    Unknown blocks are ordered (bubble, linear, pressure).  Boundary
    vertices and boundary faces carry no unknowns.  Linear dofs are
    component-major over all vertices: dof = comp * nv + vertex; interior
    and boundary index sets select into that full numbering.
    """

    mesh: SimplicialMesh
    vertex_map: np.ndarray = dfield(init=False)   # (nv,) -> interior index or -1
    face_map: np.ndarray = dfield(init=False)     # (nf,) -> bubble index or -1
    interior_vertices: np.ndarray = dfield(init=False)
    interior_faces: np.ndarray = dfield(init=False)

    def __post_init__(self):
        m = self.mesh
        self.interior_vertices = np.flatnonzero(~m.boundary_vertex)
        self.interior_faces = np.flatnonzero(~m.boundary_face)
        self.vertex_map = np.full(m.n_vertices, -1, dtype=np.int64)
        self.vertex_map[self.interior_vertices] = np.arange(len(self.interior_vertices))
        self.face_map = np.full(m.n_faces, -1, dtype=np.int64)
        self.face_map[self.interior_faces] = np.arange(len(self.interior_faces))

    @property
    def n_interior_vertices(self) -> int:
        return len(self.interior_vertices)

    @property
    def n_bubble(self) -> int:
        return len(self.interior_faces)

    @property
    def n_linear(self) -> int:
        return self.mesh.dim * self.n_interior_vertices

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_cells

    @property
    def n_condensed(self) -> int:
        """Dimension of the condensed (P1^d x P0) system."""
        return self.n_linear + self.n_pressure

    def linear_full_indices(self, interior: bool) -> np.ndarray:
        """Component-major dof indices over all vertices for the interior
        (or boundary) vertex set."""
        nv = self.mesh.n_vertices
        verts = (self.interior_vertices if interior
                 else np.flatnonzero(self.mesh.boundary_vertex))
        comps = np.arange(self.mesh.dim)
        return (comps[:, None] * nv + verts[None, :]).ravel()


@dataclass
class FeField:
    """Coefficient vector tagged with its space.

    Spaces: "vector_p1" (nv, d) vertex values incl. boundary; "bubble"
    (n_bubble,) interior-face coefficients; "pressure_p0" (nc,);
    "rt0" (nf,) face fluxes w.r.t. the stored normals.
    """

    space: str
    mesh: SimplicialMesh
    coeffs: np.ndarray
    layout: Optional[DofLayout] = None

    def copy(self) -> "FeField":
        return FeField(self.space, self.mesh, self.coeffs.copy(), self.layout)


@dataclass
class BRField:
    """Reduced Bernardi-Raugel velocity: linear part + bubble part."""

    linear: FeField
    bubble: FeField

    @property
    def mesh(self) -> SimplicialMesh:
        return self.linear.mesh

    def copy(self) -> "BRField":
        return BRField(self.linear.copy(), self.bubble.copy())

    @classmethod
    def zero(cls, mesh: SimplicialMesh, layout: DofLayout) -> "BRField":
        return cls(
            FeField("vector_p1", mesh, np.zeros((mesh.n_vertices, mesh.dim))),
            FeField("bubble", mesh, np.zeros(layout.n_bubble), layout),
        )


@dataclass
class ExactSolution:
    """Analytic solution bundle for a benchmark problem.

    All callables take points of shape (..., d) (and a time for unsteady
    problems) and return arrays with matching leading shape: u -> (..., d),
    grad_u -> (..., d, d) with grad_u[..., i, j] = d u_i / d x_j,
    p -> (...,), f -> (..., d).
    """

    u: Callable
    grad_u: Callable
    p: Callable
    f: Callable
    time_dependent: bool = False

    def g(self, x, t=None):
        """Dirichlet boundary data: trace of the exact velocity."""
        return self.u(x, t) if self.time_dependent else self.u(x)


# -- interpolation and projection ---------------------------------------------

def nodal_interpolate(g, mesh: SimplicialMesh, t=None) -> FeField:
    """Vertex interpolant of a vector function (includes boundary values)."""
    vals = g(mesh.vertices) if t is None else g(mesh.vertices, t)
    # Copy: g may return a view of mesh.vertices (e.g. the identity map),
    # and field coefficients must be mutable without touching the mesh.
    vals = np.array(vals, dtype=float, copy=True)
    if vals.shape != (mesh.n_vertices, mesh.dim):
        raise ValueError("interpolated values have wrong shape")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite values in nodal interpolation")
    return FeField("vector_p1", mesh, vals)


def p0_project(w, mesh: SimplicialMesh, degree: int = 4, t=None) -> np.ndarray:
    """Cellwise means (1/|T|) int_T w via quadrature of the given degree.

    `w` is a callable on points or a vector_p1 FeField.  Returns (nc,) or
    (nc, k) values.
    """
    if isinstance(w, FeField):
        if w.space != "vector_p1":
            raise ValueError(f"cannot P0-project space {w.space}")
        # Mean of an affine function is its barycenter value.
        return w.coeffs[mesh.cells].mean(axis=1)
    bary, wq = simplex_rule(mesh.dim, degree)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    vals = w(pts) if t is None else w(pts, t)
    return np.einsum("q,cq...->c...", wq, np.asarray(vals, dtype=float))


def bdm_interpolate(v: BRField, layout: DofLayout):
    """BDM interpolation Pi_h of a BR field.

    Pi_h preserves the conforming linear part and maps each face bubble to
    a scaled RT0 basis function; returns (linear part, RT0 field).
    """
    mesh = v.mesh
    c = BUBBLE_BDM_FACTOR[mesh.dim]
    flux = np.zeros(mesh.n_faces)
    flux[layout.interior_faces] = (
        c * mesh.face_measures[layout.interior_faces] * v.bubble.coeffs)
    return v.linear, FeField("rt0", mesh, flux)


# -- basis evaluation ---------------------------------------------------------

def bubble_values(mesh: SimplicialMesh, local_face: int, bary: np.ndarray):
    """phi_F on the reference cell for the face opposite local vertex k.

    Returns values (nq,) as products of the barycentric coordinates of the
    face vertices; gradients require the physical cell (see bubble_gradients).
    """
    idx = [m for m in range(mesh.dim + 1) if m != local_face]
    return BUBBLE_SCALE[mesh.dim] * np.prod(bary[:, idx], axis=1)


def bubble_gradients(mesh: SimplicialMesh, local_face: int, bary: np.ndarray):
    """grad(phi_F) at quadrature points for all cells, shape (nc, nq, d)."""
    idx = [m for m in range(mesh.dim + 1) if m != local_face]
    nq = bary.shape[0]
    out = np.zeros((mesh.n_cells, nq, mesh.dim))
    for m in idx:
        rest = np.prod(bary[:, [n for n in idx if n != m]], axis=1)
        out += rest[None, :, None] * mesh.grads[:, m, :][:, None, :]
    return BUBBLE_SCALE[mesh.dim] * out


def rt0_cell_values(mesh: SimplicialMesh, cell: int, pts: np.ndarray):
    """Values of all d+1 RT0 face basis functions of a cell at physical
    points, shape (d+1, npts, d).  Basis normalized to unit face flux with
    respect to the globally stored face normal."""
    d = mesh.dim
    out = np.empty((d + 1, len(pts), d))
    for k in range(d + 1):
        f = mesh.cell_faces[cell, k]
        sign = mesh.face_sign(cell, f)
        opp = mesh.vertices[mesh.cells[cell, k]]
        out[k] = sign * (pts - opp) / (d * mesh.volumes[cell])
    return out


def evaluate(fld, cell: int, bary_point) -> tuple:
    """Value and gradient of a field at a barycentric point of a cell.

    Gradient convention: value shape (d,) with gradient (d, d) for vector
    fields; scalar bubble coefficient fields evaluate the full bubble
    velocity contribution.
    """
    bary = np.asarray(bary_point, dtype=float)
    mesh = fld.mesh if isinstance(fld, (FeField, BRField)) else None
    if isinstance(fld, BRField):
        v1, g1 = evaluate(fld.linear, cell, bary)
        v2, g2 = evaluate(fld.bubble, cell, bary)
        return v1 + v2, g1 + g2
    if fld.space == "vector_p1":
        vals = fld.coeffs[mesh.cells[cell]]          # (d+1, d)
        value = bary @ vals
        grad = np.einsum("id,ik->dk", vals, mesh.grads[cell])
        return value, grad
    if fld.space == "bubble":
        d = mesh.dim
        value = np.zeros(d)
        grad = np.zeros((d, d))
        for k in range(d + 1):
            f = mesh.cell_faces[cell, k]
            bidx = fld.layout.face_map[f]
            if bidx < 0:
                continue
            coef = fld.coeffs[bidx]
            if coef == 0.0:
                continue
            idx = [m for m in range(d + 1) if m != k]
            scale = BUBBLE_SCALE[d]
            phi = scale * np.prod(bary[idx])
            gphi = np.zeros(d)
            for m in idx:
                gphi += np.prod([bary[n] for n in idx if n != m]) * mesh.grads[cell, m]
            gphi *= scale
            n = mesh.face_normals[f]
            value += coef * phi * n
            grad += coef * np.outer(n, gphi)
        return value, grad
    if fld.space == "pressure_p0":
        return fld.coeffs[cell], np.zeros(mesh.dim)
    raise ValueError(f"cannot evaluate space {fld.space}")


def zero_mean_pressure(p: np.ndarray, mesh: SimplicialMesh) -> np.ndarray:
    """Shift cell values to volume-weighted zero mean."""
    mean = np.dot(p, mesh.volumes) / mesh.volumes.sum()
    return p - mean
