"""Sparse assembly of all bilinear and linear forms.

Conventions:
  * Linear (vector P1) dofs are component-major over ALL vertices:
    dof = comp * nv + vertex.  Restriction to interior unknowns and the
    Dirichlet right-hand-side corrections happen in the scheme layer.
  * Bubble dofs run over interior faces only (DofLayout order).
  * Pressure dofs run over cells.
  * Divergence matrices store +int_T div(basis) per cell; the saddle-point
    sign convention is applied when the blocks are combined.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .fespace import (BRField, BUBBLE_BDM_FACTOR, BUBBLE_SCALE, DofLayout,
                      FeField, bubble_gradients, bubble_values)
from .mesh import SimplicialMesh
from .quadrature import physical_points, simplex_rule

# int_T grad(phi_F) dx = -INT_BUBBLE_FACTOR[d] * |T| * grad(lam_k) with k
# opposite F; includes the bubble normalization BUBBLE_SCALE.
INT_BUBBLE_FACTOR = {2: 1.0 / 3.0, 3: 4.0 / 20.0}

bernoulli = kernels.bernoulli


@dataclass
class ConvectionField:
    """Piecewise-constant convection with artificial diffusion eps > 0."""

    values: np.ndarray  # (nc, d)
    eps: float = 1e-10

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.eps <= 0.0:
            raise ValueError(f"artificial diffusion must be positive, got {self.eps}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite convection coefficients")

    @classmethod
    def constant(cls, b, mesh: SimplicialMesh, eps: float = 1e-10):
        vals = np.broadcast_to(np.asarray(b, dtype=float), (mesh.n_cells, mesh.dim))
        return cls(vals.copy(), eps)


def _accumulate(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape)
    return m.tocsr()


# -- viscous blocks -----------------------------------------------------------

def scalar_stiffness(mesh: SimplicialMesh) -> sp.csr_matrix:
    """P1 stiffness over all vertices."""
    nloc = mesh.dim + 1
    local = kernels.p1_local_stiffness(mesh.grads, mesh.volumes)
    rows = np.repeat(mesh.cells, nloc, axis=1)
    cols = np.tile(mesh.cells, (1, nloc))
    return _accumulate(rows, cols, local, (mesh.n_vertices, mesh.n_vertices))


def vector_stiffness(mesh: SimplicialMesh) -> sp.csr_matrix:
    return sp.kron(sp.identity(mesh.dim, format="csr"), scalar_stiffness(mesh)).tocsr()


def bubble_diag(mesh: SimplicialMesh, layout: DofLayout) -> np.ndarray:
    """Diagonal entries (grad(phi_F n_F), grad(phi_F n_F)) per interior face."""
    d = mesh.dim
    bary, w = simplex_rule(d, 2 * (d - 1))
    diag = np.zeros(layout.n_bubble)
    for k in range(d + 1):
        g = bubble_gradients(mesh, k, bary)          # (nc, nq, d)
        contrib = mesh.volumes * np.einsum("q,cqd,cqd->c", w, g, g)
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        np.add.at(diag, b[sel], contrib[sel])
    return diag


def bubble_grad_full(mesh: SimplicialMesh, layout: DofLayout) -> sp.csr_matrix:
    """Full bubble-bubble viscous block incl. off-diagonal couplings
    n_F . n_F' int grad(phi_F).grad(phi_F'); used by the classical schemes."""
    d = mesh.dim
    bary, w = simplex_rule(d, 2 * (d - 1))
    grads = [bubble_gradients(mesh, k, bary) for k in range(d + 1)]
    rows, cols, vals = [], [], []
    bidx = layout.face_map[mesh.cell_faces]          # (nc, d+1)
    normals = mesh.face_normals[mesh.cell_faces]     # (nc, d+1, d)
    for k in range(d + 1):
        for m in range(d + 1):
            val = mesh.volumes * np.einsum("q,cqd,cqd->c", w, grads[k], grads[m])
            val = val * np.einsum("cd,cd->c", normals[:, k], normals[:, m])
            sel = (bidx[:, k] >= 0) & (bidx[:, m] >= 0)
            rows.append(bidx[sel, k])
            cols.append(bidx[sel, m])
            vals.append(val[sel])
    return _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, layout.n_bubble))


def grad_coupling(mesh: SimplicialMesh, layout: DofLayout) -> sp.csr_matrix:
    """(grad(lam_m e_j) trial, grad(phi_F n_F) test): (n_bubble, d*nv).

    Uses int_T grad(phi_F) = -beta_d |T| grad(lam_k) with k opposite F.
    """
    d, nv = mesh.dim, mesh.n_vertices
    beta = INT_BUBBLE_FACTOR[d]
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        if not np.any(sel):
            continue
        n = mesh.face_normals[mesh.cell_faces[sel, k]]      # (ns, d)
        gk = mesh.grads[sel, k, :]
        dot = -beta * mesh.volumes[sel, None] * np.einsum(
            "sd,smd->sm", gk, mesh.grads[sel])              # (ns, d+1)
        for j in range(d):
            rows.append(np.repeat(b[sel][:, None], d + 1, axis=1))
            cols.append(j * nv + mesh.cells[sel])
            vals.append(n[:, j:j + 1] * dot)
    return _accumulate(np.concatenate([r.ravel() for r in rows]),
                       np.concatenate([c.ravel() for c in cols]),
                       np.concatenate([v.ravel() for v in vals]),
                       (layout.n_bubble, d * nv))


# -- divergence blocks --------------------------------------------------------

def divergence_linear(mesh: SimplicialMesh) -> sp.csr_matrix:
    """(nc, d*nv) with entries int_T div(lam_m e_j) = |T| d lam_m / d x_j."""
    d, nv = mesh.dim, mesh.n_vertices
    nc = mesh.n_cells
    rows = np.repeat(np.arange(nc)[:, None], d + 1, axis=1)
    blocks_r, blocks_c, blocks_v = [], [], []
    for j in range(d):
        blocks_r.append(rows)
        blocks_c.append(j * nv + mesh.cells)
        blocks_v.append(mesh.volumes[:, None] * mesh.grads[:, :, j])
    return _accumulate(np.concatenate([b.ravel() for b in blocks_r]),
                       np.concatenate([b.ravel() for b in blocks_c]),
                       np.concatenate([b.ravel() for b in blocks_v]),
                       (nc, d * nv))


def divergence_bubble(mesh: SimplicialMesh, layout: DofLayout) -> sp.csr_matrix:
    """(nc, n_bubble) with entries int_T div(phi_F n_F) = n_F . int_T grad(phi_F)."""
    d = mesh.dim
    beta = INT_BUBBLE_FACTOR[d]
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        n = mesh.face_normals[mesh.cell_faces[sel, k]]
        val = -beta * mesh.volumes[sel] * np.einsum("sd,sd->s", n, mesh.grads[sel, k, :])
        rows.append(np.flatnonzero(sel))
        cols.append(b[sel])
        vals.append(val)
    return _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (mesh.n_cells, layout.n_bubble))


# -- EAFE convection ----------------------------------------------------------

def eafe_scalar(mesh: SimplicialMesh, conv: ConvectionField) -> sp.csr_matrix:
    """Scalar EAFE convection-diffusion matrix over all vertices.

    Element-wise assembly from the Bernoulli local matrices; acts identically
    on each velocity component.
    """
    nloc = mesh.dim + 1
    local = kernels.eafe_local_matrices(
        mesh.cells, mesh.vertices, mesh.grads, mesh.volumes,
        conv.values, conv.eps)
    rows = np.repeat(mesh.cells, nloc, axis=1)
    cols = np.tile(mesh.cells, (1, nloc))
    return _accumulate(rows, cols, local, (mesh.n_vertices, mesh.n_vertices))


def eafe_vector(mesh: SimplicialMesh, conv: ConvectionField) -> sp.csr_matrix:
    return sp.kron(sp.identity(mesh.dim, format="csr"),
                   eafe_scalar(mesh, conv)).tocsr()


def conv_stab(mesh: SimplicialMesh, layout: DofLayout,
              conv: ConvectionField) -> sp.csr_matrix:
    """(b . grad(v_l), Pi_h(w_b)) stabilization block: (n_bubble, d*nv).

    Uses int_T phi_F^RT = sign * (barycenter(T) - x_opp) / d.
    """
    d, nv = mesh.dim, mesh.n_vertices
    c = BUBBLE_BDM_FACTOR[d]
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        faces = mesh.cell_faces[:, k]
        b = layout.face_map[faces]
        sel = b >= 0
        if not np.any(sel):
            continue
        cells = np.flatnonzero(sel)
        sign = np.where(mesh.face_cells[faces[sel], 0] == cells, 1.0, -1.0)
        int_rt = sign[:, None] * (mesh.barycenters[sel]
                                  - mesh.vertices[mesh.cells[sel, k]]) / d
        scale = c * mesh.face_measures[faces[sel]]
        bdotg = np.einsum("sd,smd->sm", conv.values[sel], mesh.grads[sel])  # (ns, d+1)
        for j in range(d):
            rows.append(np.repeat(b[sel][:, None], d + 1, axis=1))
            cols.append(j * nv + mesh.cells[sel])
            vals.append((scale * int_rt[:, j])[:, None] * bdotg)
    return _accumulate(np.concatenate([r.ravel() for r in rows]),
                       np.concatenate([c_.ravel() for c_ in cols]),
                       np.concatenate([v.ravel() for v in vals]),
                       (layout.n_bubble, d * nv))


# -- loads --------------------------------------------------------------------

def load_linear(mesh: SimplicialMesh, f, degree: int = 4, t=None) -> np.ndarray:
    """(f, lam_m e_j) over all vertices, shape (d*nv,)."""
    d, nv = mesh.dim, mesh.n_vertices
    bary, w = simplex_rule(d, degree)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    fv = np.asarray(f(pts) if t is None else f(pts, t), dtype=float)  # (nc, nq, d)
    contrib = mesh.volumes[:, None, None] * np.einsum(
        "q,qm,cqj->cmj", w, bary, fv)                                 # (nc, d+1, d)
    out = np.zeros(d * nv)
    for j in range(d):
        np.add.at(out, j * nv + mesh.cells, contrib[:, :, j])
    return out


def load_bubble(mesh: SimplicialMesh, layout: DofLayout, f,
                degree: int = 4, t=None) -> np.ndarray:
    """(f, Pi_h(phi_F n_F)) = c_d |F| (f, phi_F^RT), shape (n_bubble,)."""
    d = mesh.dim
    c = BUBBLE_BDM_FACTOR[d]
    bary, w = simplex_rule(d, degree)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    fv = np.asarray(f(pts) if t is None else f(pts, t), dtype=float)
    out = np.zeros(layout.n_bubble)
    for k in range(d + 1):
        faces = mesh.cell_faces[:, k]
        b = layout.face_map[faces]
        sel = b >= 0
        cells = np.flatnonzero(sel)
        sign = np.where(mesh.face_cells[faces[sel], 0] == cells, 1.0, -1.0)
        rel = pts[sel] - mesh.vertices[mesh.cells[sel, k]][:, None, :]
        val = (c * mesh.face_measures[faces[sel]] * sign / d
               * np.einsum("q,sqj,sqj->s", w, fv[sel], rel))
        np.add.at(out, b[sel], val)
    return out


# -- lumped (face-barycenter) inner products ----------------------------------

def lumped_mass_scalar(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Scalar lumped mass for P1: (u, v)_h restricted per component."""
    d = mesh.dim
    nloc = d + 1
    cnt = np.full((nloc, nloc), (d - 1) / d ** 2)
    np.fill_diagonal(cnt, 1.0 / d)
    local = (mesh.volumes / (d + 1))[:, None, None] * cnt[None]
    rows = np.repeat(mesh.cells, nloc, axis=1)
    cols = np.tile(mesh.cells, (1, nloc))
    return _accumulate(rows, cols, local, (mesh.n_vertices, mesh.n_vertices))


def lumped_mass_vector(mesh: SimplicialMesh) -> sp.csr_matrix:
    return sp.kron(sp.identity(mesh.dim, format="csr"),
                   lumped_mass_scalar(mesh)).tocsr()


def lumped_mass_bubble_linear(mesh: SimplicialMesh, layout: DofLayout) -> sp.csr_matrix:
    """(lam_m e_j trial, phi_F n_F test)_h: (n_bubble, d*nv).

    phi_F vanishes at every face barycenter except its own, where it equals
    (1/d)^d and the hat functions of the face vertices equal 1/d.
    """
    d, nv = mesh.dim, mesh.n_vertices
    phi = BUBBLE_SCALE[d] * (1.0 / d) ** d
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        n = mesh.face_normals[mesh.cell_faces[sel, k]]
        base = mesh.volumes[sel] / (d + 1) * phi / d
        for m in range(d + 1):
            if m == k:
                continue
            for j in range(d):
                rows.append(b[sel])
                cols.append(j * nv + mesh.cells[sel, m])
                vals.append(base * n[:, j])
    return _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, d * nv))


def lumped_mass_bubble_diag(mesh: SimplicialMesh, layout: DofLayout) -> np.ndarray:
    """(phi_F n_F, phi_F n_F)_h per interior face (structurally diagonal)."""
    d = mesh.dim
    phi2 = (BUBBLE_SCALE[d] * (1.0 / d) ** d) ** 2
    diag = np.zeros(layout.n_bubble)
    for k in range(d + 1):
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        np.add.at(diag, b[sel], mesh.volumes[sel] / (d + 1) * phi2)
    return diag


def _rt0_at_face_barycenters(mesh: SimplicialMesh):
    """phi_F^RT of local face k at the barycenter of local face m, for all
    cells: array (nc, d+1, d+1, d) indexed [cell, k, m, :]."""
    d = mesh.dim
    nc = mesh.n_cells
    fb = mesh.face_barycenters[mesh.cell_faces]      # (nc, d+1, d)
    out = np.empty((nc, d + 1, d + 1, d))
    cells = np.arange(nc)
    for k in range(d + 1):
        sign = np.where(mesh.face_cells[mesh.cell_faces[:, k], 0] == cells, 1.0, -1.0)
        opp = mesh.vertices[mesh.cells[:, k]]
        out[:, k] = (sign[:, None, None] * (fb - opp[:, None, :])
                     / (d * mesh.volumes)[:, None, None])
    return out


def lumped_mass_bubble_linear_pp(mesh: SimplicialMesh,
                                 layout: DofLayout) -> sp.csr_matrix:
    """(lam_m e_j trial, c|F| phi_F^RT test)_h: (n_bubble, d*nv)."""
    d, nv = mesh.dim, mesh.n_vertices
    c = BUBBLE_BDM_FACTOR[d]
    rt = _rt0_at_face_barycenters(mesh)
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        scale = c * mesh.face_measures[mesh.cell_faces[sel, k]] \
            * mesh.volumes[sel] / (d + 1)
        for m in range(d + 1):        # quadrature face (barycenter x_{F_m})
            for n in range(d + 1):    # hat function lam_n, value 1/d if n != m
                if n == m:
                    continue
                for j in range(d):
                    rows.append(b[sel])
                    cols.append(j * nv + mesh.cells[sel, n])
                    vals.append(scale / d * rt[sel, k, m, j])
    return _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, d * nv))


def lumped_mass_bubble_pp(mesh: SimplicialMesh, layout: DofLayout) -> sp.csr_matrix:
    """(phi_F' n_F' trial, c|F| phi_F^RT test)_h: (n_bubble, n_bubble).

    Diagonal by the barycenter-quadrature orthogonality; assembled as a
    sparse matrix so tests can verify that structure.
    """
    d = mesh.dim
    c = BUBBLE_BDM_FACTOR[d]
    phi = BUBBLE_SCALE[d] * (1.0 / d) ** d
    rt = _rt0_at_face_barycenters(mesh)
    rows, cols, vals = [], [], []
    normals = mesh.face_normals[mesh.cell_faces]
    # Only the k == m couplings survive: the trial bubble phi_F' is nonzero
    # at its own barycenter x_F' alone, and for k != m the RT0 function
    # phi_F^RT(x_F') - being proportional to x_F' minus the vertex opposite
    # F, which lies on F' - is tangential to F', so n_F'. phi_F^RT(x_F') = 0.
    for k in range(d + 1):
        bk = layout.face_map[mesh.cell_faces[:, k]]
        sel = bk >= 0
        if not np.any(sel):
            continue
        scale = (c * mesh.face_measures[mesh.cell_faces[sel, k]]
                 * mesh.volumes[sel] / (d + 1) * phi)
        val = scale * np.einsum("sd,sd->s", normals[sel, k], rt[sel, k, k, :])
        rows.append(bk[sel])
        cols.append(bk[sel])
        vals.append(val)
    m = _accumulate(np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals), (layout.n_bubble, layout.n_bubble))
    m.eliminate_zeros()
    return m


# -- exact postprocessed mass and classical convection ------------------------

def _cell_quadrature_data(mesh: SimplicialMesh, degree: int):
    bary, w = simplex_rule(mesh.dim, degree)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    return bary, w, pts


def _rt0_at_points(mesh: SimplicialMesh, pts: np.ndarray):
    """phi_F^RT of local face k at physical points: (nc, d+1, nq, d)."""
    d = mesh.dim
    nc = mesh.n_cells
    out = np.empty((nc, d + 1, pts.shape[1], d))
    cells = np.arange(nc)
    for k in range(d + 1):
        sign = np.where(mesh.face_cells[mesh.cell_faces[:, k], 0] == cells, 1.0, -1.0)
        opp = mesh.vertices[mesh.cells[:, k]]
        out[:, k] = (sign[:, None, None] * (pts - opp[:, None, :])
                     / (d * mesh.volumes)[:, None, None])
    return out


def scalar_mass(mesh: SimplicialMesh) -> sp.csr_matrix:
    """Exact P1 mass matrix: local |T| (1 + delta_mn) / ((d+1)(d+2))."""
    d = mesh.dim
    nloc = d + 1
    base = (np.ones((nloc, nloc)) + np.eye(nloc)) / ((d + 1) * (d + 2))
    local = mesh.volumes[:, None, None] * base[None]
    rows = np.repeat(mesh.cells, nloc, axis=1)
    cols = np.tile(mesh.cells, (1, nloc))
    return _accumulate(rows, cols, local, (mesh.n_vertices, mesh.n_vertices))


def postprocessed_mass_blocks(mesh: SimplicialMesh, layout: DofLayout):
    """Exact (Pi_h u, Pi_h v) mass blocks for the classical time stepper.

    Returns (M_ll (d*nv, d*nv), M_bl (n_bubble, d*nv), M_bb (n_bubble,
    n_bubble)); M_lb is M_bl^T by symmetry.
    """
    d, nv = mesh.dim, mesh.n_vertices
    c = BUBBLE_BDM_FACTOR[d]
    M_ll = sp.kron(sp.identity(d, format="csr"), scalar_mass(mesh)).tocsr()

    bary, w, pts = _cell_quadrature_data(mesh, 2)
    rt = _rt0_at_points(mesh, pts)                   # (nc, d+1, nq, d)
    meas = mesh.face_measures[mesh.cell_faces]       # (nc, d+1)
    bidx = layout.face_map[mesh.cell_faces]

    rows, cols, vals = [], [], []
    for k in range(d + 1):
        sel = bidx[:, k] >= 0
        scale = c * meas[sel, k] * mesh.volumes[sel]
        # (lam_n e_j, c|F| phi_F^RT): int lam_n rt_j
        contrib = np.einsum("q,qn,sqj->snj", w, bary, rt[sel, k])
        for n in range(d + 1):
            for j in range(d):
                rows.append(bidx[sel, k])
                cols.append(j * nv + mesh.cells[sel, n])
                vals.append(scale * contrib[:, n, j])
    M_bl = _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, d * nv))

    rows, cols, vals = [], [], []
    for k in range(d + 1):
        for m in range(d + 1):
            sel = (bidx[:, k] >= 0) & (bidx[:, m] >= 0)
            if not np.any(sel):
                continue
            scale = c * c * meas[sel, k] * meas[sel, m] * mesh.volumes[sel]
            val = scale * np.einsum("q,sqd,sqd->s", w, rt[sel, k], rt[sel, m])
            rows.append(bidx[sel, k])
            cols.append(bidx[sel, m])
            vals.append(val)
    M_bb = _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, layout.n_bubble))
    return M_ll, M_bl, M_bb


def _eval_br_at_points(field: BRField, layout: DofLayout, bary, pts):
    """Values of a BR velocity at the cells' quadrature points: (nc, nq, d)."""
    mesh = field.mesh
    vals = np.einsum("qm,cmd->cqd", bary, field.linear.coeffs[mesh.cells])
    bidx = layout.face_map[mesh.cell_faces]
    for k in range(mesh.dim + 1):
        sel = bidx[:, k] >= 0
        if not np.any(sel):
            continue
        coef = field.bubble.coeffs[bidx[sel, k]]
        phi = bubble_values(mesh, k, bary)            # (nq,)
        n = mesh.face_normals[mesh.cell_faces[sel, k]]
        vals[sel] += coef[:, None, None] * phi[None, :, None] * n[:, None, :]
    return vals


def classical_convection_blocks(mesh: SimplicialMesh, layout: DofLayout,
                                wind, degree: int = 4):
    """Blocks of (w . grad(u), Pi_h v) with full BR trial functions.

    `wind` is either a BRField (frozen Picard iterate) or an (nc, d) array of
    cellwise-constant convection.  Returns (K_ll, K_lb, K_bl, K_bb) with test
    rows (linear / postprocessed bubble) and trial columns (linear / bubble).
    """
    d, nv = mesh.dim, mesh.n_vertices
    c = BUBBLE_BDM_FACTOR[d]
    bary, w, pts = _cell_quadrature_data(mesh, degree)
    nq = len(w)
    if isinstance(wind, BRField):
        wv = _eval_br_at_points(wind, layout, bary, pts)
    else:
        wv = np.broadcast_to(np.asarray(wind, float)[:, None, :],
                             (mesh.n_cells, nq, d))
    bidx = layout.face_map[mesh.cell_faces]
    meas = mesh.face_measures[mesh.cell_faces]
    rt = _rt0_at_points(mesh, pts)
    bgrads = [bubble_gradients(mesh, k, bary) for k in range(d + 1)]
    normals = mesh.face_normals[mesh.cell_faces]

    wdotg = np.einsum("cqd,cnd->cqn", wv, mesh.grads)      # w.grad(lam_n)
    wdotbg = np.stack([np.einsum("cqd,cqd->cq", wv, bgrads[k])
                       for k in range(d + 1)], axis=1)     # (nc, d+1, nq)

    # K_ll: (w.grad(lam_n) e_j, lam_m e_j)
    loc = mesh.volumes[:, None, None] * np.einsum("q,qm,cqn->cmn", w, bary, wdotg)
    rows = np.repeat(mesh.cells, d + 1, axis=1)
    cols = np.tile(mesh.cells, (1, d + 1))
    S = _accumulate(rows, cols, loc, (nv, nv))
    K_ll = sp.kron(sp.identity(d, format="csr"), S).tocsr()

    # K_lb: trial bubble phi_F n_F, test lam_m e_j -> lam_m n_F[j] (w.grad phi_F)
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        sel = bidx[:, k] >= 0
        contrib = mesh.volumes[sel, None] * np.einsum(
            "q,qm,sq->sm", w, bary, wdotbg[sel, k])        # (ns, d+1)
        for m in range(d + 1):
            for j in range(d):
                rows.append(j * nv + mesh.cells[sel, m])
                cols.append(bidx[sel, k])
                vals.append(contrib[:, m] * normals[sel, k, j])
    K_lb = _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (d * nv, layout.n_bubble))

    # K_bl: trial lam_n e_j, test c|F| phi_F^RT -> (w.grad lam_n) c|F| rt_j
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        sel = bidx[:, k] >= 0
        scale = c * meas[sel, k] * mesh.volumes[sel]
        contrib = np.einsum("q,sqj,sqn->snj", w, rt[sel, k], wdotg[sel])
        for n in range(d + 1):
            for j in range(d):
                rows.append(bidx[sel, k])
                cols.append(j * nv + mesh.cells[sel, n])
                vals.append(scale * contrib[:, n, j])
    K_bl = _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, d * nv))

    # K_bb: trial phi_F' n_F', test c|F| phi_F^RT
    rows, cols, vals = [], [], []
    for k in range(d + 1):
        for m in range(d + 1):
            sel = (bidx[:, k] >= 0) & (bidx[:, m] >= 0)
            if not np.any(sel):
                continue
            scale = c * meas[sel, k] * mesh.volumes[sel]
            val = scale * np.einsum("q,sq,sd,sqd->s", w, wdotbg[sel, m],
                                    normals[sel, m], rt[sel, k])
            rows.append(bidx[sel, k])
            cols.append(bidx[sel, m])
            vals.append(val)
    K_bb = _accumulate(np.concatenate(rows), np.concatenate(cols),
                       np.concatenate(vals), (layout.n_bubble, layout.n_bubble))
    return K_ll, K_lb, K_bl, K_bb
