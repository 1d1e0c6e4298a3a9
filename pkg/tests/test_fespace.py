import numpy as np
import pytest

from brflow.fespace import (BRField, BUBBLE_BDM_FACTOR, DofLayout, FeField,
                            bdm_interpolate, bubble_gradients, bubble_values,
                            evaluate, nodal_interpolate, p0_project,
                            rt0_cell_values, zero_mean_pressure)
from brflow.quadrature import simplex_rule


# -- layout -------------------------------------------------------------------

def test_layout_counts_2d(mesh2d):
    lay = DofLayout(mesh2d)
    assert lay.n_interior_vertices == 9
    assert lay.n_bubble == mesh2d.n_faces - 16
    assert lay.n_linear == 18
    assert lay.n_pressure == 32
    assert lay.n_condensed == 18 + 32
    # maps are consistent inverses
    assert np.all(lay.vertex_map[lay.interior_vertices]
                  == np.arange(lay.n_interior_vertices))
    assert np.all(lay.face_map[lay.interior_faces] == np.arange(lay.n_bubble))
    assert np.all(lay.vertex_map[mesh2d.boundary_vertex] == -1)


def test_layout_full_indices(mesh):
    lay = DofLayout(mesh)
    ii = lay.linear_full_indices(True)
    bb = lay.linear_full_indices(False)
    assert len(ii) + len(bb) == mesh.dim * mesh.n_vertices
    assert len(np.intersect1d(ii, bb)) == 0


# -- interpolation / projection ----------------------------------------------

def test_nodal_interpolate_affine(mesh):
    A = np.arange(mesh.dim * mesh.dim, dtype=float).reshape(mesh.dim, mesh.dim)
    g = lambda x: x @ A.T + 1.0
    fld = nodal_interpolate(g, mesh)
    assert fld.space == "vector_p1"
    assert np.allclose(fld.coeffs, g(mesh.vertices), atol=1e-14)


def test_nodal_interpolate_rejects_bad_values(mesh2d):
    with pytest.raises(ValueError):
        nodal_interpolate(lambda x: x[:, 0], mesh2d)   # wrong shape
    with pytest.raises(ValueError):
        nodal_interpolate(lambda x: np.full((mesh2d.n_vertices, 2), np.nan),
                          mesh2d)


def test_p0_project_affine_is_barycenter_value(mesh):
    A = np.ones((mesh.dim, mesh.dim)) + np.eye(mesh.dim)
    g = lambda x: x @ A.T - 2.0
    means = p0_project(g, mesh)
    assert np.allclose(means, g(mesh.barycenters), atol=1e-13)
    fld = nodal_interpolate(g, mesh)
    assert np.allclose(p0_project(fld, mesh), g(mesh.barycenters), atol=1e-13)


def test_zero_mean_pressure(mesh2d, rng):
    p = rng.normal(size=mesh2d.n_cells)
    q = zero_mean_pressure(p, mesh2d)
    assert abs(np.dot(q, mesh2d.volumes)) < 1e-13
    assert np.allclose(np.diff(p - q), 0.0, atol=1e-13)   # pure shift


# -- RT0 basis ----------------------------------------------------------------

def test_rt0_unit_flux(mesh):
    """int_F psi_k . n_F dS = 1 on its own face, 0 on the others (the
    normal component of psi_k vanishes there): checked by face quadrature."""
    d = mesh.dim
    bary_f, w_f = simplex_rule(d - 1, 3)
    for cell in [0, mesh.n_cells - 1]:
        for k in range(d + 1):
            f = mesh.cell_faces[cell, k]
            fverts = mesh.vertices[mesh.faces[f]]
            pts = bary_f @ fverts
            vals = rt0_cell_values(mesh, cell, pts)   # (d+1, nq, d)
            for kk in range(d + 1):
                flux = mesh.face_measures[f] * np.sum(
                    w_f * (vals[kk] @ mesh.face_normals[f]))
                expect = 1.0 if kk == k else 0.0
                assert abs(flux - expect) < 1e-12


# -- BDM interpolation constants ---------------------------------------------

def test_bdm_constant_from_face_flux(mesh):
    """The RT0 flux assigned to a unit bubble must equal the actual face
    integral int_F phi_F dS, computed by quadrature on the face."""
    d = mesh.dim
    lay = DofLayout(mesh)
    bary_f, w_f = simplex_rule(d - 1, 4)
    checked = 0
    for f in lay.interior_faces[:12]:
        cell = mesh.face_cells[f, 0]
        k = int(np.flatnonzero(mesh.cell_faces[cell] == f)[0])
        # Barycentric coordinates on the cell of the face quadrature points:
        # zero at the opposite vertex, the face rule's coords elsewhere.
        face_local = [m for m in range(d + 1) if m != k]
        bary_cell = np.zeros((len(bary_f), d + 1))
        # mesh.faces[f] lists face vertices; align with cell-local order.
        order = [list(mesh.faces[f]).index(mesh.cells[cell, m])
                 for m in face_local]
        for col, m in enumerate(face_local):
            bary_cell[:, m] = bary_f[:, order[col]]
        phi = bubble_values(mesh, k, bary_cell)
        integral = mesh.face_measures[f] * np.sum(w_f * phi)
        expect = BUBBLE_BDM_FACTOR[d] * mesh.face_measures[f]
        assert abs(integral - expect) <= 1e-10 * abs(expect)
        checked += 1
    assert checked > 0


def test_bdm_interpolate_fluxes(mesh, rng):
    lay = DofLayout(mesh)
    v = BRField.zero(mesh, lay)
    v.bubble.coeffs[:] = rng.normal(size=lay.n_bubble)
    lin, rt = bdm_interpolate(v, lay)
    assert rt.space == "rt0"
    assert np.allclose(
        rt.coeffs[lay.interior_faces],
        BUBBLE_BDM_FACTOR[mesh.dim] * mesh.face_measures[lay.interior_faces]
        * v.bubble.coeffs, atol=1e-15)
    assert np.all(rt.coeffs[mesh.boundary_face] == 0.0)
    assert lin is v.linear


# -- commuting diagram --------------------------------------------------------

def _mean_divergence_oracle(mesh, lay, v, degree=4):
    """P_h(div v) per cell by quadrature, independent of the BDM factors."""
    bary, w = simplex_rule(mesh.dim, degree)
    div_lin = np.einsum("cid,cid->c", v.linear.coeffs[mesh.cells], mesh.grads)
    div_bub = np.zeros(mesh.n_cells)
    for k in range(mesh.dim + 1):
        g = bubble_gradients(mesh, k, bary)          # (nc, nq, d)
        faces = mesh.cell_faces[:, k]
        normals = mesh.face_normals[faces]
        mean = np.einsum("q,cqd,cd->c", w, g, normals)
        bidx = lay.face_map[faces]
        coef = np.where(bidx >= 0, v.bubble.coeffs[np.maximum(bidx, 0)], 0.0)
        div_bub += coef * mean
    return div_lin + div_bub


def _div_of_bdm(mesh, lay, v):
    """div(Pi_h v) per cell: constant linear divergence plus the RT0 part
    sum_k sign * flux / |T| (div psi_F = sign/|T| for a unit-flux basis)."""
    _, rt = bdm_interpolate(v, lay)
    div = np.einsum("cid,cid->c", v.linear.coeffs[mesh.cells], mesh.grads)
    for k in range(mesh.dim + 1):
        faces = mesh.cell_faces[:, k]
        signs = np.array([mesh.face_sign(c, f)
                          for c, f in enumerate(faces)], dtype=float)
        div += signs * rt.coeffs[faces] / mesh.volumes
    return div


@pytest.mark.parametrize("which", ["2d", "3d"])
def test_commuting_diagram(which, mesh2d, mesh3d, rng):
    """div(Pi_h v) = P_h(div v) for 200 random reduced BR fields."""
    mesh = mesh2d if which == "2d" else mesh3d
    lay = DofLayout(mesh)
    worst = 0.0
    for _ in range(200):
        v = BRField.zero(mesh, lay)
        v.linear.coeffs[:] = rng.normal(size=v.linear.coeffs.shape)
        v.bubble.coeffs[:] = rng.normal(size=lay.n_bubble)
        lhs = _div_of_bdm(mesh, lay, v)
        rhs = _mean_divergence_oracle(mesh, lay, v)
        scale = max(1.0, np.abs(rhs).max())
        worst = max(worst, np.abs(lhs - rhs).max() / scale)
    assert worst <= 1e-11


# -- pointwise evaluation -----------------------------------------------------

def test_evaluate_linear_field(mesh, rng):
    A = rng.normal(size=(mesh.dim, mesh.dim))
    b = rng.normal(size=mesh.dim)
    fld = nodal_interpolate(lambda x: x @ A.T + b, mesh)
    cell = mesh.n_cells // 2
    bary = np.full(mesh.dim + 1, 1.0 / (mesh.dim + 1))
    x = bary @ mesh.vertices[mesh.cells[cell]]
    val, grad = evaluate(fld, cell, bary)
    assert np.allclose(val, A @ x + b, atol=1e-12)
    assert np.allclose(grad, A, atol=1e-12)


def test_evaluate_bubble_field(mesh, rng):
    """Bubble evaluation agrees with a finite-difference gradient and with
    the direct product formula."""
    lay = DofLayout(mesh)
    v = BRField.zero(mesh, lay)
    v.bubble.coeffs[:] = rng.normal(size=lay.n_bubble)
    cell = int(mesh.face_cells[lay.interior_faces[0], 0])
    bary = np.full(mesh.dim + 1, 1.0 / (mesh.dim + 1))
    val, grad = evaluate(v.bubble, cell, bary)
    assert val.shape == (mesh.dim,)
    # FD gradient in physical coordinates.
    verts = mesh.vertices[mesh.cells[cell]]
    x0 = bary @ verts
    h = 1e-6
    for j in range(mesh.dim):
        xp = x0.copy()
        xp[j] += h
        # barycentric coords of xp
        M = np.vstack([np.ones(mesh.dim + 1), verts.T])
        bp = np.linalg.solve(M, np.concatenate([[1.0], xp]))
        vp, _ = evaluate(v.bubble, cell, bp)
        assert np.allclose((vp - val) / h, grad[:, j], atol=1e-4)


def test_evaluate_br_sum(mesh, rng):
    lay = DofLayout(mesh)
    v = BRField.zero(mesh, lay)
    v.linear.coeffs[:] = rng.normal(size=v.linear.coeffs.shape)
    v.bubble.coeffs[:] = rng.normal(size=lay.n_bubble)
    cell = mesh.n_cells // 3
    bary = np.full(mesh.dim + 1, 1.0 / (mesh.dim + 1))
    val, grad = evaluate(v, cell, bary)
    v1, g1 = evaluate(v.linear, cell, bary)
    v2, g2 = evaluate(v.bubble, cell, bary)
    assert np.allclose(val, v1 + v2, atol=1e-14)
    assert np.allclose(grad, g1 + g2, atol=1e-14)


def test_bubble_vanishes_on_face_boundary(mesh):
    """phi_F is zero at every vertex and on the other faces of the cell."""
    k = 0
    corners = np.eye(mesh.dim + 1)
    vals = bubble_values(mesh, k, corners)
    assert np.allclose(vals, 0.0, atol=1e-15)
    # Barycenter of the face itself: positive value.
    bary = np.full((1, mesh.dim + 1), 1.0 / mesh.dim)
    bary[0, k] = 0.0
    assert bubble_values(mesh, k, bary)[0] > 0.0
