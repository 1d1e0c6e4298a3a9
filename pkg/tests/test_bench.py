import csv
import math

import numpy as np
import pytest

from brflow import bench
from brflow.bench import (CASE_IDS, CSV_HEADER, BenchmarkCase, ErrorRecord,
                          builtin_case, compute_errors, kovasznay_lambda,
                          pressure_error, run_convergence, run_unsteady,
                          solve_case, velocity_errors, write_csv)
from brflow.fespace import BRField, DofLayout, FeField, nodal_interpolate
from brflow.mesh import uniform_rectangle_mesh


def fd_grad(func, x, h=1e-6):
    """Central-difference Jacobian of a vector field at points (n, d)."""
    d = x.shape[-1]
    cols = []
    for j in range(d):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        cols.append((func(xp) - func(xm)) / (2 * h))
    return np.stack(cols, axis=-1)       # (..., i, j) = d u_i / d x_j


def fd_scalar_grad(func, x, h=1e-6):
    d = x.shape[-1]
    cols = []
    for j in range(d):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        cols.append((func(xp) - func(xm)) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_laplacian(func, x, h=1e-4):
    d = x.shape[-1]
    out = -2 * d * func(x)
    for j in range(d):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        out = out + func(xp) + func(xm)
    return out / h ** 2


def interior_points(rng, n, lo, hi, d):
    return lo + 0.1 * (hi - lo) + 0.8 * (hi - lo) * rng.random((n, d))


# -- analytic solution consistency -------------------------------------------

@pytest.mark.parametrize("case_id,nu", [("stokes-sinusoidal", 1e-3),
                                        ("oseen-exponential", 1e-4),
                                        ("kovasznay", 1e-3),
                                        ("potential3d", 1e-4)])
def test_exact_gradient_and_divergence(case_id, nu, rng):
    case = builtin_case(case_id)
    ex = case.exact(nu)
    lo, hi = (-0.4, 1.4) if case_id == "kovasznay" else (0.0, 1.0)
    x = interior_points(rng, 40, lo, hi, case.dim)
    g_fd = fd_grad(ex.u, x)
    assert np.abs(ex.grad_u(x) - g_fd).max() < 1e-5 * max(1.0, np.abs(g_fd).max())
    div = np.trace(ex.grad_u(x), axis1=-2, axis2=-1)
    assert np.abs(div).max() < 1e-10 * max(1.0, np.abs(ex.grad_u(x)).max())


def test_stokes_momentum_residual(rng):
    nu = 1e-3
    ex = builtin_case("stokes-sinusoidal").exact(nu)
    x = interior_points(rng, 30, 0.0, 1.0, 2)
    res = -nu * fd_laplacian(ex.u, x) + fd_scalar_grad(ex.p, x) - ex.f(x)
    assert np.abs(res).max() < 1e-5


def test_oseen_momentum_residual(rng):
    nu = 1e-4
    case = builtin_case("oseen-exponential")
    ex = case.exact(nu)
    x = interior_points(rng, 30, 0.0, 1.0, 2)
    conv = np.einsum("nij,j->ni", ex.grad_u(x), case.b)
    res = (-nu * fd_laplacian(ex.u, x) + conv
           + fd_scalar_grad(ex.p, x) - ex.f(x))
    assert np.abs(res).max() < 1e-5


def test_kovasznay_is_navier_stokes_solution(rng):
    nu = 1e-3
    ex = builtin_case("kovasznay").exact(nu)
    lam = kovasznay_lambda(nu)
    # The root satisfies lam^2 - lam/nu = 4 pi^2.
    assert abs(lam * lam - lam / nu - 4 * math.pi ** 2) < 1e-6 * abs(lam / nu)
    x = interior_points(rng, 30, 0.1, 1.2, 2)
    u = ex.u(x)
    conv = np.einsum("nij,nj->ni", ex.grad_u(x), u)
    res = -nu * fd_laplacian(ex.u, x) + conv + fd_scalar_grad(ex.p, x)
    assert np.abs(res).max() < 1e-3 * max(1.0, np.abs(conv).max())


def test_potential3d_is_navier_stokes_solution(rng):
    ex = builtin_case("potential3d").exact(1e-5)
    x = interior_points(rng, 30, 0.0, 1.0, 3)
    # u is harmonic and irrotational; (u.grad)u + grad p = 0 exactly.
    assert np.abs(fd_laplacian(ex.u, x)).max() < 1e-5
    conv = np.einsum("nij,nj->ni", ex.grad_u(x), ex.u(x))
    res = conv + fd_scalar_grad(ex.p, x)
    assert np.abs(res).max() < 1e-5


def test_potential2d_is_unsteady_euler_solution(rng):
    ex = builtin_case("potential2d").exact(1e-6)
    assert ex.time_dependent
    x = interior_points(rng, 30, -0.5, 0.5, 2)
    t = 0.7
    dt = 1e-6
    dudt = (ex.u(x, t + dt) - ex.u(x, t - dt)) / (2 * dt)
    conv = np.einsum("nij,nj->ni", ex.grad_u(x, t), ex.u(x, t))
    gp = fd_scalar_grad(lambda y: ex.p(y, t), x)
    # The velocity is harmonic, so the viscous term vanishes for every nu.
    assert np.abs(fd_laplacian(lambda y: ex.u(y, t), x)).max() < 1e-4
    res = dudt + conv + gp
    assert np.abs(res).max() < 1e-4 * max(1.0, np.abs(conv).max())


# -- error norms --------------------------------------------------------------

def test_zero_error_for_exact_affine_field(mesh2d):
    class Affine:
        def u(self, x):
            return np.stack([x[..., 1], x[..., 0]], axis=-1)

        def grad_u(self, x):
            g = np.zeros(x.shape[:-1] + (2, 2))
            g[..., 0, 1] = 1.0
            g[..., 1, 0] = 1.0
            return g

        def p(self, x):
            return np.zeros(x.shape[:-1])

    ex = Affine()
    lay = DofLayout(mesh2d)
    u = BRField(nodal_interpolate(ex.u, mesh2d),
                FeField("bubble", mesh2d, np.zeros(lay.n_bubble), lay))
    el2, eh1 = velocity_errors(ex, u)
    assert el2 < 1e-13 and eh1 < 1e-13
    p = FeField("pressure_p0", mesh2d, np.zeros(mesh2d.n_cells))
    assert pressure_error(ex, p) < 1e-13


def test_velocity_error_constant_offset(mesh2d):
    """u_h = exact + constant c gives L2 error |c| sqrt(|Omega|), H1 zero."""
    class Zero:
        u = staticmethod(lambda x: np.zeros(x.shape[:-1] + (2,)))
        grad_u = staticmethod(lambda x: np.zeros(x.shape[:-1] + (2, 2)))
        p = staticmethod(lambda x: np.zeros(x.shape[:-1]))

    lay = DofLayout(mesh2d)
    c = np.array([0.3, -0.4])
    u = BRField(FeField("vector_p1", mesh2d,
                        np.tile(c, (mesh2d.n_vertices, 1))),
                FeField("bubble", mesh2d, np.zeros(lay.n_bubble), lay))
    el2, eh1 = velocity_errors(Zero(), u)
    assert abs(el2 - np.linalg.norm(c) * math.sqrt(mesh2d.volumes.sum())) < 1e-12
    assert eh1 < 1e-13


def test_pressure_error_gauge_invariant(mesh2d, rng):
    """Shifting the discrete pressure by a constant must not change the
    error (both sides are normalized to zero mean)."""
    ex = builtin_case("stokes-sinusoidal").exact(1.0)
    vals = rng.normal(size=mesh2d.n_cells)
    p1 = FeField("pressure_p0", mesh2d, vals)
    p2 = FeField("pressure_p0", mesh2d, vals + 17.0)
    assert abs(pressure_error(ex, p1) - pressure_error(ex, p2)) < 1e-12


# -- registry and drivers -----------------------------------------------------

def test_builtin_cases_constructible():
    for cid in CASE_IDS:
        case = builtin_case(cid)
        assert case.case_id == cid
    with pytest.raises(KeyError):
        builtin_case("nope")


def test_case_mesh_sizes():
    assert builtin_case("potential2d").mesh_factory(1).n_cells == 2048
    assert builtin_case("kovasznay").mesh_factory(2).n_cells == 512
    assert builtin_case("stokes-sinusoidal").mesh_factory(1).n_cells == 2 * 8 * 8
    assert builtin_case("potential3d").mesh_factory(1).n_cells == 6 * 8 ** 3


def test_solve_case_rejects_td():
    case = builtin_case("potential2d")
    with pytest.raises(ValueError):
        solve_case(case, "td1", 1.0, 1)


def test_run_convergence_rows():
    case = builtin_case("stokes-sinusoidal")
    recs = run_convergence(case, "robust", nu_values=(1.0,), levels=2)
    assert [r.level for r in recs] == [1, 2]
    assert recs[0].order_u is None and recs[1].order_u is not None
    assert 1.5 < recs[1].order_u < 2.5        # O(h^2) velocity
    assert 0.5 < recs[1].order_p < 1.8        # O(h) pressure
    for r in recs:
        assert r.status == "ok"
        assert r.ndof > 0 and np.isfinite(r.err_u_l2)


def test_run_unsteady_small_case():
    base = builtin_case("potential2d")
    case = BenchmarkCase(
        "potential2d", "td", 2,
        lambda level: uniform_rectangle_mesh((-0.5, 0.5), (-0.5, 0.5),
                                             8, 8, "alternating"),
        base.exact_factory, nu_values=(1.0,), tau=0.25, t_end=0.5)
    recs = run_unsteady(case, "td1", 1.0, record_times=(0.25, 0.5))
    assert [r.t for r in recs] == [0.25, 0.5]
    for r in recs:
        assert r.status in ("ok", "converged")
        assert np.isfinite(r.err_u_l2) and r.err_u_l2 < 1.0


def test_record_formatting_and_csv(tmp_path):
    rec = ErrorRecord(case="c", scheme="s", level=1, ndof=10, nu=1e-3,
                      t=None, err_u_l2=0.123456789, err_u_h1=float("nan"),
                      err_p_l2=1.0, order_u=None, order_p=2.0,
                      picard_iters=3, status="ok")
    row = rec.as_row()
    assert row[CSV_HEADER.index("err_u_l2")] == "0.123457"   # 6 sig digits
    assert row[CSV_HEADER.index("err_u_h1")] == "nan"
    assert row[CSV_HEADER.index("t")] == ""
    assert row[CSV_HEADER.index("order_u")] == ""
    path = tmp_path / "out.csv"
    write_csv(path, [rec])
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert rows[1] == row


def test_failed_solve_becomes_flagged_row(monkeypatch):
    case = builtin_case("stokes-sinusoidal")

    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(bench, "solve_stokes", boom)
    recs = run_convergence(case, "robust", nu_values=(1.0,), levels=1)
    assert len(recs) == 1
    assert recs[0].status == "failed:RuntimeError"
    assert math.isnan(recs[0].err_u_l2)
