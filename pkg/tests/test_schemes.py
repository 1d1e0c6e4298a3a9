import numpy as np
import pytest

import brflow.schemes as schemes
from brflow.fespace import BRField, DofLayout
from brflow.mesh import uniform_rectangle_mesh
from brflow.schemes import (Discretization, PicardControls, SolverError,
                            solve_navier_stokes, solve_oseen, solve_stokes,
                            solve_system, step_unsteady)


def sinusoidal(nu):
    """Divergence-free manufactured Stokes solution on the unit square."""
    def u(x):
        s, c = np.sin(np.pi * x[..., 0]), np.cos(np.pi * x[..., 0])
        t, ct = np.sin(np.pi * x[..., 1]), np.cos(np.pi * x[..., 1])
        return np.stack([s * s * t * ct, -s * c * t * t], axis=-1)

    def p(x):
        return np.sin(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1])

    def f(x):
        pi = np.pi
        x1, x2 = x[..., 0], x[..., 1]
        s1, c1 = np.sin(pi * x1), np.cos(pi * x1)
        s2, c2 = np.sin(pi * x2), np.cos(pi * x2)
        lap1 = pi ** 2 * (2 * (c1 * c1 - s1 * s1) * s2 * c2 - 4 * s1 * s1 * s2 * c2)
        lap2 = -pi ** 2 * (2 * s1 * c1 * (c2 * c2 - s2 * s2) - 4 * s1 * c1 * s2 * s2)
        gp1 = pi * c1 * c2
        gp2 = -pi * s1 * s2
        return np.stack([-nu * lap1 + gp1, -nu * lap2 + gp2], axis=-1)

    return u, p, f


def _field_vec(u, p):
    return np.concatenate([u.linear.coeffs.ravel(), u.bubble.coeffs, p.coeffs])


# -- basic sanity -------------------------------------------------------------

def test_zero_data_gives_zero(mesh2d):
    u, p, rep = solve_stokes(mesh2d, 1.0, None)
    assert np.abs(u.linear.coeffs).max() == 0.0
    assert np.abs(u.bubble.coeffs).max() == 0.0
    assert np.abs(p.coeffs).max() < 1e-14
    assert rep.status == "ok"


def test_ndof_invariant(mesh):
    disc = Discretization(mesh)
    lay = DofLayout(mesh)
    assert disc.ndof == mesh.dim * lay.n_interior_vertices + mesh.n_cells
    _, _, rep = solve_stokes(mesh, 1.0, None, disc=disc)
    assert rep.ndof == disc.ndof


def test_invalid_parameters(mesh2d):
    with pytest.raises(ValueError):
        solve_stokes(mesh2d, 0.0, None)
    with pytest.raises(ValueError):
        solve_oseen(mesh2d, -1.0, [1.0, 0.0], None)
    with pytest.raises(ValueError):
        solve_stokes(mesh2d, 1.0, None, variant="bogus")
    disc = Discretization(mesh2d)
    u0 = BRField.zero(mesh2d, disc.layout)
    with pytest.raises(ValueError):
        step_unsteady(disc, u0, 0.0, 0.1, 1.0)


def test_affine_solution_reproduced(mesh2d):
    """u = (y, x), p = 0 solves Stokes with f = 0; the discrete space
    contains it, so the solver must reproduce it to solver precision."""
    g = lambda x: x[..., ::-1].copy()
    u, p, rep = solve_stokes(mesh2d, 1.0, None, g=g)
    assert np.abs(u.linear.coeffs - g(mesh2d.vertices)).max() < 1e-10
    assert np.abs(u.bubble.coeffs).max() < 1e-10
    assert np.abs(p.coeffs).max() < 1e-9
    assert rep.linear_residual < 1e-10


def test_pressure_robust_gradient_forcing(mesh2d):
    """f = grad(phi) is a pure gradient: the robust scheme returns zero
    velocity regardless of nu (the BDM load sees only the pressure)."""
    f = lambda x: np.stack([3 * x[..., 0] ** 2, np.zeros(x.shape[:-1])], axis=-1)
    for nu in (1.0, 1e-6):
        u, p, _ = solve_stokes(mesh2d, nu, f)
        # Zero up to direct-solver roundoff amplified by the 1/nu scaling;
        # a non-robust load would give O(1/nu) velocity here.
        assert np.abs(u.linear.coeffs).max() < 1e-8
        assert np.abs(u.bubble.coeffs).max() < 1e-8


def test_oseen_zero_wind_matches_stokes(mesh2d):
    ue, pe, fe = sinusoidal(1.0)
    u1, p1, _ = solve_stokes(mesh2d, 1.0, fe, g=ue)
    u2, p2, _ = solve_oseen(mesh2d, 1.0, [0.0, 0.0], fe, g=ue, eps=1e-12)
    # EAFE with zero wind adds eps * stiffness; difference is O(eps/nu).
    scale = np.abs(u1.linear.coeffs).max()
    assert np.abs(u1.linear.coeffs - u2.linear.coeffs).max() < 1e-9 * scale


# -- condensation -------------------------------------------------------------

def test_condense_requires_diagonal(mesh2d):
    disc = Discretization(mesh2d)
    A_bb, A_bl, A_lb, A_ll = schemes._stokes_blocks(disc, 1.0, "unmodified")
    gfield = disc.boundary_values(None)
    sys_ = disc.restrict(A_bb, A_bl, A_lb, A_ll,
                         np.zeros(disc.layout.n_bubble),
                         np.zeros(2 * mesh2d.n_vertices),
                         disc._lift(gfield))
    with pytest.raises(SolverError):
        schemes.condense(sys_)


@pytest.mark.parametrize("problem", ["stokes", "oseen", "td1"])
def test_condensed_vs_full_solutions(problem, mesh2d):
    """Static condensation changes the algebra, not the solution."""
    ue, pe, fe = sinusoidal(1e-2)
    disc = Discretization(mesh2d)

    def run():
        if problem == "stokes":
            return solve_stokes(mesh2d, 1e-2, fe, g=ue, disc=disc)
        if problem == "oseen":
            return solve_oseen(mesh2d, 1e-2, [1.0, 0.5], fe, g=ue, disc=disc)
        u0 = BRField.zero(mesh2d, disc.layout)
        return step_unsteady(disc, u0, 0.1, 0.1, 1e-2,
                             f=lambda x, t: fe(x), g=lambda x, t: ue(x))

    u1, p1, _ = run()
    orig = schemes.solve_system
    schemes.solve_system = lambda s, condensed=None: orig(s, condensed=False)
    try:
        u2, p2, _ = run()
    finally:
        schemes.solve_system = orig
    scale = max(1.0, np.abs(_field_vec(u1, p1)).max())
    diff = np.abs(_field_vec(u1, p1) - _field_vec(u2, p2)).max()
    assert diff <= 1e-9 * scale


# -- divergence constraint ----------------------------------------------------

@pytest.mark.parametrize("variant", ["robust", "plain"])
def test_weak_divergence_residual(variant, mesh2d):
    ue, pe, fe = sinusoidal(1.0)
    disc = Discretization(mesh2d)
    u, p, rep = solve_stokes(mesh2d, 1.0, fe, g=ue, variant=variant, disc=disc)
    res = disc.divergence_residuals(u)
    # Interior constraint rows are satisfied up to the boundary-data
    # correction; scale per cell by |T| and the velocity magnitude.
    scale = mesh2d.volumes * max(1.0, np.abs(u.linear.coeffs).max())
    assert np.abs(res / scale).max() < 1e-8


# -- Navier-Stokes ------------------------------------------------------------

@pytest.mark.parametrize("variant", ["eafe", "classical"])
def test_navier_stokes_converges_and_deterministic(variant, mesh2d):
    ue, pe, fe = sinusoidal(1.0)
    u1, p1, r1 = solve_navier_stokes(mesh2d, 1.0, fe, g=ue, variant=variant)
    u2, p2, r2 = solve_navier_stokes(mesh2d, 1.0, fe, g=ue, variant=variant)
    assert r1.status == "converged"
    assert r1.picard_iters == r2.picard_iters
    assert np.array_equal(_field_vec(u1, p1), _field_vec(u2, p2))
    # The nonlinear solution stays close to the Stokes one at nu = 1.
    us, ps, _ = solve_stokes(mesh2d, 1.0, fe, g=ue)
    assert np.abs(u1.linear.coeffs - us.linear.coeffs).max() < 0.5


def test_navier_stokes_zero_data(mesh2d):
    u, p, rep = solve_navier_stokes(mesh2d, 1.0, None)
    assert rep.status == "converged"
    assert np.abs(u.linear.coeffs).max() < 1e-12
    assert np.abs(p.coeffs).max() < 1e-12


def test_picard_maxiter_flagged(mesh2d):
    ue, pe, fe = sinusoidal(1e-3)
    controls = PicardControls(tol=1e-14, max_iter=3)
    _, _, rep = solve_navier_stokes(mesh2d, 1e-3, fe, g=ue, controls=controls)
    assert rep.status in ("maxiter", "diverged")
    assert rep.picard_iters == 3 or rep.status == "diverged"


# -- time stepping ------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["td1", "td2", "classical"])
def test_step_zero_initial_zero_data(scheme, mesh2d):
    disc = Discretization(mesh2d)
    u0 = BRField.zero(mesh2d, disc.layout)
    u, p, rep = step_unsteady(disc, u0, 0.1, 0.1, 1.0, scheme=scheme)
    assert rep.status == "converged"
    assert np.abs(u.linear.coeffs).max() < 1e-12
    assert np.abs(p.coeffs).max() < 1e-12


@pytest.mark.parametrize("scheme", ["td1", "td2", "classical"])
def test_step_decays_free_field(scheme, mesh2d, rng):
    """With zero forcing and boundary data the discrete energy of the
    velocity cannot grow across a backward-Euler step."""
    disc = Discretization(mesh2d)
    u0 = BRField.zero(mesh2d, disc.layout)
    u0.linear.coeffs[disc.layout.interior_vertices] = rng.normal(
        size=(disc.layout.n_interior_vertices, 2))
    u1, _, rep = step_unsteady(disc, u0, 0.05, 0.05, 1.0, scheme=scheme)
    assert rep.status == "converged"
    e0 = np.abs(u0.linear.coeffs).max()
    e1 = np.abs(u1.linear.coeffs).max()
    assert e1 < e0


def test_step_deterministic(mesh2d):
    ue, pe, fe = sinusoidal(1.0)
    disc = Discretization(mesh2d)
    u0 = BRField.zero(mesh2d, disc.layout)
    f = lambda x, t: fe(x)
    a = step_unsteady(disc, u0, 0.1, 0.1, 1.0, f=f, scheme="td1")
    b = step_unsteady(disc, u0, 0.1, 0.1, 1.0, f=f, scheme="td1")
    assert np.array_equal(_field_vec(a[0], a[1]), _field_vec(b[0], b[1]))
