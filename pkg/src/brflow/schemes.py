"""Block saddle-point systems, static condensation, and the solvers.

Scheme variants
---------------
Stokes:   "robust" (modified form + postprocessed load), "plain" (modified
          form, plain load), "unmodified" (true gradient form + postprocessed
          load; baseline, solved without condensation).
Oseen:    "eafe" (stabilized), "eafe-nostab", "classical".
Navier-Stokes: "eafe" (Picard on the cellwise mean of the linear part),
          "classical" (Picard on the full previous iterate).
Unsteady: "td1" (lumped mass), "td2" (lumped mass with postprocessed test
          bubbles), "classical" (exact postprocessed mass).
"""

import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forms
from .fespace import (BRField, DofLayout, FeField, nodal_interpolate,
                      p0_project, zero_mean_pressure)
from .forms import ConvectionField
from .mesh import SimplicialMesh


class SolverError(Exception):
    pass


@dataclass
class SolverReport:
    scheme: str
    n_cells: int
    ndof: int
    picard_iters: int = 0
    increments: list = field(default_factory=list)
    status: str = "ok"
    linear_residual: float = 0.0
    wall_time: float = 0.0

    @property
    def final_increment(self) -> float:
        return self.increments[-1] if self.increments else 0.0

    @property
    def converged(self) -> bool:
        return self.status in ("ok", "converged")


@dataclass
class BlockSaddleSystem:
    """Blocks of the 3x3 saddle system in unknown order (bubble, linear,
    pressure).  A_bb is a 1-D diagonal when the scheme condenses, else a
    sparse matrix.  The pressure row is (A_bp^T, A_lp^T) with rhs G_p."""

    A_bb: object
    A_bl: sp.csr_matrix
    A_lb: sp.csr_matrix
    A_ll: sp.csr_matrix
    A_bp: sp.csr_matrix
    A_lp: sp.csr_matrix
    F_b: np.ndarray
    F_l: np.ndarray
    G_p: np.ndarray
    layout: DofLayout

    @property
    def diagonal_bubble(self) -> bool:
        return isinstance(self.A_bb, np.ndarray)


def _pin_solve(K: sp.spmatrix, rhs: np.ndarray, n_u: int, n_p: int):
    """Solve with pressure dof 0 pinned to zero (row/col removed)."""
    keep = np.concatenate([np.arange(n_u), n_u + 1 + np.arange(n_p - 1)])
    K = K.tocsr()[keep][:, keep].tocsc()
    b = rhs[keep]
    x = spla.spsolve(K, b)
    if not np.all(np.isfinite(x)):
        raise SolverError("direct solve produced non-finite entries")
    nb = np.linalg.norm(b)
    res = np.linalg.norm(K @ x - b) / (nb if nb > 0 else 1.0)
    full = np.zeros(n_u + n_p)
    full[:n_u] = x[:n_u]
    full[n_u + 1:] = x[n_u:]
    return full[:n_u], full[n_u:], res


def condense(system: BlockSaddleSystem):
    """Static condensation of the diagonal bubble block.

    Returns (blocks of the reduced 2x2 system, rhs pair, recovery closure
    mapping (U_l, P) -> U_b).
    """
    if not system.diagonal_bubble:
        raise SolverError("bubble block is not diagonal; condensation unavailable")
    dbb = system.A_bb
    if np.any(dbb == 0.0):
        f = int(np.argmax(dbb == 0.0))
        raise SolverError(f"zero bubble diagonal entry at interior face index {f}")
    dinv = sp.diags(1.0 / dbb)
    A_lb_dinv = (system.A_lb @ dinv).tocsr()
    A_pb_dinv = (system.A_bp.T @ dinv).tocsr()
    A_ll = system.A_ll - A_lb_dinv @ system.A_bl
    A_lp = system.A_lp - A_lb_dinv @ system.A_bp
    A_pl = system.A_lp.T - A_pb_dinv @ system.A_bl
    A_pp = -A_pb_dinv @ system.A_bp
    rhs_l = system.F_l - A_lb_dinv @ system.F_b
    rhs_p = system.G_p - A_pb_dinv @ system.F_b

    def recover(U_l, P):
        return (system.F_b - system.A_bl @ U_l - system.A_bp @ P) / dbb

    return (A_ll, A_lp, A_pl, A_pp), (rhs_l, rhs_p), recover


def solve_system(system: BlockSaddleSystem, condensed: Optional[bool] = None):
    """Solve the block system; returns (U_b, U_l, P, residual)."""
    n_b = system.layout.n_bubble
    n_l = system.A_ll.shape[0]
    n_p = system.layout.n_pressure
    if condensed is None:
        condensed = system.diagonal_bubble
    if condensed:
        (A_ll, A_lp, A_pl, A_pp), (rhs_l, rhs_p), recover = condense(system)
        K = sp.bmat([[A_ll, A_lp], [A_pl, A_pp]], format="csr")
        rhs = np.concatenate([rhs_l, rhs_p])
        U_l, P, res = _pin_solve(K, rhs, n_l, n_p)
        U_b = recover(U_l, P)
        return U_b, U_l, P, res
    A_bb = sp.diags(system.A_bb) if system.diagonal_bubble else system.A_bb
    K = sp.bmat([
        [A_bb, system.A_bl, system.A_bp],
        [system.A_lb, system.A_ll, system.A_lp],
        [system.A_bp.T, system.A_lp.T, None],
    ], format="csr")
    rhs = np.concatenate([system.F_b, system.F_l, system.G_p])
    x, P, res = _pin_solve(K, rhs, n_b + n_l, n_p)
    return x[:n_b], x[n_b:], P, res


class Discretization:
    """Caches mesh-dependent matrices shared by all schemes on one mesh."""

    def __init__(self, mesh: SimplicialMesh, eps: float = 1e-10):
        self.mesh = mesh
        self.layout = DofLayout(mesh)
        self.eps = eps
        nv = mesh.n_vertices
        self.lin_int = self.layout.linear_full_indices(True)
        self.lin_bnd = self.layout.linear_full_indices(False)

    # -- cached assembly ------------------------------------------------------

    @cached_property
    def stiffness_vec(self):
        return forms.vector_stiffness(self.mesh)

    @cached_property
    def bubble_diag(self):
        return forms.bubble_diag(self.mesh, self.layout)

    @cached_property
    def bubble_grad_full(self):
        return forms.bubble_grad_full(self.mesh, self.layout)

    @cached_property
    def grad_coupling(self):
        return forms.grad_coupling(self.mesh, self.layout)

    @cached_property
    def div_linear(self):
        return forms.divergence_linear(self.mesh)

    @cached_property
    def div_bubble(self):
        return forms.divergence_bubble(self.mesh, self.layout)

    @cached_property
    def lumped_mass_vec(self):
        return forms.lumped_mass_vector(self.mesh)

    @cached_property
    def lumped_mass_bl(self):
        return forms.lumped_mass_bubble_linear(self.mesh, self.layout)

    @cached_property
    def lumped_mass_bb_diag(self):
        return forms.lumped_mass_bubble_diag(self.mesh, self.layout)

    @cached_property
    def lumped_mass_bl_pp(self):
        return forms.lumped_mass_bubble_linear_pp(self.mesh, self.layout)

    @cached_property
    def lumped_mass_bb_pp_diag(self):
        m = forms.lumped_mass_bubble_pp(self.mesh, self.layout)
        off = m - sp.diags(m.diagonal())
        if off.nnz and abs(off).max() > 1e-12 * max(1.0, abs(m.diagonal()).max()):
            raise SolverError("postprocessed bubble lumped mass is not diagonal")
        return m.diagonal()

    @cached_property
    def mass_pp_blocks(self):
        return forms.postprocessed_mass_blocks(self.mesh, self.layout)

    @property
    def ndof(self) -> int:
        return self.layout.n_condensed

    # -- helpers --------------------------------------------------------------

    def boundary_values(self, g, t=None) -> FeField:
        """Vector P1 field with g at boundary vertices, zero inside."""
        mesh = self.mesh
        vals = np.zeros((mesh.n_vertices, mesh.dim))
        if g is not None:
            bverts = mesh.vertices[mesh.boundary_vertex]
            gv = np.asarray(g(bverts) if t is None else g(bverts, t), float)
            vals[mesh.boundary_vertex] = gv
        return FeField("vector_p1", mesh, vals)

    def _lift(self, vals: FeField) -> np.ndarray:
        """Component-major coefficient vector over all vertices."""
        return vals.coeffs.T.ravel()

    def restrict(self, A_bb, A_bl_full, A_lb_full, A_ll_full,
                 F_b, F_l_full, gfull) -> BlockSaddleSystem:
        """Restrict full-vertex blocks to interior unknowns, moving the
        Dirichlet columns to the right-hand side."""
        I, B = self.lin_int, self.lin_bnd
        gB = gfull[B]
        A_ll_rows = A_ll_full[I]
        F_l = F_l_full[I] - A_ll_rows[:, B] @ gB
        F_b = F_b - A_bl_full[:, B] @ gB
        Dl = self.div_linear
        G_p = Dl[:, B] @ gB
        return BlockSaddleSystem(
            A_bb=A_bb,
            A_bl=A_bl_full[:, I].tocsr(),
            A_lb=A_lb_full[I].tocsr(),
            A_ll=A_ll_rows[:, I].tocsr(),
            A_bp=(-self.div_bubble.T).tocsr(),
            A_lp=(-Dl[:, I].T).tocsr(),
            F_b=F_b,
            F_l=F_l,
            G_p=G_p,
            layout=self.layout,
        )

    def make_fields(self, U_b, U_l, P, gfield: FeField):
        mesh = self.mesh
        lin = gfield.coeffs.copy()
        nv = mesh.n_vertices
        for j in range(mesh.dim):
            lin[self.layout.interior_vertices, j] = U_l[
                j * self.layout.n_interior_vertices:(j + 1) * self.layout.n_interior_vertices]
        u = BRField(FeField("vector_p1", mesh, lin),
                    FeField("bubble", mesh, U_b.copy(), self.layout))
        p = FeField("pressure_p0", mesh, zero_mean_pressure(P, mesh))
        return u, p

    def divergence_residuals(self, u: BRField) -> np.ndarray:
        """Cellwise weak divergence (div u_h, 1)_T of a BR field."""
        return (self.div_linear @ self._lift(u.linear)
                + self.div_bubble @ u.bubble.coeffs)


# -- linear solves ------------------------------------------------------------

def _stokes_blocks(disc: Discretization, nu: float, variant: str):
    if variant in ("robust", "plain"):
        A_bb = nu * disc.bubble_diag
    elif variant == "unmodified":
        A_bb = (nu * disc.bubble_grad_full).tocsr()
    else:
        raise ValueError(f"unknown Stokes variant {variant!r}")
    A_bl = (nu * disc.grad_coupling).tocsr()
    A_lb = A_bl.T.tocsr()
    A_ll = (nu * disc.stiffness_vec).tocsr()
    return A_bb, A_bl, A_lb, A_ll


def _stokes_loads(disc: Discretization, f, variant: str, t=None):
    mesh, layout = disc.mesh, disc.layout
    if f is None:
        return np.zeros(layout.n_bubble), np.zeros(mesh.dim * mesh.n_vertices)
    F_l = forms.load_linear(mesh, f, t=t)
    if variant == "plain":
        F_b = _plain_bubble_load(mesh, layout, f, t=t)
    else:
        F_b = forms.load_bubble(mesh, layout, f, t=t)
    return F_b, F_l


def _plain_bubble_load(mesh, layout, f, t=None):
    """(f, phi_F n_F) without BDM postprocessing (the non-robust load)."""
    from .fespace import bubble_values
    from .quadrature import physical_points, simplex_rule
    bary, w = simplex_rule(mesh.dim, 4)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    fv = np.asarray(f(pts) if t is None else f(pts, t), float)
    out = np.zeros(layout.n_bubble)
    for k in range(mesh.dim + 1):
        b = layout.face_map[mesh.cell_faces[:, k]]
        sel = b >= 0
        phi = bubble_values(mesh, k, bary)
        n = mesh.face_normals[mesh.cell_faces[sel, k]]
        fn = np.einsum("sqd,sd->sq", fv[sel], n)
        val = mesh.volumes[sel] * np.einsum("q,q,sq->s", w, phi, fn)
        np.add.at(out, b[sel], val)
    return out


def solve_stokes(mesh, nu, f, g=None, variant="robust",
                 disc: Optional[Discretization] = None):
    """Solve the Stokes problem with the chosen scheme variant."""
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    t0 = time.perf_counter()
    disc = disc or Discretization(mesh)
    A_bb, A_bl, A_lb, A_ll = _stokes_blocks(disc, nu, variant)
    F_b, F_l = _stokes_loads(disc, f, variant)
    gfield = disc.boundary_values(g)
    sys_ = disc.restrict(A_bb, A_bl, A_lb, A_ll, F_b, F_l, disc._lift(gfield))
    U_b, U_l, P, res = solve_system(sys_)
    u, p = disc.make_fields(U_b, U_l, P, gfield)
    report = SolverReport(scheme=f"stokes-{variant}", n_cells=mesh.n_cells,
                          ndof=disc.ndof, linear_residual=res,
                          wall_time=time.perf_counter() - t0)
    return u, p, report


def _oseen_blocks(disc: Discretization, nu: float, conv: ConvectionField,
                  variant: str):
    mesh, layout = disc.mesh, disc.layout
    if variant in ("eafe", "eafe-nostab"):
        A_bb = nu * disc.bubble_diag
        A_ll = (nu * disc.stiffness_vec + forms.eafe_vector(mesh, conv)).tocsr()
        A_bl = nu * disc.grad_coupling
        if variant == "eafe":
            A_bl = A_bl + forms.conv_stab(mesh, layout, conv)
        A_lb = (nu * disc.grad_coupling.T).tocsr()
        return A_bb, A_bl.tocsr(), A_lb, A_ll
    if variant == "classical":
        K_ll, K_lb, K_bl, K_bb = forms.classical_convection_blocks(
            mesh, layout, conv.values)
        A_bb = (nu * disc.bubble_grad_full + K_bb).tocsr()
        A_bl = (nu * disc.grad_coupling + K_bl).tocsr()
        A_lb = (nu * disc.grad_coupling.T + K_lb).tocsr()
        A_ll = (nu * disc.stiffness_vec + K_ll).tocsr()
        return A_bb, A_bl, A_lb, A_ll
    raise ValueError(f"unknown Oseen variant {variant!r}")


def solve_oseen(mesh, nu, b, f, g=None, variant="eafe", eps=1e-10,
                disc: Optional[Discretization] = None):
    """Solve the Oseen problem with convective field b (constant or (nc, d))."""
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    t0 = time.perf_counter()
    disc = disc or Discretization(mesh, eps=eps)
    b = np.asarray(b, dtype=float)
    conv = (ConvectionField(b, eps) if b.ndim == 2
            else ConvectionField.constant(b, mesh, eps))
    A_bb, A_bl, A_lb, A_ll = _oseen_blocks(disc, nu, conv, variant)
    F_b, F_l = _stokes_loads(disc, f, "robust")
    gfield = disc.boundary_values(g)
    sys_ = disc.restrict(A_bb, A_bl, A_lb, A_ll, F_b, F_l, disc._lift(gfield))
    U_b, U_l, P, res = solve_system(sys_)
    u, p = disc.make_fields(U_b, U_l, P, gfield)
    report = SolverReport(scheme=f"oseen-{variant}", n_cells=mesh.n_cells,
                          ndof=disc.ndof, linear_residual=res,
                          wall_time=time.perf_counter() - t0)
    return u, p, report


# -- Picard iteration ---------------------------------------------------------

@dataclass
class PicardControls:
    tol: float = 1e-6
    max_iter: int = 50
    divergence_streak: int = 5


def _picard_loop(solve_step, x0, controls: PicardControls):
    """Generic fixed-point driver on the condensed unknown vector.

    solve_step(state) -> (x, state); iterates until the relative increment
    drops below tol, max_iter is hit, or the increment grows for
    `divergence_streak` consecutive iterations.
    """
    increments = []
    state = x0
    x_prev = None
    growth = 0
    status = "maxiter"
    for it in range(1, controls.max_iter + 1):
        x, state = solve_step(state)
        if x_prev is not None:
            denom = np.linalg.norm(x_prev)
            inc = np.linalg.norm(x - x_prev) / (denom if denom > 0 else 1.0)
            increments.append(inc)
            if inc < controls.tol:
                status = "converged"
                x_prev = x
                break
            if len(increments) >= 2 and inc > increments[-2]:
                growth += 1
                if growth >= controls.divergence_streak:
                    status = "diverged"
                    x_prev = x
                    break
            else:
                growth = 0
        x_prev = x
    return state, increments, status, it


def solve_navier_stokes(mesh, nu, f, g=None, variant="eafe", eps=1e-10,
                        controls: Optional[PicardControls] = None,
                        disc: Optional[Discretization] = None):
    """Stationary Navier-Stokes via Picard linearization of the convection."""
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    t0 = time.perf_counter()
    disc = disc or Discretization(mesh, eps=eps)
    controls = controls or PicardControls()
    gfield = disc.boundary_values(g)
    gfull = disc._lift(gfield)
    stokes_variant = "robust" if variant == "eafe" else "unmodified"
    u0, p0, _ = solve_stokes(mesh, nu, f, g, variant=stokes_variant, disc=disc)
    F_b, F_l = _stokes_loads(disc, f, "robust")

    result = {}

    def step(u_prev):
        if variant == "eafe":
            bvals = p0_project(u_prev.linear, mesh)
            conv = ConvectionField(bvals, eps)
            blocks = _oseen_blocks(disc, nu, conv, "eafe")
        else:
            K_ll, K_lb, K_bl, K_bb = forms.classical_convection_blocks(
                mesh, disc.layout, u_prev)
            blocks = ((nu * disc.bubble_grad_full + K_bb).tocsr(),
                      (nu * disc.grad_coupling + K_bl).tocsr(),
                      (nu * disc.grad_coupling.T + K_lb).tocsr(),
                      (nu * disc.stiffness_vec + K_ll).tocsr())
        sys_ = disc.restrict(*blocks, F_b.copy(), F_l.copy(), gfull)
        U_b, U_l, P, res = solve_system(sys_)
        u, p = disc.make_fields(U_b, U_l, P, gfield)
        result.update(u=u, p=p, res=res)
        return np.concatenate([U_l, P]), u

    _, increments, status, iters = _picard_loop(step, u0, controls)
    report = SolverReport(scheme=f"ns-{variant}", n_cells=mesh.n_cells,
                          ndof=disc.ndof, picard_iters=iters,
                          increments=increments, status=status,
                          linear_residual=result["res"],
                          wall_time=time.perf_counter() - t0)
    return result["u"], result["p"], report


# -- time stepping ------------------------------------------------------------

def _td_mass_blocks(disc: Discretization, scheme: str):
    """(M_bb, M_bl, M_lb, M_ll) trial-column-full mass blocks per scheme."""
    if scheme == "td1":
        return (disc.lumped_mass_bb_diag, disc.lumped_mass_bl,
                disc.lumped_mass_bl.T.tocsr(), disc.lumped_mass_vec)
    if scheme == "td2":
        return (disc.lumped_mass_bb_pp_diag, disc.lumped_mass_bl_pp,
                disc.lumped_mass_bl.T.tocsr(), disc.lumped_mass_vec)
    if scheme == "classical":
        M_ll, M_bl, M_bb = disc.mass_pp_blocks
        return M_bb.tocsr(), M_bl, M_bl.T.tocsr(), M_ll
    raise ValueError(f"unknown time scheme {scheme!r}")


def step_unsteady(disc: Discretization, u_prev: BRField, tau: float, t_n: float,
                  nu: float, f=None, g=None, scheme: str = "td1",
                  controls: Optional[PicardControls] = None):
    """One backward-Euler step of the chosen time-dependent scheme.

    Picard-linearizes the convection within the step, starting from the
    previous time-step solution.  Returns (u, p, report).
    """
    if tau <= 0:
        raise ValueError(f"time step must be positive, got {tau}")
    t0 = time.perf_counter()
    mesh, layout = disc.mesh, disc.layout
    controls = controls or PicardControls()
    M_bb, M_bl, M_lb, M_ll = _td_mass_blocks(disc, scheme)
    gfield = disc.boundary_values(g, t=t_n)
    gfull = disc._lift(gfield)
    uprev_lin = disc._lift(u_prev.linear)
    uprev_bub = u_prev.bubble.coeffs
    # Mass terms applied to the full previous field.
    rhs_mass_b = (M_bb * uprev_bub if isinstance(M_bb, np.ndarray)
                  else M_bb @ uprev_bub) + M_bl @ uprev_lin
    rhs_mass_l = M_lb @ uprev_bub + M_ll @ uprev_lin
    if f is not None:
        F_b0 = tau * forms.load_bubble(mesh, layout, f, t=t_n) + rhs_mass_b
        F_l0 = tau * forms.load_linear(mesh, f, t=t_n) + rhs_mass_l
    else:
        F_b0, F_l0 = rhs_mass_b, rhs_mass_l

    result = {}

    def step(u_k):
        if scheme in ("td1", "td2"):
            conv = ConvectionField(p0_project(u_k.linear, mesh), disc.eps)
            A_bb = M_bb + tau * nu * disc.bubble_diag
            A_bl = (tau * (nu * disc.grad_coupling
                           + forms.conv_stab(mesh, layout, conv)) + M_bl).tocsr()
            A_lb = (tau * nu * disc.grad_coupling.T + M_lb).tocsr()
            A_ll = (tau * (nu * disc.stiffness_vec
                           + forms.eafe_vector(mesh, conv)) + M_ll).tocsr()
        else:
            K_ll, K_lb, K_bl, K_bb = forms.classical_convection_blocks(
                mesh, layout, u_k)
            A_bb = (tau * (nu * disc.bubble_grad_full + K_bb) + M_bb).tocsr()
            A_bl = (tau * (nu * disc.grad_coupling + K_bl) + M_bl).tocsr()
            A_lb = (tau * (nu * disc.grad_coupling.T + K_lb) + M_lb).tocsr()
            A_ll = (tau * (nu * disc.stiffness_vec + K_ll) + M_ll).tocsr()
        sys_ = disc.restrict(A_bb, A_bl, A_lb, A_ll,
                             F_b0.copy(), F_l0.copy(), gfull)
        # Scale the pressure blocks and constraint by tau as in the scheme.
        sys_.A_bp = (tau * sys_.A_bp).tocsr()
        sys_.A_lp = (tau * sys_.A_lp).tocsr()
        sys_.G_p = tau * sys_.G_p
        U_b, U_l, P, res = solve_system(sys_)
        u, p = disc.make_fields(U_b, U_l, P, gfield)
        result.update(u=u, p=p, res=res)
        return np.concatenate([U_l, P]), u

    _, increments, status, iters = _picard_loop(step, u_prev, controls)
    report = SolverReport(scheme=f"td-{scheme}", n_cells=mesh.n_cells,
                          ndof=disc.ndof, picard_iters=iters,
                          increments=increments, status=status,
                          linear_residual=result["res"],
                          wall_time=time.perf_counter() - t0)
    return result["u"], result["p"], report
