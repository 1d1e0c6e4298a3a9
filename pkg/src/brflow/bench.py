"""Benchmark problems, error norms, and convergence tables.

Six built-in cases: a sinusoidal Stokes problem, two Oseen problems (an
exponential manufactured solution and a rotational-forcing problem without
an analytic solution), the Kovasznay flow, and 2D/3D potential flows.
Velocity errors are measured on the linear part of the BR field.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fespace import ExactSolution, nodal_interpolate, zero_mean_pressure
from .mesh import SimplicialMesh, quad_refine, uniform_box_mesh, uniform_rectangle_mesh
from .quadrature import physical_points, simplex_rule
from .schemes import (Discretization, PicardControls, SolverReport,
                      solve_navier_stokes, solve_oseen, solve_stokes,
                      step_unsteady)

CSV_HEADER = ["case", "scheme", "level", "ndof", "nu", "t",
              "err_u_l2", "err_u_h1", "err_p_l2",
              "order_u", "order_p", "picard_iters", "status"]


@dataclass
class BenchmarkCase:
    case_id: str
    kind: str                      # "stokes" | "oseen" | "ns" | "td"
    dim: int
    mesh_factory: Callable         # level (1-based) -> SimplicialMesh
    exact_factory: Optional[Callable]  # nu -> ExactSolution, or None
    nu_values: tuple
    b: Optional[np.ndarray] = None  # Oseen convective field
    forcing: Optional[Callable] = None  # used when no exact solution exists
    tau: float = 0.1
    t_end: float = 2.0
    default_levels: int = 1

    def exact(self, nu) -> Optional[ExactSolution]:
        return self.exact_factory(nu) if self.exact_factory else None


@dataclass
class ErrorRecord:
    case: str
    scheme: str
    level: int
    ndof: int
    nu: float
    t: Optional[float]
    err_u_l2: float
    err_u_h1: float
    err_p_l2: float
    order_u: Optional[float] = None
    order_p: Optional[float] = None
    picard_iters: int = 0
    status: str = "ok"

    def as_row(self):
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return "nan" if math.isnan(x) else f"{x:.6g}"
            return str(x)
        return [fmt(getattr(self, k if k != "case" else "case"))
                for k in ["case", "scheme", "level", "ndof", "nu", "t",
                          "err_u_l2", "err_u_h1", "err_p_l2",
                          "order_u", "order_p", "picard_iters", "status"]]


# -- exact solutions ----------------------------------------------------------

def _stokes_sinusoidal(nu) -> ExactSolution:
    pi = np.pi

    def u(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([-np.sin(pi * x1) ** 2 * np.sin(2 * pi * x2),
                         np.sin(2 * pi * x1) * np.sin(pi * x2) ** 2], axis=-1)

    def grad_u(x):
        x1, x2 = x[..., 0], x[..., 1]
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = -pi * np.sin(2 * pi * x1) * np.sin(2 * pi * x2)
        g[..., 0, 1] = -2 * pi * np.sin(pi * x1) ** 2 * np.cos(2 * pi * x2)
        g[..., 1, 0] = 2 * pi * np.cos(2 * pi * x1) * np.sin(pi * x2) ** 2
        g[..., 1, 1] = pi * np.sin(2 * pi * x1) * np.sin(2 * pi * x2)
        return g

    def p(x):
        return np.exp(x[..., 0] + x[..., 1]) - (np.e - 1.0) ** 2

    def lap_u(x):
        x1, x2 = x[..., 0], x[..., 1]
        l1 = (-2 * pi ** 2 * np.cos(2 * pi * x1) * np.sin(2 * pi * x2)
              + 4 * pi ** 2 * np.sin(pi * x1) ** 2 * np.sin(2 * pi * x2))
        l2 = (2 * pi ** 2 * np.cos(2 * pi * x2) * np.sin(2 * pi * x1)
              - 4 * pi ** 2 * np.sin(pi * x2) ** 2 * np.sin(2 * pi * x1))
        return np.stack([l1, l2], axis=-1)

    def f(x):
        gp = np.exp(x[..., 0] + x[..., 1])[..., None] * np.ones(2)
        return -nu * lap_u(x) + gp

    return ExactSolution(u=u, grad_u=grad_u, p=p, f=f)


def _oseen_exponential(nu, b=(10.0, 1.0)) -> ExactSolution:
    b = np.asarray(b, dtype=float)

    def u(x):
        return np.stack([np.exp(x[..., 1]), np.exp(x[..., 0])], axis=-1)

    def grad_u(x):
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 1] = np.exp(x[..., 1])
        g[..., 1, 0] = np.exp(x[..., 0])
        return g

    def p(x):
        return np.exp(x[..., 0] + x[..., 1]) - (np.e - 1.0) ** 2

    def f(x):
        e2, e1 = np.exp(x[..., 1]), np.exp(x[..., 0])
        gp = np.exp(x[..., 0] + x[..., 1])
        f1 = -nu * e2 + b[1] * e2 + gp
        f2 = -nu * e1 + b[0] * e1 + gp
        return np.stack([f1, f2], axis=-1)

    return ExactSolution(u=u, grad_u=grad_u, p=p, f=f)


def kovasznay_lambda(nu: float) -> float:
    return 1.0 / (2.0 * nu) - math.sqrt(1.0 / (4.0 * nu ** 2) + 4.0 * math.pi ** 2)


def _kovasznay(nu) -> ExactSolution:
    lam = kovasznay_lambda(nu)
    two_pi = 2.0 * math.pi

    def u(x):
        x1, x2 = x[..., 0], x[..., 1]
        e = np.exp(lam * x1)
        return np.stack([1.0 - e * np.cos(two_pi * x2),
                         lam / two_pi * e * np.sin(two_pi * x2)], axis=-1)

    def grad_u(x):
        x1, x2 = x[..., 0], x[..., 1]
        e = np.exp(lam * x1)
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = -lam * e * np.cos(two_pi * x2)
        g[..., 0, 1] = two_pi * e * np.sin(two_pi * x2)
        g[..., 1, 0] = lam ** 2 / two_pi * e * np.sin(two_pi * x2)
        g[..., 1, 1] = lam * e * np.cos(two_pi * x2)
        return g

    def p(x):
        x1 = x[..., 0]
        const = (math.exp(3 * lam) - math.exp(-lam)) / (8.0 * lam)
        return -0.5 * np.exp(2 * lam * x1) + const

    def f(x):
        return np.zeros(x.shape[:-1] + (2,))

    return ExactSolution(u=u, grad_u=grad_u, p=p, f=f)


def _potential_2d(nu) -> ExactSolution:
    # chi(x, t) = t^2 (5 x^4 y - 10 x^2 y^3 + y^5), harmonic in space.
    def psi_grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([20 * x1 ** 3 * x2 - 20 * x1 * x2 ** 3,
                         5 * x1 ** 4 - 30 * x1 ** 2 * x2 ** 2 + 5 * x2 ** 4],
                        axis=-1)

    def psi(x):
        x1, x2 = x[..., 0], x[..., 1]
        return 5 * x1 ** 4 * x2 - 10 * x1 ** 2 * x2 ** 3 + x2 ** 5

    def u(x, t):
        return t ** 2 * psi_grad(x)

    def grad_u(x, t):
        x1, x2 = x[..., 0], x[..., 1]
        hxx = 60 * x1 ** 2 * x2 - 20 * x2 ** 3
        hxy = 20 * x1 ** 3 - 60 * x1 * x2 ** 2
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = hxx
        g[..., 0, 1] = hxy
        g[..., 1, 0] = hxy
        g[..., 1, 1] = -hxx
        return t ** 2 * g

    def p(x, t):
        uu = u(x, t)
        return -0.5 * np.einsum("...d,...d->...", uu, uu) - 2 * t * psi(x)

    def f(x, t):
        return np.zeros(x.shape[:-1] + (2,))

    return ExactSolution(u=u, grad_u=grad_u, p=p, f=f, time_dependent=True)


def _potential_3d(nu) -> ExactSolution:
    def u(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([x2 * x3, x1 * x3, x1 * x2], axis=-1)

    def grad_u(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        z = np.zeros_like(x1)
        g = np.empty(x.shape[:-1] + (3, 3))
        g[..., 0, 0] = z; g[..., 0, 1] = x3; g[..., 0, 2] = x2
        g[..., 1, 0] = x3; g[..., 1, 1] = z; g[..., 1, 2] = x1
        g[..., 2, 0] = x2; g[..., 2, 1] = x1; g[..., 2, 2] = z
        return g

    def p(x):
        uu = u(x)
        return -0.5 * np.einsum("...d,...d->...", uu, uu)

    def f(x):
        return np.zeros(x.shape[:-1] + (3,))

    return ExactSolution(u=u, grad_u=grad_u, p=p, f=f)


def _rotational_forcing(x):
    return 10.0 * np.stack([-x[..., 1], x[..., 0]], axis=-1)


# -- case registry ------------------------------------------------------------

def _square_family(n0, pattern="right", lo=0.0, hi=1.0):
    def factory(level):
        n = n0 * 2 ** (level - 1)
        return uniform_rectangle_mesh((lo, hi), (lo, hi), n, n, pattern)
    return factory


def _kovasznay_family(level):
    mesh = uniform_rectangle_mesh((-0.5, 1.5), (0.0, 2.0), 8, 8, "right")
    for _ in range(level - 1):
        mesh = quad_refine(mesh)
    return mesh


def builtin_case(case_id: str) -> BenchmarkCase:
    if case_id == "stokes-sinusoidal":
        return BenchmarkCase(
            case_id, "stokes", 2, _square_family(8),
            _stokes_sinusoidal, nu_values=(1.0, 1e-3, 1e-6), default_levels=4)
    if case_id == "oseen-exponential":
        return BenchmarkCase(
            case_id, "oseen", 2, _square_family(16),
            _oseen_exponential, nu_values=(1e-4,),
            b=np.array([10.0, 1.0]), default_levels=3)
    if case_id == "oseen-rotational":
        return BenchmarkCase(
            case_id, "oseen", 2, _square_family(16),
            None, nu_values=(1e-3,), b=np.array([10.0, 1.0]),
            forcing=_rotational_forcing, default_levels=1)
    if case_id == "kovasznay":
        return BenchmarkCase(
            case_id, "ns", 2, _kovasznay_family,
            _kovasznay, nu_values=(1.0, 1e-3, 5e-4, 1e-4), default_levels=5)
    if case_id == "potential2d":
        # 2048 right triangles in a criss-cross layout: 32x32 squares with
        # checkerboard-alternating diagonals.
        return BenchmarkCase(
            case_id, "td", 2,
            lambda level: uniform_rectangle_mesh((-0.5, 0.5), (-0.5, 0.5),
                                                 32 * 2 ** (level - 1),
                                                 32 * 2 ** (level - 1),
                                                 "alternating"),
            _potential_2d, nu_values=(1.0, 1e-6), tau=0.1, t_end=2.0)
    if case_id == "potential3d":
        return BenchmarkCase(
            case_id, "ns", 3,
            lambda level: uniform_box_mesh((0, 1), (0, 1), (0, 1),
                                           8 * 2 ** (level - 1)),
            _potential_3d,
            nu_values=(1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5))
    raise KeyError(f"unknown benchmark case {case_id!r}")


CASE_IDS = ["stokes-sinusoidal", "oseen-exponential", "oseen-rotational",
            "kovasznay", "potential2d", "potential3d"]


# -- error norms --------------------------------------------------------------

def velocity_errors(exact: ExactSolution, u, t=None, degree: int = 4):
    """(L2, H1-seminorm) errors of the linear velocity part."""
    mesh = u.mesh
    bary, w = simplex_rule(mesh.dim, degree)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    ue = np.asarray(exact.u(pts) if t is None else exact.u(pts, t))
    ge = np.asarray(exact.grad_u(pts) if t is None else exact.grad_u(pts, t))
    coeffs = u.linear.coeffs[mesh.cells]                        # (nc, d+1, d)
    uh = np.einsum("qm,cmd->cqd", bary, coeffs)
    gh = np.einsum("cmd,cmk->cdk", coeffs, mesh.grads)          # constant per cell
    diff = ue - uh
    l2 = np.einsum("c,q,cqd,cqd->", mesh.volumes, w, diff, diff)
    gdiff = ge - gh[:, None, :, :]
    h1 = np.einsum("c,q,cqdk,cqdk->", mesh.volumes, w, gdiff, gdiff)
    return math.sqrt(max(l2, 0.0)), math.sqrt(max(h1, 0.0))


def pressure_error(exact: ExactSolution, p, t=None, degree: int = 4):
    """L2 error after shifting both pressures to volume-weighted zero mean."""
    mesh = p.mesh
    bary, w = simplex_rule(mesh.dim, degree)
    pts = physical_points(mesh.vertices[mesh.cells], bary)
    pe = np.asarray(exact.p(pts) if t is None else exact.p(pts, t))
    vol = mesh.volumes.sum()
    mean = np.einsum("c,q,cq->", mesh.volumes, w, pe) / vol
    pe = pe - mean
    ph = zero_mean_pressure(p.coeffs, mesh)
    diff = pe - ph[:, None]
    err2 = np.einsum("c,q,cq->", mesh.volumes, w, diff * diff)
    return math.sqrt(max(err2, 0.0))


def compute_errors(case: BenchmarkCase, nu, level, mesh, u, p,
                   report: SolverReport, t=None) -> ErrorRecord:
    exact = case.exact(nu)
    if exact is None:
        eu = eh = ep = float("nan")
    else:
        eu, eh = velocity_errors(exact, u, t=t)
        ep = pressure_error(exact, p, t=t)
    return ErrorRecord(case=case.case_id, scheme=report.scheme, level=level,
                       ndof=report.ndof, nu=nu, t=t, err_u_l2=eu,
                       err_u_h1=eh, err_p_l2=ep,
                       picard_iters=report.picard_iters, status=report.status)


# -- drivers ------------------------------------------------------------------

def solve_case(case: BenchmarkCase, scheme: str, nu: float, level: int,
               eps: float = 1e-10, controls: Optional[PicardControls] = None,
               mesh: Optional[SimplicialMesh] = None,
               disc: Optional[Discretization] = None):
    """Run one steady (case, scheme, nu, level) tuple."""
    mesh = mesh if mesh is not None else case.mesh_factory(level)
    exact = case.exact(nu)
    f = exact.f if exact is not None else case.forcing
    g = exact.g if exact is not None else None
    if case.kind == "stokes":
        u, p, rep = solve_stokes(mesh, nu, f, g, variant=scheme, disc=disc)
    elif case.kind == "oseen":
        u, p, rep = solve_oseen(mesh, nu, case.b, f, g, variant=scheme,
                                eps=eps, disc=disc)
    elif case.kind == "ns":
        u, p, rep = solve_navier_stokes(mesh, nu, f, g, variant=scheme,
                                        eps=eps, controls=controls, disc=disc)
    else:
        raise ValueError(f"case {case.case_id} is time-dependent; "
                         "use run_unsteady")
    return mesh, u, p, rep


def run_unsteady(case: BenchmarkCase, scheme: str, nu: float,
                 record_times, level: int = 1, tau: Optional[float] = None,
                 eps: float = 1e-10,
                 controls: Optional[PicardControls] = None,
                 halt_on_divergence: bool = False):
    """Backward-Euler time loop; returns records at the requested times."""
    tau = tau if tau is not None else case.tau
    mesh = case.mesh_factory(level)
    disc = Discretization(mesh, eps=eps)
    exact = case.exact(nu)
    u = BRFieldFromInitial(exact, mesh, disc)
    record_times = sorted(record_times)
    records = []
    n_steps = int(round(record_times[-1] / tau))
    next_rec = 0
    status = "ok"
    for n in range(1, n_steps + 1):
        t_n = n * tau
        u, p, rep = step_unsteady(disc, u, tau, t_n, nu, f=exact.f,
                                  g=exact.g, scheme=scheme, controls=controls)
        if not rep.converged:
            status = rep.status
            if halt_on_divergence:
                rec = compute_errors(case, nu, level, mesh, u, p, rep, t=t_n)
                rec.status = status
                records.append(rec)
                break
        if next_rec < len(record_times) and math.isclose(
                t_n, record_times[next_rec], abs_tol=tau * 1e-6):
            rec = compute_errors(case, nu, level, mesh, u, p, rep, t=t_n)
            rec.status = status if status != "ok" else rep.status
            records.append(rec)
            next_rec += 1
    return records


def BRFieldFromInitial(exact: ExactSolution, mesh, disc):
    """Nodal interpolant of the initial velocity with zero bubble part."""
    from .fespace import BRField, FeField
    lin = nodal_interpolate(exact.u, mesh, t=0.0)
    return BRField(lin, FeField("bubble", mesh,
                                np.zeros(disc.layout.n_bubble), disc.layout))


def run_convergence(case: BenchmarkCase, scheme: str,
                    nu_values=None, levels: Optional[int] = None,
                    eps: float = 1e-10,
                    controls: Optional[PicardControls] = None,
                    record_times=None):
    """Produce the convergence table rows for one case/scheme pair.

    Solver failures become flagged rows, not exceptions.
    """
    nu_values = tuple(nu_values) if nu_values is not None else case.nu_values
    levels = levels if levels is not None else case.default_levels
    records = []
    if case.kind == "td":
        times = record_times or (0.5, 1.0, 1.5, 2.0)
        for nu in nu_values:
            records.extend(run_unsteady(case, scheme, nu, times,
                                        eps=eps, controls=controls))
        return records
    for nu in nu_values:
        prev = None
        for level in range(1, levels + 1):
            try:
                mesh, u, p, rep = solve_case(case, scheme, nu, level,
                                             eps=eps, controls=controls)
                rec = compute_errors(case, nu, level, mesh, u, p, rep)
            except Exception as exc:  # record, do not abort the table
                rec = ErrorRecord(case=case.case_id, scheme=scheme,
                                  level=level, ndof=0, nu=nu, t=None,
                                  err_u_l2=float("nan"),
                                  err_u_h1=float("nan"),
                                  err_p_l2=float("nan"),
                                  status=f"failed:{type(exc).__name__}")
                records.append(rec)
                prev = None
                continue
            if prev is not None and prev.err_u_l2 > 0 and rec.err_u_l2 > 0:
                rec.order_u = math.log2(prev.err_u_l2 / rec.err_u_l2)
            if prev is not None and prev.err_p_l2 > 0 and rec.err_p_l2 > 0:
                rec.order_p = math.log2(prev.err_p_l2 / rec.err_p_l2)
            records.append(rec)
            prev = rec
    return records


def write_csv(path, records):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_HEADER)
        for rec in records:
            wr.writerow(rec.as_row())
