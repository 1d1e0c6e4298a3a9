"""Command-line interface: solve, bench, and mesh-info subcommands.

Options can come from a flat ``key=value`` config file (--config); explicit
command-line flags override config values.  Tables are written as CSV with a
fixed header and six-significant-digit floats.
"""

import argparse
import sys

from . import bench as bench_mod
from .bench import CASE_IDS, builtin_case, compute_errors, run_convergence, solve_case
from .kernels import BACKEND
from .mesh import uniform_box_mesh, uniform_rectangle_mesh
from .schemes import PicardControls
from .vtk import write_solution_vtk

_DEFAULTS = {
    "eps": 1e-10,
    "tol": 1e-6,
    "max_iter": 50,
    "tau": 0.1,
}


def _read_config(path):
    """Flat key=value file; blank lines and '#' comments ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config(args, parser):
    """Fill argparse defaults from the config file; CLI flags win."""
    if not getattr(args, "config", None):
        return args
    cfg = _read_config(args.config)
    specified = {a.split("=", 1)[0].lstrip("-").replace("-", "_")
                 for a in sys.argv[1:] if a.startswith("--")}
    for key, raw in cfg.items():
        if not hasattr(args, key):
            raise SystemExit(f"unknown config key {key!r}")
        if key in specified:
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, raw.lower() in ("1", "true", "yes", "on"))
        elif isinstance(current, int):
            setattr(args, key, int(raw))
        elif isinstance(current, float):
            setattr(args, key, float(raw))
        else:
            setattr(args, key, raw)
    return args


def _print_run_header(args):
    print(f"backend={BACKEND} eps={args.eps:g} picard_tol={args.tol:g} "
          f"picard_max_iter={args.max_iter} tau={getattr(args, 'tau', _DEFAULTS['tau']):g}")


def _controls(args):
    return PicardControls(tol=args.tol, max_iter=args.max_iter)


def _emit(records, output):
    rows = [",".join(bench_mod.CSV_HEADER)]
    rows += [",".join(r.as_row()) for r in records]
    text = "\n".join(rows) + "\n"
    if output:
        with open(output, "w") as fh:
            fh.write(text)
        print(f"wrote {len(records)} rows to {output}")
    else:
        sys.stdout.write(text)


def cmd_solve(args):
    case = builtin_case(args.case)
    _print_run_header(args)
    if case.kind == "td":
        records = bench_mod.run_unsteady(
            case, args.scheme, args.nu, record_times=(args.t_end,),
            level=args.level, tau=args.tau, eps=args.eps,
            controls=_controls(args))
        _emit(records, args.output)
        return 0
    mesh, u, p, rep = solve_case(case, args.scheme, args.nu, args.level,
                                 eps=args.eps, controls=_controls(args))
    rec = compute_errors(case, args.nu, args.level, mesh, u, p, rep)
    if args.vtk:
        write_solution_vtk(args.vtk, mesh, u, p)
        print(f"wrote VTK output to {args.vtk}")
    _emit([rec], args.output)
    return 0 if rep.converged else 1


def cmd_bench(args):
    cases = CASE_IDS if args.case == "all" else [args.case]
    schemes = args.schemes.split(",")
    _print_run_header(args)
    records = []
    for case_id in cases:
        case = builtin_case(case_id)
        nu_values = ([float(v) for v in args.nu.split(",")]
                     if args.nu else None)
        for scheme in schemes:
            records.extend(run_convergence(
                case, scheme, nu_values=nu_values, levels=args.levels,
                eps=args.eps, controls=_controls(args)))
    records.sort(key=lambda r: (r.case, r.scheme, r.nu, r.level, r.t or 0.0))
    _emit(records, args.output)
    return 0


def cmd_mesh_info(args):
    if args.dim == 2:
        mesh = uniform_rectangle_mesh((0.0, 1.0), (0.0, 1.0), args.n, args.n,
                                      pattern=args.pattern)
    else:
        mesh = uniform_box_mesh((0.0, 1.0), (0.0, 1.0), (0.0, 1.0), args.n)
    from .fespace import DofLayout
    layout = DofLayout(mesh)
    print(f"dim={mesh.dim}")
    print(f"vertices={mesh.n_vertices}")
    print(f"cells={mesh.n_cells}")
    print(f"faces={mesh.n_faces}")
    print(f"interior_faces={layout.n_bubble}")
    print(f"boundary_vertices={int(mesh.boundary_vertex.sum())}")
    print(f"ndof_condensed={layout.n_condensed}")
    print(f"volume={mesh.volumes.sum():.12g}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="brflow",
        description="Stabilized reduced Bernardi-Raugel flow solvers")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value option file")
        p.add_argument("--eps", type=float, default=_DEFAULTS["eps"],
                       help="artificial diffusion for the convection scheme")
        p.add_argument("--tol", type=float, default=_DEFAULTS["tol"],
                       help="Picard relative-increment tolerance")
        p.add_argument("--max-iter", type=int, default=_DEFAULTS["max_iter"],
                       help="Picard iteration cap")
        p.add_argument("--output", "-o", help="CSV output path (default stdout)")

    ps = sub.add_parser("solve", help="solve one benchmark configuration")
    ps.add_argument("--case", required=True, choices=CASE_IDS)
    ps.add_argument("--scheme", default="eafe")
    ps.add_argument("--nu", type=float, default=1.0)
    ps.add_argument("--level", type=int, default=1)
    ps.add_argument("--tau", type=float, default=_DEFAULTS["tau"])
    ps.add_argument("--t-end", type=float, default=2.0)
    ps.add_argument("--vtk", help="write velocity/pressure VTK file")
    common(ps)
    ps.set_defaults(func=cmd_solve)

    pb = sub.add_parser("bench", help="run convergence tables")
    pb.add_argument("--case", default="all", choices=CASE_IDS + ["all"])
    pb.add_argument("--schemes", default="eafe",
                    help="comma-separated scheme variants")
    pb.add_argument("--nu", help="comma-separated viscosities (default per case)")
    pb.add_argument("--levels", type=int, default=None,
                    help="number of refinement levels (default per case)")
    common(pb)
    pb.set_defaults(func=cmd_bench)

    pm = sub.add_parser("mesh-info", help="print mesh and dof statistics")
    pm.add_argument("--dim", type=int, default=2, choices=(2, 3))
    pm.add_argument("--n", type=int, default=8, help="subdivisions per side")
    pm.add_argument("--pattern", default="right",
                    choices=("right", "alternating", "crisscross"))
    pm.set_defaults(func=cmd_mesh_info, config=None)
    pm.add_argument("--config", help="flat key=value option file")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config(args, parser)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
