"""Command line entry point ``obstakl``.

Exit codes: 0 success, 2 usage error, 3 solver non-convergence,
4 threshold failure in ``study --check``.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys


from . import classical, fractional, harness, thin
from .mesh import (MeshError, cylinder_mesh, dump_mesh, graded_partition,
                   is_weakly_acute, structured_triangle_mesh, uniform_interval_mesh)
from .vi_solver import InputError, NonConvergenceError, dump_vector

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _level(value):
    L = int(value)
    if L < 1 or L > 14:
        raise argparse.ArgumentTypeError("level must lie in 1..14")
    return L


def cmd_solve_classical(args):
    bench = classical.benchmark_1d() if args.dim == 1 else classical.problem_2d()
    sol, space = classical.solve_classical(bench, 2 ** args.level, args.solver, args.tol,
                                           omega=args.omega)
    U = space.expand(sol.U)
    if args.dump_prefix:
        _write(args.dump_prefix + ".vec", dump_vector(U))
    print(f"{sol.solver_id} n={2 ** args.level} iterations={sol.iterations} "
          f"active={len(sol.active_set)} {sol.report}")
    return EXIT_OK


def cmd_solve_thin(args):
    sol, space = thin.solve_thin(thin.default_problem(), 2 ** args.level, args.solver,
                                 args.tol, omega=args.omega)
    if args.dump_prefix:
        _write(args.dump_prefix + ".vec", dump_vector(sol.U))
    print(f"{sol.solver_id} n={2 ** args.level} iterations={sol.iterations} "
          f"contact={len(sol.active_set)} signorini {sol.report}")
    return EXIT_OK


def cmd_solve_fractional(args):
    n = 2 ** args.level
    N = (n - 1) * n
    Y = args.Y if args.Y is not None else fractional.choose_truncation(args.s, math.pi ** 2, N)
    try:
        cfg = fractional.FractionalConfig(args.s, Y=Y, gamma=args.gamma)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    manifest = {"s": cfg.s, "alpha": cfg.alpha, "d_s": cfg.d_s, "Y": cfg.Y,
                "gamma": cfg.gamma, "M": n}
    if args.linear:
        if args.solver == "psor":
            raise InputError("the linear problem is solved by cg or pdas (direct)")
        exact = fractional.spectral_solution(cfg.s)
        ext = fractional.solve_fractional_linear(
            cfg, exact.f, n, linear_solver="cg" if args.solver == "cg" else "direct")
        manifest["energy_error"] = fractional.linear_energy_error(ext, exact)
        line = f"linear n={n} ndofs={ext.ndofs} energy={ext.energy:.10e}"
    else:
        if args.solver == "cg":
            raise InputError("the obstacle problem needs --solver psor or pdas")
        f, psi = harness.obstacle_data(cfg.s)
        sol, ext = fractional.solve_fractional_obstacle(cfg, f, psi, n, args.solver,
                                                        tol=args.tol, omega=args.omega)
        rep = sol.report
        manifest.update(kkt_infeasibility=rep.infeasibility,
                        kkt_stationarity=rep.stationarity,
                        kkt_complementarity=rep.complementarity,
                        kkt_dual=rep.dual_infeasibility)
        line = (f"{sol.solver_id} n={n} ndofs={ext.ndofs} iterations={sol.iterations} "
                f"contact={len(sol.active_set)} {rep}")
    manifest["ndofs"] = ext.ndofs
    manifest["energy"] = ext.energy
    if args.dump_prefix:
        _write(args.dump_prefix + ".vec", dump_vector(ext.trace))
        _write(args.dump_prefix + ".manifest",
               "".join(f"{k}={v:.17g}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in manifest.items()))
    print(line)
    return EXIT_OK


def cmd_study(args):
    spec = harness.load_spec(args.config)
    if args.output:
        spec.output = args.output
    result = harness.run_study(spec)
    if not spec.output:
        sys.stdout.write(harness.format_csv(result.records))
    for key, val in result.rates.items():
        if isinstance(val, tuple) and len(val) == 2:
            print(f"# {key}: slope={val[0]:.6f} r2={val[1]:.6f}")
    if args.check:
        failed = False
        for name, ok, detail in harness.check_study(result):
            print(f"# check {name}: {'PASS' if ok else 'FAIL'} {detail}")
            failed |= not ok
        if failed:
            return EXIT_CHECK
    return EXIT_OK


def cmd_mesh_info(args):
    if args.kind == "interval":
        mesh = uniform_interval_mesh(0.0, 1.0, args.n)
    elif args.kind == "square":
        mesh = structured_triangle_mesh((0.0, 1.0, 0.0, 1.0), args.n)
    else:
        axial = graded_partition(args.Y, args.M or args.n, args.gamma)
        if args.kind == "graded":
            print(f"graded Y={axial.Y:g} M={axial.M} gamma={axial.gamma:g} "
                  f"sigma_Y={axial.sigma_Y:.6g} first={axial.nodes[1]:.6e}")
            return EXIT_OK
        cyl = cylinder_mesh(uniform_interval_mesh(0.0, 1.0, args.n), axial)
        print(f"cylinder nodes={cyl.n_nodes} cells={cyl.n_cells} "
              f"dirichlet={len(cyl.dirichlet_nodes())} trace={len(cyl.trace_nodes())} "
              f"sigma_Y={axial.sigma_Y:.6g}")
        return EXIT_OK
    ok, pairs = is_weakly_acute(mesh)
    sigma = mesh.shape_coefficients().max()
    print(f"{args.kind} dim={mesh.dim} vertices={mesh.n_vertices} cells={mesh.n_cells} "
          f"h={mesh.mesh_size:.6g} sigma_max={sigma:.6g} weakly_acute={ok}")
    if args.dump:
        _write(args.dump, dump_mesh(mesh))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obstakl",
                                description="Finite element obstacle problem solvers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one instance")
    ssub = solve.add_subparsers(dest="problem", required=True)

    def common(q, solvers=("psor", "pdas")):
        q.add_argument("--level", type=_level, required=True, help="n = 2^level")
        q.add_argument("--solver", choices=solvers, default="pdas")
        q.add_argument("--tol", type=float, default=1e-10)
        q.add_argument("--omega", type=float, default=1.5, help="PSOR relaxation")
        q.add_argument("--dump-prefix", help="write PREFIX.vec (and PREFIX.manifest)")

    q = ssub.add_parser("classical")
    q.add_argument("--dim", type=int, choices=(1, 2), default=1)
    common(q)
    q.set_defaults(func=cmd_solve_classical)

    q = ssub.add_parser("thin")
    common(q)
    q.set_defaults(func=cmd_solve_thin)

    q = ssub.add_parser("fractional")
    q.add_argument("--s", type=float, required=True)
    q.add_argument("--gamma", type=float, default=None,
                   help="axial grading exponent (default 3/(2s) + 0.1)")
    q.add_argument("--Y", type=float, default=None, help="truncation height")
    q.add_argument("--linear", action="store_true", help="f = sin(pi x), no obstacle")
    common(q, ("psor", "pdas", "cg"))
    q.set_defaults(func=cmd_solve_fractional)

    st = sub.add_parser("study", help="run a convergence study")
    st.add_argument("--config", required=True)
    st.add_argument("--check", action="store_true", help="apply rate thresholds")
    st.add_argument("--output", help="CSV path (overrides the config)")
    st.set_defaults(func=cmd_study)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="action", required=True)
    q = msub.add_parser("info")
    q.add_argument("--kind", choices=("interval", "square", "graded", "cylinder"),
                   default="interval")
    q.add_argument("--n", type=int, default=8)
    q.add_argument("--Y", type=float, default=1.0)
    q.add_argument("--M", type=int, default=None)
    q.add_argument("--gamma", type=float, default=1.0)
    q.add_argument("--dump", help="write the mesh in OBSMESH v1 format")
    q.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"obstakl: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (harness.StudyError, InputError, MeshError, ValueError, OSError) as exc:
        print(f"obstakl: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
