"""Convergence studies: run a problem over refinement levels, fit rates,
write CSV tables and check rate thresholds."""

from __future__ import annotations

import configparser
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import classical, fractional, thin
from .assembly import (FeSpace, energy_norm_error, interpolate_nodal, l2_norm_error,
                       linf_norm_error)
from .mesh import is_weakly_acute, structured_triangle_mesh

__all__ = [
    "PROBLEMS",
    "CSV_HEADER",
    "StudyError",
    "StudySpec",
    "ConvergenceRecord",
    "StudyResult",
    "fit_rate",
    "run_study",
    "check_study",
    "load_spec",
    "parse_spec",
    "format_csv",
]

PROBLEMS = ("classical1d", "classical2d", "thin", "fractional-linear",
            "fractional-obstacle")
CSV_HEADER = "level,size,err_h1,err_l2,err_linf,fb_measure,fb_distance,kkt,seconds"

OBSTACLE_PSI = (0.2, -0.1)    # psi = a sin(pi x) + b for the fractional obstacle runs


class StudyError(ValueError):
    """Invalid study specification (usage error)."""


@dataclass
class StudySpec:
    problem: str
    levels: list
    solver: str = "pdas"
    tol: float = 1e-10
    linear_solver: str = "direct"
    omega: float = 1.5
    # fractional
    s: float = 0.5
    gamma: float | None = None
    Y: float | None = None
    # overkill reference: this many levels above the finest study level
    reference_offset: int = 3
    # free boundary
    c_star: float | None = None
    margin: float | None = None
    fb_min_level: int = 4
    output: str | None = None
    timings: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise StudyError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        self.levels = [int(L) for L in self.levels]
        if not self.levels:
            raise StudyError("no levels given")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise StudyError("levels must be strictly increasing")
        if self.levels[0] < 1:
            raise StudyError("levels must be positive")
        if self.solver not in ("psor", "pdas"):
            raise StudyError(f"unknown solver {self.solver!r}")
        if self.linear_solver not in ("direct", "cg"):
            raise StudyError(f"unknown linear solver {self.linear_solver!r}")
        if not self.tol > 0:
            raise StudyError("tol must be positive")
        if self.problem.startswith("fractional"):
            try:
                fractional.FractionalConfig(self.s, gamma=self.gamma)
            except ValueError as exc:
                raise StudyError(str(exc)) from exc
        if self.reference_offset < 1:
            raise StudyError("reference_offset must be at least 1")


@dataclass
class ConvergenceRecord:
    level: int
    size: float
    err_h1: float
    err_l2: float
    err_linf: float
    fb_measure: float = float("nan")
    fb_distance: float = float("nan")
    kkt: float = 0.0
    seconds: float = 0.0

    def csv_row(self) -> str:
        vals = [f"{getattr(self, f.name):.10e}" for f in fields(self)[1:]]
        return ",".join([str(self.level)] + vals)


@dataclass
class StudyResult:
    spec: StudySpec
    records: list = field(default_factory=list)
    rates: dict = field(default_factory=dict)


def fit_rate(pairs):
    """Least-squares slope of log(error) against log(size); returns (slope, R^2)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two (size, error) pairs")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("sizes and errors must be positive")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError("sizes must not all coincide")
    slope, icpt = np.polyfit(lx, ly, 1)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((ly - (slope * lx + icpt)) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(ly ** 2))) else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


# ---------------------------------------------------------------------------
# config files


_FLOATS = ("tol", "omega", "s", "gamma", "Y", "c_star", "margin")
_INTS = ("reference_offset", "fb_min_level")


def parse_spec(text: str) -> StudySpec:
    """Read ``key = value`` lines from a [study] section, overlaid by an
    optional section named after the problem."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise StudyError(f"malformed config: {exc}") from exc
    if not cp.has_section("study"):
        raise StudyError("config needs a [study] section")
    opts = dict(cp["study"])
    problem = opts.get("problem")
    if problem and cp.has_section(problem):
        opts.update(cp[problem])
    kw = {}
    known = {f.name for f in fields(StudySpec)}
    for key, raw in opts.items():
        if key not in known:
            raise StudyError(f"unknown config key {key!r}")
        raw = raw.strip()
        try:
            if key == "levels":
                kw[key] = _parse_levels(raw)
            elif key in _FLOATS:
                kw[key] = None if raw.lower() in ("", "auto") else float(raw)
            elif key in _INTS:
                kw[key] = int(raw)
            elif key == "timings":
                kw[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                kw[key] = raw
        except ValueError as exc:
            raise StudyError(f"bad value for {key}: {raw!r}") from exc
    if "problem" not in kw:
        raise StudyError("config must set problem")
    kw.setdefault("levels", [])
    return StudySpec(**kw)


def _parse_levels(raw):
    """'3 4 5', '3,4,5' or '3..9'."""
    if ".." in raw:
        a, b = raw.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in raw.replace(",", " ").split()]


def load_spec(path: str) -> StudySpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


# ---------------------------------------------------------------------------
# studies


def _solver_options(spec):
    opts = {"linear_solver": spec.linear_solver}
    if spec.solver == "psor":
        opts = {"omega": spec.omega}
    return opts


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0 if self.enabled else 0.0


def _free_boundary_columns(spec, levels, hs, linf, spaces, gaps, bench, w2inf,
                           result, records):
    """Calibrate c_star on the first two eligible levels, then fill the
    free-boundary columns and the containment/measure summaries."""
    idx = [i for i, L in enumerate(levels) if L >= spec.fb_min_level]
    if len(idx) < 2:
        return
    c_star = spec.c_star
    if c_star is None:
        c_star = classical.calibrate_c_star([hs[i] for i in idx[:2]],
                                            [linf[i] for i in idx[:2]], w2inf)
    ratios, within = [], []
    for i in idx:
        h = hs[i]
        delta = classical.delta_for_level(h, c_star, w2inf)
        est = classical.extract_free_boundary(spaces[i], gaps[i], delta)
        margin = spec.margin if spec.margin is not None else 2.0 * h
        sym, dist = classical.interface_metrics(est, bench, margin=margin)
        eta = delta / c_star if c_star else classical.delta_for_level(h, 1.0, w2inf)
        records[i].fb_measure = sym
        records[i].fb_distance = dist
        ratios.append(sym / math.sqrt(eta))
        within.append(dist <= math.sqrt(2.0 * eta))
    result.rates["c_star"] = c_star
    result.rates["fb_measure_C"] = ratios[0]
    result.rates["fb_measure_ratios"] = ratios
    result.rates["fb_distance_within"] = within


def _study_classical(spec, result, emit):
    dim = 1 if spec.problem == "classical1d" else 2
    if dim == 1:
        bench = classical.benchmark_1d()
    else:
        ref_n = 2 ** (spec.levels[-1] + spec.reference_offset)
        bench = classical.benchmark_2d(ref_n)
        result.rates["weakly_acute"] = is_weakly_acute(
            structured_triangle_mesh(bench.box, 2 ** spec.levels[0]))[0]
    hs, linf, spaces, gaps = [], [], [], []
    growth = []
    for L in spec.levels:
        n = 2 ** L
        with _Clock(spec.timings) as clk:
            sol, space = classical.solve_classical(bench, n, spec.solver, spec.tol,
                                                   **_solver_options(spec))
            U = space.expand(sol.U)
            if dim == 1:
                e1 = energy_norm_error(space, U, bench.exact_grad)
                e2 = l2_norm_error(space, U, bench.exact_u)
                ei = linf_norm_error(space, U, bench.exact_u)
                if L >= spec.fb_min_level:
                    growth.append(classical.growth_probe(
                        bench, space, space.free[sol.active_set]))
            else:
                e1, e2, ei = classical.reference_errors(bench, space, U)
        h = 1.0 / n
        emit(ConvergenceRecord(L, h, e1, e2, ei, kkt=sol.kkt_residual,
                               seconds=clk.seconds))
        hs.append(h)
        linf.append(ei)
        spaces.append(space)
        gaps.append(U - interpolate_nodal(space, bench.psi))
    recs = result.records
    result.rates["h1"] = fit_rate([(r.size, r.err_h1) for r in recs])
    pw = [r.err_linf / (r.size ** 2 * abs(math.log(r.size))) for r in recs]
    result.rates["linf_scaled"] = pw
    result.rates["linf_ratio"] = max(pw) / min(pw)
    if growth:
        result.rates["growth_C"] = growth
    _free_boundary_columns(spec, spec.levels, hs, linf, spaces, gaps, bench,
                           bench.w2inf_seminorm, result, recs)


def _study_thin(spec, result, emit):
    prob = thin.default_problem()
    ref = thin.thin_reference(2 ** (spec.levels[-1] + spec.reference_offset),
                              min(spec.tol, 1e-12))
    for L in spec.levels:
        n = 2 ** L
        with _Clock(spec.timings) as clk:
            sol, space = thin.solve_thin(prob, n, spec.solver, spec.tol,
                                         **_solver_options(spec))
            e1, e2, ei = thin.reference_errors(space, sol.U, ref)
        emit(ConvergenceRecord(L, 1.0 / n, e1, e2, ei, kkt=sol.report.worst,
                               seconds=clk.seconds))
    result.rates["h1"] = fit_rate([(r.size, r.err_h1) for r in result.records])


def _log_corrected(spec, recs):
    return fit_rate([(r.size, r.err_h1 / abs(math.log(r.size)) ** spec.s) for r in recs])


def _study_fractional_linear(spec, result, emit):
    exact = fractional.spectral_solution(spec.s)
    for L in spec.levels:
        n = 2 ** L
        with _Clock(spec.timings) as clk:
            N = (n - 1) * n
            Y = spec.Y or fractional.choose_truncation(spec.s, math.pi ** 2, N)
            cfg = fractional.FractionalConfig(spec.s, Y=Y, gamma=spec.gamma)
            sol = fractional.solve_fractional_linear(cfg, exact.f, n,
                                                     linear_solver=spec.linear_solver)
            err = fractional.linear_energy_error(sol, exact)
            base = FeSpace.classical(sol.cylinder.base)
            e2 = l2_norm_error(base, sol.trace, exact.u)
            ei = linf_norm_error(base, sol.trace, exact.u)
        emit(ConvergenceRecord(L, float(sol.ndofs), err, e2, ei, seconds=clk.seconds))
    result.rates["energy"] = _log_corrected(spec, result.records)


def obstacle_data(s):
    a, b = OBSTACLE_PSI
    return (lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            lambda x: a * np.sin(np.pi * np.asarray(x, dtype=float)) + b)


def _study_fractional_obstacle(spec, result, emit):
    f, psi = obstacle_data(spec.s)
    ref_n = 2 ** (spec.levels[-1] + spec.reference_offset)
    Y = spec.Y or fractional.choose_truncation(spec.s, math.pi ** 2, (ref_n - 1) * ref_n)
    cfg = fractional.FractionalConfig(spec.s, Y=Y, gamma=spec.gamma)
    opts = _solver_options(spec)
    ref_sol, ref = fractional.solve_obstacle_nested(
        cfg, f, psi, ref_n, start_n=2 ** spec.levels[-1], solver="pdas",
        tol=min(spec.tol, 1e-12), linear_solver="direct")
    A_ref = fractional.full_weighted_stiffness(ref.cylinder, cfg.alpha)
    result.rates["reference_kkt"] = ref_sol.kkt_residual
    for L in spec.levels:
        n = 2 ** L
        with _Clock(spec.timings) as clk:
            sol, ext = fractional.solve_fractional_obstacle(cfg, f, psi, n, spec.solver,
                                                            tol=spec.tol, **opts)
            e1 = fractional.energy_distance(ext, ref, A_ref)
            e2 = fractional.trace_l2_distance(ext, ref)
            P = fractional.cylinder_prolongation(ext.cylinder, ref.cylinder)
            ei = float(np.abs(ref.trace - (P @ ext.V)[:ref.cylinder.n_base]).max())
        emit(ConvergenceRecord(L, float(ext.ndofs), e1, e2, ei, kkt=sol.kkt_residual,
                               seconds=clk.seconds))
    result.rates["energy"] = _log_corrected(spec, result.records)


_DRIVERS = {
    "classical1d": _study_classical,
    "classical2d": _study_classical,
    "thin": _study_thin,
    "fractional-linear": _study_fractional_linear,
    "fractional-obstacle": _study_fractional_obstacle,
}


def run_study(spec: StudySpec) -> StudyResult:
    """Run every level; records are appended (and flushed to ``spec.output``
    when set) as they complete, so a failure leaves the finished levels on
    disk before the exception propagates."""
    result = StudyResult(spec)
    out = open(spec.output, "w", encoding="utf-8", newline="\n") if spec.output else None
    try:
        if out:
            out.write(CSV_HEADER + "\n")
            out.flush()

        def emit(rec):
            result.records.append(rec)
            if out:
                out.write(rec.csv_row() + "\n")
                out.flush()

        _DRIVERS[spec.problem](spec, result, emit)
    finally:
        if out:
            out.close()
    if out and spec.problem.startswith("classical"):
        # free-boundary columns are filled after calibration
        with open(spec.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_csv(result.records))
    return result


def format_csv(records) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in records:
        buf.write(r.csv_row() + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# thresholds


def check_study(result: StudyResult):
    """List of (name, passed, detail) for the rate thresholds of the problem."""
    spec, rates, recs = result.spec, result.rates, result.records
    checks = []
    if spec.problem == "classical1d":
        slope, r2 = rates["h1"]
        checks.append(("h1 slope", 0.9 <= slope <= 1.1 and r2 >= 0.99,
                       f"slope={slope:.4f} R2={r2:.5f}"))
        checks.append(("pointwise ratio", rates["linf_ratio"] <= 3.0,
                       f"max/min={rates['linf_ratio']:.4f}"))
        if "fb_distance_within" in rates:
            ok = all(rates["fb_distance_within"])
            checks.append(("fb distance", ok, f"c_star={rates['c_star']:g}"))
            C = rates["fb_measure_C"]
            ok = all(r <= C * (1 + 1e-12) for r in rates["fb_measure_ratios"])
            checks.append(("fb measure", ok, f"C={C:.4f} ratios="
                           + " ".join(f"{r:.3f}" for r in rates["fb_measure_ratios"])))
    elif spec.problem == "classical2d":
        slope, r2 = rates["h1"]
        checks.append(("weakly acute", bool(rates["weakly_acute"]), ""))
        checks.append(("h1 slope", 0.8 <= slope <= 1.2, f"slope={slope:.4f}"))
    elif spec.problem == "thin":
        slope, r2 = rates["h1"]
        checks.append(("h1 slope", 0.85 <= slope <= 1.15 and len(recs) >= 4,
                       f"slope={slope:.4f} levels={len(recs)}"))
        worst = max(r.kkt for r in recs)
        checks.append(("signorini certificate", worst <= 1e-8, f"max={worst:.2e}"))
    elif spec.problem == "fractional-linear":
        slope, r2 = rates["energy"]
        checks.append(("log-corrected slope", -0.65 <= slope <= -0.35,
                       f"slope={slope:.4f}"))
    elif spec.problem == "fractional-obstacle":
        slope, r2 = rates["energy"]
        checks.append(("log-corrected slope", -0.7 <= slope <= -0.3, f"slope={slope:.4f}"))
        worst = max(r.kkt for r in recs)
        checks.append(("trace certificate", worst <= 1e-8, f"max={worst:.2e}"))
    return checks
