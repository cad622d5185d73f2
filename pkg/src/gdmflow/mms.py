"""Manufactured solutions, error metrics and convergence-rate fitting.

The exact fields are kept as sympy expressions so the forcing terms of the
momentum and heat equations (including the temperature-dependent viscosity
chain-rule term) can be derived analytically and lambdified once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import sympy

from .errors import InsufficientLevels, NonpositiveValue, ZeroNormError
from .gd_core import GradientDiscretisation, TimeGrid
from .hfv import build_hfv
from .mesh import build_distorted, build_triangular, compute_geometry
from .scheme import ProblemSpec, SolverConfig, State, StepDiagnostics, ViscosityModel, solve_transient

_X, _Y, _T = sympy.symbols("x y t", real=True)


def _lambdify_vec(exprs) -> Callable:
    fns = [sympy.lambdify((_X, _Y, _T), e, "numpy") for e in exprs]

    def call(points, t):
        pts = np.asarray(points, dtype=float)
        out = np.empty((len(pts), len(fns)))
        for j, fn in enumerate(fns):
            out[:, j] = np.broadcast_to(fn(pts[:, 0], pts[:, 1], t), len(pts))
        return out

    return call


def _lambdify_scalar(expr) -> Callable:
    fn = sympy.lambdify((_X, _Y, _T), expr, "numpy")

    def call(points, t):
        pts = np.asarray(points, dtype=float)
        return np.broadcast_to(fn(pts[:, 0], pts[:, 1], t), len(pts)).astype(float)

    return call


@dataclass(frozen=True)
class ExactSolution:
    """Exact velocity/pressure/temperature fields with symbolic backing."""

    u_expr: tuple
    p_expr: sympy.Expr
    s_expr: sympy.Expr
    u: Callable      # (points, t) -> (N, 2)
    p: Callable      # (points, t) -> (N,)
    s: Callable      # (points, t) -> (N,)


def taylor_green_solution() -> ExactSolution:
    """Time-modulated Taylor-Green vortex with a linear-in-time temperature.

    The velocity is divergence-free, the pressure has zero mean on
    [-1,1]^2 (it is odd in x) and the temperature vanishes at t = 0.
    """
    a = sympy.pi + _T
    u1 = sympy.sin(a * _Y) * sympy.cos(a * _X)
    u2 = -sympy.cos(a * _Y) * sympy.sin(a * _X)
    p_raw = sympy.sin(a * _X) * sympy.cos(a * _Y)
    mean = sympy.integrate(
        sympy.integrate(p_raw, (_X, -1, 1)), (_Y, -1, 1)
    ) / 4
    p = sympy.simplify(p_raw - mean)
    s = _T * sympy.sin(_X + _Y)
    return ExactSolution(
        u_expr=(u1, u2),
        p_expr=p,
        s_expr=s,
        u=_lambdify_vec((u1, u2)),
        p=_lambdify_scalar(p),
        s=_lambdify_scalar(s),
    )


def forcing_from_exact(
    sol: ExactSolution, viscosity: ViscosityModel, mu: float
) -> tuple[Callable, Callable]:
    """Forcings so that the exact fields solve the coupled system.

    g = d_t u - div(V(S) grad u) + (u . grad) u + grad p
    h = d_t S - mu lap S + u . grad S
    """
    if viscosity.sym is None:
        raise ValueError(f"viscosity model '{viscosity.name}' has no symbolic form")
    u1, u2 = sol.u_expr
    u_vec = (u1, u2)
    v_of_s = viscosity.sym(sol.s_expr)
    coords = (_X, _Y)

    g_exprs = []
    for j, uj in enumerate(u_vec):
        diffusion = sum(
            sympy.diff(v_of_s * sympy.diff(uj, xi), xi) for xi in coords
        )
        convection = sum(ui * sympy.diff(uj, xi) for ui, xi in zip(u_vec, coords))
        g_exprs.append(
            sympy.diff(uj, _T) - diffusion + convection + sympy.diff(sol.p_expr, coords[j])
        )

    lap_s = sum(sympy.diff(sol.s_expr, xi, 2) for xi in coords)
    conv_s = sum(ui * sympy.diff(sol.s_expr, xi) for ui, xi in zip(u_vec, coords))
    h_expr = sympy.diff(sol.s_expr, _T) - mu * lap_s + conv_s

    return _lambdify_vec(g_exprs), _lambdify_scalar(h_expr)


def make_problem(
    sol: ExactSolution, viscosity: ViscosityModel, mu: float = 1.0, final_time: float = 0.1
) -> ProblemSpec:
    """Manufactured problem: forcings, initial and boundary data from sol."""
    g, h = forcing_from_exact(sol, viscosity, mu)
    return ProblemSpec(
        viscosity=viscosity,
        mu=mu,
        g=g,
        h=h,
        u0=lambda pts: sol.u(pts, 0.0),
        s0=lambda pts: sol.s(pts, 0.0),
        boundary_u=sol.u,
        boundary_s=sol.s,
        final_time=final_time,
    )


def compute_errors(
    gd: GradientDiscretisation, state: State, sol: ExactSolution, t: float
) -> dict[str, float]:
    """Relative L2 errors at time t.

    The exact fields are integrated with a degree-2 quadrature per cell
    against the piecewise-constant reconstructions.  Returns E_u1, E_u2
    (per velocity component), E1 (combined velocity), E2 (pressure) and
    E3 (temperature).
    """
    points, vols, owners = gd.quad_points, gd.quad_weights, gd.quad_owners
    nc = gd.n_cells

    u_exact = sol.u(points, t)
    u_disc = (gd.pi_u @ state.u).reshape(nc, 2)[owners]
    p_exact = sol.p(points, t)
    p_disc = (gd.chi_p @ state.p)[owners]
    s_exact = sol.s(points, t)
    s_disc = (gd.pi_s @ state.s)[owners]

    def rel(err_sq: float, ref_sq: float, label: str) -> float:
        if ref_sq < 1e-28:
            raise ZeroNormError(f"reference norm for {label} is (near) zero")
        return float(np.sqrt(err_sq / ref_sq))

    errors: dict[str, float] = {}
    for j, label in enumerate(("E_u1", "E_u2")):
        err = float(vols @ (u_exact[:, j] - u_disc[:, j]) ** 2)
        ref = float(vols @ u_exact[:, j] ** 2)
        errors[label] = rel(err, ref, label)
    err = float((vols[:, None] * (u_exact - u_disc) ** 2).sum())
    ref = float((vols[:, None] * u_exact**2).sum())
    errors["E1"] = rel(err, ref, "E1")
    errors["E2"] = rel(
        float(vols @ (p_exact - p_disc) ** 2), float(vols @ p_exact**2), "E2"
    )
    errors["E3"] = rel(
        float(vols @ (s_exact - s_disc) ** 2), float(vols @ s_exact**2), "E3"
    )
    return errors


def fit_rate(
    hs: Sequence[float], errors: Sequence[float]
) -> tuple[float, float, float]:
    """Ordinary least squares of log E = log C + r log h.

    Returns (C, r, residual) with residual the root of the summed squared
    fit residuals.  Requires >= 3 distinct positive mesh sizes.
    """
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errors, dtype=float)
    if len(hs) != len(errs):
        raise ValueError("hs and errors must have matching length")
    if np.any(hs <= 0.0) or np.any(errs <= 0.0):
        raise NonpositiveValue("mesh sizes and errors must be positive for a log fit")
    if len(np.unique(hs)) < 3:
        raise InsufficientLevels("need at least three distinct mesh sizes")
    log_h = np.log(hs)
    log_e = np.log(errs)
    coeffs, res_sum, *_ = np.polyfit(log_h, log_e, 1, full=True)
    r, log_c = float(coeffs[0]), float(coeffs[1])
    residual = float(np.sqrt(res_sum[0])) if len(res_sum) else 0.0
    return float(np.exp(log_c)), r, residual


@dataclass(frozen=True)
class LevelResult:
    level: int
    h: float
    dofs_u: int
    dofs_p: int
    dofs_s: int
    errors: dict[str, float]
    diagnostics: list[StepDiagnostics]


@dataclass(frozen=True)
class RateFit:
    quantity: str
    prefactor: float
    slope: float
    residual: float


@dataclass(frozen=True)
class ConvergenceReport:
    levels: list[LevelResult]
    fits: list[RateFit]


MESH_BUILDERS = {
    "triangular": lambda n, amplitude: build_triangular(n),
    "distorted": build_distorted,
}


def run_level(
    family: str,
    n: int,
    amplitude: float,
    sol: ExactSolution,
    viscosity: ViscosityModel,
    mu: float,
    final_time: float,
    n_steps: int,
    config: SolverConfig,
    level: int = 0,
) -> LevelResult:
    """Solve one refinement level of a manufactured study."""
    mesh = MESH_BUILDERS[family](n, amplitude)
    geom = compute_geometry(mesh)
    gd = build_hfv(mesh, geom)
    problem = make_problem(sol, viscosity, mu=mu, final_time=final_time)
    grid = TimeGrid.uniform(final_time, n_steps)
    states, diags = solve_transient(gd, problem, grid, config)
    errors = compute_errors(gd, states[-1], sol, final_time)
    return LevelResult(
        level=level,
        h=geom.h,
        dofs_u=len(gd.free_u),
        dofs_p=gd.n_pdofs,
        dofs_s=len(gd.free_s),
        errors=errors,
        diagnostics=diags,
    )


def convergence_study(
    family: str,
    levels: Sequence[int],
    viscosity: ViscosityModel,
    mu: float = 1.0,
    final_time: float = 0.1,
    amplitude: float = 0.3,
    dt_factor: float = 1.0,
    fixed_dt: float | None = None,
    config: SolverConfig = SolverConfig(),
    max_workers: int | None = None,
) -> ConvergenceReport:
    """Refinement study at T = final_time with dt proportional to h
    (dt = dt_factor * T * h/h0) unless fixed_dt is given.

    Levels may run concurrently; the report is an ordered merge.
    """
    if len(set(levels)) < 3:
        raise InsufficientLevels("a study needs at least three distinct levels")
    sol = taylor_green_solution()
    n0 = min(levels)

    def steps_for(n: int) -> int:
        if fixed_dt is not None:
            return max(1, round(final_time / fixed_dt))
        # uniform families halve h when n doubles, so h/h0 = n0/n
        dt = dt_factor * final_time * n0 / n
        return max(1, round(final_time / dt))

    # ascending n, i.e. decreasing h
    jobs = [(i, n, steps_for(n)) for i, n in enumerate(sorted(levels))]

    def work(job):
        i, n, n_steps = job
        try:
            return run_level(
                family, n, amplitude, sol, viscosity, mu, final_time, n_steps,
                config, level=i,
            )
        except Exception as exc:
            exc.args = (f"{exc}; while running refinement level {i} (n={n})",)
            raise

    if max_workers is not None and max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]

    hs = [res.h for res in results]
    fits = [
        RateFit(q, *fit_rate(hs, [res.errors[q] for res in results]))
        for q in ("E_u1", "E_u2", "E1", "E2", "E3")
    ]
    return ConvergenceReport(levels=results, fits=fits)
