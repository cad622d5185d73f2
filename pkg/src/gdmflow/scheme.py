"""Backward-Euler time marching of the coupled flow/heat system.

Each step solves the fully implicit system by a decoupled Picard loop:
a linear heat solve with the previous velocity iterate, then an Oseen
saddle-point solve with the updated temperature entering the viscosity and
the convection linearized around the previous iterate.  The pressure mean
is pinned to zero by a scalar Lagrange multiplier.  Non-homogeneous
Dirichlet data is imposed by pinning boundary face DOFs to the supplied
boundary callables evaluated at the new time level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolverFailure, PicardDivergence
from .gd_core import GradientDiscretisation, TimeGrid, interpolate_scalar, interpolate_velocity
from .hfv import assemble_viscous


@dataclass(frozen=True)
class ViscosityModel:
    """Bounded viscosity law V with declared bounds a1 <= V <= a2.

    fn maps an array of temperature values to viscosity values; sym, when
    given, maps a sympy symbol to the symbolic law (used to derive
    manufactured forcings).
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    a1: float
    a2: float
    sym: Callable | None = None

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.fn(values)


def constant_viscosity() -> ViscosityModel:
    return ViscosityModel("constant", lambda s: np.ones_like(np.asarray(s, dtype=float)), 1.0, 1.0, sym=lambda s: 1)


def sqrt_coupled_viscosity(check_range: float = 50.0) -> ViscosityModel:
    """V(S) = sqrt(S^2 + 1) + 2; bounds declared on |S| <= check_range."""
    import sympy

    a2 = float(np.sqrt(check_range**2 + 1.0) + 2.0)
    return ViscosityModel(
        "sqrt_coupled",
        lambda s: np.sqrt(np.asarray(s, dtype=float) ** 2 + 1.0) + 2.0,
        3.0,
        a2,
        sym=lambda s: sympy.sqrt(s**2 + 1) + 2,
    )


def _zero_vector(points, t=None):
    return np.zeros((len(points), 2))


def _zero_scalar(points, t=None):
    return np.zeros(len(points))


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous problem data: viscosity law, diffusivity, forcings,
    initial and boundary data, final time.

    Forcings and boundary data take (points, t); initial data take (points).
    """

    viscosity: ViscosityModel
    mu: float
    g: Callable = _zero_vector
    h: Callable = _zero_scalar
    u0: Callable = lambda pts: np.zeros((len(pts), 2))
    s0: Callable = lambda pts: np.zeros(len(pts))
    boundary_u: Callable = _zero_vector
    boundary_s: Callable = _zero_scalar
    final_time: float = 0.1

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("thermal diffusivity must be positive")
        if self.final_time <= 0.0:
            raise ValueError("final time must be positive")
        if not (0.0 < self.viscosity.a1 <= self.viscosity.a2):
            raise ValueError("viscosity bounds must satisfy 0 < a1 <= a2")
        probe = self.viscosity(np.linspace(-10.0, 10.0, 101))
        if np.any(probe < self.viscosity.a1 - 1e-12) or np.any(
            probe > self.viscosity.a2 + 1e-12
        ):
            raise ValueError("viscosity violates its declared bounds on [-10, 10]")


@dataclass(frozen=True)
class State:
    """One time level: velocity/pressure/temperature DOF vectors at time t."""

    u: np.ndarray
    p: np.ndarray
    s: np.ndarray
    t: float


@dataclass(frozen=True)
class SolverConfig:
    picard_tol: float = 1e-9
    picard_max_iter: int = 50

    def __post_init__(self):
        if self.picard_tol <= 0.0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step solver and stability record.

    Energy residuals are signed and scaled by the largest term of the
    corresponding inequality; values <= tolerance mean the inequality holds.
    """

    picard_iters: int
    energy_residual_u: float
    energy_residual_s: float
    incompressibility_residual: float


def initial_state(gd: GradientDiscretisation, problem: ProblemSpec) -> State:
    """Interpolate the initial data; zero pressure, t = 0."""
    u = interpolate_velocity(gd, problem.u0)
    s = interpolate_scalar(gd, problem.s0)
    return State(u=u, p=np.zeros(gd.n_pdofs), s=s, t=0.0)


def _forcing_vectors(gd: GradientDiscretisation, problem: ProblemSpec, t: float):
    """Forcing integrals against the cell reconstructions, with the
    degree-2 cell quadrature stored on the discretisation."""
    nc = gd.n_cells
    pts, w, owners = gd.quad_points, gd.quad_weights, gd.quad_owners
    g_vals = np.asarray(problem.g(pts, t), dtype=float).reshape(len(pts), 2)
    h_vals = np.asarray(problem.h(pts, t), dtype=float).reshape(len(pts))
    g_cells = np.zeros((nc, 2))
    np.add.at(g_cells, owners, w[:, None] * g_vals)
    h_cells = np.zeros(nc)
    np.add.at(h_cells, owners, w * h_vals)
    g_vec = np.zeros(gd.n_udofs)
    g_vec[: 2 * nc] = g_cells.ravel()
    h_vec = np.zeros(gd.n_sdofs)
    h_vec[:nc] = h_cells
    return g_vec, h_vec


def _boundary_values(gd: GradientDiscretisation, problem: ProblemSpec, t: float):
    bnd_faces = gd.mesh.boundary_faces
    pts = gd.geom.face_midpoints[bnd_faces]
    ub = np.asarray(problem.boundary_u(pts, t), dtype=float).reshape(len(pts), 2)
    sb = np.asarray(problem.boundary_s(pts, t), dtype=float).reshape(len(pts))
    u_full = np.zeros(gd.n_udofs)
    u_full[gd.bnd_u] = ub.ravel()
    s_full = np.zeros(gd.n_sdofs)
    s_full[gd.bnd_s] = sb
    return u_full, s_full


def _solve_sparse(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    try:
        lu = spla.splu(matrix.tocsc())
        sol = lu.solve(rhs)
    except RuntimeError as exc:
        raise LinearSolverFailure(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise LinearSolverFailure("sparse solve produced non-finite values")
    return sol


def _incompressibility_residual(gd: GradientDiscretisation, u: np.ndarray) -> float:
    """sup over zero-mean pressures q of (int chi q div u) / ||chi q||_L2."""
    r = gd.div_coupling @ u
    inv_sqrt = 1.0 / np.sqrt(gd.geom.cell_volumes)
    y = inv_sqrt * r
    direction = np.sqrt(gd.geom.cell_volumes)
    y_perp = y - direction * (direction @ y) / (direction @ direction)
    return float(np.linalg.norm(y_perp))


def step(
    gd: GradientDiscretisation,
    problem: ProblemSpec,
    state: State,
    dt: float,
    config: SolverConfig = SolverConfig(),
) -> tuple[State, StepDiagnostics]:
    """One backward-Euler step from state.t to state.t + dt."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    t_new = state.t + dt
    nc = gd.n_cells
    vols = gd.geom.cell_volumes
    free_u, bnd_u = gd.free_u, gd.bnd_u
    free_s, bnd_s = gd.free_s, gd.bnd_s

    g_vec, h_vec = _forcing_vectors(gd, problem, t_new)
    u_bvals, s_bvals = _boundary_values(gd, problem, t_new)

    mass_u = gd.mass_u
    mass_s = gd.mass_s
    d_coup = gd.div_coupling.tocsr()
    d_free = d_coup[:, free_u]
    d_bnd = d_coup[:, bnd_u]

    heat_rhs_base = (mass_s @ state.s) / dt + h_vec
    mom_rhs_base = (mass_u @ state.u) / dt + g_vec

    u_k = state.u
    s_k = state.s
    iters = 0
    for iters in range(1, config.picard_max_iter + 1):
        # (a) heat solve with the convecting field frozen at u_k
        b_mat = gd.forms.b_matrix(u_k)
        a_heat = (mass_s / dt + problem.mu * gd.gram_s + b_mat).tocsr()
        rhs_s = heat_rhs_base[free_s] - a_heat[free_s][:, bnd_s] @ s_bvals[bnd_s]
        s_new = np.array(s_bvals)
        s_new[free_s] = _solve_sparse(a_heat[free_s][:, free_s], rhs_s)

        # (b) Oseen solve with viscosity from s_new, convection from u_k
        viscous = assemble_viscous(gd, s_new, problem.viscosity)
        n_mat = gd.forms.a_matrix(u_k)
        a_mom = (mass_u / dt + viscous + n_mat).tocsr()
        rhs_u = mom_rhs_base[free_u] - a_mom[free_u][:, bnd_u] @ u_bvals[bnd_u]
        rhs_div = -(d_bnd @ u_bvals[bnd_u])
        saddle = sp.bmat(
            [
                [a_mom[free_u][:, free_u], -d_free.T, None],
                [d_free, None, sp.csc_matrix(vols[:, None])],
                [None, sp.csc_matrix(vols[None, :]), None],
            ],
            format="csc",
        )
        rhs = np.concatenate([rhs_u, rhs_div, [0.0]])
        sol = _solve_sparse(saddle, rhs)
        u_new = np.array(u_bvals)
        u_new[free_u] = sol[: len(free_u)]
        p_new = sol[len(free_u) : len(free_u) + nc]

        incr = np.linalg.norm(u_new - u_k) + np.linalg.norm(s_new - s_k)
        scale = np.linalg.norm(u_new) + np.linalg.norm(s_new)
        u_k, s_k = u_new, s_new
        if incr <= config.picard_tol * max(scale, 1e-30):
            break
    else:
        raise PicardDivergence(
            f"Picard loop did not meet tol {config.picard_tol} in "
            f"{config.picard_max_iter} iterations (t={t_new:.6g})"
        )

    new_state = State(u=u_k, p=p_new, s=s_k, t=t_new)
    diag = _diagnostics(gd, problem, state, new_state, dt, g_vec, h_vec, iters)
    return new_state, diag


def _diagnostics(
    gd: GradientDiscretisation,
    problem: ProblemSpec,
    old: State,
    new: State,
    dt: float,
    g_vec: np.ndarray,
    h_vec: np.ndarray,
    iters: int,
) -> StepDiagnostics:
    a1 = problem.viscosity.a1
    ke_new = 0.5 * gd.l2_norm_u(new.u) ** 2
    ke_old = 0.5 * gd.l2_norm_u(old.u) ** 2
    dissip_u = a1 * dt * gd.grad_norm_u(new.u) ** 2
    work_u = dt * float(g_vec @ new.u)
    terms_u = max(ke_new, ke_old, dissip_u, abs(work_u), 1e-30)
    res_u = (ke_new - ke_old + dissip_u - work_u) / terms_u

    te_new = 0.5 * gd.l2_norm_s(new.s) ** 2
    te_old = 0.5 * gd.l2_norm_s(old.s) ** 2
    dissip_s = problem.mu * dt * gd.grad_norm_s(new.s) ** 2
    work_s = dt * float(h_vec @ new.s)
    terms_s = max(te_new, te_old, dissip_s, abs(work_s), 1e-30)
    res_s = (te_new - te_old + dissip_s - work_s) / terms_s

    return StepDiagnostics(
        picard_iters=iters,
        energy_residual_u=res_u,
        energy_residual_s=res_s,
        incompressibility_residual=_incompressibility_residual(gd, new.u),
    )


def solve_transient(
    gd: GradientDiscretisation,
    problem: ProblemSpec,
    time_grid: TimeGrid,
    config: SolverConfig = SolverConfig(),
) -> tuple[list[State], list[StepDiagnostics]]:
    """March over the grid; the full trajectory is retained."""
    states = [initial_state(gd, problem)]
    diagnostics: list[StepDiagnostics] = []
    for n, dt in enumerate(time_grid.steps):
        try:
            new_state, diag = step(gd, problem, states[-1], float(dt), config)
        except Exception as exc:
            context = f"while advancing time step {n} (t={time_grid.nodes[n]:.6g})"
            exc.args = (f"{exc}; {context}",)
            raise
        states.append(new_state)
        diagnostics.append(diag)
    return states, diagnostics
