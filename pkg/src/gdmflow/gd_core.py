"""Discrete spaces, reconstruction operators and diagnostic constants.

A GradientDiscretisation bundles the sparse matrix realizations of the
function/gradient/divergence/pressure reconstructions for the velocity,
temperature and pressure unknowns, together with the DOF bookkeeping
(cell + face layout, boundary elimination) and the convection-form
evaluators supplied by the concrete discretisation (see hfv module).

Velocity DOF layout: [2 per cell, then 2 per face], components interleaved.
Scalar DOF layout:   [1 per cell, then 1 per face].
Pressure DOF layout: [1 per cell].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EigSolverFailure, LinearSolverFailure, SingularGram
from .mesh import Mesh, MeshGeometry

POWER_ITER_TOL = 1e-8
POWER_ITER_CAP = 10_000


@dataclass(frozen=True)
class ConvectionForms:
    """Evaluators for the discrete convection terms.

    a_form(u_star, u, v): linearized velocity convection, skew-symmetric in
    (u, v); the nonlinear form is the diagonal u_star = u.
    b_form(u, S, r): temperature convection, skew-symmetric in (S, r).
    a_matrix(u_star) / b_matrix(u) return the sparse (skew-symmetric)
    matrices of the forms with the convecting field frozen.
    """

    a_form: Callable[[np.ndarray, np.ndarray, np.ndarray], float]
    b_form: Callable[[np.ndarray, np.ndarray, np.ndarray], float]
    a_matrix: Callable[[np.ndarray], sp.spmatrix]
    b_matrix: Callable[[np.ndarray], sp.spmatrix]


@dataclass(frozen=True)
class GradientDiscretisation:
    mesh: Mesh
    geom: MeshGeometry

    # DOF counts (full vectors, boundary included).
    n_udofs: int
    n_sdofs: int
    n_pdofs: int

    # Sparse operators on full DOF vectors.
    pi_u: sp.csr_matrix        # (2 nc, nu): cell samples of the velocity
    grad_u: sp.csr_matrix      # (4 nsub, nu): per-sub-cell 2x2 tensors, row-major
    div_u: sp.csr_matrix       # (nc, nu): trace of the consistent cell gradient
    pi_s: sp.csr_matrix        # (nc, ns)
    grad_s: sp.csr_matrix      # (2 nsub, ns)
    chi_p: sp.csr_matrix       # (nc, np): identity

    sub_volumes: np.ndarray    # quadrature weight per (cell, face) incidence

    # Gram/mass matrices and the pressure/divergence coupling.
    gram_u: sp.csr_matrix      # grad_u' W grad_u
    gram_s: sp.csr_matrix
    mass_u: sp.csr_matrix      # pi_u' diag(|K|) pi_u (cell dofs only)
    mass_s: sp.csr_matrix
    mass_p: sp.dia_matrix      # diag(|K|)
    div_coupling: sp.csr_matrix  # (nc, nu): rows |K| * div_u, i.e. q' D v = int chi q div v

    # Boundary elimination.
    free_u: np.ndarray
    bnd_u: np.ndarray
    free_s: np.ndarray
    bnd_s: np.ndarray

    # Interpolation points: cell centroids then face midpoints.
    dof_points: np.ndarray     # (nc + nf, 2)

    # Degree-2 cell quadrature (centroid fan, edge-midpoint rule) used for
    # data integrals against the piecewise-constant reconstructions.
    quad_points: np.ndarray    # (nq, 2)
    quad_weights: np.ndarray   # (nq,)
    quad_owners: np.ndarray    # (nq,) owning cell of each point

    forms: ConvectionForms

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    def grad_norm_u(self, v: np.ndarray) -> float:
        g = self.grad_u @ v
        w = np.repeat(self.sub_volumes, 4)
        return float(np.sqrt(g @ (w * g)))

    def grad_norm_s(self, r: np.ndarray) -> float:
        g = self.grad_s @ r
        w = np.repeat(self.sub_volumes, 2)
        return float(np.sqrt(g @ (w * g)))

    def l2_norm_u(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.mass_u @ v), 0.0)))

    def l2_norm_s(self, r: np.ndarray) -> float:
        return float(np.sqrt(max(r @ (self.mass_s @ r), 0.0)))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes t0 = 0 < ... < tN = T."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise ValueError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("time grid must start at t=0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("time nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, final_time: float, n_steps: int) -> "TimeGrid":
        if final_time <= 0.0 or n_steps < 1:
            raise ValueError("need final_time > 0 and n_steps >= 1")
        return cls(np.linspace(0.0, final_time, n_steps + 1))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def final_time(self) -> float:
        return float(self.nodes[-1])


@dataclass(frozen=True)
class DiscreteConstants:
    """Poincare-type constant and inf-sup constant of a discretisation."""

    poincare: float
    inf_sup: float


def interpolate_velocity(gd: GradientDiscretisation, f) -> np.ndarray:
    """Point-value interpolant: cell DOFs f(x_K), face DOFs f(x_sigma).

    f maps an (N, 2) array of points to an (N, 2) array of values.
    """
    values = np.asarray(f(gd.dof_points), dtype=float)
    if values.shape != gd.dof_points.shape:
        raise ValueError("velocity field must return one 2-vector per point")
    return values.ravel()


def interpolate_scalar(gd: GradientDiscretisation, f) -> np.ndarray:
    """Point-value interpolant of a scalar field at cell/face points."""
    values = np.asarray(f(gd.dof_points), dtype=float)
    if values.shape != (len(gd.dof_points),):
        raise ValueError("scalar field must return one value per point")
    return values


def _restrict(matrix: sp.spmatrix, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    return matrix.tocsr()[rows][:, cols]


def _power_iteration_max(
    a_ff: sp.spmatrix, b_ff: sp.spmatrix, tol: float = POWER_ITER_TOL
) -> float:
    """Largest eigenvalue of the pencil (A, B), B SPD, via power iteration on
    B^{-1} A with a sparse factorization of B."""
    n = a_ff.shape[0]
    if n == 0:
        raise SingularGram("empty space in eigenvalue computation")
    try:
        lu = spla.splu(b_ff.tocsc())
    except RuntimeError as exc:
        raise SingularGram(f"gradient Gram factorization failed: {exc}") from exc
    # a fixed pseudo-random start avoids being orthogonal to the dominant
    # eigenvector (the ones vector is, on symmetric meshes)
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.sqrt(x @ (b_ff @ x))
    lam = 0.0
    for _ in range(POWER_ITER_CAP):
        y = lu.solve(a_ff @ x)
        norm_b = np.sqrt(max(y @ (b_ff @ y), 0.0))
        if norm_b == 0.0:
            return 0.0  # A vanishes on the space
        y /= norm_b
        lam_new = float((y @ (a_ff @ y)) / (y @ (b_ff @ y)))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            return lam_new
        lam, x = lam_new, y
    raise EigSolverFailure(
        f"power iteration did not converge within {POWER_ITER_CAP} iterations"
    )


def compute_CD(gd: GradientDiscretisation) -> float:
    """Sum of the three operator-norm ratios bounding reconstructions by
    gradients: velocity L2/gradient, scalar L2/gradient, divergence/gradient.
    """
    g_u = _restrict(gd.gram_u, gd.free_u, gd.free_u)
    g_s = _restrict(gd.gram_s, gd.free_s, gd.free_s)
    m_u = _restrict(gd.mass_u, gd.free_u, gd.free_u)
    m_s = _restrict(gd.mass_s, gd.free_s, gd.free_s)
    div_gram = (gd.div_u.T @ gd.mass_p @ gd.div_u).tocsr()
    d_u = _restrict(div_gram, gd.free_u, gd.free_u)
    ratios = [
        np.sqrt(max(_power_iteration_max(m_u, g_u), 0.0)),
        np.sqrt(max(_power_iteration_max(m_s, g_s), 0.0)),
        np.sqrt(max(_power_iteration_max(d_u, g_u), 0.0)),
    ]
    return float(sum(ratios))


def compute_BD(gd: GradientDiscretisation, chunk: int = 256) -> float:
    """Inf-sup constant: smallest singular value of the scaled pressure /
    divergence coupling, restricted to zero-mean pressures."""
    import scipy.linalg as la

    nc = gd.n_cells
    vols = gd.geom.cell_volumes
    null = la.null_space(vols[None, :])
    if null.shape[1] == 0:
        raise SingularGram("zero-mean pressure space is trivial")

    g_ff = _restrict(gd.gram_u, gd.free_u, gd.free_u)
    d_f = gd.div_coupling.tocsr()[:, gd.free_u]
    try:
        lu = spla.splu(g_ff.tocsc())
    except RuntimeError as exc:
        raise SingularGram(f"gradient Gram factorization failed: {exc}") from exc

    dt_dense = d_f.T.toarray()
    coupling = np.empty((nc, nc))
    for start in range(0, nc, chunk):
        sol = lu.solve(dt_dense[:, start : start + chunk])
        coupling[:, start : start + chunk] = d_f @ sol

    k_z = null.T @ coupling @ null
    m_z = null.T @ (vols[:, None] * null)
    k_z = 0.5 * (k_z + k_z.T)
    try:
        eigvals = la.eigh(k_z, m_z, eigvals_only=True)
    except la.LinAlgError as exc:
        raise EigSolverFailure(f"dense eigensolve failed: {exc}") from exc
    return float(np.sqrt(max(eigvals[0], 0.0)))


def dual_seminorm_velocity(gd: GradientDiscretisation, w_cells: np.ndarray) -> float:
    """Dual seminorm of a piecewise-constant vector field: the supremum of
    int w . Pi v over discretely divergence-free v with unit gradient norm.

    Computed as a saddle-point solve for the Riesz representative; the
    per-cell divergence constraints are rank-deficient by one (constants),
    fixed by a scalar multiplier coupled to the cell volumes.
    """
    w_cells = np.asarray(w_cells, dtype=float).reshape(gd.n_cells, 2)
    load = gd.pi_u.T @ (np.repeat(gd.geom.cell_volumes, 2) * w_cells.ravel())
    f = load[gd.free_u]

    g_ff = _restrict(gd.gram_u, gd.free_u, gd.free_u)
    d_f = gd.div_coupling.tocsr()[:, gd.free_u]
    nc = gd.n_cells
    vols = gd.geom.cell_volumes
    system = sp.bmat(
        [
            [g_ff, d_f.T, None],
            [d_f, None, sp.csc_matrix(vols[:, None])],
            [None, sp.csc_matrix(vols[None, :]), None],
        ],
        format="csc",
    )
    rhs = np.concatenate([f, np.zeros(nc + 1)])
    try:
        sol = spla.splu(system).solve(rhs)
    except RuntimeError as exc:
        raise LinearSolverFailure(f"saddle-point solve failed: {exc}") from exc
    v = sol[: len(f)]
    return float(np.sqrt(max(f @ v, 0.0)))


def dual_seminorm_scalar(gd: GradientDiscretisation, w_cells: np.ndarray) -> float:
    """Scalar analogue of dual_seminorm_velocity (no divergence constraint)."""
    w_cells = np.asarray(w_cells, dtype=float).reshape(gd.n_cells)
    load = gd.pi_s.T @ (gd.geom.cell_volumes * w_cells)
    f = load[gd.free_s]
    g_ff = _restrict(gd.gram_s, gd.free_s, gd.free_s)
    try:
        r = spla.splu(g_ff.tocsc()).solve(f)
    except RuntimeError as exc:
        raise LinearSolverFailure(f"scalar Riesz solve failed: {exc}") from exc
    return float(np.sqrt(max(f @ r, 0.0)))
