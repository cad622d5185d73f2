"""Hybrid-finite-volume realization of the gradient discretisation.

Unknowns sit on cells and faces (vector-valued for the velocity, scalar for
the temperature) with one pressure value per cell.  The gradient on each
sub-cell (cell,face) pair is the consistent cell gradient plus a stabilizing
face-residual term:

    grad_K v      = (1/|K|) sum_sigma |sigma| v_sigma (x) n_{K,sigma}
    grad_{K,s} v  = grad_K v + (sqrt(d)/d_{K,s}) R_{K,s}(v) (x) n_{K,s}
    R_{K,s}(v)    = v_sigma - v_K - grad_K v . (x_sigma - x_K)

with sub-cell quadrature weight |K_sigma| = |sigma| d_{K,sigma} / d.
The skew-symmetrized convection forms built here vanish exactly on their
diagonal, which gives unconditional discrete energy stability.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ViscosityRangeError
from .gd_core import ConvectionForms, GradientDiscretisation
from .mesh import Mesh, MeshGeometry, compute_geometry


def build_hfv(mesh: Mesh, geom: MeshGeometry | None = None) -> GradientDiscretisation:
    """Assemble the HFV operators for a mesh."""
    if geom is None:
        geom = compute_geometry(mesh)
    d = 2
    nc, nf = mesh.n_cells, mesh.n_faces
    nsub = len(geom.sub_cells)
    nu = 2 * (nc + nf)
    ns = nc + nf

    vols = geom.cell_volumes
    meas = geom.face_measures
    sub_volumes = meas[geom.sub_faces] * geom.d_ortho / d

    # Per-cell slices into the sub arrays (cells were visited in order).
    cell_start = np.zeros(nc + 1, dtype=np.int64)
    np.add.at(cell_start[1:], geom.sub_cells, 1)
    cell_start = np.cumsum(cell_start)

    # --- velocity/scalar gradient and divergence --------------------------
    grad_u_rows: list[int] = []
    grad_u_cols: list[int] = []
    grad_u_vals: list[float] = []
    grad_s_rows: list[int] = []
    grad_s_cols: list[int] = []
    grad_s_vals: list[float] = []
    div_rows: list[int] = []
    div_cols: list[int] = []
    div_vals: list[float] = []

    sqrt_d = np.sqrt(d)
    for k in range(nc):
        lo, hi = cell_start[k], cell_start[k + 1]
        faces_k = geom.sub_faces[lo:hi]
        normals_k = geom.sub_normals[lo:hi]            # (m, 2)
        meas_k = meas[faces_k]
        m = len(faces_k)
        # Consistent gradient coefficients: grad_K[.,j] gets
        # (|sigma|/|K|) n_j per face value.
        consist = (meas_k / vols[k])[:, None] * normals_k   # (m, 2)

        # Divergence = trace of grad_K: coefficient |sigma| n_i / |K| on
        # component i of the face value.
        for fi, f in enumerate(faces_k):
            for i in range(2):
                div_rows.append(k)
                div_cols.append(2 * nc + 2 * f + i)
                div_vals.append(consist[fi, i])

        # Residual geometry: r_proj[s, fi] = (|sigma_fi|/|K|) n_fi . (x_s - x_K)
        offsets = geom.face_midpoints[faces_k] - geom.cell_centroids[k]  # (m,2)
        r_proj = consist @ offsets.T                    # (m, m): row face', col sub
        stab = sqrt_d / geom.d_ortho[lo:hi]             # (m,)

        for si in range(m):                             # sub-cell index within K
            s = lo + si
            n_s = normals_k[si]
            for j in range(2):
                coef_n = stab[si] * n_s[j]
                # scalar rows: 2s + j ; velocity rows: 4s + 2i + j
                for fi, f in enumerate(faces_k):
                    val = consist[fi, j] + coef_n * (
                        (1.0 if fi == si else 0.0) - r_proj[fi, si]
                    )
                    # scalar face dof
                    grad_s_rows.append(2 * s + j)
                    grad_s_cols.append(nc + f)
                    grad_s_vals.append(val)
                    for i in range(2):
                        grad_u_rows.append(4 * s + 2 * i + j)
                        grad_u_cols.append(2 * nc + 2 * f + i)
                        grad_u_vals.append(val)
                # cell dof (enters only through the residual)
                grad_s_rows.append(2 * s + j)
                grad_s_cols.append(k)
                grad_s_vals.append(-coef_n)
                for i in range(2):
                    grad_u_rows.append(4 * s + 2 * i + j)
                    grad_u_cols.append(2 * k + i)
                    grad_u_vals.append(-coef_n)

    grad_u = sp.csr_matrix(
        (grad_u_vals, (grad_u_rows, grad_u_cols)), shape=(4 * nsub, nu)
    )
    grad_s = sp.csr_matrix(
        (grad_s_vals, (grad_s_rows, grad_s_cols)), shape=(2 * nsub, ns)
    )
    div_u = sp.csr_matrix((div_vals, (div_rows, div_cols)), shape=(nc, nu))

    # --- function/pressure reconstructions --------------------------------
    cell_u = np.arange(2 * nc)
    pi_u = sp.csr_matrix(
        (np.ones(2 * nc), (cell_u, cell_u)), shape=(2 * nc, nu)
    )
    cell_s = np.arange(nc)
    pi_s = sp.csr_matrix((np.ones(nc), (cell_s, cell_s)), shape=(nc, ns))
    chi_p = sp.identity(nc, format="csr")

    # --- Gram/mass matrices -----------------------------------------------
    w4 = sp.diags(np.repeat(sub_volumes, 4))
    w2 = sp.diags(np.repeat(sub_volumes, 2))
    gram_u = (grad_u.T @ w4 @ grad_u).tocsr()
    gram_s = (grad_s.T @ w2 @ grad_s).tocsr()
    mass_u = (pi_u.T @ sp.diags(np.repeat(vols, 2)) @ pi_u).tocsr()
    mass_s = (pi_s.T @ sp.diags(vols) @ pi_s).tocsr()
    mass_p = sp.diags(vols)
    div_coupling = (sp.diags(vols) @ div_u).tocsr()

    # --- boundary elimination ---------------------------------------------
    bnd_faces = mesh.boundary_faces
    bnd_u = (2 * nc + 2 * bnd_faces[:, None] + np.array([0, 1])).ravel()
    bnd_s = nc + bnd_faces
    free_u = np.setdiff1d(np.arange(nu), bnd_u)
    free_s = np.setdiff1d(np.arange(ns), bnd_s)

    dof_points = np.vstack([geom.cell_centroids, geom.face_midpoints])
    quad_points, quad_weights, quad_owners = _cell_quadrature(mesh, geom)

    forms = _make_forms(nc, nu, ns, geom, meas)

    return GradientDiscretisation(
        mesh=mesh,
        geom=geom,
        n_udofs=nu,
        n_sdofs=ns,
        n_pdofs=nc,
        pi_u=pi_u,
        grad_u=grad_u,
        div_u=div_u,
        pi_s=pi_s,
        grad_s=grad_s,
        chi_p=chi_p,
        sub_volumes=sub_volumes,
        gram_u=gram_u,
        gram_s=gram_s,
        mass_u=mass_u,
        mass_s=mass_s,
        mass_p=mass_p,
        div_coupling=div_coupling,
        free_u=free_u,
        bnd_u=bnd_u,
        free_s=free_s,
        bnd_s=bnd_s,
        dof_points=dof_points,
        quad_points=quad_points,
        quad_weights=quad_weights,
        quad_owners=quad_owners,
        forms=forms,
    )


def _cell_quadrature(mesh: Mesh, geom: MeshGeometry):
    """Degree-2 quadrature per polygonal cell: fan of triangles from the
    centroid, edge-midpoint rule on each triangle."""
    verts = mesh.vertices
    points, weights, owners = [], [], []
    for k, cell in enumerate(mesh.cells):
        c = geom.cell_centroids[k]
        for a, b in zip(cell, cell[1:] + cell[:1]):
            pa, pb = verts[a], verts[b]
            area = 0.5 * abs(
                (pa[0] - c[0]) * (pb[1] - c[1]) - (pb[0] - c[0]) * (pa[1] - c[1])
            )
            for q in (0.5 * (pa + pb), 0.5 * (pb + c), 0.5 * (c + pa)):
                points.append(q)
                weights.append(area / 3.0)
                owners.append(k)
    return np.asarray(points), np.asarray(weights), np.asarray(owners, dtype=np.int64)


def _make_forms(nc, nu, ns, geom: MeshGeometry, meas) -> ConvectionForms:
    sub_cells = geom.sub_cells
    sub_faces = geom.sub_faces
    sub_normals = geom.sub_normals
    sub_meas = meas[sub_faces]

    def _coeffs(w: np.ndarray) -> np.ndarray:
        # c_{K,sigma} = |sigma| w_K . n_{K,sigma}
        w_cells = w[: 2 * nc].reshape(nc, 2)
        return sub_meas * np.einsum("sj,sj->s", w_cells[sub_cells], sub_normals)

    def a_half_matrix(w: np.ndarray) -> sp.csr_matrix:
        # rows: cell dofs of the test function; cols: face dofs of the trial.
        c = _coeffs(w)
        rows = np.concatenate([2 * sub_cells, 2 * sub_cells + 1])
        cols = np.concatenate(
            [2 * nc + 2 * sub_faces, 2 * nc + 2 * sub_faces + 1]
        )
        data = np.concatenate([c, c])
        return sp.csr_matrix((data, (rows, cols)), shape=(nu, nu))

    def b_half_matrix(u: np.ndarray) -> sp.csr_matrix:
        c = _coeffs(u)
        return sp.csr_matrix((c, (sub_cells, nc + sub_faces)), shape=(ns, ns))

    def a_matrix(u_star: np.ndarray) -> sp.csr_matrix:
        half = a_half_matrix(u_star)
        return ((half - half.T) * 0.5).tocsr()

    def b_matrix(u: np.ndarray) -> sp.csr_matrix:
        half = b_half_matrix(u)
        return ((half - half.T) * 0.5).tocsr()

    def a_form(u_star: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        return float(v @ (a_matrix(u_star) @ u))

    def b_form(u: np.ndarray, s_dofs: np.ndarray, r: np.ndarray) -> float:
        return float(r @ (b_matrix(u) @ s_dofs))

    return ConvectionForms(
        a_form=a_form, b_form=b_form, a_matrix=a_matrix, b_matrix=b_matrix
    )


def conv_A(
    gd: GradientDiscretisation,
    u_star: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
) -> float:
    """Linearized skew-symmetric velocity convection; conv_A(gd, u, u, v) is
    the nonlinear form of the scheme."""
    return gd.forms.a_form(u_star, u, v)


def conv_B(
    gd: GradientDiscretisation, u: np.ndarray, s_dofs: np.ndarray, r: np.ndarray
) -> float:
    """Skew-symmetric temperature convection form."""
    return gd.forms.b_form(u, s_dofs, r)


def assemble_viscous(gd: GradientDiscretisation, s_dofs: np.ndarray, viscosity):
    """Stiffness matrix int V(S_K) grad u : grad v with V evaluated at cell
    values of the temperature reconstruction.

    viscosity: a ViscosityModel (callable with declared bounds a1, a2).
    """
    s_cells = (gd.pi_s @ s_dofs)
    values = np.asarray(viscosity(s_cells), dtype=float)
    if np.any(values < viscosity.a1 - 1e-12) or np.any(values > viscosity.a2 + 1e-12):
        bad = values[(values < viscosity.a1 - 1e-12) | (values > viscosity.a2 + 1e-12)]
        raise ViscosityRangeError(
            f"viscosity value {bad[0]:.6g} outside declared bounds "
            f"[{viscosity.a1}, {viscosity.a2}]"
        )
    v_sub = values[gd.geom.sub_cells]
    weights = sp.diags(np.repeat(gd.sub_volumes * v_sub, 4))
    return (gd.grad_u.T @ weights @ gd.grad_u).tocsr()
