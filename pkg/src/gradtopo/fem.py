"""P1 finite-element assembly and linear solvers for the discrete system.

All fields live on the single shared triangulation: displacements and the
adjoint are nodal 2-vectors, the two phase fields are nodal scalars, and
stresses are constant per element.  The interpolated elasticity tensor is
evaluated at the element centroid (one-point rule).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverError",
    "strain_displacement",
    "element_averages",
    "assemble_elastic_stiffness",
    "assemble_load",
    "assemble_body_coupling",
    "assemble_scalar_mass",
    "assemble_scalar_stiffness",
    "assemble_volume_row",
    "lumped_weights",
    "solve_spd",
    "solve_saddle",
    "compute_element_stress",
    "DirichletSystem",
]


class SolverError(RuntimeError):
    """Linear solver failed to reach the requested residual."""


def strain_displacement(mesh) -> np.ndarray:
    """Per-element 3x6 Voigt strain-displacement matrices B with eps = B u_e.

    Element dof order (u1x,u1y,u2x,u2y,u3x,u3y); Voigt (e11, e22, 2*e12).
    """
    M = mesh.element_count
    B = np.zeros((M, 3, 6))
    g = mesh.grads  # (M,3,2)
    for i in range(3):
        B[:, 0, 2 * i] = g[:, i, 0]
        B[:, 1, 2 * i + 1] = g[:, i, 1]
        B[:, 2, 2 * i] = g[:, i, 1]
        B[:, 2, 2 * i + 1] = g[:, i, 0]
    return B


def element_averages(mesh, nodal: np.ndarray) -> np.ndarray:
    """Centroid value of a P1 nodal field on every element."""
    return nodal[mesh.elements].mean(axis=1)


def _element_dofs(mesh) -> np.ndarray:
    el = mesh.elements
    dofs = np.empty((mesh.element_count, 6), dtype=int)
    dofs[:, 0::2] = 2 * el
    dofs[:, 1::2] = 2 * el + 1
    return dofs


def assemble_elastic_stiffness(mesh, material, phi: np.ndarray, chi: np.ndarray,
                               B: np.ndarray | None = None) -> sp.csr_matrix:
    """Global elasticity stiffness (2N x 2N, no boundary conditions applied)."""
    if B is None:
        B = strain_displacement(mesh)
    phi_e = element_averages(mesh, phi)
    chi_e = element_averages(mesh, chi)
    D = material.K_of(phi_e, chi_e)                      # (M,3,3)
    Ke = np.einsum("e,eji,ejk,ekl->eil", mesh.element_areas, B, D, B, optimize=True)
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.node_count
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return K


def _traction_edge_contributions(mesh, config):
    """Exact integration of the traction over the clipped Neumann edges.

    Yields (node, weight) pairs such that the load at a node is weight * g;
    sum of weights equals the covered segment length.
    """
    half = config.traction_length_eff / 2.0
    lo = config.traction_center_eff - half
    hi = config.traction_center_eff + half
    out = []
    for n1, n2 in mesh.neumann_edges():
        p1, p2 = mesh.nodes[n1], mesh.nodes[n2]
        L = float(np.hypot(*(p2 - p1)))
        # right-edge edges are vertical; clip by y, expressed in the edge parameter
        y1, y2 = p1[1], p2[1]
        ylo, yhi = min(y1, y2), max(y1, y2)
        c0 = max(ylo, lo)
        c1 = min(yhi, hi)
        if c1 <= c0:
            continue
        if y2 >= y1:
            s0, s1 = (c0 - y1) / (y2 - y1), (c1 - y1) / (y2 - y1)
        else:
            s0, s1 = (c1 - y1) / (y2 - y1), (c0 - y1) / (y2 - y1)
            s0, s1 = min(s0, s1), max(s0, s1)
        # int of (1-s) and s over [s0,s1], scaled by edge length
        w1 = L * ((s1 - s0) - 0.5 * (s1 ** 2 - s0 ** 2))
        w2 = L * 0.5 * (s1 ** 2 - s0 ** 2)
        out.append((n1, w1))
        out.append((n2, w2))
    return out


def assemble_load(mesh, config, phi: np.ndarray) -> np.ndarray:
    """Traction plus phi-weighted body-force load vector [N]."""
    contributions = _traction_edge_contributions(mesh, config)
    if config.traction_length_eff <= 0 or (not contributions and any(config.traction)):
        raise ValueError("traction segment has zero length or covers no boundary edge")
    f = np.zeros(2 * mesh.node_count)
    gx, gy = config.traction
    for node, w in contributions:
        f[2 * node] += w * gx
        f[2 * node + 1] += w * gy
    bx, by = config.body_force
    if bx != 0.0 or by != 0.0:
        body = np.array([bx, by])
        phi_e = element_averages(mesh, phi)
        share = (mesh.element_areas * phi_e) / 3.0     # one-point rule
        for i in range(3):
            nodes = mesh.elements[:, i]
            np.add.at(f, 2 * nodes, share * body[0])
            np.add.at(f, 2 * nodes + 1, share * body[1])
    return f


def assemble_body_coupling(mesh, config) -> sp.csr_matrix:
    """Matrix C (N x 2N) with phi^T C u = integral of phi f.u (one-point rule).

    C^T phi is the body-force part of the load; C u is its phi-sensitivity.
    """
    bx, by = config.body_force
    N = mesh.node_count
    rows, cols, vals = [], [], []
    share = mesh.element_areas / 9.0       # d(phi_bar)/d(phi_i) = 1/3, times A/3 per u node
    for i in range(3):
        ni = mesh.elements[:, i]
        for j in range(3):
            nj = mesh.elements[:, j]
            rows.append(ni)
            cols.append(2 * nj)
            vals.append(share * bx)
            rows.append(ni)
            cols.append(2 * nj + 1)
            vals.append(share * by)
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, 2 * N)).tocsr()


def assemble_scalar_mass(mesh, coeff: float = 1.0) -> sp.csr_matrix:
    """Consistent P1 mass matrix scaled by coeff; entries sum to coeff*|Omega|."""
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    Me = coeff * mesh.element_areas[:, None, None] * local
    el = mesh.elements
    rows = np.repeat(el, 3, axis=1).ravel()
    cols = np.tile(el, (1, 3)).ravel()
    N = mesh.node_count
    return sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def assemble_scalar_stiffness(mesh, coeff: float = 1.0) -> sp.csr_matrix:
    """P1 Laplacian scaled by coeff; constant fields lie in its null space."""
    g = mesh.grads
    Ke = coeff * mesh.element_areas[:, None, None] * np.einsum("eid,ejd->eij", g, g)
    el = mesh.elements
    rows = np.repeat(el, 3, axis=1).ravel()
    cols = np.tile(el, (1, 3)).ravel()
    N = mesh.node_count
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def lumped_weights(mesh) -> np.ndarray:
    """Nodal quadrature weights w_i = int N_i = third of the adjacent areas."""
    w = np.zeros(mesh.node_count)
    share = mesh.element_areas / 3.0
    for i in range(3):
        np.add.at(w, mesh.elements[:, i], share)
    return w


def assemble_volume_row(mesh) -> np.ndarray:
    """Row r with r.phi = integral of the P1 field phi (exact)."""
    return lumped_weights(mesh)


def solve_spd(A, rhs: np.ndarray, tol: float = 1e-10,
              maxiter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Guarantees ||A x - rhs|| <= tol * ||rhs|| or raises SolverError.
    Deterministic for fixed inputs.
    """
    rhs = np.asarray(rhs, dtype=float)
    nrhs = np.linalg.norm(rhs)
    if nrhs == 0.0:
        return np.zeros_like(rhs)
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has non-positive diagonal entries")
    inv_diag = 1.0 / diag
    if maxiter is None:
        maxiter = max(1000, 10 * A.shape[0])
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * nrhs:
            return x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(A @ x - rhs) / nrhs
    raise SolverError(f"PCG did not converge: relative residual {res:.3e} "
                      f"after {maxiter} iterations (tol {tol:.1e})")


def solve_saddle(A, r: np.ndarray, rhs: np.ndarray, target: float,
                 solve=None) -> tuple[np.ndarray, float]:
    """Solve [A r^T; r 0] (x, lam) = (rhs, target) by Schur complement.

    `solve` maps a right-hand side to A^{-1} rhs; defaults to solve_spd.
    """
    if solve is None:
        solve = lambda b: solve_spd(A, b)
    s1 = solve(rhs)
    s2 = solve(r)
    denom = float(r @ s2)
    if abs(denom) < 1e-300 or not np.isfinite(denom):
        raise SolverError("saddle-point breakdown: r A^-1 r^T is singular")
    lam = (float(r @ s1) - target) / denom
    return s1 - lam * s2, lam


def compute_element_stress(mesh, material, phi: np.ndarray, chi: np.ndarray,
                           u: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Constant per-element Voigt stress sigma = K(phi,chi) B u_e [MPa]."""
    if B is None:
        B = strain_displacement(mesh)
    dofs = _element_dofs(mesh)
    eps = np.einsum("eij,ej->ei", B, u[dofs])
    phi_e = element_averages(mesh, phi)
    chi_e = element_averages(mesh, chi)
    D = material.K_of(phi_e, chi_e)
    return np.einsum("eij,ej->ei", D, eps)


class DirichletSystem:
    """Row/column elimination of clamped dofs, preserving symmetry.

    Reduces K x = f to the free-dof block; fixed dofs are held at zero
    (homogeneous clamping), so no right-hand-side correction is needed.
    """

    def __init__(self, mesh, fixed_nodes: np.ndarray):
        if len(fixed_nodes) == 0:
            raise ValueError("Dirichlet node set must be non-empty")
        n = 2 * mesh.node_count
        fixed = np.zeros(n, dtype=bool)
        fixed[2 * fixed_nodes] = True
        fixed[2 * fixed_nodes + 1] = True
        self.free = np.flatnonzero(~fixed)
        self.n = n

    def reduce(self, K: sp.csr_matrix, f: np.ndarray):
        return K[self.free][:, self.free], f[self.free]

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.free] = x_free
        return x
