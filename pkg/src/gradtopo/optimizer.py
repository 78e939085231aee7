"""Staggered Allen-Cahn optimization loop.

Each iteration solves, in order: the elastic state, the adjoint system
(sharing the state factorization), and the coupled linear KKT step for the
two phase fields under the exact volume constraint, followed by the nodal
clamp onto the admissible set 0 <= chi <= phi <= 1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gradtopo import fem, stress
from gradtopo.config import RunConfig, validate
from gradtopo.material import MaterialModel, W, dW
from gradtopo.mesh import build_rect_mesh, locate_region_nodes

__all__ = ["OptimizerState", "IterationRecord", "Optimizer", "run",
           "initialize_fields", "rescale"]


@dataclass
class OptimizerState:
    """Iterate bundle produced by the optimization loop."""

    iter: int
    phi: np.ndarray
    chi: np.ndarray
    lam: float
    u: np.ndarray
    U: np.ndarray
    sigma: np.ndarray           # (M,3) Voigt per element
    delta_phi: float
    delta_chi: float
    compliance: float
    m_chi: float
    objective: float
    converged: bool = False
    volume_presnap: float = 0.0  # integral of phi right after the KKT solve


@dataclass
class IterationRecord:
    iter: int
    objective: float
    compliance: float
    m_chi: float
    delta_phi: float
    delta_chi: float
    lam: float
    max_von_mises: float
    wall_time: float

    # wall_time is excluded from the CSV so identical runs stay byte-identical
    CSV_FIELDS = ("iter", "objective", "compliance", "m_chi", "delta_phi",
                  "delta_chi", "lam", "max_von_mises")


def rescale(values: np.ndarray, lower, upper) -> np.ndarray:
    """Entrywise clamp onto [lower, upper] (idempotent)."""
    return np.minimum(np.maximum(values, lower), upper)


def initialize_fields(config: RunConfig, mesh) -> tuple[np.ndarray, np.ndarray]:
    """Uniform phi0 = chi0 = m, frozen-region overrides, optional seeded noise."""
    m = config.volume_fraction
    N = mesh.node_count
    phi = np.full(N, m)
    chi = np.full(N, m)
    if config.perturb > 0.0:
        rng = np.random.default_rng(config.seed)
        phi = phi + config.perturb * (2.0 * rng.random(N) - 1.0)
        phi = np.clip(phi, 0.0, 1.0)
    for box in config.fixed_void:
        phi[locate_region_nodes(mesh, box)] = 0.0
    for box in config.fixed_solid:
        phi[locate_region_nodes(mesh, box)] = 1.0
    if config.beta != 1.0:
        chi = np.minimum(chi, phi)
    # beta = 1: chi is inert (dK_dchi = 0) and stays at the uniform fraction m
    return phi, chi


class Optimizer:
    """Holds the mesh, material, and prefactorized constant operators."""

    def __init__(self, config: RunConfig):
        violations = validate(config)
        if violations:
            raise ValueError("invalid configuration:\n  " + "\n  ".join(violations))
        self.config = config
        self.mesh = build_rect_mesh(config)
        self.material = MaterialModel.from_config(config)
        self.B = fem.strain_displacement(self.mesh)
        self.bc = fem.DirichletSystem(self.mesh, self.mesh.dirichlet_nodes())
        self.weights = fem.lumped_weights(self.mesh)           # volume row
        self.M_raw = fem.assemble_scalar_mass(self.mesh)
        self.K_raw = fem.assemble_scalar_stiffness(self.mesh)
        self.area = self.mesh.area
        self.volume_target = config.volume_fraction * self.area
        # beta = 1: chi never enters the physics (dK_dchi = 0), so the
        # two-scale field degenerates and chi stays at the uniform fraction m
        self.single_material = config.beta == 1.0

        gp = config.gamma_phi
        gc = config.gamma_chi_eff
        self._phase_factor_cache: dict[float, tuple] = {}
        self._phase_ops(config.tau)

        self.traction_load = fem.assemble_load(self.mesh, config,
                                               np.ones(self.mesh.node_count))
        self.has_body = any(config.body_force)
        if self.has_body:
            self.C = fem.assemble_body_coupling(self.mesh, config)
            # strip the phi=1 body part so traction_load is pure traction
            self.traction_load = self.traction_load - self.C.T @ np.ones(self.mesh.node_count)
        else:
            self.C = None
        if config.thickness != 1.0:
            # line load g [N/mm] acts on the thickness-t edge: the plane-stress
            # solve sees the per-thickness traction g / t
            self.traction_load = self.traction_load / config.thickness

        # bounds honoring the frozen regions
        N = self.mesh.node_count
        self.phi_lower = np.zeros(N)
        self.phi_upper = np.ones(N)
        for box in config.fixed_void:
            self.phi_upper[locate_region_nodes(self.mesh, box)] = 0.0
        for box in config.fixed_solid:
            self.phi_lower[locate_region_nodes(self.mesh, box)] = 1.0

        # elastic assembly index arrays, built once
        el = self.mesh.elements
        dofs = np.empty((self.mesh.element_count, 6), dtype=int)
        dofs[:, 0::2] = 2 * el
        dofs[:, 1::2] = 2 * el + 1
        self._rows = np.repeat(dofs, 6, axis=1).ravel()
        self._cols = np.tile(dofs, (1, 6)).ravel()
        self._dofs = dofs

    # --- operators ---------------------------------------------------------

    def _phase_ops(self, tau: float):
        """(Pre)factorized phase-field operators for a given pseudo-time step."""
        if tau not in self._phase_factor_cache:
            cfg = self.config
            gp, gc = cfg.gamma_phi, cfg.gamma_chi_eff
            A_phi = (gp / tau) * self.M_raw + cfg.kappa1 * gp * self.K_raw
            if cfg.stabilization > 0.0 and not cfg.literal_rhs:
                A_phi = A_phi + (cfg.kappa1 / gp) * cfg.stabilization \
                    * sp.diags(self.weights)
            tau_c = cfg.tau_chi_eff
            if cfg.chi_solver == "obstacle":
                # lumped inertia keeps A_chi an M-matrix on the right-triangle
                # mesh, which the active-set bound solver needs to terminate
                A_chi = (gc / tau_c) * sp.diags(self.weights) \
                    + cfg.kappa2 * gc * self.K_raw
            else:
                A_chi = (gc / tau_c) * self.M_raw + cfg.kappa2 * gc * self.K_raw
            if cfg.solver == "direct":
                lu_phi = spla.splu(A_phi.tocsc())
                lu_chi = spla.splu(A_chi.tocsc())
                solve_phi = lu_phi.solve
                solve_chi = lu_chi.solve
            else:
                solve_phi = lambda b: fem.solve_spd(A_phi, b, tol=cfg.linear_tol)
                solve_chi = lambda b: fem.solve_spd(A_chi, b, tol=cfg.linear_tol)
            s2 = solve_phi(self.weights)
            self._phase_factor_cache[tau] = (A_phi, A_chi, solve_phi, solve_chi, s2)
        return self._phase_factor_cache[tau]

    def _assemble_elastic(self, phi, chi) -> sp.csr_matrix:
        phi_e = fem.element_averages(self.mesh, phi)
        chi_e = fem.element_averages(self.mesh, chi)
        D = self.material.K_of(phi_e, chi_e)
        Ke = np.einsum("e,eji,ejk,ekl->eil", self.mesh.element_areas,
                       self.B, D, self.B, optimize=True)
        n = 2 * self.mesh.node_count
        return sp.coo_matrix((Ke.ravel(), (self._rows, self._cols)),
                             shape=(n, n)).tocsr()

    def _load(self, phi) -> np.ndarray:
        f = self.traction_load.copy()
        if self.has_body:
            f += self.C.T @ phi
        return f

    def _solve_reduced(self, K_red, rhs_red):
        if self.config.solver == "direct":
            lu = spla.splu(K_red.tocsc())
            return lu.solve, lu.solve(rhs_red)
        solve = lambda b: fem.solve_spd(K_red, b, tol=self.config.linear_tol)
        return solve, solve(rhs_red)

    # --- staggered sub-steps ------------------------------------------------

    def state_solve(self, phi, chi):
        """Elastic solve; returns (u, sigma, reusable reduced-system solver)."""
        K = self._assemble_elastic(phi, chi)
        f = self._load(phi)
        K_red, f_red = self.bc.reduce(K, f)
        solve, u_red = self._solve_reduced(K_red, f_red)
        u = self.bc.expand(u_red)
        sigma = fem.compute_element_stress(self.mesh, self.material, phi, chi,
                                           u, B=self.B)
        return u, sigma, solve

    def adjoint_solve(self, phi, chi, aggregate, solve):
        """Adjoint solve reusing the state factorization (same operator)."""
        cfg = self.config
        rhs = cfg.kappa4 * self.traction_load.copy()
        if self.has_body:
            rhs += cfg.kappa3 * (self.C.T @ phi)
        rhs += stress.adjoint_stress_load(aggregate, self.mesh, self.material,
                                          phi, chi, cfg.kappa5, B=self.B)
        return self.bc.expand(solve(rhs[self.bc.free]))

    def _mechanical_driving(self, phi, chi, u, U, aggregate):
        """Nodal sensitivity loads from the elastic interpolation.

        Returns (q_s, q_sp): the phi- and chi-driving fields
        integral of N_i * dK_d{phi,chi} Sigma : eps(u), one-point rule, with
        Sigma = eps(U) - kappa5 * F_sigma.
        """
        mesh, mat, cfg = self.mesh, self.material, self.config
        eps_u = np.einsum("eij,ej->ei", self.B, u[self._dofs])
        Sigma = np.einsum("eij,ej->ei", self.B, U[self._dofs])
        if cfg.kappa5 != 0.0:
            Sigma = Sigma - cfg.kappa5 * stress.pointwise_penalty_gradient(aggregate, mesh)
        phi_e = fem.element_averages(mesh, phi)
        chi_e = fem.element_averages(mesh, chi)
        sA = mat.stiffness_factor_dphi(phi_e, chi_e)
        sC = mat.stiffness_factor_dchi(phi_e, chi_e)
        core = np.einsum("ej,jk,ek->e", Sigma, mat.K_A, eps_u)
        share = mesh.element_areas / 3.0
        q_s = np.zeros(mesh.node_count)
        q_sp = np.zeros(mesh.node_count)
        for i in range(3):
            np.add.at(q_s, mesh.elements[:, i], share * sA * core)
            np.add.at(q_sp, mesh.elements[:, i], share * sC * core)
        return q_s, q_sp

    def phase_field_step(self, phi, chi, u, U, aggregate, tau=None):
        """One semi-implicit gradient-flow step; returns (phi*, chi*, lambda).

        phi* satisfies the volume constraint exactly (pre-projection); the
        caller is responsible for the subsequent rescale.
        """
        cfg = self.config
        tau = cfg.tau if tau is None else tau
        A_phi, A_chi, solve_phi, solve_chi, s2 = self._phase_ops(tau)
        gp, gc = cfg.gamma_phi, cfg.gamma_chi_eff

        q_s, q_sp = self._mechanical_driving(phi, chi, u, U, aggregate)
        if cfg.literal_rhs:
            # coefficients exactly as printed in the discrete matrix list
            rhs_phi = (gp / tau) * (self.M_raw @ phi) + q_s \
                + (cfg.kappa3 / gp) * (self.weights * dW(phi))
        else:
            rhs_phi = (gp / tau) * (self.M_raw @ phi) + q_s \
                - (cfg.kappa1 / gp) * (self.weights * dW(phi))
            if cfg.stabilization > 0.0:
                # convex-concave splitting: the extra L*(phi' - phi) term
                # cancels at stationarity, so steady states are unchanged while
                # the explicit double-well update becomes stable for large tau
                rhs_phi += (cfg.kappa1 / gp) * cfg.stabilization \
                    * (self.weights * phi)
        if self.has_body:
            rhs_phi -= cfg.kappa3 * (self.C @ u) + (self.C @ U)

        phi_new, lam = fem.solve_saddle(A_phi, self.weights, rhs_phi,
                                        self.volume_target,
                                        solve=lambda b: solve_phi(b) if b is not self.weights else s2)
        if self.single_material:
            chi_new = chi
        else:
            tau_c = cfg.tau_chi_eff
            if cfg.chi_solver == "obstacle":
                rhs_chi = (gc / tau_c) * (self.weights * chi) + q_sp
                # bounds use the projected phi so the subsequent clamp is a no-op
                phi_proj = rescale(phi_new, self.phi_lower, self.phi_upper)
                chi_new = self._solve_obstacle(A_chi, rhs_chi,
                                               np.zeros_like(phi_proj), phi_proj,
                                               chi)
            else:
                rhs_chi = (gc / tau_c) * (self.M_raw @ chi) + q_sp
                chi_new = solve_chi(rhs_chi)
        return phi_new, chi_new, lam

    def _solve_obstacle(self, A, rhs, lower, upper, x0, max_cycles=30):
        """Solve the box-constrained SPD system: A x = rhs on the inactive set,
        lower <= x <= upper, complementarity on the bounds.

        Primal-dual active-set iteration; this respects the variational
        inequality directly, so the gradient-penalty operator acts with the
        bound constraints instead of being clipped after the fact.
        """
        A = A.tocsr()
        x = np.clip(x0, lower, upper)
        act_lo = x <= lower
        act_hi = x >= upper
        for _ in range(max_cycles):
            free = ~(act_lo | act_hi)
            x = np.where(act_lo, lower, np.where(act_hi, upper, x))
            if np.any(free):
                idx = np.flatnonzero(free)
                A_ff = A[idx][:, idx]
                b = rhs[idx] - A[idx] @ np.where(free, 0.0, x)
                x[idx] = spla.spsolve(A_ff.tocsc(), b)
            g = A @ x - rhs                     # gradient of the QP
            new_lo = g + (lower - x) > 0.0
            new_hi = -g + (x - upper) > 0.0
            if np.array_equal(new_lo, act_lo) and np.array_equal(new_hi, act_hi):
                break
            act_lo, act_hi = new_lo, new_hi
        return np.clip(x, lower, upper)

    # --- diagnostics --------------------------------------------------------

    def aggregate_of(self, sigma):
        cfg = self.config
        return stress.pnorm_aggregate(sigma, self.mesh, cfg.yield_stress,
                                      cfg.pnorm_p, normalized=cfg.pnorm_normalized)

    def compliance_of(self, phi, u) -> float:
        """Load work over the whole plate: thickness x per-thickness work."""
        c = float(self.traction_load @ u)
        if self.has_body:
            c += self.config.kappa3 * float(phi @ (self.C @ u))
        return c * self.config.thickness

    def m_chi_of(self, chi) -> float:
        return float(self.weights @ chi) / self.area

    def objective_of(self, phi, chi, u, aggregate) -> float:
        """Discrete cost: Ginzburg-Landau + chi-gradient + load work + stress.

        This is the Lyapunov functional of the discrete flow (the chi-gradient
        term carries the same kappa2*gamma_chi scaling as the chi operator).
        """
        cfg = self.config
        gp, gc = cfg.gamma_phi, cfg.gamma_chi_eff
        gl = cfg.kappa1 * (float(self.weights @ W(phi)) / gp
                           + 0.5 * gp * float(phi @ (self.K_raw @ phi)))
        grad_chi = 0.5 * cfg.kappa2 * gc * float(chi @ (self.K_raw @ chi))
        work = cfg.kappa4 * float(self.traction_load @ u)
        if self.has_body:
            work += cfg.kappa3 * float(phi @ (self.C @ u))
        stress_term = cfg.kappa5 * self.area * aggregate.F_value
        return gl + grad_chi + work + stress_term

    def l2_norm(self, v) -> float:
        return float(np.sqrt(max(v @ (self.M_raw @ v), 0.0)))

    # --- adjoint-consistency helpers (used by the gradient oracle tests) ----

    def reduced_objective(self, phi, chi) -> float:
        u, sigma, _ = self.state_solve(phi, chi)
        return self.objective_of(phi, chi, u, self.aggregate_of(sigma))

    def phi_gradient(self, phi, chi) -> np.ndarray:
        """Exact gradient of reduced_objective w.r.t. nodal phi (adjoint route)."""
        cfg = self.config
        u, sigma, solve = self.state_solve(phi, chi)
        aggregate = self.aggregate_of(sigma)
        U = self.adjoint_solve(phi, chi, aggregate, solve)
        q_s, _ = self._mechanical_driving(phi, chi, u, U, aggregate)
        g = (cfg.kappa1 / cfg.gamma_phi) * (self.weights * dW(phi)) \
            + cfg.kappa1 * cfg.gamma_phi * (self.K_raw @ phi) - q_s
        if self.has_body:
            g += cfg.kappa3 * (self.C @ u) + (self.C @ U)
        return g

    # --- main loop ----------------------------------------------------------

    def run(self, callback=None) -> tuple[OptimizerState, list[IterationRecord]]:
        cfg = self.config
        t0 = time.perf_counter()
        phi, chi = initialize_fields(cfg, self.mesh)
        history: list[IterationRecord] = []
        state = None
        prev_objective = None

        for it in range(1, cfg.max_iter + 1):
            u, sigma, solve = self.state_solve(phi, chi)
            aggregate = self.aggregate_of(sigma)
            U = self.adjoint_solve(phi, chi, aggregate, solve)

            tau = cfg.tau
            for attempt in range(6):
                phi_star, chi_star, lam = self.phase_field_step(
                    phi, chi, u, U, aggregate, tau=tau)
                volume_presnap = float(self.weights @ phi_star)
                phi_new = rescale(phi_star, self.phi_lower, self.phi_upper)
                chi_new = chi if self.single_material else rescale(chi_star, 0.0, phi_new)
                if not cfg.safeguard or prev_objective is None or attempt == 5:
                    break
                u_try, sigma_try, _ = self.state_solve(phi_new, chi_new)
                obj_try = self.objective_of(phi_new, chi_new, u_try,
                                            self.aggregate_of(sigma_try))
                if obj_try <= prev_objective * 1.01:
                    break
                tau *= 0.5

            delta_phi = self.l2_norm(phi_new - phi)
            delta_chi = self.l2_norm(chi_new - chi)
            phi, chi = phi_new, chi_new

            compliance = self.compliance_of(phi, u)
            m_chi = self.m_chi_of(chi)
            objective = self.objective_of(phi, chi, u, aggregate)
            prev_objective = objective
            converged = delta_phi < cfg.tol and delta_chi < cfg.tol
            state = OptimizerState(
                iter=it, phi=phi, chi=chi, lam=lam, u=u, U=U, sigma=sigma,
                delta_phi=delta_phi, delta_chi=delta_chi,
                compliance=compliance, m_chi=m_chi, objective=objective,
                converged=converged, volume_presnap=volume_presnap)
            record = IterationRecord(
                iter=it, objective=objective, compliance=compliance,
                m_chi=m_chi, delta_phi=delta_phi, delta_chi=delta_chi,
                lam=lam, max_von_mises=float(aggregate.sigma_e.max(initial=0.0)),
                wall_time=time.perf_counter() - t0)
            history.append(record)
            if callback is not None:
                callback(state, record)
            if converged:
                break

        # final analysis on the last projected fields
        u, sigma, solve = self.state_solve(phi, chi)
        aggregate = self.aggregate_of(sigma)
        state.u = u
        state.sigma = sigma
        state.compliance = self.compliance_of(phi, u)
        state.objective = self.objective_of(phi, chi, u, aggregate)
        return state, history


def run(config: RunConfig, callback=None):
    """Convenience wrapper: build an Optimizer and execute the loop."""
    return Optimizer(config).run(callback=callback)
