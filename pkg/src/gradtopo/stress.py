"""Von Mises equivalent stress, global p-norm aggregation, and the
stress-penalty load that feeds the adjoint solve.

The aggregate is a pure ratio: the p-th power of sigma_e/sigma_y is averaged
over the domain (volume-normalized) before taking the p-th root, so the
penalty (sigma_pn - 1)^2 compares directly against the yield surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gradtopo import fem

__all__ = ["StressAggregate", "von_mises", "von_mises_gradient",
           "pnorm_aggregate", "adjoint_stress_load"]


@dataclass(frozen=True)
class StressAggregate:
    """Global p-norm stress state and its exact stress gradient.

    sigma_pn  : dimensionless aggregate ratio
    sigma_e   : (M,) per-element von Mises stress [MPa]
    F_value   : (sigma_pn - 1)^2
    dF_dsigma : (M,3) d F_value / d sigma_e(Voigt), area weighting included
    """

    sigma_pn: float
    sigma_e: np.ndarray
    F_value: float
    dF_dsigma: np.ndarray


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """Plane-stress von Mises stress of (M,3) Voigt stresses."""
    s11, s22, s12 = sigma[..., 0], sigma[..., 1], sigma[..., 2]
    return np.sqrt(s11 * s11 - s11 * s22 + s22 * s22 + 3.0 * s12 * s12)


def von_mises_gradient(sigma: np.ndarray) -> np.ndarray:
    """d(sigma_vm)/d(sigma Voigt); zero at the sigma_vm=0 kink."""
    vm = von_mises(sigma)
    grad = np.zeros_like(sigma)
    nz = vm > 0.0
    inv = np.zeros_like(vm)
    inv[nz] = 0.5 / vm[nz]
    grad[..., 0] = (2.0 * sigma[..., 0] - sigma[..., 1]) * inv
    grad[..., 1] = (2.0 * sigma[..., 1] - sigma[..., 0]) * inv
    grad[..., 2] = 6.0 * sigma[..., 2] * inv
    return grad


def pnorm_aggregate(sigma: np.ndarray, mesh, sigma_y: float, p: int,
                    normalized: bool = True) -> StressAggregate:
    """Aggregate (M,3) Voigt stresses into the p-norm ratio and its gradient.

    With normalized=True (default): sigma_pn = (sum_e w_e r_e^p)^(1/p),
    w_e = A_e/|Omega|, r_e = sigma_e/sigma_y.  The unnormalized variant
    drops the 1/|Omega| and carries units of mm^(2/p).
    """
    sigma_e = von_mises(sigma)
    r = sigma_e / sigma_y
    w = mesh.element_areas / (mesh.area if normalized else 1.0)
    rmax = float(r.max(initial=0.0))
    if rmax == 0.0:
        return StressAggregate(0.0, sigma_e, 1.0, np.zeros_like(sigma))
    # factor out the max ratio for overflow-free large p
    s = float((w * (r / rmax) ** p).sum())
    sigma_pn = rmax * s ** (1.0 / p)
    F_value = (sigma_pn - 1.0) ** 2
    scale = 2.0 * (sigma_pn - 1.0) * sigma_pn ** (1 - p) / sigma_y
    dF = (scale * w * r ** (p - 1))[:, None] * von_mises_gradient(sigma)
    return StressAggregate(float(sigma_pn), sigma_e, float(F_value), dF)


def pointwise_penalty_gradient(aggregate: StressAggregate, mesh) -> np.ndarray:
    """Per-element F_sigma field (the density whose area integral recovers
    the weighted dF_dsigma)."""
    return aggregate.dF_dsigma * (mesh.area / mesh.element_areas)[:, None]


def adjoint_stress_load(aggregate: StressAggregate, mesh, material,
                        phi: np.ndarray, chi: np.ndarray, kappa5: float,
                        B: np.ndarray | None = None) -> np.ndarray:
    """Assemble the stress-penalty right-hand side of the adjoint system.

    Element-wise kappa5 * K(phi,chi) F_sigma contracted with the P1 strain
    test functions; zero for kappa5 = 0 or an on-constraint stress field.
    """
    out = np.zeros(2 * mesh.node_count)
    if kappa5 == 0.0:
        return out
    if B is None:
        B = fem.strain_displacement(mesh)
    F_sigma = pointwise_penalty_gradient(aggregate, mesh)
    phi_e = fem.element_averages(mesh, phi)
    chi_e = fem.element_averages(mesh, chi)
    D = material.K_of(phi_e, chi_e)
    q_e = kappa5 * mesh.element_areas[:, None] * np.einsum(
        "eji,ejk,ek->ei", B, D, F_sigma, optimize=True)   # (M,6)
    el = mesh.elements
    for i in range(3):
        np.add.at(out, 2 * el[:, i], q_e[:, 2 * i])
        np.add.at(out, 2 * el[:, i] + 1, q_e[:, 2 * i + 1])
    return out
