"""Graded plane-stress elasticity interpolation and the double-well potential.

The elasticity tensor factorizes as a scalar stiffness factor times the base
plane-stress Voigt matrix of the bulk material:

    K(phi, chi) = k_m(chi) * (phi^3 + g^2 (1-phi)^3) * K_A

with k_m(chi) = chi + beta*(1-chi) interpolating between the bulk material
(chi=1) and a beta-fraction soft material (chi=0), and g the ersatz parameter
setting the void stiffness floor g^2 (by default the interface-width
parameter gamma_phi).  Voigt convention:
(s11, s22, s12) with engineering shear strain.
"""

from __future__ import annotations

import numpy as np

__all__ = ["MaterialModel", "W", "dW", "plane_stress_matrix"]


def plane_stress_matrix(E: float, nu: float) -> np.ndarray:
    """3x3 plane-stress Voigt elasticity matrix [MPa]."""
    c = E / (1.0 - nu * nu)
    return c * np.array([[1.0, nu, 0.0],
                         [nu, 1.0, 0.0],
                         [0.0, 0.0, (1.0 - nu) / 2.0]])


def W(phi):
    """Double-well potential with minima at 0 and 1."""
    return (phi - phi * phi) ** 2


def dW(phi):
    return 2.0 * (phi - phi * phi) * (1.0 - 2.0 * phi)


class MaterialModel:
    """Interpolated elasticity K(phi,chi), its partial derivatives, and K_A.

    Pure functions over immutable parameters; all evaluators accept scalars
    or same-shape arrays and clamp (phi, chi) to [0,1] first.

    With literal_km=True the soft phase uses the 1/beta weighting
    k_m(chi) = chi + (1-chi)/beta instead (chi=0 then being the stiffer
    phase); the default keeps chi=1 as the full material so beta=1
    degenerates to a single material.
    """

    def __init__(self, E: float, nu: float, beta: float, gamma_phi: float,
                 literal_km: bool = False):
        self.E = float(E)
        self.nu = float(nu)
        self.beta = float(beta)
        self.gamma = float(gamma_phi)
        self.literal_km = bool(literal_km)
        self.K_A = plane_stress_matrix(E, nu)

    @classmethod
    def from_config(cls, config) -> "MaterialModel":
        return cls(config.youngs_modulus, config.poisson, config.beta,
                   config.ersatz_eff, literal_km=config.literal_km)

    # scalar stiffness factors ------------------------------------------------

    def km(self, chi):
        chi = np.clip(chi, 0.0, 1.0)
        if self.literal_km:
            return chi + (1.0 - chi) / self.beta
        return chi + self.beta * (1.0 - chi)

    def dkm(self, chi):
        if self.literal_km:
            return (1.0 - 1.0 / self.beta) * np.ones_like(np.asarray(chi, dtype=float))
        return (1.0 - self.beta) * np.ones_like(np.asarray(chi, dtype=float))

    def stiffness_factor(self, phi, chi):
        """Scalar s(phi,chi) with K(phi,chi) = s * K_A."""
        phi = np.clip(phi, 0.0, 1.0)
        g2 = self.gamma ** 2
        return self.km(chi) * (phi ** 3 + g2 * (1.0 - phi) ** 3)

    def stiffness_factor_dphi(self, phi, chi):
        phi = np.clip(phi, 0.0, 1.0)
        g2 = self.gamma ** 2
        return self.km(chi) * (3.0 * phi ** 2 - 3.0 * g2 * (1.0 - phi) ** 2)

    def stiffness_factor_dchi(self, phi, chi):
        phi = np.clip(phi, 0.0, 1.0)
        g2 = self.gamma ** 2
        return self.dkm(chi) * (phi ** 3 + g2 * (1.0 - phi) ** 3)

    # Voigt matrices ----------------------------------------------------------

    def K_of(self, phi, chi) -> np.ndarray:
        """Interpolated 3x3 Voigt matrix (or (...,3,3) for array input)."""
        s = np.asarray(self.stiffness_factor(phi, chi))
        return s[..., None, None] * self.K_A

    def dK_dphi(self, phi, chi) -> np.ndarray:
        s = np.asarray(self.stiffness_factor_dphi(phi, chi))
        return s[..., None, None] * self.K_A

    def dK_dchi(self, phi, chi) -> np.ndarray:
        s = np.asarray(self.stiffness_factor_dchi(phi, chi))
        return s[..., None, None] * self.K_A
