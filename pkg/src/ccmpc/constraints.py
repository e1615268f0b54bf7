"""Linearized friction-cone constraints and probabilistic tightening.

Each foot contributes five rows to C u <= b: four pyramid faces
(+-fx <= mu fz, +-fy <= mu fz) and the unilateral row -fz <= -fz_min.
A joint chance constraint Pr(C u <= b) >= eps over Gaussian controls is
split by the union bound into per-row risks alpha = (1 - eps) / (5 n) and
each row is tightened by the Gaussian quantile of its projected variance:

    c_k = -quantile(1 - alpha) * sqrt(C_k Su C_k^T)  (<= 0),

so the mean command must satisfy C v <= b + c.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .srbd import CONTROL_DIM, NUM_LEGS

ROWS_PER_FOOT = 5
NUM_ROWS = ROWS_PER_FOOT * NUM_LEGS


@dataclass
class FrictionConstraintSet:
    """Stacked pyramid and unilateral rows for all four feet, as C u <= b."""

    C: np.ndarray
    b: np.ndarray
    mu: float
    f_z_min: float
    contact_flags: np.ndarray = field(default_factory=lambda: np.ones(NUM_LEGS, dtype=bool))

    def rows_for(self, flags) -> np.ndarray:
        """Row indices belonging to feet flagged as stance."""
        flags = np.asarray(flags, dtype=bool)
        rows = []
        for j in range(NUM_LEGS):
            if flags[j]:
                rows.extend(range(ROWS_PER_FOOT * j, ROWS_PER_FOOT * (j + 1)))
        return np.array(rows, dtype=int)


def build_friction_matrix(mu: float, f_z_min: float = 0.0) -> FrictionConstraintSet:
    """Build the 20x12 constraint matrix; raises when mu is not positive."""
    if mu <= 0.0:
        raise ValueError("friction coefficient must be positive")
    C = np.zeros((NUM_ROWS, CONTROL_DIM))
    b = np.zeros(NUM_ROWS)
    for j in range(NUM_LEGS):
        fx, fy, fz = 3 * j, 3 * j + 1, 3 * j + 2
        r = ROWS_PER_FOOT * j
        C[r + 0, fx], C[r + 0, fz] = 1.0, -mu
        C[r + 1, fx], C[r + 1, fz] = -1.0, -mu
        C[r + 2, fy], C[r + 2, fz] = 1.0, -mu
        C[r + 3, fy], C[r + 3, fz] = -1.0, -mu
        C[r + 4, fz] = -1.0
        b[r + 4] = -f_z_min
    return FrictionConstraintSet(C=C, b=b, mu=mu, f_z_min=f_z_min)


def uniform_risk(epsilon: float, n_feet: int = NUM_LEGS) -> float:
    """Per-row violation probability alpha = (1 - eps) / (5 n_feet)."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if n_feet < 1:
        raise ValueError("need at least one foot")
    return (1.0 - epsilon) / (ROWS_PER_FOOT * n_feet)


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# Rational approximation coefficients for the standard normal quantile
# (Acklam's method): central region plus symmetric tails.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile, rational seed refined by Newton steps on the CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie strictly in (0, 1)")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        z = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    for _ in range(2):
        density = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        if density == 0.0:
            break
        z -= (_normal_cdf(z) - p) / density
    return z


def tightening_factors(C, sigma_u, alpha: float) -> np.ndarray:
    """Per-row offsets c_k = -quantile(1-alpha) sqrt(C_k Su C_k^T), elementwise <= 0.

    The quadratic form is clamped at zero before the square root so
    floating-point noise in Su cannot produce NaNs.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    C = np.asarray(C, dtype=float)
    quad = np.einsum("ij,jk,ik->i", C, np.asarray(sigma_u, dtype=float), C)
    quad = np.maximum(quad, 0.0)
    return -inverse_normal_cdf(1.0 - alpha) * np.sqrt(quad)
