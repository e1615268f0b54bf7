"""State and control covariance propagation along the MPC horizon.

With the feedback parameterization u = v + K (x - xbar), the state
covariance evolves as

    Sx[i+1] = Acl Sx[i] Acl^T + P Sdelta P^T + Sw,     Acl = A + B K,

where P is the Jacobian of the mean update with respect to the physical
parameters (mass, diagonal inertia, foot levers), and the control
covariance is Su[i] = K Sx[i] K^T.  Gains K come from the discrete
algebraic Riccati equation, solved here with the structure-preserving
doubling iteration.  Every covariance update is symmetrized and clamped
to the PSD cone to stop floating-point drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .srbd import (
    ANGULAR_VEL,
    CONTROL_DIM,
    GRAVITY_IDX,
    LINEAR_VEL,
    NUM_LEGS,
    PARAM_DIM,
    STATE_DIM,
    rot_z,
    skew,
    unpack_params,
)

# Default variance parameters: diagonal of Sdelta in param_vector order and
# diagonal of Sw in state order (only angular/linear velocity rows are noisy).
MASS_VARIANCE = 15.0
INERTIA_VARIANCE = (0.02, 0.06, 0.06)
ANGULAR_VELOCITY_VARIANCE = (0.5, 0.2, 0.01)
LINEAR_VELOCITY_VARIANCE = (0.5, 0.2, 0.01)
CONTACT_LOCATION_VARIANCE = 0.36
DEFAULT_EPSILON = 0.95


class DareError(RuntimeError):
    """Riccati iteration failed to converge (unstabilizable or ill-conditioned)."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class DisturbanceModel:
    """Parametric covariance Sdelta (16x16), additive covariance Sw (13x13), risk level."""

    sigma_delta: np.ndarray
    sigma_w: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        self.sigma_delta = np.asarray(self.sigma_delta, dtype=float)
        self.sigma_w = np.asarray(self.sigma_w, dtype=float)
        if self.sigma_delta.shape != (PARAM_DIM, PARAM_DIM):
            raise ValueError("sigma_delta must be 16x16")
        if self.sigma_w.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("sigma_w must be 13x13")
        if np.any(np.diag(self.sigma_delta) < 0.0) or np.any(np.diag(self.sigma_w) < 0.0):
            raise ValueError("covariance diagonals must be nonnegative")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    @classmethod
    def from_diagonals(cls, param_variances, noise_variances, epsilon=DEFAULT_EPSILON):
        return cls(
            sigma_delta=np.diag(np.asarray(param_variances, dtype=float)),
            sigma_w=np.diag(np.asarray(noise_variances, dtype=float)),
            epsilon=epsilon,
        )

    @property
    def is_diagonal(self) -> bool:
        return not (
            np.any(self.sigma_delta - np.diag(np.diagonal(self.sigma_delta)))
            or np.any(self.sigma_w - np.diag(np.diagonal(self.sigma_w)))
        )

    @classmethod
    def default(cls, epsilon=DEFAULT_EPSILON) -> "DisturbanceModel":
        param_var = np.empty(PARAM_DIM)
        param_var[0] = MASS_VARIANCE
        param_var[1:4] = INERTIA_VARIANCE
        param_var[4:] = CONTACT_LOCATION_VARIANCE
        noise_var = np.zeros(STATE_DIM)
        noise_var[ANGULAR_VEL] = ANGULAR_VELOCITY_VARIANCE
        noise_var[LINEAR_VEL] = LINEAR_VELOCITY_VARIANCE
        return cls.from_diagonals(param_var, noise_var, epsilon)

    @classmethod
    def zero(cls, epsilon=DEFAULT_EPSILON) -> "DisturbanceModel":
        return cls.from_diagonals(np.zeros(PARAM_DIM), np.zeros(STATE_DIM), epsilon)

    def is_zero(self) -> bool:
        return not (self.sigma_delta.any() or self.sigma_w.any())


@dataclass
class CovarianceTrajectory:
    """Per-step state/control covariances and feedback gains over one horizon."""

    sigma_x: np.ndarray  # (N+1, 13, 13), sigma_x[0] == 0
    sigma_u: np.ndarray  # (N, 12, 12)
    gains: np.ndarray  # (N, 12, 13)


def symmetrize_psd(M: np.ndarray, eig_floor: float = 0.0) -> np.ndarray:
    """Symmetrize and clamp negative eigenvalues introduced by roundoff.

    Updates are congruences and sums of PSD terms, so indefiniteness only
    enters through floating-point noise; the eigendecomposition runs only
    when the cheap diagonal test flags it.
    """
    M = 0.5 * (M + M.T)
    if np.diagonal(M).min() >= 0.0:
        return M
    vals, vecs = np.linalg.eigh(M)
    vals = np.maximum(vals, eig_floor)
    return (vecs * vals) @ vecs.T


def solve_dare(A, B, Q, R, max_iter: int = 200, tol: float = 1e-10):
    """Stabilizing DARE solution by the structure-preserving doubling iteration.

    Returns (K, P) with K = -(R + B^T P B)^-1 B^T P A and P the fixed point of

        P = A^T P A - A^T P B (R + B^T P B)^-1 B^T P A + Q.

    Raises DareError when the iteration stalls, which signals an
    unstabilizable or undetectable configuration; callers may fall back to
    previously computed gains.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    n = A.shape[0]
    eye = np.eye(n)

    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    converged = False
    for _ in range(max_iter):
        W = eye + Gk @ Hk
        try:
            W_inv_A = np.linalg.solve(W, Ak)
            W_inv_G = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError as exc:
            raise DareError(f"doubling iteration hit a singular pencil: {exc}", np.inf)
        A_next = Ak @ W_inv_A
        G_next = Gk + Ak @ W_inv_G @ Ak.T
        H_next = Hk + W_inv_A.T @ Hk @ Ak
        step = np.linalg.norm(H_next - Hk, "fro")
        Ak, Gk, Hk = A_next, 0.5 * (G_next + G_next.T), 0.5 * (H_next + H_next.T)
        if step <= tol * (1.0 + np.linalg.norm(Hk, "fro")):
            converged = True
            break

    P = 0.5 * (Hk + Hk.T)
    S = R + B.T @ P @ B
    K = -np.linalg.solve(S, B.T @ P @ A)
    residual_mat = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) + Q - P
    residual = np.linalg.norm(residual_mat, "fro")
    if not converged or residual > 1e-8 * (1.0 + np.linalg.norm(P, "fro")):
        raise DareError("DARE iteration did not converge", residual)
    return K, P


def srbd_feedback_gain(A, B, q_diag, r_diag, q_floor: float = 1e-3):
    """Feedback gain for the 13-state model, excluding the constant gravity state.

    The gravity entry is uncontrollable (A row identity, B row zero), so the
    Riccati equation is solved on the remaining 12 states and the gain padded
    with a zero column.  Zero state weights are floored at q_floor so the
    weighted pair stays detectable and the closed loop strictly stable.
    """
    idx = np.arange(STATE_DIM) != GRAVITY_IDX
    A_red = np.asarray(A, dtype=float)[np.ix_(idx, idx)]
    B_red = np.asarray(B, dtype=float)[idx, :]
    q = np.maximum(np.asarray(q_diag, dtype=float)[idx], q_floor)
    K_red, _ = solve_dare(A_red, B_red, np.diag(q), np.diag(np.asarray(r_diag, dtype=float)))
    K = np.zeros((CONTROL_DIM, STATE_DIM))
    K[:, :GRAVITY_IDX] = K_red
    return K


def param_jacobian(x_bar, v_bar, delta_bar, yaw: float, dt: float) -> np.ndarray:
    """Jacobian of the mean state update with respect to the 16 parameters.

    Only B depends on the parameters, so the columns are d(B(delta) v)/d(delta):
    the mass column scales the net force on the linear-velocity rows, inertia
    columns differentiate the rotated inverse inertia applied to the net foot
    torque, and each foot-position block contributes -Iw^-1 [f_j]x dt on the
    angular-velocity rows.  x_bar enters the update through A only and drops
    out of the derivative.
    """
    del x_bar  # the A x term carries no parameter dependence
    v = np.asarray(v_bar, dtype=float).reshape(CONTROL_DIM)
    mass, inertia, feet = unpack_params(np.asarray(delta_bar, dtype=float))
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    if np.any(inertia <= 0.0):
        raise ValueError("inertia entries must be positive")

    forces = v.reshape(NUM_LEGS, 3)
    Rz = rot_z(yaw)
    inv_inertia_world = (Rz / inertia) @ Rz.T

    P = np.zeros((STATE_DIM, PARAM_DIM))
    P[LINEAR_VEL, 0] = -(dt / mass**2) * forces.sum(axis=0)

    rx, ry, rz = feet[:, 0], feet[:, 1], feet[:, 2]
    fx, fy, fz = forces[:, 0], forces[:, 1], forces[:, 2]
    torque = np.array(
        [
            np.dot(ry, fz) - np.dot(rz, fy),
            np.dot(rz, fx) - np.dot(rx, fz),
            np.dot(rx, fy) - np.dot(ry, fx),
        ]
    )
    # d(Iw^-1)/dI_k = -Rz e_k e_k^T Rz^T / I_k^2 applied to the net torque
    P[ANGULAR_VEL, 1:4] = Rz * (-(Rz.T @ torque) / inertia**2) * dt

    # d(r_j x f_j)/dr_j = -[f_j]x for every foot, stacked into one block
    neg_cross = np.zeros((3, 12))
    for j in range(NUM_LEGS):
        c = 3 * j
        neg_cross[0, c + 1] = fz[j]
        neg_cross[0, c + 2] = -fy[j]
        neg_cross[1, c] = -fz[j]
        neg_cross[1, c + 2] = fx[j]
        neg_cross[2, c] = fy[j]
        neg_cross[2, c + 1] = -fx[j]
    P[ANGULAR_VEL, 4:] = inv_inertia_world @ (neg_cross * dt)
    return P


def propagate_covariance(sigma_x, A_cl, P_jac, sigma_delta, sigma_w) -> np.ndarray:
    """One covariance step: Acl Sx Acl^T + P Sdelta P^T + Sw, symmetrized PSD."""
    out = A_cl @ sigma_x @ A_cl.T + P_jac @ sigma_delta @ P_jac.T + sigma_w
    return symmetrize_psd(out)


def control_covariance(K, sigma_x) -> np.ndarray:
    """Control covariance K Sx K^T, symmetrized PSD."""
    return symmetrize_psd(K @ sigma_x @ K.T)


class GainCache:
    """Memoizes feedback gains on a coarse key; gains vary slowly with geometry.

    Yaw is rounded to 0.2 rad and foot levers to 10 cm: within those bins the
    Riccati gain changes negligibly relative to the modeled uncertainty, and
    caching keeps the tightening loop inside the real-time budget.
    """

    def __init__(self, q_diag, r_diag, q_floor: float = 1e-3):
        self.q_diag = np.asarray(q_diag, dtype=float)
        self.r_diag = np.asarray(r_diag, dtype=float)
        self.q_floor = q_floor
        self._store: dict = {}

    def gain(self, A, B, yaw: float, delta) -> np.ndarray:
        key = (round(yaw / 0.2), tuple(np.rint(np.asarray(delta) * 10.0).astype(int)))
        hit = self._store.get(key)
        if hit is None:
            hit = srbd_feedback_gain(A, B, self.q_diag, self.r_diag, self.q_floor)
            self._store[key] = hit
        return hit


def build_covariance_trajectory(
    A_list,
    B_list,
    delta_list,
    v_list,
    yaw_list,
    dt: float,
    model: DisturbanceModel,
    q_diag,
    r_diag,
    gain_cache: GainCache | None = None,
    q_floor: float = 1e-3,
) -> CovarianceTrajectory:
    """Run the constraint-tightening recursion over an N-step horizon.

    Starts from Sx[0] = 0, then per step: solve for the feedback gain,
    form Su[i] = K Sx[i] K^T, and propagate Sx through the closed loop plus
    the parametric and additive noise terms.
    """
    n_steps = len(A_list)
    if not (len(B_list) == len(delta_list) == len(v_list) == len(yaw_list) == n_steps):
        raise ValueError("horizon lists must share one length")
    if gain_cache is None:
        gain_cache = GainCache(q_diag, r_diag, q_floor)

    sigma_x = np.zeros((n_steps + 1, STATE_DIM, STATE_DIM))
    sigma_u = np.zeros((n_steps, CONTROL_DIM, CONTROL_DIM))
    gains = np.zeros((n_steps, CONTROL_DIM, STATE_DIM))
    diagonal_model = model.is_diagonal
    delta_var = np.diagonal(model.sigma_delta)
    for i in range(n_steps):
        K = gain_cache.gain(A_list[i], B_list[i], yaw_list[i], delta_list[i])
        gains[i] = K
        sigma_u[i] = control_covariance(K, sigma_x[i])
        P = param_jacobian(None, v_list[i], delta_list[i], yaw_list[i], dt)
        A_cl = A_list[i] + B_list[i] @ K
        if diagonal_model:
            nxt = A_cl @ sigma_x[i] @ A_cl.T + (P * delta_var) @ P.T + model.sigma_w
            sigma_x[i + 1] = symmetrize_psd(nxt)
        else:
            sigma_x[i + 1] = propagate_covariance(
                sigma_x[i], A_cl, P, model.sigma_delta, model.sigma_w
            )
    return CovarianceTrajectory(sigma_x=sigma_x, sigma_u=sigma_u, gains=gains)
