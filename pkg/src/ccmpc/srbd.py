"""Discrete-time single-rigid-body dynamics driven by foot forces.

The robot trunk is modeled as one rigid mass; the legs are treated as
massless force applicators.  The state vector has 13 entries,

    x = [roll, pitch, yaw,  px, py, pz,  wx, wy, wz,  vx, vy, vz,  g]

with Z-Y-X Euler angles, world-frame angular velocity, world-frame linear
velocity, and a constant gravity entry g = 9.81 that folds the -g*dt term
of the vertical dynamics into the homogeneous update

    x[k+1] = A x[k] + B(delta) u[k] + w[k].

The control u stacks the four ground reaction forces [f1; f2; f3; f4]
(world frame, Newtons).  The linearization rotates the body-diagonal
inertia by yaw only, assuming small roll and pitch, and maps Euler rates
through the transposed yaw rotation.  A and B are exact forward-Euler
discretizations of the linearized continuous model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATE_DIM = 13
CONTROL_DIM = 12
PARAM_DIM = 16
NUM_LEGS = 4
GRAVITY = 9.81

# State vector layout.
ANGLES = slice(0, 3)
POSITION = slice(3, 6)
ANGULAR_VEL = slice(6, 9)
LINEAR_VEL = slice(9, 12)
GRAVITY_IDX = 12


def rot_z(yaw: float) -> np.ndarray:
    """Rotation about the world z axis."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass
class RobotState:
    """Trunk state: Euler angles, position, twist, constant gravity entry."""

    orientation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity_state: float = GRAVITY

    def __post_init__(self):
        self.orientation = np.asarray(self.orientation, dtype=float)
        self.position = np.asarray(self.position, dtype=float)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float)
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float)

    def flatten(self) -> np.ndarray:
        x = np.empty(STATE_DIM)
        x[ANGLES] = self.orientation
        x[POSITION] = self.position
        x[ANGULAR_VEL] = self.angular_velocity
        x[LINEAR_VEL] = self.linear_velocity
        x[GRAVITY_IDX] = self.gravity_state
        return x

    @classmethod
    def from_vector(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_DIM,):
            raise ValueError(f"state vector must have shape ({STATE_DIM},), got {x.shape}")
        return cls(
            orientation=x[ANGLES].copy(),
            position=x[POSITION].copy(),
            angular_velocity=x[ANGULAR_VEL].copy(),
            linear_velocity=x[LINEAR_VEL].copy(),
            gravity_state=float(x[GRAVITY_IDX]),
        )

    @classmethod
    def standing(cls, height: float) -> "RobotState":
        return cls(position=np.array([0.0, 0.0, height]))

    @property
    def yaw(self) -> float:
        return float(self.orientation[2])


@dataclass
class ModelParams:
    """Nominal rigid-body parameters the controller believes in."""

    mass: float = 12.0
    inertia_diag: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.6, 0.65]))
    friction_mu: float = 0.4
    f_z_min: float = 0.0
    f_z_max: float | None = None
    dt: float = 0.025

    def __post_init__(self):
        self.inertia_diag = np.asarray(self.inertia_diag, dtype=float)
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if self.inertia_diag.shape != (3,) or np.any(self.inertia_diag <= 0.0):
            raise ValueError("inertia_diag must be three positive entries")
        if not 0.0 < self.friction_mu <= 1.0:
            raise ValueError("friction_mu must be in (0, 1]")
        if self.f_z_max is None:
            self.f_z_max = 1.5 * self.mass * GRAVITY
        if not 0.0 <= self.f_z_min < self.f_z_max:
            raise ValueError("need 0 <= f_z_min < f_z_max")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @property
    def weight(self) -> float:
        return self.mass * GRAVITY


def param_vector(mass: float, inertia_diag, foot_positions) -> np.ndarray:
    """Pack the 16-entry parameter vector [m, Ixx, Iyy, Izz, r1, r2, r3, r4].

    foot_positions are the four foot locations relative to the CoM, shape (4, 3).
    """
    feet = np.asarray(foot_positions, dtype=float).reshape(NUM_LEGS, 3)
    delta = np.empty(PARAM_DIM)
    delta[0] = mass
    delta[1:4] = np.asarray(inertia_diag, dtype=float)
    delta[4:] = feet.ravel()
    return delta


def unpack_params(delta):
    """Inverse of param_vector: (mass, inertia_diag, foot_positions (4,3))."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (PARAM_DIM,):
        raise ValueError(f"parameter vector must have shape ({PARAM_DIM},), got {delta.shape}")
    return float(delta[0]), delta[1:4].copy(), delta[4:].reshape(NUM_LEGS, 3).copy()


def build_state_matrix(yaw: float, dt: float) -> np.ndarray:
    """Discrete state transition A(yaw, dt), identity plus Euler couplings.

    Euler angles integrate world angular velocity through Rz(yaw)^T, position
    integrates linear velocity, and vertical velocity couples to the gravity
    state with coefficient -dt.  The gravity row stays identity.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    A = np.eye(STATE_DIM)
    A[ANGLES, ANGULAR_VEL] = rot_z(yaw).T * dt
    A[POSITION, LINEAR_VEL] = np.eye(3) * dt
    A[11, GRAVITY_IDX] = -dt
    return A


def build_control_matrix(delta, yaw: float, dt: float) -> np.ndarray:
    """Force-to-state map B(delta): torques via inertia and foot levers, thrust via mass.

    For foot j with lever r_j the angular-velocity rows of its 3-column block
    are Iw^-1 [r_j]x dt with Iw = Rz diag(I) Rz^T, and the linear-velocity
    rows are (dt/m) I3.
    """
    mass, inertia, feet = unpack_params(np.asarray(delta, dtype=float))
    if mass <= 0.0:
        raise ValueError("mass must be positive")
    if np.any(inertia <= 0.0):
        raise ValueError("inertia entries must be positive")
    Rz = rot_z(yaw)
    inv_inertia_world = (Rz / inertia) @ Rz.T
    B = np.zeros((STATE_DIM, CONTROL_DIM))
    thrust = dt / mass
    levers = np.zeros((3, CONTROL_DIM))
    for j in range(NUM_LEGS):
        c = 3 * j
        rx, ry, rz = feet[j]
        levers[0, c + 1] = -rz
        levers[0, c + 2] = ry
        levers[1, c] = rz
        levers[1, c + 2] = -rx
        levers[2, c] = -ry
        levers[2, c + 1] = rx
        B[9, c] = thrust
        B[10, c + 1] = thrust
        B[11, c + 2] = thrust
    B[ANGULAR_VEL, :] = inv_inertia_world @ (levers * dt)
    return B


def discrete_step(A, B, x, u, w=None) -> np.ndarray:
    """One step of x' = A x + B u + w on flat 13-vectors."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    out = A @ x + B @ u
    if w is not None:
        out = out + np.asarray(w, dtype=float)
    return out


def hover_forces(mass: float, stance_flags=None) -> np.ndarray:
    """Vertical forces that exactly cancel gravity, split over stance feet."""
    if stance_flags is None:
        stance_flags = np.ones(NUM_LEGS, dtype=bool)
    stance_flags = np.asarray(stance_flags, dtype=bool)
    n_stance = int(stance_flags.sum())
    u = np.zeros(CONTROL_DIM)
    if n_stance == 0:
        return u
    share = mass * GRAVITY / n_stance
    for j in range(NUM_LEGS):
        if stance_flags[j]:
            u[3 * j + 2] = share
    return u
