"""Receding-horizon force controller with three tightening modes.

The N-step optimal control problem over mean states and feedforward foot
forces is condensed by single shooting into a dense strictly convex QP in
the stance-foot forces only: swing-foot components are eliminated from
the decision vector, which enforces their zero-force constraint exactly.
Inequalities are the per-step friction rows shifted by tightening
offsets plus a plain vertical force cap.

Modes differ only in where the offsets come from:

    lmpc   -- zeros (plain linear MPC),
    hmpc   -- constant hand-computed margins,
    ccmpc  -- offsets from the control covariance propagated along the
              previous solution; refreshed after every solve and applied
              on the next tick.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import constraints, gait as gait_mod, qp, uncertainty
from .srbd import (
    CONTROL_DIM,
    GRAVITY,
    NUM_LEGS,
    STATE_DIM,
    ModelParams,
    RobotState,
    build_control_matrix,
    build_state_matrix,
    param_vector,
    rot_z,
)

MODES = ("lmpc", "hmpc", "ccmpc")


def default_q_diag() -> np.ndarray:
    """Tracking weights: z position, planar velocities, attitude and rates.

    Planar position, yaw, and vertical velocity carry no weight; the
    gravity entry is constant and never weighted.
    """
    q = np.zeros(STATE_DIM)
    q[0:2] = (0.2, 0.2)  # roll, pitch
    q[5] = 500.0  # height
    q[6:9] = (0.2, 0.2, 1.0)  # angular velocity
    q[9:11] = (20.0, 5.0)  # planar velocity
    return q


def default_r_diag() -> np.ndarray:
    return np.full(CONTROL_DIM, 1e-6)


@dataclass
class BodyGeometry:
    """Hip locations in the body frame (FR, FL, RR, RL) and standing height."""

    hip_offsets: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [0.19, -0.13, 0.0],
                [0.19, 0.13, 0.0],
                [-0.19, -0.13, 0.0],
                [-0.19, 0.13, 0.0],
            ]
        )
    )
    standing_height: float = 0.30

    def __post_init__(self):
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float)
        if self.hip_offsets.shape != (NUM_LEGS, 3):
            raise ValueError("hip_offsets must have shape (4, 3)")
        if self.standing_height <= 0.0:
            raise ValueError("standing height must be positive")

    def nominal_footholds(self, position, yaw: float) -> np.ndarray:
        """World foot locations directly under the hips at ground level."""
        R = rot_z(yaw)
        feet = np.asarray(position, dtype=float) + self.hip_offsets @ R.T
        feet[:, 2] = 0.0
        return feet


@dataclass
class MpcConfig:
    """Horizon, weights, and mode selection for the force MPC."""

    horizon: int = 10
    dt: float = 0.025
    q_diag: np.ndarray = field(default_factory=default_q_diag)
    r_diag: np.ndarray = field(default_factory=default_r_diag)
    mode: str = "ccmpc"
    epsilon: float = 0.95
    hmpc_offsets: np.ndarray = field(default_factory=lambda: np.zeros(constraints.NUM_ROWS))
    dare_control_penalty: float = 2.0
    dare_q_floor: float = 1e-3
    # With three or four stance feet the force-to-wrench map has a null space
    # (internal forces) that the nominal control penalty leaves almost free;
    # penalizing that component alone conditions the Hessian without touching
    # the achievable dynamics.
    internal_force_weight: float = 1e-2
    raibert_gain: float = gait_mod.DEFAULT_RAIBERT_GAIN
    foot_height: float = gait_mod.DEFAULT_FOOT_HEIGHT

    def __post_init__(self):
        self.q_diag = np.asarray(self.q_diag, dtype=float)
        self.r_diag = np.asarray(self.r_diag, dtype=float)
        self.hmpc_offsets = np.asarray(self.hmpc_offsets, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if np.any(self.q_diag < 0.0) or np.any(self.r_diag <= 0.0):
            raise ValueError("q_diag must be nonnegative and r_diag positive")
        if self.hmpc_offsets.shape != (constraints.NUM_ROWS,):
            raise ValueError("hmpc_offsets must have 20 entries")


class MpcInfeasible(RuntimeError):
    """The tightened QP has an empty feasible set; treated as an episode failure."""


@dataclass
class MpcProblem:
    """Condensed QP data over the reduced (stance-only) decision vector."""

    H: np.ndarray
    g: np.ndarray
    C: np.ndarray
    b: np.ndarray
    var_mask: np.ndarray  # (N*12,) bool, True for stance components
    phi_x0: np.ndarray
    gamma: np.ndarray
    signature: bytes


@dataclass
class MpcSolution:
    v_star: np.ndarray  # (N, 12) with exact zeros on swing feet
    predicted_means: np.ndarray  # (N, 13)
    status: str
    iterations: int
    kkt_residual: float
    active_set: tuple


@dataclass
class StepDiagnostics:
    solve_time_us: float
    status: str
    iterations: int
    kkt_residual: float
    tightening: np.ndarray  # (N, 20) offsets applied this tick
    solution: MpcSolution


def condense(A_list, B_list):
    """Stack the horizon dynamics into x = Phi x0 + Gamma v (single shooting)."""
    n_steps = len(A_list)
    phi = np.zeros((n_steps * STATE_DIM, STATE_DIM))
    gamma = np.zeros((n_steps * STATE_DIM, n_steps * CONTROL_DIM))
    prefix = np.eye(STATE_DIM)
    for i in range(n_steps):
        rows = slice(i * STATE_DIM, (i + 1) * STATE_DIM)
        prefix = A_list[i] @ prefix
        phi[rows] = prefix
        block = B_list[i]
        gamma[rows, i * CONTROL_DIM : (i + 1) * CONTROL_DIM] = block
        for j in range(i - 1, -1, -1):
            prev = slice((i - 1) * STATE_DIM, i * STATE_DIM)
            gamma[rows, j * CONTROL_DIM : (j + 1) * CONTROL_DIM] = (
                A_list[i] @ gamma[prev, j * CONTROL_DIM : (j + 1) * CONTROL_DIM]
            )
    return phi, gamma


def build_qp(
    phi,
    gamma,
    x0,
    x_ref,
    q_diag,
    r_diag,
    friction: constraints.FrictionConstraintSet,
    contact_flags,
    tightening,
    f_z_max: float,
    internal_force_weight: float = 0.0,
) -> MpcProblem:
    """Assemble the reduced QP: cost on predicted means, rows on stance feet only.

    internal_force_weight penalizes the component of each step's forces lying
    in the null space of that step's force-to-wrench map (pure internal
    forces, read off the diagonal blocks of gamma).  This conditions the
    Hessian for stances with more than two feet without altering any
    achievable trajectory.
    """
    contact_flags = np.asarray(contact_flags, dtype=bool)
    n_steps = contact_flags.shape[0]
    x_ref = np.asarray(x_ref, dtype=float).reshape(n_steps * STATE_DIM)
    tightening = np.asarray(tightening, dtype=float).reshape(n_steps, constraints.NUM_ROWS)

    var_mask = np.repeat(contact_flags, 3, axis=1).reshape(-1)
    gamma_red = gamma[:, var_mask]
    q_bar = np.tile(np.asarray(q_diag, dtype=float), n_steps)
    r_bar = np.tile(np.asarray(r_diag, dtype=float), n_steps)[var_mask]

    weighted = gamma_red * q_bar[:, None]
    H = 2.0 * (gamma_red.T @ weighted + np.diag(r_bar))
    phi_x0 = phi @ np.asarray(x0, dtype=float)
    g = 2.0 * (weighted.T @ (phi_x0 - x_ref))

    offsets = np.cumsum(np.concatenate([[0], var_mask.reshape(n_steps, CONTROL_DIM).sum(axis=1)]))
    n_red = int(var_mask.sum())
    if internal_force_weight > 0.0:
        projector_cache = {}
        for i in range(n_steps):
            if contact_flags[i].sum() < 3:
                continue
            cols_full = np.flatnonzero(np.repeat(contact_flags[i], 3))
            key = contact_flags[i].tobytes()
            proj = projector_cache.get(key)
            if proj is None:
                wrench_map = gamma[
                    i * STATE_DIM + 6 : (i + 1) * STATE_DIM - 1,
                    i * CONTROL_DIM : (i + 1) * CONTROL_DIM,
                ][:, cols_full]
                proj = np.eye(cols_full.size) - np.linalg.pinv(wrench_map) @ wrench_map
                projector_cache[key] = proj
            sl = slice(offsets[i], offsets[i + 1])
            H[sl, sl] += 2.0 * internal_force_weight * proj
    H = 0.5 * (H + H.T)
    stance_counts = contact_flags.sum(axis=1)
    m_total = int(6 * stance_counts.sum())  # 5 friction rows + 1 force cap per stance foot
    C_qp = np.zeros((m_total, n_red))
    b_qp = np.empty(m_total)
    row = 0
    for i in range(n_steps):
        stance = np.flatnonzero(contact_flags[i])
        if stance.size == 0:
            continue
        cols = np.concatenate([np.arange(3 * j, 3 * j + 3) for j in stance])
        row_ids = friction.rows_for(contact_flags[i])
        col_base = offsets[i]
        C_qp[row : row + row_ids.size, col_base : col_base + cols.size] = friction.C[
            np.ix_(row_ids, cols)
        ]
        b_qp[row : row + row_ids.size] = friction.b[row_ids] + tightening[i, row_ids]
        row += row_ids.size
        for k in range(stance.size):
            C_qp[row, col_base + 3 * k + 2] = 1.0
            b_qp[row] = f_z_max
            row += 1
    return MpcProblem(
        H=H,
        g=g,
        C=C_qp,
        b=b_qp,
        var_mask=var_mask,
        phi_x0=phi_x0,
        gamma=gamma,
        signature=contact_flags.tobytes(),
    )


def solve_mpc_qp(problem: MpcProblem, warm_active=()) -> MpcSolution:
    """Solve the reduced QP and expand back to full force sequences."""
    n_steps = problem.var_mask.size // CONTROL_DIM
    result = qp.solve_qp(problem.H, problem.g, problem.C, problem.b, warm_active=warm_active)
    v_full = np.zeros(n_steps * CONTROL_DIM)
    v_full[problem.var_mask] = result.x
    predicted = (problem.phi_x0 + problem.gamma @ v_full).reshape(n_steps, STATE_DIM)
    return MpcSolution(
        v_star=v_full.reshape(n_steps, CONTROL_DIM),
        predicted_means=predicted,
        status=result.status,
        iterations=result.iterations,
        kkt_residual=result.kkt_residual,
        active_set=result.active_set,
    )


def heuristic_tightening(
    max_payload: float,
    max_accel: float,
    n_stance: int = 2,
    mass: float = 12.0,
) -> np.ndarray:
    """Constant margins: payload gravity on the unilateral rows, the tangential
    force for accelerating the loaded robot on the pyramid rows, both split
    across the expected number of stance feet."""
    if max_payload < 0.0 or max_accel < 0.0 or n_stance < 1 or mass <= 0.0:
        raise ValueError("heuristic tightening inputs must be positive")
    offsets = np.zeros(constraints.NUM_ROWS)
    vertical = max_payload * GRAVITY / n_stance
    tangential = (mass + max_payload) * max_accel / n_stance
    for j in range(NUM_LEGS):
        r = constraints.ROWS_PER_FOOT * j
        offsets[r : r + 4] = -tangential
        offsets[r + 4] = -vertical
    return offsets


class QpMpcController:
    """Stateful per-episode controller: warm starts, gain cache, tightening cache."""

    def __init__(
        self,
        params: ModelParams,
        config: MpcConfig,
        disturbance: uncertainty.DisturbanceModel,
        gait: gait_mod.GaitSchedule,
        geometry: BodyGeometry | None = None,
    ):
        self.params = params
        self.config = config
        self.disturbance = disturbance
        self.gait = gait
        self.geometry = geometry or BodyGeometry()
        self.friction = constraints.build_friction_matrix(params.friction_mu, params.f_z_min)
        self.alpha = constraints.uniform_risk(disturbance.epsilon, NUM_LEGS)
        self._gain_cache = uncertainty.GainCache(
            config.q_diag,
            np.full(CONTROL_DIM, config.dare_control_penalty),
            config.dare_q_floor,
        )
        self._tightening_cache = np.zeros((config.horizon, constraints.NUM_ROWS))
        self._warm_sets: dict[bytes, tuple] = {}

    def reset(self):
        self._tightening_cache = np.zeros_like(self._tightening_cache)
        self._warm_sets.clear()

    def active_tightening(self) -> np.ndarray:
        """Offsets applied this tick, one row per horizon step.

        The ccmpc cache was computed along the previous solution, whose step
        i+1 refers to the same wall-clock instant as the current step i, so
        the cached factors are consumed shifted by one (last one held).
        """
        cfg = self.config
        if cfg.mode == "lmpc":
            return np.zeros((cfg.horizon, constraints.NUM_ROWS))
        if cfg.mode == "hmpc":
            return np.tile(cfg.hmpc_offsets, (cfg.horizon, 1))
        shifted = np.roll(self._tightening_cache, -1, axis=0)
        shifted[-1] = self._tightening_cache[-1]
        return shifted

    def _plan_footholds(
        self, t, state, foot_positions, flags, p_pred, yaw_ref, v_des, swing_targets, support_height
    ):
        """World-frame foothold per horizon step and leg, shape (N, 4, 3)."""
        n_steps = flags.shape[0]
        stance_dur = self.gait.stance_duration
        holds = np.empty((n_steps, NUM_LEGS, 3))
        current = np.array(foot_positions, dtype=float)
        stance_now = flags[0]
        for j in range(NUM_LEGS):
            if not stance_now[j]:
                if swing_targets is not None and np.all(np.isfinite(swing_targets[j])):
                    current[j] = swing_targets[j]
                else:
                    remaining = (1.0 - self.gait.swing_phase(t, j)) * self.gait.swing_duration
                    hip = (
                        state.position
                        + rot_z(state.yaw) @ self.geometry.hip_offsets[j]
                        + state.linear_velocity * remaining
                    )
                    current[j] = gait_mod.raibert_footstep(
                        hip,
                        state.linear_velocity,
                        v_des,
                        stance_dur,
                        self.config.raibert_gain,
                        ground_height=support_height,
                    )
        holds[0] = current
        for i in range(1, n_steps):
            holds[i] = holds[i - 1]
            for j in range(NUM_LEGS):
                if flags[i, j] and not flags[i - 1, j]:
                    hip = p_pred[i] + rot_z(yaw_ref[i]) @ self.geometry.hip_offsets[j]
                    holds[i, j] = gait_mod.raibert_footstep(
                        hip,
                        state.linear_velocity,
                        v_des,
                        stance_dur,
                        self.config.raibert_gain,
                        ground_height=support_height,
                    )
        return holds

    def step(
        self,
        t: float,
        state: RobotState,
        foot_positions,
        desired_velocity,
        desired_yaw_rate: float = 0.0,
        swing_targets=None,
        support_height: float = 0.0,
    ):
        """One MPC tick: returns (force command (12,), StepDiagnostics).

        support_height shifts the height reference (and footstep targets) to
        the robot's current ground level, so terrain is tracked relatively.
        Raises MpcInfeasible when the tightened QP admits no solution.
        """
        started = time.perf_counter()
        cfg = self.config
        n_steps = cfg.horizon
        dt = cfg.dt
        v_des = np.zeros(3)
        v_des[:2] = np.asarray(desired_velocity, dtype=float)[:2]

        flags = gait_mod.contact_sequence(t, self.gait, n_steps, dt)
        yaw0 = state.yaw
        yaw_ref = yaw0 + desired_yaw_rate * dt * np.arange(n_steps + 1)
        p_pred = state.position[None, :] + v_des[None, :] * (dt * np.arange(n_steps)[:, None])

        x_ref = np.zeros((n_steps, STATE_DIM))
        steps_ahead = np.arange(1, n_steps + 1)
        x_ref[:, 2] = yaw0 + desired_yaw_rate * dt * steps_ahead
        x_ref[:, 3] = state.position[0] + v_des[0] * dt * steps_ahead
        x_ref[:, 4] = state.position[1] + v_des[1] * dt * steps_ahead
        x_ref[:, 5] = self.geometry.standing_height + support_height
        x_ref[:, 8] = desired_yaw_rate
        x_ref[:, 9:11] = v_des[:2]
        x_ref[:, 12] = GRAVITY

        holds = self._plan_footholds(
            t, state, foot_positions, flags, p_pred, yaw_ref, v_des, swing_targets, support_height
        )
        delta_list = [
            param_vector(self.params.mass, self.params.inertia_diag, holds[i] - p_pred[i])
            for i in range(n_steps)
        ]
        A_list = [build_state_matrix(yaw_ref[i], dt) for i in range(n_steps)]
        B_list = [build_control_matrix(delta_list[i], yaw_ref[i], dt) for i in range(n_steps)]

        phi, gamma = condense(A_list, B_list)
        tightening = self.active_tightening()
        problem = build_qp(
            phi,
            gamma,
            state.flatten(),
            x_ref,
            cfg.q_diag,
            cfg.r_diag,
            self.friction,
            flags,
            tightening,
            self.params.f_z_max,
            internal_force_weight=cfg.internal_force_weight,
        )
        warm = self._warm_sets.get(problem.signature, ())
        solution = solve_mpc_qp(problem, warm_active=warm)
        if solution.status == qp.INFEASIBLE:
            raise MpcInfeasible(f"tightened QP infeasible at t={t:.3f}s (mode {cfg.mode})")
        self._warm_sets[problem.signature] = solution.active_set

        if cfg.mode == "ccmpc" and not self.disturbance.is_zero():
            trajectory = uncertainty.build_covariance_trajectory(
                A_list,
                B_list,
                delta_list,
                list(solution.v_star),
                list(yaw_ref[:n_steps]),
                dt,
                self.disturbance,
                cfg.q_diag,
                np.full(CONTROL_DIM, cfg.dare_control_penalty),
                gain_cache=self._gain_cache,
                q_floor=cfg.dare_q_floor,
            )
            self._tightening_cache = np.stack(
                [
                    constraints.tightening_factors(self.friction.C, trajectory.sigma_u[i], self.alpha)
                    for i in range(n_steps)
                ]
            )

        elapsed_us = (time.perf_counter() - started) * 1e6
        diag = StepDiagnostics(
            solve_time_us=elapsed_us,
            status=solution.status,
            iterations=solution.iterations,
            kkt_residual=solution.kkt_residual,
            tightening=tightening,
            solution=solution,
        )
        return solution.v_star[0].copy(), diag
