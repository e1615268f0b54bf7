"""Ground-truth rigid-body world and Monte Carlo benchmark harness.

The world integrates the *true* single rigid body at 1 kHz with
semi-implicit Euler: true mass includes an unmodeled payload, the
composite center of mass shifts, the diagonal inertia picks up
parallel-axis terms, and feet stand on plank terrain whose heights the
controller never sees.  Stance feet are pinned; commanded tangential
forces beyond the true friction cone are clipped to the cone boundary
and logged as slip events (the residual momentum is discarded).  Swing
feet follow their planned splines kinematically and touch down early
when a plank interrupts the descent.

Episodes fail on large height deviation, excessive tilt, or an
infeasible controller QP; metrics mirror the benchmark protocol:
success flag, friction-cone saturation ratio, tracking and effort
costs.  Everything is driven by per-episode seeds so runs are bitwise
reproducible regardless of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (
    BodyGeometry,
    MpcConfig,
    MpcInfeasible,
    QpMpcController,
    heuristic_tightening,
)
from .gait import GaitSchedule, SwingTrajectory, raibert_footstep
from .srbd import GRAVITY, NUM_LEGS, ModelParams, RobotState
from .uncertainty import DisturbanceModel

FAILURE_NONE = "none"
FAILURE_HEIGHT = "height_deviation"
FAILURE_TILT = "tilt"
FAILURE_QP = "qp_infeasible"
FAILURE_NAN = "nan_state"

DEFAULT_HMPC_PAYLOAD = 10.0
DEFAULT_HMPC_ACCEL = 0.2


@dataclass
class TerrainProfile:
    """Flat ground with optional raised planks and a constant slope.

    The default ground friction sits above the controller's conservative
    friction setting, as on real floors; lowering it toward the controller
    value makes pyramid-corner commands slip.
    """

    planks: tuple = ()
    friction: float = 0.5
    slope: float = 0.0

    def __post_init__(self):
        spans = sorted((float(a), float(b), float(h)) for a, b, h in self.planks)
        for (a, b, h) in spans:
            if h < 0.0 or b <= a:
                raise ValueError("planks need positive width and nonnegative height")
        for prev, cur in zip(spans, spans[1:]):
            if cur[0] < prev[1]:
                raise ValueError("planks must not overlap")
        self.planks = tuple(spans)

    def height_at(self, x: float, y: float) -> float:
        base = math.tan(self.slope) * x
        for (a, b, h) in self.planks:
            if a <= x < b:
                return base + h
        return base

    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.slope), 0.0, math.cos(self.slope)])

    @classmethod
    def flat(cls, friction: float = 0.4) -> "TerrainProfile":
        return cls((), friction)

    @classmethod
    def random_planks(
        cls,
        rng: np.random.Generator,
        span=(0.5, 4.0),
        plank_length: float = 0.5,
        height_range=(0.0, 0.05),
        friction: float = 0.4,
    ) -> "TerrainProfile":
        edges = np.arange(span[0], span[1], plank_length)
        planks = tuple(
            (float(x0), float(x0 + plank_length), float(rng.uniform(*height_range)))
            for x0 in edges
        )
        return cls(planks, friction)


@dataclass
class EpisodeConfig:
    """One simulated scenario; the seed fully determines the episode."""

    payload_mass: float = 0.0
    payload_offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.05]))
    terrain: TerrainProfile = field(default_factory=TerrainProfile.flat)
    mode: str = "ccmpc"
    gait: str = "trot"
    commanded_velocity: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.0]))
    accel_limit: float = 0.2
    yaw_rate: float = 0.0
    duration: float = 10.0
    seed: int = 0
    sim_dt: float = 0.001

    def __post_init__(self):
        self.payload_offset = np.asarray(self.payload_offset, dtype=float)
        self.commanded_velocity = np.asarray(self.commanded_velocity, dtype=float)
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.payload_mass < 0.0:
            raise ValueError("payload mass must be nonnegative")
        if self.sim_dt <= 0.0:
            raise ValueError("sim_dt must be positive")
        if self.accel_limit <= 0.0:
            raise ValueError("accel_limit must be positive")

    def velocity_command(self, t: float) -> np.ndarray:
        """Commanded planar velocity ramped at the acceleration limit."""
        speed = float(np.linalg.norm(self.commanded_velocity))
        if speed <= 0.0 or t * self.accel_limit >= speed:
            return self.commanded_velocity.copy()
        return self.commanded_velocity * (t * self.accel_limit / speed)

    def position_command(self, t: float) -> np.ndarray:
        """Integral of the ramped velocity command from the origin."""
        speed = float(np.linalg.norm(self.commanded_velocity))
        if speed <= 0.0:
            return np.zeros(2)
        t_ramp = speed / self.accel_limit
        if t <= t_ramp:
            dist = 0.5 * self.accel_limit * t * t
        else:
            dist = 0.5 * speed * t_ramp + speed * (t - t_ramp)
        return self.commanded_velocity / speed * dist


@dataclass
class EpisodeMetrics:
    """Outcome of one episode; costs use the controller's tracking weights."""

    success: bool
    failure_reason: str
    time_completed: float
    slippage_ratio: float
    tracking_cost: float
    effort_cost: float
    slip_events: int
    ticks: int
    solve_us_min: float
    solve_us_median: float
    solve_us_p99: float


def detect_failure(state: RobotState, nominal_height: float, ground_normal) -> str:
    """Height-deviation and tilt checks against the desired operating point."""
    x = state.flatten()
    if not np.all(np.isfinite(x)):
        return FAILURE_NAN
    if abs(state.position[2] - nominal_height) > 0.3 * nominal_height:
        return FAILURE_HEIGHT
    roll, pitch, yaw = state.orientation
    up = _rotation_zyx(roll, pitch, yaw) @ np.array([0.0, 0.0, 1.0])
    if float(up @ np.asarray(ground_normal, dtype=float)) < 0.8:
        return FAILURE_TILT
    return FAILURE_NONE


def _rotation_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def _euler_rate_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Maps [roll', pitch', yaw'] to world angular velocity for Z-Y-X angles."""
    J = np.empty((3, 3))
    Rz = rot_z(yaw)
    Ry = np.array(
        [
            [math.cos(pitch), 0.0, math.sin(pitch)],
            [0.0, 1.0, 0.0],
            [-math.sin(pitch), 0.0, math.cos(pitch)],
        ]
    )
    J[:, 0] = Rz @ Ry @ np.array([1.0, 0.0, 0.0])
    J[:, 1] = Rz @ np.array([0.0, 1.0, 0.0])
    J[:, 2] = np.array([0.0, 0.0, 1.0])
    return J


_STANCE = 0
_SWING = 1
_EARLY_PINNED = 2
_SEARCHING = 3  # scheduled stance but no ground yet (stepping off a ledge)


class SrbdWorld:
    """True-dynamics world; the controller only ever sees its observations."""

    def __init__(
        self,
        params: ModelParams,
        geometry: BodyGeometry,
        gait: GaitSchedule,
        episode: EpisodeConfig,
        foot_height: float = 0.08,
    ):
        self.params = params
        self.geometry = geometry
        self.gait = gait
        self.episode = episode
        self.terrain = episode.terrain
        self.foot_height = foot_height

        m_b = params.mass
        m_p = episode.payload_mass
        self.true_mass = m_b + m_p
        d = episode.payload_offset
        self.com_offset = (m_p / self.true_mass) * d  # body frame, from body origin
        body_shift = -self.com_offset
        payload_shift = d - self.com_offset
        inertia = params.inertia_diag.copy()
        for k in range(3):
            inertia[k] += m_b * (body_shift @ body_shift - body_shift[k] ** 2)
            inertia[k] += m_p * (payload_shift @ payload_shift - payload_shift[k] ** 2)
        self.true_inertia = inertia

        self.t = 0.0
        self.theta = np.zeros(3)
        start_height = geometry.standing_height + self.terrain.height_at(0.0, 0.0)
        self.com = np.array([0.0, 0.0, start_height]) + self.com_offset
        self.omega = np.zeros(3)
        self.vel = np.zeros(3)

        self.leg_state = np.full(NUM_LEGS, _STANCE, dtype=int)
        self.footholds = geometry.nominal_footholds(self.body_position(), 0.0)
        for j in range(NUM_LEGS):
            self.footholds[j, 2] = self.terrain.height_at(*self.footholds[j, :2])
        self.swing: list[SwingTrajectory | None] = [None] * NUM_LEGS
        self.swing_start = np.zeros(NUM_LEGS)
        self.foot_pos = self.footholds.copy()
        # Footstep planning uses a low-passed velocity so the intra-gait
        # rocking does not scatter the touchdown targets.
        self.vel_filtered = np.zeros(3)
        self._vel_alpha = episode.sim_dt / (episode.sim_dt + 0.15)
        # Descent speed of a leg probing for ground past its planned landing.
        self._search_rate = 4.0 * foot_height / max(gait.swing_duration, 1e-6)
        for j in range(NUM_LEGS):
            if not gait.is_stance(0.0)[j]:
                self._begin_swing(j)
                elapsed = gait.swing_phase(0.0, j) * gait.swing_duration
                self.swing_start[j] = -elapsed

    def body_position(self) -> np.ndarray:
        R = _rotation_zyx(*self.theta)
        return self.com - R @ self.com_offset

    def body_velocity(self) -> np.ndarray:
        arm = _rotation_zyx(*self.theta) @ self.com_offset
        w = self.omega
        return self.vel - np.array(
            [
                w[1] * arm[2] - w[2] * arm[1],
                w[2] * arm[0] - w[0] * arm[2],
                w[0] * arm[1] - w[1] * arm[0],
            ]
        )

    def support_height(self) -> float:
        """Mean height of the pinned feet: the robot's proprioceptive ground level."""
        pinned = [j for j in range(NUM_LEGS) if self.leg_state[j] in (_STANCE, _EARLY_PINNED)]
        if not pinned:
            return float(np.mean(self.footholds[:, 2]))
        return float(np.mean(self.footholds[pinned, 2]))

    def observe(self):
        state = RobotState(
            orientation=self.theta.copy(),
            position=self.body_position(),
            angular_velocity=self.omega.copy(),
            linear_velocity=self.body_velocity(),
        )
        targets = np.full((NUM_LEGS, 3), np.nan)
        for j in range(NUM_LEGS):
            if self.leg_state[j] != _STANCE and self.swing[j] is not None:
                targets[j] = self.swing[j].end
        return state, self.foot_pos.copy(), targets

    def _begin_swing(self, leg: int):
        # Raibert target relative to the hip as it will be at touchdown, one
        # swing period ahead of liftoff; planar filtered velocity only.  The
        # target height is the proprioceptive support level: the robot is
        # blind to the terrain ahead but knows where its feet are.
        velocity = np.array([self.vel_filtered[0], self.vel_filtered[1], 0.0])
        hip = (
            self.body_position()
            + _rotation_zyx(*self.theta) @ self.geometry.hip_offsets[leg]
            + velocity * self.gait.swing_duration
        )
        target = raibert_footstep(
            hip,
            velocity,
            np.append(self.episode.velocity_command(self.t), 0.0),
            self.gait.stance_duration,
            ground_height=self.support_height(),
        )
        self.swing[leg] = SwingTrajectory(
            start=self.footholds[leg].copy(),
            end=target,
            apex_height=self.foot_height,
            duration=self.gait.swing_duration,
        )
        self.swing_start[leg] = self.t
        self.leg_state[leg] = _SWING

    def _pin(self, leg: int, x: float, y: float, state: int):
        self.footholds[leg] = np.array([x, y, self.terrain.height_at(x, y)])
        self.foot_pos[leg] = self.footholds[leg].copy()
        self.leg_state[leg] = state

    def step(self, u, dt: float) -> np.ndarray:
        """Advance one sub-step under zero-order-held forces; returns slip flags."""
        self.vel_filtered = self.vel_filtered + self._vel_alpha * (
            self.body_velocity() - self.vel_filtered
        )
        scheduled = self.gait.is_stance(self.t)
        for j in range(NUM_LEGS):
            if scheduled[j] and self.leg_state[j] not in (_STANCE, _SEARCHING):
                if self.leg_state[j] == _EARLY_PINNED:
                    self.leg_state[j] = _STANCE
                else:
                    pos = self.foot_pos[j]
                    ground = self.terrain.height_at(pos[0], pos[1])
                    if pos[2] > ground + 0.005:
                        # Blind dismount: no ground where the plan ended, so
                        # the leg keeps extending until it finds the surface.
                        self.leg_state[j] = _SEARCHING
                    else:
                        self._pin(j, pos[0], pos[1], _STANCE)
            elif not scheduled[j] and self.leg_state[j] in (_STANCE, _SEARCHING):
                self._begin_swing(j)

        for j in range(NUM_LEGS):
            if self.leg_state[j] == _SWING:
                phase = (self.t - self.swing_start[j]) / self.swing[j].duration
                pos = self.swing[j].position(phase)
                if phase > 0.5 and pos[2] <= self.terrain.height_at(pos[0], pos[1]):
                    self._pin(j, pos[0], pos[1], _EARLY_PINNED)
                else:
                    self.foot_pos[j] = pos
            elif self.leg_state[j] == _SEARCHING:
                pos = self.foot_pos[j]
                new_z = pos[2] - self._search_rate * dt
                if new_z <= self.terrain.height_at(pos[0], pos[1]):
                    self._pin(j, pos[0], pos[1], _STANCE)
                else:
                    self.foot_pos[j, 2] = new_z

        fx = fy = fz = 0.0
        tx = ty = tz = 0.0
        cx, cy, cz = self.com
        slipped = np.zeros(NUM_LEGS, dtype=bool)
        mu = self.terrain.friction
        for j in range(NUM_LEGS):
            if not (scheduled[j] and self.leg_state[j] == _STANCE):
                continue
            ux, uy, uz = u[3 * j], u[3 * j + 1], u[3 * j + 2]
            if uz <= 0.0:
                if ux * ux + uy * uy > 1e-18:
                    slipped[j] = True
                continue
            tangential = math.hypot(ux, uy)
            limit = mu * uz
            if tangential > limit:
                scale = limit / tangential
                ux *= scale
                uy *= scale
                slipped[j] = True
            rx = self.footholds[j, 0] - cx
            ry = self.footholds[j, 1] - cy
            rz = self.footholds[j, 2] - cz
            fx += ux
            fy += uy
            fz += uz
            tx += ry * uz - rz * uy
            ty += rz * ux - rx * uz
            tz += rx * uy - ry * ux
        slipping = np.flatnonzero(slipped)

        R = _rotation_zyx(*self.theta)
        torque = np.array([tx, ty, tz])
        # Iw = R diag(I) R^T, so Iw^-1 applies as R diag(1/I) R^T
        iw_omega = R @ (self.true_inertia * (R.T @ self.omega))
        gyro = np.array(
            [
                self.omega[1] * iw_omega[2] - self.omega[2] * iw_omega[1],
                self.omega[2] * iw_omega[0] - self.omega[0] * iw_omega[2],
                self.omega[0] * iw_omega[1] - self.omega[1] * iw_omega[0],
            ]
        )
        omega_dot = R @ ((R.T @ (torque - gyro)) / self.true_inertia)
        self.omega = self.omega + dt * omega_dot

        roll, pitch, yaw = self.theta
        cp = math.cos(pitch)
        if abs(cp) > 1e-8:
            cy_, sy_ = math.cos(yaw), math.sin(yaw)
            w1, w2, w3 = self.omega
            # analytic inverse of the Z-Y-X Euler-rate map (det = cos(pitch))
            roll_rate = (cy_ * w1 + sy_ * w2) / cp
            pitch_rate = -sy_ * w1 + cy_ * w2
            yaw_rate = w3 + math.sin(pitch) * roll_rate
            self.theta = self.theta + dt * np.array([roll_rate, pitch_rate, yaw_rate])
        self.vel = self.vel + dt * np.array(
            [fx / self.true_mass, fy / self.true_mass, fz / self.true_mass - GRAVITY]
        )
        self.com = self.com + dt * self.vel

        # A foot violating the cone loses its grip for this sub-step: it is
        # dragged along with the body point it is attached to (kinetic
        # friction stays clipped at the cone boundary above) and re-pins at
        # the dragged location projected onto the terrain.
        for j in slipping:
            r = self.footholds[j] - self.com
            w = self.omega
            qx = self.footholds[j, 0] + dt * (self.vel[0] + w[1] * r[2] - w[2] * r[1])
            qy = self.footholds[j, 1] + dt * (self.vel[1] + w[2] * r[0] - w[0] * r[2])
            self.footholds[j, 0] = qx
            self.footholds[j, 1] = qy
            self.footholds[j, 2] = self.terrain.height_at(qx, qy)
            self.foot_pos[j] = self.footholds[j]

        self.t += dt
        return slipped


def default_mpc_config(
    mode: str, params: ModelParams | None = None, gait: GaitSchedule | None = None, **kwargs
) -> MpcConfig:
    """Mode-appropriate configuration; HMPC gets the benchmark hand margins.

    The hand margins split the surprise-payload compensation across the feet
    simultaneously in stance, so they depend on the gait (4 standing, 2 trotting).
    """
    params = params or ModelParams()
    cfg = MpcConfig(mode=mode, **kwargs)
    if mode == "hmpc" and not cfg.hmpc_offsets.any():
        n_stance = int(gait.is_stance(0.0).sum()) if gait is not None else 2
        cfg.hmpc_offsets = heuristic_tightening(
            DEFAULT_HMPC_PAYLOAD, DEFAULT_HMPC_ACCEL, n_stance=max(1, n_stance), mass=params.mass
        )
    return cfg


def run_episode(
    episode: EpisodeConfig,
    params: ModelParams | None = None,
    mpc: MpcConfig | None = None,
    disturbance: DisturbanceModel | None = None,
    geometry: BodyGeometry | None = None,
    gait: GaitSchedule | None = None,
    on_tick=None,
) -> EpisodeMetrics:
    """Closed-loop run: controller at 1/dt Hz, world at 1/sim_dt Hz.

    With on_tick given, the callback receives a per-tick dict (time, state,
    command, tightening, solver info) for trace serialization.
    """
    params = params or ModelParams()
    gait = gait or GaitSchedule.named(episode.gait)
    mpc = mpc or default_mpc_config(episode.mode, params, gait)
    if mpc.mode != episode.mode:
        mpc = replace(mpc, mode=episode.mode)
        if episode.mode == "hmpc" and not mpc.hmpc_offsets.any():
            n_stance = max(1, int(gait.is_stance(0.0).sum()))
            mpc.hmpc_offsets = heuristic_tightening(
                DEFAULT_HMPC_PAYLOAD, DEFAULT_HMPC_ACCEL, n_stance=n_stance, mass=params.mass
            )
    disturbance = disturbance or DisturbanceModel.default()
    geometry = geometry or BodyGeometry()

    world = SrbdWorld(params, geometry, gait, episode, foot_height=mpc.foot_height)
    controller = QpMpcController(params, mpc, disturbance, gait, geometry)

    substeps = max(1, round(mpc.dt / episode.sim_dt))
    n_ticks = int(round(episode.duration / mpc.dt))
    q_diag = mpc.q_diag
    r_diag = mpc.r_diag
    z_des = geometry.standing_height
    normal = episode.terrain.normal()

    tracking = 0.0
    effort = 0.0
    slip_samples = []
    slip_events = 0
    solve_times = []
    failure = FAILURE_NONE
    completed = 0.0
    tick = 0

    for tick in range(n_ticks):
        t = tick * mpc.dt
        state, feet, targets = world.observe()
        support = world.support_height()
        z_target = z_des + support
        failure = detect_failure(state, z_target, normal)
        if failure != FAILURE_NONE:
            break

        v_cmd = episode.velocity_command(t)
        try:
            u, diag = controller.step(
                t,
                state,
                feet,
                v_cmd,
                desired_yaw_rate=episode.yaw_rate,
                swing_targets=targets,
                support_height=support,
            )
        except MpcInfeasible:
            failure = FAILURE_QP
            break
        solve_times.append(diag.solve_time_us)

        x_ref = np.zeros(13)
        x_ref[2] = episode.yaw_rate * t
        x_ref[3:5] = episode.position_command(t)
        x_ref[5] = z_target
        x_ref[8] = episode.yaw_rate
        x_ref[9:11] = v_cmd
        x_ref[12] = GRAVITY
        err = state.flatten() - x_ref
        tracking += float(err @ (q_diag * err))
        effort += float(u @ (r_diag * u))
        stance_now = gait.is_stance(t)
        for j in range(NUM_LEGS):
            if stance_now[j] and u[3 * j + 2] > 1e-6:
                fx, fy, fz = u[3 * j : 3 * j + 3]
                slip_samples.append((fx * fx + fy * fy) / (fz * fz))

        tick_slipped = np.zeros(NUM_LEGS, dtype=bool)
        for _ in range(substeps):
            tick_slipped |= world.step(u, episode.sim_dt)
        slip_events += int(tick_slipped.sum())
        completed = world.t

        if on_tick is not None:
            on_tick(
                {
                    "t": t,
                    "state": state.flatten(),
                    "command": u,
                    "tightening": diag.tightening[0],
                    "status": diag.status,
                    "iterations": diag.iterations,
                    "solve_us": diag.solve_time_us,
                }
            )

    if failure == FAILURE_NONE:
        state, _, _ = world.observe()
        failure = detect_failure(state, z_des + world.support_height(), normal)
        completed = world.t

    times = np.asarray(solve_times) if solve_times else np.array([0.0])
    return EpisodeMetrics(
        success=failure == FAILURE_NONE,
        failure_reason=failure,
        time_completed=completed,
        slippage_ratio=float(np.mean(slip_samples)) if slip_samples else 0.0,
        tracking_cost=tracking,
        effort_cost=effort,
        slip_events=slip_events,
        ticks=len(solve_times),
        solve_us_min=float(times.min()),
        solve_us_median=float(np.median(times)),
        solve_us_p99=float(np.percentile(times, 99)),
    )


def sample_episode(
    template: EpisodeConfig,
    seed: int,
    index: int,
    payload_range=(1.0, 10.0),
    plank_height_range=(0.0, 0.05),
) -> EpisodeConfig:
    """Draw one scenario (payload, plank heights) from the campaign distribution."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    payload = float(rng.uniform(*payload_range))
    terrain = TerrainProfile.random_planks(
        rng, height_range=plank_height_range, friction=template.terrain.friction
    )
    return replace(template, payload_mass=payload, terrain=terrain, seed=index)


def _run_sampled(args):
    (index, seed, template, modes, gaits, payload_range, plank_range, params, disturbance) = args
    episode = sample_episode(template, seed, index, payload_range, plank_range)
    records = []
    for gait_name in gaits:
        for mode in modes:
            scenario = replace(episode, mode=mode, gait=gait_name)
            metrics = run_episode(scenario, params=params, disturbance=disturbance)
            records.append(
                {
                    "episode": index,
                    "seed": seed,
                    "mode": mode,
                    "gait": gait_name,
                    "payload_mass": scenario.payload_mass,
                    **metrics.__dict__,
                }
            )
    return records


def monte_carlo(
    n_episodes: int,
    seed: int,
    template: EpisodeConfig | None = None,
    modes=("lmpc", "hmpc", "ccmpc"),
    gaits=("trot",),
    payload_range=(1.0, 10.0),
    plank_height_range=(0.0, 0.05),
    params: ModelParams | None = None,
    disturbance: DisturbanceModel | None = None,
    workers: int = 1,
):
    """Paired-scenario campaign: every mode sees identical disturbances per episode.

    Returns (records, summary); summary aggregates success rate, mean
    slippage over successes, and tracking/effort costs normalized so the
    ccmpc column reads 1.0, with failed episodes excluded from the cost
    and slippage aggregates.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    template = template or EpisodeConfig()
    jobs = [
        (i, seed, template, tuple(modes), tuple(gaits), payload_range, plank_height_range, params, disturbance)
        for i in range(n_episodes)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_sampled, jobs))
    else:
        batches = [_run_sampled(job) for job in jobs]
    records = [rec for batch in batches for rec in batch]
    return records, summarize(records, modes=modes, gaits=gaits)


def summarize(records, modes=("lmpc", "hmpc", "ccmpc"), gaits=("trot",)):
    """Aggregate per (gait, mode): success %, slippage, normalized costs."""
    summary = {}
    for gait_name in gaits:
        by_mode = {}
        for mode in modes:
            rows = [r for r in records if r["mode"] == mode and r["gait"] == gait_name]
            wins = [r for r in rows if r["success"]]
            by_mode[mode] = {
                "episodes": len(rows),
                "success_rate": 100.0 * len(wins) / len(rows) if rows else 0.0,
                "slippage": float(np.mean([r["slippage_ratio"] for r in wins])) if wins else float("nan"),
                "tracking": float(np.mean([r["tracking_cost"] for r in wins])) if wins else float("nan"),
                "effort": float(np.mean([r["effort_cost"] for r in wins])) if wins else float("nan"),
            }
        base = by_mode.get("ccmpc", {})
        for mode in modes:
            cell = by_mode[mode]
            for key in ("tracking", "effort"):
                ref = base.get(key)
                cell[f"normalized_{key}"] = (
                    cell[key] / ref if ref and np.isfinite(cell[key]) and ref > 0 else float("nan")
                )
        summary[gait_name] = by_mode
    return summary
