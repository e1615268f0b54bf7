"""Contact scheduling, footstep targets, and swing-foot splines.

Legs are indexed [FR, FL, RR, RL].  A periodic schedule puts leg j in
stance whenever frac(t * f + offset_j) < duty_factor.  Touchdown targets
follow the velocity-based heuristic

    target = hip + (T_stance / 2) v + k_v (v - v_des),

projected to ground height, and swing feet travel on piecewise cubic
splines: a single Hermite segment in the horizontal plane and two
vertical segments meeting at the apex with zero velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .srbd import NUM_LEGS

LEG_NAMES = ("FR", "FL", "RR", "RL")
DEFAULT_FOOT_HEIGHT = 0.08
DEFAULT_RAIBERT_GAIN = 0.03


@dataclass
class GaitSchedule:
    """Periodic stance/swing pattern shared by controller and simulator."""

    name: str
    stepping_frequency: float
    duty_factor: float
    phase_offsets: np.ndarray

    def __post_init__(self):
        self.phase_offsets = np.asarray(self.phase_offsets, dtype=float)
        if self.stepping_frequency <= 0.0:
            raise ValueError("stepping frequency must be positive")
        if not 0.0 < self.duty_factor <= 1.0:
            raise ValueError("duty factor must lie in (0, 1]")
        if self.phase_offsets.shape != (NUM_LEGS,):
            raise ValueError("need one phase offset per leg")

    @classmethod
    def trot(cls, frequency: float = 2.5, duty_factor: float = 0.5) -> "GaitSchedule":
        return cls("trot", frequency, duty_factor, np.array([0.0, 0.5, 0.5, 0.0]))

    @classmethod
    def flytrot(cls, frequency: float = 3.3, duty_factor: float = 0.35) -> "GaitSchedule":
        return cls("flytrot", frequency, duty_factor, np.array([0.0, 0.5, 0.5, 0.0]))

    @classmethod
    def stand(cls) -> "GaitSchedule":
        return cls("stand", 2.5, 1.0, np.zeros(NUM_LEGS))

    @classmethod
    def named(cls, name: str, **kwargs) -> "GaitSchedule":
        factories = {"trot": cls.trot, "flytrot": cls.flytrot, "stand": cls.stand}
        if name not in factories:
            raise ValueError(f"unknown gait '{name}', expected one of {sorted(factories)}")
        return factories[name](**kwargs)

    @property
    def cycle_time(self) -> float:
        return 1.0 / self.stepping_frequency

    @property
    def stance_duration(self) -> float:
        return self.duty_factor * self.cycle_time

    @property
    def swing_duration(self) -> float:
        return (1.0 - self.duty_factor) * self.cycle_time

    def leg_phase(self, t: float, leg: int) -> float:
        """Cycle phase of one leg in [0, 1); stance spans [0, duty_factor)."""
        phase = t * self.stepping_frequency + self.phase_offsets[leg]
        return float(phase - np.floor(phase))

    def is_stance(self, t: float) -> np.ndarray:
        phases = t * self.stepping_frequency + self.phase_offsets
        return (phases - np.floor(phases)) < self.duty_factor

    def swing_phase(self, t: float, leg: int) -> float:
        """Progress through the current swing in [0, 1]; 0 when in stance."""
        if self.duty_factor >= 1.0:
            return 0.0
        phase = self.leg_phase(t, leg)
        if phase < self.duty_factor:
            return 0.0
        return (phase - self.duty_factor) / (1.0 - self.duty_factor)


def contact_sequence(t: float, gait: GaitSchedule, n_steps: int, dt: float) -> np.ndarray:
    """Stance flags at t, t+dt, ..., t+(n_steps-1) dt, shape (n_steps, 4)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    times = t + dt * np.arange(n_steps)
    phases = times[:, None] * gait.stepping_frequency + gait.phase_offsets[None, :]
    return (phases - np.floor(phases)) < gait.duty_factor


def raibert_footstep(
    hip_pos,
    velocity,
    desired_velocity,
    stance_duration: float,
    k_v: float = DEFAULT_RAIBERT_GAIN,
    ground_height: float = 0.0,
) -> np.ndarray:
    """Touchdown target under the hip, shifted by velocity and tracking error."""
    if stance_duration <= 0.0:
        raise ValueError("stance duration must be positive")
    hip = np.asarray(hip_pos, dtype=float)
    v = np.asarray(velocity, dtype=float)
    v_des = np.asarray(desired_velocity, dtype=float)
    target = hip + 0.5 * stance_duration * v + k_v * (v - v_des)
    target[2] = ground_height
    return target


def _smoothstep(s: float) -> float:
    return s * s * (3.0 - 2.0 * s)


@dataclass
class SwingTrajectory:
    """Cubic swing profile from liftoff to touchdown through a raised apex."""

    start: np.ndarray
    end: np.ndarray
    apex_height: float = DEFAULT_FOOT_HEIGHT
    duration: float = 0.2

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        if self.duration <= 0.0:
            raise ValueError("swing duration must be positive")

    @property
    def apex_z(self) -> float:
        return max(self.start[2], self.end[2]) + self.apex_height

    def position(self, phase: float) -> np.ndarray:
        """Foot position at swing phase in [0, 1] (clamped)."""
        s = min(max(phase, 0.0), 1.0)
        pos = self.start + (self.end - self.start) * _smoothstep(s)
        if s < 0.5:
            pos[2] = self.start[2] + (self.apex_z - self.start[2]) * _smoothstep(2.0 * s)
        else:
            pos[2] = self.apex_z + (self.end[2] - self.apex_z) * _smoothstep(2.0 * s - 1.0)
        return pos
