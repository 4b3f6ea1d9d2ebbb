"""2D frame algebra, relative-motion dynamics, and observation models.

Two agents carry heading-aligned horizontal frames H1 (host) and H2
(tracked). The host estimates the 7-dimensional relative state
[p, dpsi, v1, v2]: the tracked agent's position in H1, the heading
difference psi2 - psi1, and both horizontal-frame velocities. Inputs are
the horizontal-frame accelerations and the yaw rates of both agents.

All types are immutable values and all operations are pure functions.
Array layout used throughout the package:

    state x = [px, py, dpsi, v1x, v1y, v2x, v2y]
    input u = [a1x, a1y, a2x, a2y, r1, r2]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_DIM = 7
INPUT_DIM = 6

# Reject attitudes this close to the pitch singularity of the yaw-rate
# reconstruction (cos(theta) in the denominator).
GIMBAL_TOL = 1e-3


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped == -math.pi:
        return math.pi
    return wrapped


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Vec2:
    """2D vector; unit is contextual (m, m/s, or m/s^2)."""

    x: float
    y: float

    def __post_init__(self) -> None:
        _require_finite("Vec2 component", self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @staticmethod
    def from_array(a) -> "Vec2":
        return Vec2(float(a[0]), float(a[1]))

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class RelativeState:
    """Filter state: relative position, heading difference, both velocities.

    p is the tracked agent's position expressed in the host's horizontal
    frame H1; dpsi = psi2 - psi1 stored wrapped to (-pi, pi]; v1 and v2 are
    each agent's velocity in its own horizontal frame.
    """

    p: Vec2
    delta_psi: float
    v1: Vec2
    v2: Vec2

    def __post_init__(self) -> None:
        _require_finite("delta_psi", self.delta_psi)
        object.__setattr__(self, "delta_psi", wrap_angle(self.delta_psi))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.p.x, self.p.y, self.delta_psi,
             self.v1.x, self.v1.y, self.v2.x, self.v2.y]
        )

    @staticmethod
    def from_array(x) -> "RelativeState":
        return RelativeState(
            p=Vec2(float(x[0]), float(x[1])),
            delta_psi=float(x[2]),
            v1=Vec2(float(x[3]), float(x[4])),
            v2=Vec2(float(x[5]), float(x[6])),
        )


@dataclass(frozen=True)
class InputVector:
    """System input: horizontal-frame accelerations and yaw rates."""

    a1: Vec2
    a2: Vec2
    r1: float
    r2: float

    def __post_init__(self) -> None:
        _require_finite("yaw rate", self.r1, self.r2)

    def as_array(self) -> np.ndarray:
        return np.array([self.a1.x, self.a1.y, self.a2.x, self.a2.y,
                         self.r1, self.r2])

    @staticmethod
    def from_array(u) -> "InputVector":
        return InputVector(
            a1=Vec2(float(u[0]), float(u[1])),
            a2=Vec2(float(u[2]), float(u[3])),
            r1=float(u[4]),
            r2=float(u[5]),
        )


ZERO_INPUT = InputVector(a1=Vec2(0.0, 0.0), a2=Vec2(0.0, 0.0), r1=0.0, r2=0.0)


@dataclass(frozen=True)
class AttitudeSample:
    """Raw attitude and IMU readings of one agent, body frame.

    specific_force is the 3-axis accelerometer reading (m/s^2); gyro rates
    are the body-frame pitch and yaw rates.
    """

    roll: float
    pitch: float
    gyro_pitch_rate: float
    gyro_yaw_rate: float
    specific_force: tuple[float, float, float]

    def __post_init__(self) -> None:
        _require_finite("attitude angle", self.roll, self.pitch)
        _require_finite("gyro rate", self.gyro_pitch_rate, self.gyro_yaw_rate)
        _require_finite("specific force", *self.specific_force)
        if abs(self.pitch) >= math.pi / 2 - GIMBAL_TOL:
            raise ValueError(
                f"pitch {self.pitch:.4f} rad too close to +/-pi/2 "
                "(yaw-rate reconstruction singular)"
            )


@dataclass(frozen=True)
class MeasurementA:
    """Observation with a relative-heading channel: range, dpsi, v1, v2."""

    range: float
    delta_psi_meas: float
    v1_meas: Vec2
    v2_meas: Vec2

    def __post_init__(self) -> None:
        if self.range < 0:
            raise ValueError(f"range must be >= 0, got {self.range}")

    @property
    def half_squared_range(self) -> float:
        """Analysis-variant observation 0.5 * p'p."""
        return 0.5 * self.range * self.range

    def as_array(self) -> np.ndarray:
        return np.array([self.range, self.delta_psi_meas,
                         self.v1_meas.x, self.v1_meas.y,
                         self.v2_meas.x, self.v2_meas.y])


@dataclass(frozen=True)
class MeasurementB:
    """Heading-independent observation: range, v1, v2."""

    range: float
    v1_meas: Vec2
    v2_meas: Vec2

    def __post_init__(self) -> None:
        if self.range < 0:
            raise ValueError(f"range must be >= 0, got {self.range}")

    @property
    def half_squared_range(self) -> float:
        return 0.5 * self.range * self.range

    def as_array(self) -> np.ndarray:
        return np.array([self.range,
                         self.v1_meas.x, self.v1_meas.y,
                         self.v2_meas.x, self.v2_meas.y])


def rotation_2d(delta_psi: float) -> np.ndarray:
    """Rotation matrix mapping H2-frame vectors into the H1 frame."""
    c = np.cos(delta_psi)
    s = np.sin(delta_psi)
    return np.array([[c, -s], [s, c]])


def rotation_2d_deriv(delta_psi: float) -> np.ndarray:
    """Derivative of rotation_2d with respect to the angle."""
    c = np.cos(delta_psi)
    s = np.sin(delta_psi)
    return np.array([[-s, -c], [c, -s]])


def skew_2d(r: float) -> np.ndarray:
    """2D analogue of the cross-product matrix for yaw rate r."""
    return np.array([[0.0, -r], [r, 0.0]])


def body_rates_to_heading_rate(att: AttitudeSample) -> float:
    """Reconstruct the heading rate from body-frame gyro pitch/yaw rates."""
    cos_theta = math.cos(att.pitch)
    return (math.sin(att.roll) * att.gyro_pitch_rate
            + math.cos(att.roll) * att.gyro_yaw_rate) / cos_theta


def specific_force_to_horizontal_accel(att: AttitudeSample) -> Vec2:
    """Project the body-frame specific force onto the horizontal frame.

    Applies the first two rows of the body-to-horizontal rotation (roll
    then pitch; the horizontal frame shares the body's heading).
    """
    c_th, s_th = math.cos(att.pitch), math.sin(att.pitch)
    c_ph, s_ph = math.cos(att.roll), math.sin(att.roll)
    sx, sy, sz = att.specific_force
    ax = c_th * sx + s_ph * s_th * sy + c_ph * s_th * sz
    ay = c_ph * sy - s_ph * sz
    return Vec2(ax, ay)


def state_derivative_array(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Time derivative of the relative state, array in / array out.

    Works elementwise on complex arrays as well, which the observability
    module exploits for derivative propagation.
    """
    dpsi = x[2]
    c = np.cos(dpsi)
    s = np.sin(dpsi)
    r1 = u[4]
    r2 = u[5]
    dx = np.empty(STATE_DIM, dtype=x.dtype)
    # p_dot = -v1 + R(dpsi) v2 - S(r1) p
    dx[0] = -x[3] + c * x[5] - s * x[6] + r1 * x[1]
    dx[1] = -x[4] + s * x[5] + c * x[6] - r1 * x[0]
    dx[2] = r2 - r1
    # v1_dot = a1 - S(r1) v1
    dx[3] = u[0] + r1 * x[4]
    dx[4] = u[1] - r1 * x[3]
    # v2_dot = a2 - S(r2) v2
    dx[5] = u[2] + r2 * x[6]
    dx[6] = u[3] - r2 * x[5]
    return dx


def state_derivative(x: RelativeState, u: InputVector) -> np.ndarray:
    """Time derivative of the relative state as a 7-vector."""
    return state_derivative_array(x.as_array(), u.as_array())


def state_jacobian_array(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Jacobian of state_derivative_array with respect to the state."""
    dpsi = x[2]
    c = math.cos(dpsi)
    s = math.sin(dpsi)
    r1 = u[4]
    r2 = u[5]
    v2x, v2y = x[5], x[6]
    A = np.zeros((STATE_DIM, STATE_DIM))
    # d p_dot / d(p, dpsi, v1, v2)
    A[0, 1] = r1
    A[1, 0] = -r1
    A[0, 2] = -s * v2x - c * v2y
    A[1, 2] = c * v2x - s * v2y
    A[0, 3] = -1.0
    A[1, 4] = -1.0
    A[0, 5] = c
    A[0, 6] = -s
    A[1, 5] = s
    A[1, 6] = c
    # d v1_dot / d v1
    A[3, 4] = r1
    A[4, 3] = -r1
    # d v2_dot / d v2
    A[5, 6] = r2
    A[6, 5] = -r2
    return A


def observe_a(x: RelativeState) -> MeasurementA:
    """Noise-free heading-aware observation of a state."""
    return MeasurementA(
        range=x.p.norm(),
        delta_psi_meas=x.delta_psi,
        v1_meas=x.v1,
        v2_meas=x.v2,
    )


def observe_b(x: RelativeState) -> MeasurementB:
    """Noise-free heading-independent observation of a state."""
    return MeasurementB(range=x.p.norm(), v1_meas=x.v1, v2_meas=x.v2)


def half_squared_range(x: RelativeState) -> float:
    """Analysis-variant range observation 0.5 * p'p."""
    return 0.5 * (x.p.x * x.p.x + x.p.y * x.p.y)


def cross2(a, b) -> float:
    """Scalar 2D cross product a_x b_y - a_y b_x."""
    return a[0] * b[1] - a[1] * b[0]
