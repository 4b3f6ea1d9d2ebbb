"""Discrete-time EKF over the relative-motion model, variants A and B.

Variant A consumes range, relative-heading, and velocity measurements;
variant B drops the heading channel. Prediction integrates the continuous
dynamics (RK4 by default, Euler selectable) with the input held over the
step, and propagates covariance through the Jacobian of the actual
discrete propagation map.

Instances are values: every step returns a new instance, so a single
instance is never mutated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .geometry import (
    STATE_DIM,
    MeasurementA,
    MeasurementB,
    RelativeState,
    state_derivative_array,
    state_jacobian_array,
    wrap_angle,
)

Variant = Literal["A", "B"]
Integrator = Literal["rk4", "euler"]

# Channels with no simulated noise still need a nonzero variance entry.
NOISE_FLOOR_STD = 0.1

# Below this separation the range Jacobian row is numerically singular and
# the range measurement is skipped for the step.
RANGE_SINGULAR_GUARD = 1e-3

MAX_PREDICT_DT = 2.0

_EYE7 = np.eye(STATE_DIM)


def measurement_dim(variant: Variant) -> int:
    return 6 if variant == "A" else 5


@dataclass(frozen=True)
class EkfConfig:
    variant: Variant
    dt_nominal: float
    Q: np.ndarray
    Rm: np.ndarray
    P0: np.ndarray
    x0: RelativeState
    integrator: Integrator = "rk4"

    def __post_init__(self) -> None:
        if self.dt_nominal <= 0:
            raise ValueError(f"dt_nominal must be > 0, got {self.dt_nominal}")
        _check_psd("Q", self.Q, STATE_DIM)
        _check_psd("P0", self.P0, STATE_DIM)
        _check_psd("Rm", self.Rm, measurement_dim(self.variant))


def _check_psd(name: str, mat: np.ndarray, dim: int) -> None:
    mat = np.asarray(mat)
    if mat.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals.min() < -1e-10:
        raise ValueError(f"{name} must be positive semi-definite "
                         f"(min eigenvalue {eigvals.min():.3e})")


@dataclass(frozen=True)
class EkfInstance:
    x: np.ndarray  # [px, py, dpsi, v1x, v1y, v2x, v2y]
    P: np.ndarray
    config: EkfConfig
    last_update_time: float = 0.0
    range_row_skipped: bool = False

    @property
    def state(self) -> RelativeState:
        return RelativeState.from_array(self.x)


def initialize(config: EkfConfig) -> EkfInstance:
    return EkfInstance(x=config.x0.as_array(), P=np.array(config.P0, dtype=float),
                       config=config)


def default_config(
    variant: Variant,
    dt_nominal: float,
    x0: RelativeState,
    sigma_range: float = 0.0,
    sigma_dpsi: float = 0.0,
    sigma_velocity: float = 0.0,
    q_scale: float = 1e-4,
    integrator: Integrator = "rk4",
    truth_initialized: bool = False,
) -> EkfConfig:
    """Config with the package's default tuning.

    Measurement variances come from the scenario noise levels, floored at
    NOISE_FLOOR_STD for channels simulated noise-free. Process noise is a
    scaled identity suited to the kinematic scenarios. Truth-initialized
    runs start from a small covariance so no artificial transient is
    injected.
    """
    sig_r = max(sigma_range, NOISE_FLOOR_STD)
    sig_d = max(sigma_dpsi, NOISE_FLOOR_STD)
    sig_v = max(sigma_velocity, NOISE_FLOOR_STD)
    if variant == "A":
        r_diag = [sig_r ** 2, sig_d ** 2] + [sig_v ** 2] * 4
    else:
        r_diag = [sig_r ** 2] + [sig_v ** 2] * 4
    if truth_initialized:
        p0_diag = [0.01] * STATE_DIM
    else:
        p0_diag = [1.0, 1.0, 1.0, 0.01, 0.01, 0.01, 0.01]
    return EkfConfig(
        variant=variant,
        dt_nominal=dt_nominal,
        Q=q_scale * np.eye(STATE_DIM),
        Rm=np.diag(r_diag),
        P0=np.diag(p0_diag),
        x0=x0,
        integrator=integrator,
    )


def propagate_state(x: np.ndarray, u: np.ndarray, dt: float,
                    integrator: Integrator) -> np.ndarray:
    """Integrate the dynamics over dt with the input held constant."""
    if integrator == "euler":
        out = x + dt * state_derivative_array(x, u)
    else:
        k1 = state_derivative_array(x, u)
        k2 = state_derivative_array(x + 0.5 * dt * k1, u)
        k3 = state_derivative_array(x + 0.5 * dt * k2, u)
        k4 = state_derivative_array(x + dt * k3, u)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[2] = wrap_angle(out[2])
    return out


def propagation_jacobian(x: np.ndarray, u: np.ndarray, dt: float,
                         integrator: Integrator) -> np.ndarray:
    """Jacobian of propagate_state with respect to x (chain rule, exact)."""
    if integrator == "euler":
        return _EYE7 + dt * state_jacobian_array(x, u)
    k1 = state_derivative_array(x, u)
    K1 = state_jacobian_array(x, u)
    x2 = x + 0.5 * dt * k1
    k2 = state_derivative_array(x2, u)
    K2 = state_jacobian_array(x2, u) @ (_EYE7 + 0.5 * dt * K1)
    x3 = x + 0.5 * dt * k2
    k3 = state_derivative_array(x3, u)
    K3 = state_jacobian_array(x3, u) @ (_EYE7 + 0.5 * dt * K2)
    x4 = x + dt * k3
    K4 = state_jacobian_array(x4, u) @ (_EYE7 + dt * K3)
    return _EYE7 + (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def predict_arrays(x: np.ndarray, P: np.ndarray, u: np.ndarray, dt: float,
                   Q: np.ndarray, integrator: Integrator
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Prediction step on raw arrays; returns (x_pred, P_pred)."""
    F = propagation_jacobian(x, u, dt, integrator)
    x_new = propagate_state(x, u, dt, integrator)
    P_new = F @ P @ F.T + Q * dt
    P_new = 0.5 * (P_new + P_new.T)
    return x_new, P_new


def _measurement_rows(x: np.ndarray, variant: Variant
                      ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Predicted measurement, Jacobian, and range-singularity flag."""
    m = measurement_dim(variant)
    h = np.empty(m)
    H = np.zeros((m, STATE_DIM))
    rho = math.hypot(x[0], x[1])
    singular = rho < RANGE_SINGULAR_GUARD
    h[0] = rho
    if not singular:
        H[0, 0] = x[0] / rho
        H[0, 1] = x[1] / rho
    if variant == "A":
        h[1] = x[2]
        H[1, 2] = 1.0
        h[2:6] = x[3:7]
        H[2:6, 3:7] = np.eye(4)
    else:
        h[1:5] = x[3:7]
        H[1:5, 3:7] = np.eye(4)
    return h, H, singular


def update_arrays(x: np.ndarray, P: np.ndarray, z: np.ndarray,
                  Rm: np.ndarray, variant: Variant
                  ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Measurement update on raw arrays; returns (x_new, P_new, skipped)."""
    h, H, singular = _measurement_rows(x, variant)
    innovation = z - h
    if variant == "A":
        innovation[1] = wrap_angle(innovation[1])
    if singular:
        # Drop the range row; remaining channels still update the state.
        innovation = innovation[1:]
        H = H[1:]
        Rm = Rm[1:, 1:]
    S = H @ P @ H.T + Rm
    K = np.linalg.solve(S, H @ P).T
    x_new = x + K @ innovation
    x_new[2] = wrap_angle(x_new[2])
    IKH = _EYE7 - K @ H
    P_new = IKH @ P @ IKH.T + K @ Rm @ K.T  # Joseph form
    P_new = 0.5 * (P_new + P_new.T)
    return x_new, P_new, singular


def predict(ekf: EkfInstance, u, dt: float) -> EkfInstance:
    """Propagate the estimate and covariance forward by dt."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt > MAX_PREDICT_DT:
        raise ValueError(f"dt {dt} exceeds stale-data guard {MAX_PREDICT_DT} s")
    u_arr = u.as_array() if hasattr(u, "as_array") else np.asarray(u, dtype=float)
    cfg = ekf.config
    x_new, P_new = predict_arrays(ekf.x, ekf.P, u_arr, dt, cfg.Q,
                                  cfg.integrator)
    return replace(ekf, x=x_new, P=P_new,
                   last_update_time=ekf.last_update_time + dt)


def update(ekf: EkfInstance, z: MeasurementA | MeasurementB) -> EkfInstance:
    """Fuse one measurement; flags the step if the range row was skipped."""
    cfg = ekf.config
    if cfg.variant == "A" and not isinstance(z, MeasurementA):
        raise TypeError("variant A filter requires MeasurementA")
    if cfg.variant == "B" and not isinstance(z, MeasurementB):
        raise TypeError("variant B filter requires MeasurementB")
    x_new, P_new, skipped = update_arrays(ekf.x, ekf.P, z.as_array(),
                                          cfg.Rm, cfg.variant)
    return replace(ekf, x=x_new, P=P_new, range_row_skipped=skipped)


def write_trace_csv(path, times, states, covariances) -> None:
    """Serialize a state/covariance history.

    Columns: t,px,py,dpsi,v1x,v1y,v2x,v2y,p_trace
    """
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "px", "py", "dpsi",
                         "v1x", "v1y", "v2x", "v2y", "p_trace"])
        for t, x, P in zip(times, states, covariances):
            row = [repr(float(t))]
            row += [repr(float(v)) for v in x]
            row.append(repr(float(np.trace(P))))
            writer.writerow(row)
