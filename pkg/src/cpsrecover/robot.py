"""Differential-drive ground robot case study.

A two-level hierarchy: an outer trajectory loop with bicycle-model
kinematics and a dynamic-inversion controller, feeding wheel-speed
references to two inner DC-motor loops with PID controllers.  All default
parameters are exposed through :class:`RobotParams`; the scenario builder
in :mod:`cpsrecover.config` uses them to assemble the full configuration.

The continuous-time dynamics are discretized with an explicit Euler step.
The outer loop runs at 10 Hz, the inner loops at 100 Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import SubsystemModel, euler_discretize

OUTER = "outer"
INNER_1 = "inner-1"
INNER_2 = "inner-2"


@dataclass
class RobotParams:
    """Physical and controller parameters with case-study defaults."""

    wheel_radius: float = 0.05        # m
    wheel_separation: float = 0.5     # m
    # Small finite stand-in for the l -> 0 offset limit.  The omega command
    # scales as 1/l, so values much below ~0.1 destabilize the 10 Hz Euler
    # loop (heading steps exceed a radian); 0.2 keeps the closed loop calm.
    inversion_offset: float = 0.2     # m
    k1_gain: float = 1.0
    k2_gain: float = 1.0
    motor_resistance: float = 1.0     # Ohm
    motor_inductance: float = 0.5     # H
    k_torque: float = 0.01
    k_emf: float = 0.01
    k_friction: float = 0.01
    inertia: float = 0.01
    kp: float = 13.2
    kd: float = 0.275
    ki: float = 1.525
    outer_rate: float = 10.0          # Hz
    inner_rate: float = 100.0         # Hz
    # PID outputs are clamped to keep desk-scale runs bounded under the
    # very large default motor noise.
    voltage_limit: float = 500.0

    def __post_init__(self):
        for name in ("wheel_radius", "wheel_separation", "inversion_offset",
                     "motor_inductance", "inertia"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def bicycle_model(dt: float, Q: np.ndarray, R: np.ndarray,
                  mu0=None, Sigma0=None) -> SubsystemModel:
    """Outer-loop kinematics: state [x, y, theta], input [v, omega]."""

    def deriv(x, u):
        v, w = u
        return np.array([v * math.cos(x[2]), v * math.sin(x[2]), w])

    def jac_deriv(x, u):
        v = u[0]
        return np.array([[0.0, 0.0, -v * math.sin(x[2])],
                         [0.0, 0.0, v * math.cos(x[2])],
                         [0.0, 0.0, 0.0]])

    f, jac_A = euler_discretize(deriv, jac_deriv, dt)
    eye3 = np.eye(3)
    return SubsystemModel(
        id=OUTER, n_x=3, n_y=3, n_u=2,
        f=f, g=lambda x, u: x.copy(), jac_A=jac_A, jac_C=lambda x, u: eye3,
        Q=np.asarray(Q, float), R=np.asarray(R, float), dt=dt,
        mu0=mu0, Sigma0=Sigma0)


def dc_motor_model(motor_id: str, dt: float, params: RobotParams,
                   Q: np.ndarray, R: np.ndarray,
                   mu0=None, Sigma0=None) -> SubsystemModel:
    """Inner-loop DC motor: state [current, angular velocity], input voltage."""
    Rm, L = params.motor_resistance, params.motor_inductance
    A_c = np.array([[-Rm / L, -params.k_emf / L],
                    [params.k_torque / params.inertia,
                     -params.k_friction / params.inertia]])
    B_c = np.array([1.0 / L, 0.0])

    def deriv(x, u):
        return A_c @ x + B_c * u[0]

    f, jac_A = euler_discretize(deriv, lambda x, u: A_c, dt)
    C = np.array([[0.0, 1.0]])
    return SubsystemModel(
        id=motor_id, n_x=2, n_y=1, n_u=1,
        f=f, g=lambda x, u: C @ x, jac_A=jac_A, jac_C=lambda x, u: C,
        Q=np.asarray(Q, float), R=np.atleast_2d(np.asarray(R, float)), dt=dt,
        mu0=mu0, Sigma0=Sigma0)


def reference_trajectory(t: float, position, prev_heading: float = 0.0):
    """Circular reference of radius 2 with heading toward the reference point.

    The heading uses atan2 of the vector from the current position estimate
    to the reference point; when the two coincide the previous heading
    reference is held.
    """
    rx, ry = 2.0 * math.cos(t), 2.0 * math.sin(t)
    dx, dy = rx - position[0], ry - position[1]
    if dx == 0.0 and dy == 0.0:
        heading = prev_heading
    else:
        heading = math.atan2(dy, dx)
    return np.array([rx, ry, heading])


def reference_rate(t: float):
    """Analytic derivative of the circular reference position."""
    return np.array([-2.0 * math.sin(t), 2.0 * math.cos(t)])


def dynamic_inversion_control(x_hat, ref, ref_rate, params: RobotParams):
    """First-order dynamic inversion on a point offset ahead of the robot."""
    theta = x_hat[2]
    l = params.inversion_offset
    M = np.array([[math.cos(theta), math.sin(theta)],
                  [-math.sin(theta) / l, math.cos(theta) / l]])
    e = np.array([ref_rate[0] + params.k1_gain * (ref[0] - x_hat[0]),
                  ref_rate[1] + params.k2_gain * (ref[1] - x_hat[1])])
    return M @ e


def wheel_transform(u_outer, params: RobotParams):
    """Body velocity command [v, omega] to [left, right] wheel speeds."""
    v, w = u_outer
    return np.array([(2.0 * v - w * params.wheel_separation),
                     (2.0 * v + w * params.wheel_separation)]) / (2.0 * params.wheel_radius)


def wheel_transform_inverse(wheel_speeds, params: RobotParams):
    """Achieved wheel speeds back to body [v, omega]."""
    wl, wr = wheel_speeds
    v = params.wheel_radius * (wl + wr) / 2.0
    w = params.wheel_radius * (wr - wl) / params.wheel_separation
    return np.array([v, w])


@dataclass
class PidState:
    """Integral accumulator and previous error of one PID controller."""

    integral: float = 0.0
    prev_error: float = 0.0


def pid_control(state: PidState, error: float, dt: float,
                params: RobotParams) -> float:
    """Positional PID with rectangle-rule integral and backward-difference
    derivative; output clamped to the voltage limit (anti-windup: the
    integral is not advanced while the output saturates)."""
    integral = state.integral + error * dt
    derivative = (error - state.prev_error) / dt
    out = params.kp * error + params.ki * integral + params.kd * derivative
    limit = params.voltage_limit
    if out > limit:
        out = limit
    elif out < -limit:
        out = -limit
    else:
        state.integral = integral
    state.prev_error = error
    return out


def make_outer_controller(params: RobotParams):
    """Controller closure for the outer loop: (x_hat, t) -> [v, omega]."""
    prev_heading = [0.0]

    def control(x_hat, t):
        ref = reference_trajectory(t, x_hat[:2], prev_heading[0])
        prev_heading[0] = ref[2]
        return dynamic_inversion_control(x_hat, ref, reference_rate(t), params)

    return control


def make_inner_controller(params: RobotParams, ref_box, index: int, dt: float):
    """Controller closure for an inner loop: tracks the shared wheel reference.

    ``ref_box`` is a one-element list holding the latest wheel-speed
    reference pair published by the outer loop.
    """
    pid = PidState()

    def control(x_hat, t):
        error = ref_box[0][index] - x_hat[1]
        return np.array([pid_control(pid, error, dt, params)])

    return control
