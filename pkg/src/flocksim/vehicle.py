"""Inner loop of each agent: velocity PID with feed-forward, a lagged
point-mass plant, and a GPS sensor with correlated position error.

All state arrays have shape (N, 2) so one instance can advance a whole swarm;
N=1 models a single vehicle. The plant update per tick is

    a  <- a + (a_cmd - a) * dt / response_time      (actuation lag)
    a  <- clamp(|a|, a_max)
    v  <- v + (a - v / drag_tau) * dt + gust kick   (then clamp |v| at v_max)
    x  <- x + (v + wind) * dt

The linear drag makes a constant cruise velocity cost a proportional
constant command, which is exactly what the controller's feed-forward term
supplies; the integral term only trims the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Vec2, vec


@dataclass
class PidParams:
    """Per-axis velocity-loop gains (world frame)."""

    kp: float = 0.6               # 1/s
    ki: float = 0.0               # 1/s^2, trim only; cruise comes from feed-forward
    kd: float = 0.5               # dimensionless
    i_limit: float = 0.05         # m/s^2, anti-windup clamp on the integral
    feedforward_gain: float = 1.0  # 1/s, cruise bias per m/s of target

    def __post_init__(self) -> None:
        for name in ("kp", "ki", "kd", "feedforward_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.i_limit > 0:
            raise ValueError("i_limit must be positive")


@dataclass
class PlantParams:
    """Point-mass vehicle with actuation transport delay and lag."""

    command_delay: float = 0.4   # s, transport delay on the steering path
    response_time: float = 1.0   # s, first-order lag of the acceleration
    a_max: float = 3.0           # m/s^2, inertia limit
    wind: Vec2 = field(default_factory=lambda: vec(0.0, 0.0))  # m/s, mean drift
    gust_std: float = 0.0        # m/s per sqrt(s) of velocity random walk
    drag_tau: float = 1.0        # s, velocity damping time constant
    v_max: float = 4.0           # m/s, hard airspeed clamp

    def __post_init__(self) -> None:
        self.wind = np.asarray(self.wind, dtype=np.float64)
        if not self.response_time > 0:
            raise ValueError("response_time must be positive")
        if not self.a_max > 0:
            raise ValueError("a_max must be positive")
        if self.command_delay < 0:
            raise ValueError("command_delay must be non-negative")
        if not self.drag_tau > 0:
            raise ValueError("drag_tau must be positive")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.gust_std < 0:
            raise ValueError("gust_std must be non-negative")


@dataclass
class GpsModel:
    """Position fixes with slowly wandering bias, velocity with white error."""

    rate: float = 5.0                 # Hz
    pos_error_std: float = 1.0        # m, stationary per-axis std
    pos_error_corr_time: float = 30.0  # s
    vel_error_std: float = 0.2        # m/s, white per fix

    def __post_init__(self) -> None:
        if not self.rate > 0:
            raise ValueError("gps rate must be positive")
        if not self.pos_error_corr_time > 0:
            raise ValueError("pos_error_corr_time must be positive")
        if self.pos_error_std < 0 or self.vel_error_std < 0:
            raise ValueError("gps error stds must be non-negative")


class Pid:
    """Velocity PID with feed-forward; state shape (n, 2)."""

    def __init__(self, n: int, params: PidParams):
        self.p = params
        self.integral = np.zeros((n, 2))
        self.prev_error = np.zeros((n, 2))
        self.primed = np.zeros(n, dtype=bool)

    def step(self, target_v: np.ndarray, measured_v: np.ndarray,
             dt: float) -> np.ndarray:
        """One controller step; returns commanded acceleration (n, 2).

        The derivative uses the previous error (zero on the first step) and
        the integral is accumulated after the command is formed, clamped to
        +-i_limit per axis.
        """
        p = self.p
        e = target_v - measured_v
        de = np.where(self.primed[:, None], (e - self.prev_error) / dt, 0.0)
        cmd = p.kp * e + p.kd * de + self.integral + p.feedforward_gain * target_v
        self.integral = np.clip(self.integral + p.ki * e * dt,
                                -p.i_limit, p.i_limit)
        self.prev_error = e
        self.primed[:] = True
        return cmd


def pid_step(target_v: Vec2, measured_v: Vec2, state: Pid, dt: float) -> Vec2:
    """Single-vehicle convenience wrapper around Pid.step."""
    out = state.step(np.asarray(target_v, dtype=np.float64)[None, :],
                     np.asarray(measured_v, dtype=np.float64)[None, :], dt)
    return out[0]


class Plant:
    """Lagged point-mass dynamics for n vehicles, including the command
    transport delay (a ring buffer of command_delay / dt slots)."""

    def __init__(self, n: int, params: PlantParams, dt: float,
                 pos: Optional[np.ndarray] = None,
                 vel: Optional[np.ndarray] = None):
        self.p = params
        self.dt = dt
        self.pos = np.zeros((n, 2)) if pos is None else np.array(pos, dtype=np.float64)
        self.vel = np.zeros((n, 2)) if vel is None else np.array(vel, dtype=np.float64)
        self.accel = np.zeros((n, 2))
        delay_slots = int(round(params.command_delay / dt))
        if abs(delay_slots * dt - params.command_delay) > 1e-9:
            raise ValueError("command_delay must be a whole number of ticks")
        self._queue = [np.zeros((n, 2)) for _ in range(delay_slots)]

    def step(self, command: np.ndarray, gust: Optional[np.ndarray] = None,
             freeze: Optional[np.ndarray] = None) -> None:
        """Advance one tick. gust is a pre-drawn standard normal (n, 2) or
        None; freeze marks rows to hold in place (landed vehicles)."""
        p, dt = self.p, self.dt
        if self._queue:
            self._queue.append(np.array(command, dtype=np.float64))
            effective = self._queue.pop(0)
        else:
            effective = command

        # Exact one-tick discretization of the first-order lag; reduces to
        # the dt/response_time Euler form for small ratios and stays stable
        # when the response time is much shorter than the tick.
        alpha = 1.0 - math.exp(-dt / p.response_time)
        accel = self.accel + (effective - self.accel) * alpha
        mag = np.hypot(accel[:, 0], accel[:, 1])
        scale = np.where(mag > p.a_max, p.a_max / np.maximum(mag, 1e-12), 1.0)
        accel = accel * scale[:, None]

        vel = self.vel + (accel - self.vel / p.drag_tau) * dt
        if gust is not None and p.gust_std > 0:
            vel = vel + p.gust_std * math.sqrt(dt) * gust
        speed = np.hypot(vel[:, 0], vel[:, 1])
        vscale = np.where(speed > p.v_max, p.v_max / np.maximum(speed, 1e-12), 1.0)
        vel = vel * vscale[:, None]

        pos = self.pos + (vel + p.wind) * dt

        if freeze is not None and freeze.any():
            keep = freeze[:, None]
            accel = np.where(keep, 0.0, accel)
            vel = np.where(keep, 0.0, vel)
            pos = np.where(keep, self.pos, pos)
        self.accel, self.vel, self.pos = accel, vel, pos


class GpsSensor:
    """Sample-and-hold position/velocity sensing for n vehicles.

    The per-axis position error is a first-order Gauss-Markov process with
    stationary std pos_error_std, advanced only at fix instants; velocity
    error is white. Between fixes the last sample is held.
    """

    def __init__(self, n: int, model: GpsModel, rng: np.random.Generator):
        self.m = model
        self.rng = rng
        if model.pos_error_std > 0:
            self.pos_err = model.pos_error_std * rng.standard_normal((n, 2))
        else:
            self.pos_err = np.zeros((n, 2))
        self.sensed_pos = np.zeros((n, 2))
        self.sensed_vel = np.zeros((n, 2))
        self.last_fix_time = np.full(n, -np.inf)

    def fix(self, truth_pos: np.ndarray, truth_vel: np.ndarray, t: float) -> None:
        """Take a fix for every vehicle at time t and hold it."""
        m = self.m
        n = truth_pos.shape[0]
        if m.pos_error_std > 0:
            dt_fix = 1.0 / m.rate
            phi = math.exp(-dt_fix / m.pos_error_corr_time)
            kick = math.sqrt(max(0.0, 1.0 - phi * phi)) * m.pos_error_std
            self.pos_err = phi * self.pos_err + kick * self.rng.standard_normal((n, 2))
        self.sensed_pos = truth_pos + self.pos_err
        if m.vel_error_std > 0:
            self.sensed_vel = truth_vel + m.vel_error_std * self.rng.standard_normal((n, 2))
        else:
            self.sensed_vel = np.array(truth_vel, dtype=np.float64)
        self.last_fix_time[:] = t
