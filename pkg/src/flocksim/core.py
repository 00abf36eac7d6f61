"""Shared types for the planar flock simulator.

Positions and velocities are 2D east/north vectors in meters and m/s,
represented as numpy arrays of shape (2,) (or (N, 2) in batched code).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

Vec2 = np.ndarray  # shape (2,), float64


def vec(x: float, y: float) -> Vec2:
    """Build a 2D float vector."""
    return np.array([x, y], dtype=np.float64)


def norm(v: Vec2) -> float:
    return float(math.hypot(float(v[0]), float(v[1])))


def clamp_speed(v: Vec2, cap: float) -> Vec2:
    """Rescale v to magnitude cap if it is faster than cap, else return it unchanged."""
    if cap < 0:
        raise ValueError("speed cap must be non-negative")
    s = norm(v)
    if s <= cap:
        return v
    return v * (cap / s)


class AgentStatus(enum.IntEnum):
    AIRBORNE = 0
    LANDING = 1
    LANDED = 2


@dataclass
class AgentState:
    """Kinematic state of one agent as known at some instant."""

    id: int
    position: Vec2
    velocity: Vec2
    status: AgentStatus = AgentStatus.AIRBORNE


@dataclass
class TargetState:
    """A tracking reference point, optionally moving."""

    position: Vec2
    velocity: Vec2 = field(default_factory=lambda: vec(0.0, 0.0))


@dataclass
class ControlParams:
    """Tunable gains and ranges of the decentralized controller.

    r2 defaults to r0 / 2 when not given.  All distances in meters,
    velocities in m/s, accelerations in m/s^2.
    """

    r0: float = 8.0            # equilibrium inter-agent distance, m
    r1: float = 1.0            # repulsion cap / friction denominator floor, m
    r2: Optional[float] = None  # friction slope width around r0, m
    D: float = 1.0             # repulsion gain, 1/s^2
    C_frict: float = 20.0      # velocity alignment gain, m^2/s
    C_shill: float = 2.0       # wall shill gain, 1/s
    v_flock: float = 2.0       # preferred cruise speed while flocking, m/s
    v0: float = 2.0            # maximum tracking speed, m/s
    alpha: float = 1.0         # weight of the flock-center tracking term
    beta: float = 1.0          # weight of the formation shape term
    R: float = 0.0             # transfer offset used when no formation supplies one, m
    d: float = 5.0             # transfer ramp width, m
    dt_lookahead: float = 1.0  # planning horizon of the velocity update, s
    tau: float = 1.0           # relaxation time toward the preferred velocity, s
    v_max: float = 4.0         # hard cap on the desired velocity, m/s

    def __post_init__(self) -> None:
        if self.r2 is None:
            self.r2 = self.r0 / 2.0
        self.validate()

    def validate(self) -> None:
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if not self.r1 > 0:
            raise ValueError("r1 must be positive")
        if not (0 < self.r2 < self.r0):
            raise ValueError("r2 must lie strictly between 0 and r0")
        if not self.d > 0:
            raise ValueError("d must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.dt_lookahead > 0:
            raise ValueError("dt_lookahead must be positive")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.v_flock < 0 or self.v_flock > self.v_max:
            raise ValueError("v_flock must lie in [0, v_max]")
        if self.v0 < 0 or self.v0 > self.v_max:
            raise ValueError("v0 must lie in [0, v_max]")
        for name in ("D", "C_frict", "C_shill"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("alpha", "beta"):
            if not (0 <= getattr(self, name) <= 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.R < 0:
            raise ValueError("R must be non-negative")


# --- flight area geometry ---------------------------------------------------


@dataclass
class Disc:
    """Circular flight area."""

    center: Vec2
    radius: float  # m

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        """Distance outside the boundary, negative inside.  p has shape (..., 2)."""
        p = np.asarray(p, dtype=np.float64)
        return np.hypot(*np.moveaxis(p - self.center, -1, 0)) - self.radius

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.signed_distance(p) <= 0.0


@dataclass
class Annulus:
    """Ring-shaped flight area between two concentric circles."""

    center: Vec2
    r_inner: float  # m
    r_outer: float  # m

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        if not (0 < self.r_inner < self.r_outer):
            raise ValueError("annulus needs 0 < r_inner < r_outer")

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        rho = np.hypot(*np.moveaxis(p - self.center, -1, 0))
        return np.maximum(rho - self.r_outer, self.r_inner - rho)

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.signed_distance(p) <= 0.0


@dataclass
class Rect:
    """Axis-aligned rectangular flight area."""

    center: Vec2
    half_width: float   # m, east half-extent
    half_height: float  # m, north half-extent

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        if not (self.half_width > 0 and self.half_height > 0):
            raise ValueError("rectangle half-extents must be positive")

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        dx = np.abs(p[..., 0] - self.center[0]) - self.half_width
        dy = np.abs(p[..., 1] - self.center[1]) - self.half_height
        outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
        inside = np.minimum(np.maximum(dx, dy), 0.0)
        return outside + inside

    def contains(self, p: np.ndarray) -> np.ndarray:
        return self.signed_distance(p) <= 0.0


Arena = Disc | Annulus | Rect
