"""Formation slot geometry: grid, ring, and line shapes built around the
locally computed flock center.

Each agent derives only its own slot from its own perceived picture of the
flock, so no central allocator exists. The one global constant shared by all
agents is the flock size N.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import AgentState, Vec2, vec

# Radius of the smallest circle that contains n unit circles, best known
# values (optimal for most small n, see the circle-packing literature).
_PACKING_TABLE = {
    1: 1.0,
    2: 2.0,
    3: 2.154700538,   # 1 + 2/sqrt(3)
    4: 2.414213562,   # 1 + sqrt(2)
    5: 2.701301617,
    6: 3.0,
    7: 3.0,           # hexagonal: center + 6 tangent
    8: 3.304764871,
    9: 3.613125930,
    10: 3.813898249,
    11: 3.923804401,
    12: 4.029602303,
    13: 4.236067977,  # 2 + sqrt(5)
    14: 4.328428950,
    15: 4.521356927,
    16: 4.615426088,
    17: 4.792033867,
    18: 4.863703305,  # 1 + sqrt(2) + sqrt(6)
    19: 4.863703305,
    20: 5.122321353,
}

# Hexagonal packing density, used for the large-n fallback estimate.
_HEX_DENSITY = 0.9069


class InvalidCount(ValueError):
    pass


def packing_radius(n: int) -> float:
    """g(n): radius of the smallest circle containing n unit circles.

    Table lookup for n <= 20, hexagonal-density estimate beyond.
    """
    if n < 1:
        raise InvalidCount(f"need at least one circle, got {n}")
    if n <= 20:
        return _PACKING_TABLE[n]
    return 1.0 + math.sqrt(n / _HEX_DENSITY)


class FormationShape(enum.Enum):
    GRID = "grid"
    RING = "ring"
    LINE = "line"


@dataclass
class FormationSpec:
    """Operator-selected shape plus the globals every agent knows."""

    shape: FormationShape
    n_agents: int
    r0: float                 # slot spacing, m
    v_rotation: float = 0.0   # ring spin speed, m/s, sign picks direction

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise InvalidCount("formation needs at least one agent")
        if not self.r0 > 0:
            raise ValueError("formation r0 must be positive")


@dataclass
class FormationAssignment:
    """One agent's slot: where to go and how softly to approach."""

    x_shp: Vec2
    R_fmt: float = 0.0  # transfer offset for the approach ramp, m
    tangential_boost: Vec2 = field(default_factory=lambda: vec(0.0, 0.0))

    def __post_init__(self) -> None:
        if self.R_fmt < 0:
            raise ValueError("R_fmt must be non-negative")


def grid_assignment(n: int, r0: float, x_com: Vec2) -> FormationAssignment:
    """Packed-disc grid: pull toward the flock center, stop inside the disc
    that fits n agents at spacing r0. Slot order emerges from repulsion."""
    radius = max(0.0, (r0 / 2.0) * packing_radius(n) - r0 / 2.0)
    return FormationAssignment(x_shp=np.asarray(x_com, dtype=np.float64),
                               R_fmt=radius)


def ring_radius(spec: FormationSpec) -> float:
    """Ring sized so adjacent slots sit r0 apart along the arc."""
    return spec.n_agents * spec.r0 / (2.0 * math.pi)


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(math.pi - a, 2.0 * math.pi)
    if w < 0:
        w += 2.0 * math.pi
    return math.pi - w


def ring_assignment(
    self_state: AgentState,
    neighbors: Sequence,
    x_com: Vec2,
    spec: FormationSpec,
    prev_angle: Optional[float] = None,
) -> FormationAssignment:
    """Slot on the ring at the bisectrix of the gap between the closest
    perceived neighbors on either side of self.

    neighbors may be PerceivedNeighbor or AgentState instances (anything
    with a .position).
    """
    com = np.asarray(x_com, dtype=np.float64)
    rho = ring_radius(spec)
    rel = np.asarray(self_state.position, dtype=np.float64) - com
    if math.hypot(rel[0], rel[1]) < 1e-9:
        theta_self = prev_angle if prev_angle is not None else 0.0
    else:
        theta_self = math.atan2(rel[1], rel[0])

    deltas = []
    for nb in neighbors:
        nrel = np.asarray(nb.position, dtype=np.float64) - com
        if math.hypot(nrel[0], nrel[1]) < 1e-9:
            continue  # neighbor collapsed onto the center: no angle
        deltas.append(_wrap_angle(math.atan2(nrel[1], nrel[0]) - theta_self))

    if not deltas:
        slot_angle = theta_self
    else:
        ahead = [d for d in deltas if d > 0]
        behind = [d for d in deltas if d <= 0]
        # When all neighbors sit on one side, self lives in the wrap-around
        # gap; fold the far extreme over by a full turn.
        a = min(ahead) if ahead else min(deltas) + 2.0 * math.pi
        b = max(behind) if behind else max(deltas) - 2.0 * math.pi
        slot_angle = theta_self + (a + b) / 2.0

    x_shp = com + rho * vec(math.cos(slot_angle), math.sin(slot_angle))
    tangent = vec(-math.sin(theta_self), math.cos(theta_self))
    boost = spec.v_rotation * tangent
    return FormationAssignment(x_shp=x_shp, R_fmt=0.0, tangential_boost=boost)


def rotation_direction(states: Sequence[AgentState], x_com: Vec2) -> int:
    """Sign of the flock's net angular momentum about x_com; 0 if negligible."""
    com = np.asarray(x_com, dtype=np.float64)
    total = 0.0
    for s in states:
        r = np.asarray(s.position, dtype=np.float64) - com
        v = np.asarray(s.velocity, dtype=np.float64)
        total += r[0] * v[1] - r[1] * v[0]
    if abs(total) < 1e-6:
        return 0
    return 1 if total > 0 else -1


def line_assignment(
    self_state: AgentState,
    neighbors: Sequence,
    x_com: Vec2,
    spec: FormationSpec,
) -> FormationAssignment:
    """Slot on the best-fit line: midpoint of the adjacent neighbors'
    projections, or the closest end when self has no neighbor on one side."""
    com = np.asarray(x_com, dtype=np.float64)
    pts = [np.asarray(self_state.position, dtype=np.float64)]
    pts.extend(np.asarray(nb.position, dtype=np.float64) for nb in neighbors)
    arr = np.stack(pts)
    centered = arr - arr.mean(axis=0)
    sxx = float(np.sum(centered[:, 0] ** 2))
    syy = float(np.sum(centered[:, 1] ** 2))
    sxy = float(np.sum(centered[:, 0] * centered[:, 1]))
    # Principal axis of the scatter; atan2 halving keeps the east component
    # non-negative (ties resolve to north), and a degenerate cloud gives east.
    phi = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    u = vec(math.cos(phi), math.sin(phi))

    s_self = float(np.dot(np.asarray(self_state.position) - com, u))
    s_nb = [float(np.dot(np.asarray(nb.position) - com, u)) for nb in neighbors]
    left = [s for s in s_nb if s < s_self]
    right = [s for s in s_nb if s > s_self]
    if left and right:
        s_slot = (max(left) + min(right)) / 2.0
    else:
        half = (spec.n_agents - 1) * spec.r0 / 2.0
        s_slot = half if s_self >= 0 else -half
    return FormationAssignment(x_shp=com + s_slot * u, R_fmt=0.0)


# --- batched variants used by the simulation engine --------------------------
#
# Row i of every array is agent i's own picture: its sensed position, its
# neighbor table, its COM estimate. Results match the scalar functions above.


def ring_assignment_batch(
    pos: np.ndarray,        # (N,2) sensed self positions
    com: np.ndarray,        # (N,2) per-agent COM estimates
    nb_valid: np.ndarray,   # (N,N) perceived-neighbor mask, row = receiver
    nb_pos: np.ndarray,     # (N,N,2)
    spec: FormationSpec,
    prev_angle: np.ndarray,  # (N,) fallback angles for agents at their COM
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (x_shp (N,2), tangential_boost (N,2), angles (N,))."""
    n = pos.shape[0]
    rho = ring_radius(spec)
    rel = pos - com
    r_self = np.hypot(rel[:, 0], rel[:, 1])
    theta_self = np.where(r_self < 1e-9, prev_angle,
                          np.arctan2(rel[:, 1], rel[:, 0]))

    nrel = nb_pos - com[:, None, :]
    nr = np.hypot(nrel[:, :, 0], nrel[:, :, 1])
    ok = nb_valid & (nr >= 1e-9)
    theta_nb = np.arctan2(nrel[:, :, 1], nrel[:, :, 0])
    delta = theta_nb - theta_self[:, None]
    delta = np.pi - np.mod(np.pi - delta, 2.0 * np.pi)  # wrap to (-pi, pi]

    big = 1e30
    ahead_mask = ok & (delta > 0)
    behind_mask = ok & (delta <= 0)
    any_ok = ok.any(axis=1)
    any_ahead = ahead_mask.any(axis=1)
    any_behind = behind_mask.any(axis=1)

    d_min_all = np.min(np.where(ok, delta, big), axis=1)
    d_max_all = np.max(np.where(ok, delta, -big), axis=1)
    a = np.where(any_ahead,
                 np.min(np.where(ahead_mask, delta, big), axis=1),
                 d_min_all + 2.0 * np.pi)
    b = np.where(any_behind,
                 np.max(np.where(behind_mask, delta, -big), axis=1),
                 d_max_all - 2.0 * np.pi)
    slot_angle = np.where(any_ok, theta_self + (a + b) / 2.0, theta_self)

    x_shp = com + rho * np.stack([np.cos(slot_angle), np.sin(slot_angle)], axis=1)
    tangent = np.stack([-np.sin(theta_self), np.cos(theta_self)], axis=1)
    boost = spec.v_rotation * tangent
    return x_shp, boost, theta_self


def line_assignment_batch(
    pos: np.ndarray,
    com: np.ndarray,
    nb_valid: np.ndarray,
    nb_pos: np.ndarray,
    spec: FormationSpec,
) -> np.ndarray:
    """Returns x_shp (N,2); see line_assignment for the rules."""
    counts = 1.0 + nb_valid.sum(axis=1)
    mean = (pos + np.where(nb_valid[:, :, None], nb_pos, 0.0).sum(axis=1)) / counts[:, None]

    d_self = pos - mean
    d_nb = np.where(nb_valid[:, :, None], nb_pos - mean[:, None, :], 0.0)
    sxx = d_self[:, 0] ** 2 + (d_nb[:, :, 0] ** 2).sum(axis=1)
    syy = d_self[:, 1] ** 2 + (d_nb[:, :, 1] ** 2).sum(axis=1)
    sxy = d_self[:, 0] * d_self[:, 1] + (d_nb[:, :, 0] * d_nb[:, :, 1]).sum(axis=1)
    phi = 0.5 * np.arctan2(2.0 * sxy, sxx - syy)
    u = np.stack([np.cos(phi), np.sin(phi)], axis=1)

    s_self = ((pos - com) * u).sum(axis=1)
    s_nb = ((nb_pos - com[:, None, :]) * u[:, None, :]).sum(axis=2)
    big = 1e30
    left = nb_valid & (s_nb < s_self[:, None])
    right = nb_valid & (s_nb > s_self[:, None])
    has_both = left.any(axis=1) & right.any(axis=1)
    mid = (np.max(np.where(left, s_nb, -big), axis=1)
           + np.min(np.where(right, s_nb, big), axis=1)) / 2.0
    half = (spec.n_agents - 1) * spec.r0 / 2.0
    end = np.where(s_self >= 0, half, -half)
    s_slot = np.where(has_both, mid, end)
    return com + s_slot[:, None] * u
