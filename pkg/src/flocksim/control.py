"""Decentralized velocity controller.

Every agent derives its desired velocity purely from a LocalView: its own
sensed state, delayed neighbor snapshots, the flight-area geometry, an
optional target, and an optional formation slot. The update combines

  * short-range repulsion with a capped linear potential,
  * viscous velocity alignment damping inter-agent velocity differences,
  * a constant-speed self-propulsion term (flocking mode),
  * soft "shill" walls that steer the agent back into the flight area,
  * smooth target/formation tracking split into a center-of-mass pull and a
    shape-slot pull,

all blended through a relaxation step evaluated one lookahead interval ahead
so the vehicle's sluggish response is anticipated rather than fought.

Scalar functions operate on one view and are the reference semantics; the
*_batch variants evaluate the identical math for all agents at once on
stacked arrays and are what the simulation engine runs.
"""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    AgentState,
    Annulus,
    Arena,
    ControlParams,
    Disc,
    Rect,
    TargetState,
    Vec2,
    clamp_speed,
    norm,
    vec,
)
from .formation import FormationAssignment

# Below this inter-agent distance the relative direction is considered
# numerically meaningless and a deterministic fallback direction is used.
COINCIDENT_DISTANCE = 0.01
# Below this own-speed the agent has no usable heading for self-propulsion.
SPEED_FLOOR = 0.05

EAST = vec(1.0, 0.0)


class ControlMode(enum.Enum):
    FLOCKING = "flocking"
    TRACKING = "tracking"


@dataclass
class PerceivedNeighbor:
    """A neighbor as last heard over the radio: stale by age seconds."""

    id: int
    position: Vec2
    velocity: Vec2
    age: float = 0.0


@dataclass
class LocalView:
    """Everything one agent may legally base its control decision on."""

    self_state: AgentState
    neighbors: Sequence[PerceivedNeighbor] = field(default_factory=list)
    target: Optional[TargetState] = None
    arena: Optional[Arena] = None
    formation: Optional[FormationAssignment] = None
    mode: ControlMode = ControlMode.FLOCKING


def transfer(x: float, R: float, d: float) -> float:
    """Smooth 0-to-1 ramp: 0 on [0,R], sinusoidal rise on [R,R+d], 1 beyond."""
    if d <= 0:
        raise ValueError("transfer width d must be positive")
    if x <= R:
        return 0.0
    if x >= R + d:
        return 1.0
    return (math.sin(math.pi / d * (x - R) - math.pi / 2.0) + 1.0) / 2.0


def transfer_array(x: np.ndarray, R: np.ndarray | float, d: float) -> np.ndarray:
    """Vectorized transfer(); R may vary elementwise."""
    if d <= 0:
        raise ValueError("transfer width d must be positive")
    ramp = (np.sin(np.pi / d * (x - R) - np.pi / 2.0) + 1.0) / 2.0
    return np.where(x <= R, 0.0, np.where(x >= R + d, 1.0, ramp))


def pair_fallback_direction(id_a: int, id_b: int) -> Vec2:
    """Deterministic unit vector for a coincident pair, antisymmetric in the
    ids: the direction from a toward b is minus the direction from b to a."""
    lo, hi = (id_a, id_b) if id_a < id_b else (id_b, id_a)
    h = zlib.crc32(b"pair:%d:%d" % (lo, hi))
    angle = 2.0 * math.pi * (h / 2**32)
    u = vec(math.cos(angle), math.sin(angle))
    return u if id_a < id_b else -u


def repulsion_accel(self_pos: Vec2, neighbors: Sequence[PerceivedNeighbor],
                    p: ControlParams, self_id: int = -1) -> Vec2:
    """Capped linear spring pushing away from every neighbor closer than r0."""
    acc = vec(0.0, 0.0)
    pos = np.asarray(self_pos, dtype=np.float64)
    for nb in neighbors:
        rel = np.asarray(nb.position, dtype=np.float64) - pos
        dist = norm(rel)
        if dist >= p.r0:
            continue
        if dist < COINCIDENT_DISTANCE:
            toward = pair_fallback_direction(self_id, nb.id)
        else:
            toward = rel / dist
        acc = acc - p.D * min(p.r1, p.r0 - dist) * toward
    return acc


def friction_accel(self_state: AgentState, neighbors: Sequence[PerceivedNeighbor],
                   p: ControlParams) -> Vec2:
    """Viscous alignment: damp velocity differences, stiffening as the pair
    approaches closer than r0 - r2, with an r1 floor against blow-up."""
    acc = vec(0.0, 0.0)
    pos = np.asarray(self_state.position, dtype=np.float64)
    vel = np.asarray(self_state.velocity, dtype=np.float64)
    for nb in neighbors:
        dist = norm(np.asarray(nb.position, dtype=np.float64) - pos)
        denom = max(dist - (p.r0 - p.r2), p.r1)
        acc = acc + (np.asarray(nb.velocity, dtype=np.float64) - vel) / denom**2
    return p.C_frict * acc


def spp_velocity(v: Vec2, v_flock: float, fallback: Optional[Vec2] = None) -> Vec2:
    """Own velocity rescaled to the cruise speed; a stationary agent gets the
    supplied fallback direction (east when none is given)."""
    speed = norm(v)
    if speed < SPEED_FLOOR:
        u = np.asarray(fallback, dtype=np.float64) if fallback is not None else EAST
    else:
        u = np.asarray(v, dtype=np.float64) / speed
    return v_flock * u


def _boundary_terms(arena: Arena, pos: np.ndarray,
                    center_override: Optional[Vec2] = None):
    """Signed outside-distance and inward normal per boundary of the arena.

    pos has shape (N,2); yields (s (N,), n_in (N,2)) tuples, one per boundary
    (two for an annulus). Normals default to east where geometrically
    undefined; activation is zero there unless the agent sits in a hole.
    """
    tiny = 1e-9
    if isinstance(arena, (Disc, Annulus)):
        center = np.asarray(center_override if center_override is not None
                            else arena.center, dtype=np.float64)
        rel = pos - center
        rho = np.hypot(rel[:, 0], rel[:, 1])
        safe = np.maximum(rho, tiny)[:, None]
        radial_out = np.where((rho < tiny)[:, None], [[1.0, 0.0]], rel / safe)
        if isinstance(arena, Disc):
            yield rho - arena.radius, -radial_out
        else:
            yield rho - arena.r_outer, -radial_out
            yield arena.r_inner - rho, radial_out
    elif isinstance(arena, Rect):
        lo = arena.center - np.array([arena.half_width, arena.half_height])
        hi = arena.center + np.array([arena.half_width, arena.half_height])
        nearest = np.clip(pos, lo, hi)
        diff = nearest - pos
        s = np.hypot(diff[:, 0], diff[:, 1])
        n_in = np.where((s < tiny)[:, None], [[1.0, 0.0]],
                        diff / np.maximum(s, tiny)[:, None])
        yield s, n_in
    else:
        raise TypeError(f"unknown arena kind: {type(arena).__name__}")


def wall_accel_batch(pos: np.ndarray, vel: np.ndarray, arena: Arena,
                     p: ControlParams,
                     center_override: Optional[Vec2] = None) -> np.ndarray:
    """Shill-wall term for stacked states: each boundary acts like a virtual
    inbound agent flying at v_flock that the controller aligns with, ramping
    up over the first d meters outside the boundary."""
    total = np.zeros_like(pos)
    for s, n_in in _boundary_terms(arena, pos, center_override):
        act = transfer_array(s + p.d, p.d, p.d)
        total = total + (p.C_shill * act)[:, None] * (p.v_flock * n_in - vel)
    return total


def wall_accel(self_state: AgentState, arena: Arena, p: ControlParams,
               target_center: Optional[Vec2] = None) -> Vec2:
    """Scalar wall term; for a Disc the reference center may be overridden
    by the target point the area is defined around."""
    pos = np.asarray(self_state.position, dtype=np.float64)[None, :]
    vel = np.asarray(self_state.velocity, dtype=np.float64)[None, :]
    override = target_center if isinstance(arena, Disc) else None
    return wall_accel_batch(pos, vel, arena, p, override)[0]


def shape_velocity(x_shp: Vec2, x: Vec2, r_fmt: float, p: ControlParams) -> Vec2:
    """Pull toward the own formation slot, fading out inside r_fmt."""
    rel = np.asarray(x_shp, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    dist = norm(rel)
    if dist < 1e-12:
        return vec(0.0, 0.0)
    return p.beta * p.v0 * transfer(dist, r_fmt, p.d) * rel / dist


def com_velocity(x_trg: Vec2, x_com: Vec2, r_fmt: float, p: ControlParams) -> Vec2:
    """Pull the locally computed flock center toward the target point."""
    rel = np.asarray(x_trg, dtype=np.float64) - np.asarray(x_com, dtype=np.float64)
    dist = norm(rel)
    if dist < 1e-12:
        return vec(0.0, 0.0)
    return p.alpha * p.v0 * transfer(dist, r_fmt, p.d) * rel / dist


def track_velocity(v_shp: Vec2, v_trg: Vec2, v0: float) -> Vec2:
    """Combined tracking velocity, capped at the maximum tracking speed."""
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    return clamp_speed(np.asarray(v_shp) + np.asarray(v_trg), v0)


def local_com(self_state: AgentState, neighbors: Sequence[PerceivedNeighbor]) -> Vec2:
    """Arithmetic mean of own position and all perceived neighbor positions."""
    total = np.asarray(self_state.position, dtype=np.float64).copy()
    for nb in neighbors:
        total += np.asarray(nb.position, dtype=np.float64)
    return total / (1 + len(neighbors))


def desired_velocity(view: LocalView, p: ControlParams,
                     spp_fallback: Optional[Vec2] = None) -> Vec2:
    """Relaxation update toward the preferred velocity, evaluated one
    lookahead interval ahead and capped at v_max."""
    v = np.asarray(view.self_state.velocity, dtype=np.float64)
    acc = repulsion_accel(view.self_state.position, view.neighbors, p,
                          self_id=view.self_state.id)
    acc = acc + friction_accel(view.self_state, view.neighbors, p)
    if view.arena is not None:
        acc = acc + wall_accel(view.self_state, view.arena, p)

    if view.mode is ControlMode.FLOCKING:
        v_pref = spp_velocity(v, p.v_flock, fallback=spp_fallback)
    else:
        v_pref = vec(0.0, 0.0)
        if view.target is not None:
            x_com = local_com(view.self_state, view.neighbors)
            if view.formation is not None:
                r_fmt = view.formation.R_fmt
                v_shp = shape_velocity(view.formation.x_shp,
                                       view.self_state.position, r_fmt, p)
            else:
                r_fmt = p.R
                v_shp = vec(0.0, 0.0)
            v_trg = com_velocity(view.target.position, x_com, r_fmt, p)
            v_pref = track_velocity(v_shp, v_trg, p.v0)
        if view.formation is not None:
            v_pref = v_pref + view.formation.tangential_boost

    ratio = p.dt_lookahead / p.tau
    out = v + (v_pref - v) * ratio + acc * p.dt_lookahead
    return clamp_speed(out, p.v_max)


# --- batched evaluation -------------------------------------------------------


def pair_direction_matrix(n: int) -> np.ndarray:
    """(n,n,2) antisymmetric fallback directions for coincident pairs."""
    dirs = np.zeros((n, n, 2), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            u = pair_fallback_direction(i, j)
            dirs[i, j] = u
            dirs[j, i] = -u
    return dirs


@dataclass
class BatchViews:
    """Stacked per-agent views; row i is agent i's own picture of the world.

    Neighbor arrays are tables indexed [receiver, sender]; nb_valid gates
    which entries exist in the receiver's cache.
    """

    pos: np.ndarray          # (N,2) sensed positions
    vel: np.ndarray          # (N,2) sensed velocities
    nb_valid: np.ndarray     # (N,N) bool
    nb_pos: np.ndarray       # (N,N,2)
    nb_vel: np.ndarray       # (N,N,2)
    pair_dirs: np.ndarray    # (N,N,2) antisymmetric coincidence fallback
    mode: ControlMode = ControlMode.FLOCKING
    arena: Optional[Arena] = None
    target_pos: Optional[np.ndarray] = None   # (N,2)
    has_target: Optional[np.ndarray] = None   # (N,) bool
    com: Optional[np.ndarray] = None          # (N,2) per-agent COM estimate
    shp_pos: Optional[np.ndarray] = None      # (N,2) formation slots
    has_shp: Optional[np.ndarray] = None      # (N,) bool
    r_fmt: Optional[np.ndarray] = None        # (N,)
    tangential: Optional[np.ndarray] = None   # (N,2)
    spp_fallback: Optional[np.ndarray] = None  # (N,2) unit directions


def local_com_batch(pos: np.ndarray, nb_valid: np.ndarray,
                    nb_pos: np.ndarray) -> np.ndarray:
    """Per-agent mean of self plus perceived neighbors, shape (N,2)."""
    counts = 1.0 + nb_valid.sum(axis=1)
    s = pos + np.where(nb_valid[:, :, None], nb_pos, 0.0).sum(axis=1)
    return s / counts[:, None]


def desired_velocity_batch(views: BatchViews, p: ControlParams) -> np.ndarray:
    """All-agent desired velocities, identical math to desired_velocity()."""
    pos, vel = views.pos, views.vel
    n = pos.shape[0]
    valid = views.nb_valid

    rel = np.where(valid[:, :, None], views.nb_pos - pos[:, None, :], 0.0)
    dist = np.hypot(rel[:, :, 0], rel[:, :, 1])
    safe = np.maximum(dist, 1e-12)
    toward = rel / safe[:, :, None]
    coincident = valid & (dist < COINCIDENT_DISTANCE)
    toward = np.where(coincident[:, :, None], views.pair_dirs, toward)

    rep_mask = valid & (dist < p.r0)
    weight = np.where(rep_mask, np.minimum(p.r1, p.r0 - dist), 0.0)
    a_pot = -p.D * (weight[:, :, None] * toward).sum(axis=1)

    denom = np.maximum(dist - (p.r0 - p.r2), p.r1)
    dv = np.where(valid[:, :, None], views.nb_vel - vel[:, None, :], 0.0)
    a_slip = p.C_frict * (dv / (denom**2)[:, :, None]).sum(axis=1)

    acc = a_pot + a_slip
    if views.arena is not None:
        acc = acc + wall_accel_batch(pos, vel, views.arena, p)

    if views.mode is ControlMode.FLOCKING:
        speed = np.hypot(vel[:, 0], vel[:, 1])
        fallback = (views.spp_fallback if views.spp_fallback is not None
                    else np.tile(EAST, (n, 1)))
        unit = np.where((speed < SPEED_FLOOR)[:, None],
                        fallback, vel / np.maximum(speed, 1e-12)[:, None])
        v_pref = p.v_flock * unit
    else:
        v_pref = np.zeros_like(vel)
        if views.target_pos is not None:
            has_t = (views.has_target if views.has_target is not None
                     else np.ones(n, dtype=bool))
            com = (views.com if views.com is not None
                   else local_com_batch(pos, valid, views.nb_pos))
            r_fmt = (views.r_fmt if views.r_fmt is not None
                     else np.full(n, p.R))

            v_shp = np.zeros_like(vel)
            if views.shp_pos is not None:
                srel = views.shp_pos - pos
                sdist = np.hypot(srel[:, 0], srel[:, 1])
                f = transfer_array(sdist, r_fmt, p.d)
                gain = np.where(sdist > 1e-12,
                                p.beta * p.v0 * f / np.maximum(sdist, 1e-12),
                                0.0)
                if views.has_shp is not None:
                    gain = np.where(views.has_shp, gain, 0.0)
                v_shp = gain[:, None] * srel

            trel = views.target_pos - com
            tdist = np.hypot(trel[:, 0], trel[:, 1])
            f = transfer_array(tdist, r_fmt, p.d)
            gain = np.where(tdist > 1e-12,
                            p.alpha * p.v0 * f / np.maximum(tdist, 1e-12), 0.0)
            v_trg = gain[:, None] * trel

            v_track = v_shp + v_trg
            tspeed = np.hypot(v_track[:, 0], v_track[:, 1])
            scale = np.where(tspeed > p.v0, p.v0 / np.maximum(tspeed, 1e-12), 1.0)
            v_track = v_track * scale[:, None]
            v_pref = np.where(has_t[:, None], v_track, 0.0)
        if views.tangential is not None:
            v_pref = v_pref + views.tangential

    ratio = p.dt_lookahead / p.tau
    out = vel + (v_pref - vel) * ratio + acc * p.dt_lookahead
    speed = np.hypot(out[:, 0], out[:, 1])
    scale = np.where(speed > p.v_max, p.v_max / np.maximum(speed, 1e-12), 1.0)
    return out * scale[:, None]
