"""Scenario configuration and the fixed-step simulation engine.

The engine advances N vehicles, the shared radio medium, the target, and a
live command stream on one tick grid (40 Hz by default).  Controllers only
ever see sensed state and cached neighbor broadcasts; ground truth exists
solely inside the plant and the tracklog.

A run is fully deterministic given the scenario seed: every random draw
comes from a named child stream of the master seed and has a fixed shape,
so outcomes never feed back into stream positions.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, fields as dc_fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .control import (BatchViews, ControlMode, desired_velocity_batch,
                      local_com_batch, pair_direction_matrix)
from .core import (AgentStatus, Annulus, Arena, ControlParams, Disc, Rect,
                   vec)
from .formation import (FormationShape, FormationSpec, grid_assignment,
                        line_assignment_batch, ring_assignment_batch)
from .metrics import build_report, neighbor_stats, velocity_correlation
from .netsim import Medium, NeighborTable, NetworkParams
from .vehicle import GpsModel, GpsSensor, Pid, PidParams, Plant, PlantParams

__all__ = [
    "CommandRejected",
    "ConfigError",
    "InitialLayout",
    "PARAM_WHITELIST",
    "ScenarioConfig",
    "Simulation",
    "Tracklog",
    "run_scenario",
    "validate_command",
]

LANDING_SPEED = 0.1   # m/s; below this a landing vehicle counts as down

# Parameters adjustable in flight; everything else is fixed at launch.
PARAM_WHITELIST = ("r0", "v_flock", "v0", "C_frict", "D", "v_rotation")

# Command kinds the engine itself executes.  pause / resume / set_pacing
# only affect wall-clock pacing and are handled by whatever drives the loop.
ENGINE_COMMANDS = ("set_param", "set_formation", "set_target", "force_land")
PACING_COMMANDS = ("pause", "resume", "set_pacing")


class ConfigError(ValueError):
    """A scenario document failed validation; the message names the field."""


class CommandRejected(ValueError):
    """A live command was refused; the simulation state is unchanged."""


# --- JSON codecs --------------------------------------------------------------


def _require_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError(f"{path}: must be finite")
    return out


def _require_point(value, path: str) -> np.ndarray:
    if (not isinstance(value, (list, tuple)) or len(value) != 2):
        raise ConfigError(f"{path}: expected [x, y]")
    return np.array([_require_number(value[0], f"{path}[0]"),
                     _require_number(value[1], f"{path}[1]")])


def arena_to_dict(arena: Arena) -> dict:
    c = [float(arena.center[0]), float(arena.center[1])]
    if isinstance(arena, Disc):
        return {"kind": "disc", "center": c, "radius": float(arena.radius)}
    if isinstance(arena, Annulus):
        return {"kind": "annulus", "center": c,
                "r_inner": float(arena.r_inner),
                "r_outer": float(arena.r_outer)}
    if isinstance(arena, Rect):
        return {"kind": "rect", "center": c,
                "half_width": float(arena.half_width),
                "half_height": float(arena.half_height)}
    raise TypeError(f"unknown arena type {type(arena).__name__}")


_ARENA_FIELDS = {
    "disc": ("radius",),
    "annulus": ("r_inner", "r_outer"),
    "rect": ("half_width", "half_height"),
}


def arena_from_dict(data, path: str) -> Arena:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = data.get("kind")
    if kind not in _ARENA_FIELDS:
        raise ConfigError(f"{path}.kind: expected one of "
                          f"{sorted(_ARENA_FIELDS)}, got {kind!r}")
    allowed = {"kind", "center", *_ARENA_FIELDS[kind]}
    for key in sorted(set(data) - allowed):
        raise ConfigError(f"{path}.{key}: unknown field")
    center = _require_point(data.get("center", [0.0, 0.0]), f"{path}.center")
    kwargs = {name: _require_number(data[name], f"{path}.{name}")
              for name in _ARENA_FIELDS[kind] if name in data}
    missing = [name for name in _ARENA_FIELDS[kind] if name not in data]
    if missing:
        raise ConfigError(f"{path}.{missing[0]}: required")
    cls = {"disc": Disc, "annulus": Annulus, "rect": Rect}[kind]
    try:
        return cls(center=center, **kwargs)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def _params_to_dict(obj) -> dict:
    out = {}
    for f in dc_fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, np.ndarray):
            v = [float(x) for x in v]
        out[f.name] = v
    return out


def _params_from_dict(cls, data, path: str, point_fields: Sequence[str] = ()):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = [f.name for f in dc_fields(cls)]
    for key in sorted(set(data) - set(names)):
        raise ConfigError(f"{path}.{key}: unknown field")
    kwargs = {}
    for key, value in data.items():
        if key in point_fields:
            kwargs[key] = _require_point(value, f"{path}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def formation_to_dict(spec: FormationSpec) -> dict:
    return {"shape": spec.shape.value, "n_agents": spec.n_agents,
            "r0": spec.r0, "v_rotation": spec.v_rotation}


def formation_from_dict(data, path: str) -> FormationSpec:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {"shape", "n_agents", "r0", "v_rotation"}
    for key in sorted(set(data) - allowed):
        raise ConfigError(f"{path}.{key}: unknown field")
    shape_name = data.get("shape")
    try:
        shape = FormationShape(shape_name)
    except ValueError:
        raise ConfigError(f"{path}.shape: expected one of "
                          f"{[s.value for s in FormationShape]}, "
                          f"got {shape_name!r}") from None
    kwargs = {k: data[k] for k in ("n_agents", "r0", "v_rotation") if k in data}
    try:
        return FormationSpec(shape=shape, **kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


# --- initial layout -----------------------------------------------------------


@dataclass
class InitialLayout:
    """Where the vehicles sit at t=0 (all start at rest, airborne).

    kind 'random' scatters with a minimum spacing inside `area` (or the
    arena); 'grid' builds a centered square lattice; 'explicit' takes the
    positions verbatim.
    """

    kind: str = "random"
    min_spacing: Optional[float] = None     # random; default r0 / 2
    spacing: Optional[float] = None         # grid; default r0
    positions: Optional[List[List[float]]] = None   # explicit
    area: Optional[Arena] = None            # sampling region override

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.min_spacing is not None:
            out["min_spacing"] = self.min_spacing
        if self.spacing is not None:
            out["spacing"] = self.spacing
        if self.positions is not None:
            out["positions"] = [[float(x), float(y)]
                                for x, y in self.positions]
        if self.area is not None:
            out["area"] = arena_to_dict(self.area)
        return out

    @classmethod
    def from_dict(cls, data, path: str) -> "InitialLayout":
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        allowed = {"kind", "min_spacing", "spacing", "positions", "area"}
        for key in sorted(set(data) - allowed):
            raise ConfigError(f"{path}.{key}: unknown field")
        kind = data.get("kind", "random")
        if kind not in ("random", "grid", "explicit"):
            raise ConfigError(f"{path}.kind: expected random, grid or "
                              f"explicit, got {kind!r}")
        out = cls(kind=kind)
        if "min_spacing" in data:
            out.min_spacing = _require_number(data["min_spacing"],
                                              f"{path}.min_spacing")
        if "spacing" in data:
            out.spacing = _require_number(data["spacing"], f"{path}.spacing")
        if "positions" in data:
            pts = data["positions"]
            if not isinstance(pts, list):
                raise ConfigError(f"{path}.positions: expected a list")
            out.positions = [
                [float(v) for v in _require_point(p, f"{path}.positions[{i}]")]
                for i, p in enumerate(pts)]
        if "area" in data:
            out.area = arena_from_dict(data["area"], f"{path}.area")
        return out


def _region_bounds(region: Arena) -> tuple[np.ndarray, np.ndarray]:
    c = region.center
    if isinstance(region, Disc):
        r = region.radius
        return c - r, c + r
    if isinstance(region, Annulus):
        r = region.r_outer
        return c - r, c + r
    half = np.array([region.half_width, region.half_height])
    return c - half, c + half


def sample_layout(cfg: "ScenarioConfig", rng: np.random.Generator) -> np.ndarray:
    """Initial (N, 2) positions according to cfg.initial_layout."""
    n = cfg.n_agents
    lay = cfg.initial_layout
    if lay.kind == "explicit":
        pts = np.array(lay.positions, dtype=np.float64)
        return pts
    region = lay.area if lay.area is not None else cfg.arena
    if lay.kind == "grid":
        spacing = lay.spacing if lay.spacing is not None else cfg.control.r0
        cols = math.ceil(math.sqrt(n))
        rows = math.ceil(n / cols)
        center = region.center if region is not None else np.zeros(2)
        idx = np.arange(n)
        col = idx % cols
        row = idx // cols
        x = (col - (cols - 1) / 2.0) * spacing + center[0]
        y = (row - (rows - 1) / 2.0) * spacing + center[1]
        return np.stack([x, y], axis=1)
    # random
    if region is None:
        raise ConfigError("initial_layout: random layout needs an area "
                          "or an arena to sample inside")
    spacing = (lay.min_spacing if lay.min_spacing is not None
               else cfg.control.r0 / 2.0)
    lo, hi = _region_bounds(region)
    placed = np.empty((n, 2))
    count = 0
    for _ in range(max(2000, 2000 * n)):
        p = lo + rng.random(2) * (hi - lo)
        if not bool(region.contains(p)):
            continue
        if count and np.min(np.hypot(*(placed[:count] - p).T)) < spacing:
            continue
        placed[count] = p
        count += 1
        if count == n:
            return placed
    raise ConfigError("initial_layout: could not place all agents with the "
                      "requested spacing; shrink min_spacing or grow the area")


# --- target path --------------------------------------------------------------


class TargetPath:
    """Piecewise-linear waypoint path: position clamps to the end points."""

    def __init__(self, waypoints: Sequence[Sequence[float]]):
        pts = [(float(t), float(x), float(y)) for t, x, y in waypoints]
        self.times = np.array([p[0] for p in pts])
        self.points = np.array([[p[1], p[2]] for p in pts])

    def position(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.points[:, 0]),
                         np.interp(t, self.times, self.points[:, 1])])

    def velocity(self, t: float) -> np.ndarray:
        if t <= self.times[0] or t >= self.times[-1] or len(self.times) < 2:
            return np.zeros(2)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        dt = self.times[i + 1] - self.times[i]
        return (self.points[i + 1] - self.points[i]) / dt


# --- commands -----------------------------------------------------------------


def validate_command(cmd, path: str = "command", *,
                     n_agents: Optional[int] = None,
                     scheduled: bool = False) -> dict:
    """Check a command document and return its normalized form.

    Raises CommandRejected with a field-level message.  Scheduled commands
    (from a scenario file or a replayed transcript) carry a 't' key and may
    not use the pacing kinds, which have no effect on simulation state.
    """
    if not isinstance(cmd, dict):
        raise CommandRejected(f"{path}: expected an object")
    kind = cmd.get("kind")
    known = ENGINE_COMMANDS + PACING_COMMANDS
    if kind not in known:
        raise CommandRejected(f"{path}.kind: expected one of {sorted(known)}, "
                              f"got {kind!r}")
    if scheduled and kind in PACING_COMMANDS:
        raise CommandRejected(f"{path}.kind: {kind} cannot be scheduled")

    allowed = {"kind"}
    out: dict = {"kind": kind}
    if scheduled:
        allowed.add("t")
        if "t" not in cmd:
            raise CommandRejected(f"{path}.t: required for scheduled commands")
        t = _require_float(cmd["t"], f"{path}.t")
        if t < 0:
            raise CommandRejected(f"{path}.t: must be >= 0")
        out["t"] = t

    if kind == "set_param":
        allowed |= {"name", "value"}
        name = cmd.get("name")
        if name not in PARAM_WHITELIST:
            raise CommandRejected(f"{path}.name: {name!r} is not adjustable "
                                  f"in flight (allowed: {PARAM_WHITELIST})")
        out["name"] = name
        out["value"] = _require_float(cmd.get("value"), f"{path}.value")
    elif kind == "set_formation":
        allowed.add("shape")
        shape = cmd.get("shape")
        values = [s.value for s in FormationShape]
        if shape not in values:
            raise CommandRejected(f"{path}.shape: expected one of {values}, "
                                  f"got {shape!r}")
        out["shape"] = shape
    elif kind == "set_target":
        allowed |= {"x", "y"}
        out["x"] = _require_float(cmd.get("x"), f"{path}.x")
        out["y"] = _require_float(cmd.get("y"), f"{path}.y")
    elif kind == "force_land":
        allowed.add("agent")
        agent = cmd.get("agent", "all")
        if agent != "all":
            if isinstance(agent, bool) or not isinstance(agent, int):
                raise CommandRejected(f"{path}.agent: expected an agent id "
                                      f"or 'all', got {agent!r}")
            if n_agents is not None and not 0 <= agent < n_agents:
                raise CommandRejected(f"{path}.agent: id {agent} out of range")
        out["agent"] = agent
    elif kind == "set_pacing":
        allowed.add("pacing")
        pacing = cmd.get("pacing")
        if pacing not in ("realtime", "max_speed"):
            raise CommandRejected(f"{path}.pacing: expected 'realtime' or "
                                  f"'max_speed', got {pacing!r}")
        out["pacing"] = pacing
    # pause / resume carry no payload

    for key in sorted(set(cmd) - allowed):
        raise CommandRejected(f"{path}.{key}: unknown field")
    return out


def _require_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CommandRejected(f"{path}: expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise CommandRejected(f"{path}: must be finite")
    return out


def _apply_param(params: ControlParams, formation: Optional[FormationSpec],
                 name: str, value: float, r2_tracks_r0: bool,
                 ) -> tuple[ControlParams, Optional[FormationSpec]]:
    """Return updated (params, formation) or raise CommandRejected."""
    try:
        if name == "v_rotation":
            if formation is None:
                raise CommandRejected(
                    "set_param v_rotation: no formation configured")
            return params, replace(formation, v_rotation=value)
        if name == "r0":
            r2 = None if r2_tracks_r0 else params.r2
            new = replace(params, r0=value, r2=r2)
            if formation is not None:
                formation = replace(formation, r0=value)
            return new, formation
        return replace(params, **{name: value}), formation
    except ValueError as e:
        raise CommandRejected(f"set_param {name}: {e}") from e


# --- scenario configuration ---------------------------------------------------


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one run.

    Scenario JSON documents mirror these fields one for one; unknown keys
    are rejected with their path so typos cannot silently change a run.
    """

    name: str = "scenario"
    seed: int = 0
    n_agents: int = 9
    duration: float = 60.0              # s
    tick: float = 0.025                 # s, physics/control step
    mode: ControlMode = ControlMode.FLOCKING
    control: ControlParams = field(default_factory=ControlParams)
    network: NetworkParams = field(default_factory=NetworkParams)
    pid: PidParams = field(default_factory=PidParams)
    plant: PlantParams = field(default_factory=PlantParams)
    gps: GpsModel = field(default_factory=GpsModel)
    arena: Optional[Arena] = None
    formation: Optional[FormationSpec] = None
    target_path: List[Tuple[float, float, float]] = field(default_factory=list)
    leader_id: Optional[int] = None
    initial_layout: InitialLayout = field(default_factory=InitialLayout)
    neighbor_expiry: float = 5.0        # s, drop cached neighbors older than
    log_every: int = 1                  # record every k-th tick
    frame_every: int = 4                # telemetry frame every k-th tick
    collision_radius: float = 1.5       # m
    phi_window: Optional[Tuple[float, float]] = None
    phi_local_r: List[float] = field(default_factory=list)
    commands: List[dict] = field(default_factory=list)

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        if not isinstance(self.n_agents, int) or self.n_agents < 1:
            raise ConfigError("n_agents: must be a positive integer")
        if not self.tick > 0:
            raise ConfigError("tick: must be positive")
        if self.duration < 0:
            raise ConfigError("duration: must be >= 0")
        total = self.duration / self.tick
        if abs(total - round(total)) > 1e-6:
            raise ConfigError("duration: must be a whole number of ticks")
        for label, period in (("network.broadcast_hz",
                               1.0 / self.network.broadcast_hz),
                              ("gps.rate", 1.0 / self.gps.rate)):
            k = period / self.tick
            if abs(k - round(k)) > 1e-6 or round(k) < 1:
                raise ConfigError(f"{label}: period must be a whole "
                                  f"number of ticks")
        k = self.plant.command_delay / self.tick
        if abs(k - round(k)) > 1e-6:
            raise ConfigError("plant.command_delay: must be a whole "
                              "number of ticks")
        if self.leader_id is not None:
            if not isinstance(self.leader_id, int) or \
                    not 0 <= self.leader_id < self.n_agents:
                raise ConfigError("leader_id: out of range")
            if self.mode is not ControlMode.TRACKING:
                raise ConfigError("leader_id: needs tracking mode")
        if self.formation is not None:
            flyers = self.n_agents - (1 if self.leader_id is not None else 0)
            if self.formation.n_agents != flyers:
                raise ConfigError(
                    f"formation.n_agents: expected {flyers} (agents in "
                    f"formation), got {self.formation.n_agents}")
        if self.initial_layout.kind == "explicit":
            pts = self.initial_layout.positions
            if pts is None or len(pts) != self.n_agents:
                raise ConfigError("initial_layout.positions: need exactly "
                                  f"{self.n_agents} entries")
        if self.initial_layout.kind == "random":
            region = (self.initial_layout.area if self.initial_layout.area
                      is not None else self.arena)
            if region is None:
                raise ConfigError("initial_layout: random layout needs an "
                                  "area or an arena")
        if self.target_path:
            times = [w[0] for w in self.target_path]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigError("target_path: waypoint times must be "
                                  "strictly increasing")
        if self.neighbor_expiry <= 0:
            raise ConfigError("neighbor_expiry: must be positive")
        for label, value in (("log_every", self.log_every),
                             ("frame_every", self.frame_every)):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{label}: must be a positive integer")
        if self.collision_radius < 0:
            raise ConfigError("collision_radius: must be >= 0")
        if self.phi_window is not None:
            t0, t1 = self.phi_window
            if not (0 <= t0 < t1):
                raise ConfigError("phi_window: need 0 <= start < end")
        for i, r in enumerate(self.phi_local_r):
            if not r > 0:
                raise ConfigError(f"phi_local_r[{i}]: must be positive")
        self._validate_commands()

    def _validate_commands(self) -> None:
        # Dry-run parameter changes so a bad scheduled value is caught
        # before t=0 rather than mid-flight.
        params = replace(self.control)
        formation = (replace(self.formation)
                     if self.formation is not None else None)
        r2_tracks = abs(params.r2 - params.r0 / 2.0) < 1e-12
        normalized = []
        for i, cmd in enumerate(self.commands):
            try:
                normalized.append(validate_command(
                    cmd, f"commands[{i}]", n_agents=self.n_agents,
                    scheduled=True))
            except CommandRejected as e:
                raise ConfigError(str(e)) from e
        for i, cmd in enumerate(sorted(normalized, key=lambda c: c["t"])):
            if cmd["kind"] == "set_param":
                try:
                    params, formation = _apply_param(
                        params, formation, cmd["name"], cmd["value"],
                        r2_tracks)
                except CommandRejected as e:
                    raise ConfigError(f"commands[{i}]: {e}") from e
            elif cmd["kind"] == "set_formation" and formation is not None:
                formation = replace(formation,
                                    shape=FormationShape(cmd["shape"]))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "n_agents": self.n_agents,
            "duration": self.duration,
            "tick": self.tick,
            "mode": self.mode.value,
            "control": _params_to_dict(self.control),
            "network": _params_to_dict(self.network),
            "pid": _params_to_dict(self.pid),
            "plant": _params_to_dict(self.plant),
            "gps": _params_to_dict(self.gps),
            "arena": arena_to_dict(self.arena) if self.arena else None,
            "formation": (formation_to_dict(self.formation)
                          if self.formation else None),
            "target_path": [[t, x, y] for t, x, y in self.target_path],
            "leader_id": self.leader_id,
            "initial_layout": self.initial_layout.to_dict(),
            "neighbor_expiry": self.neighbor_expiry,
            "log_every": self.log_every,
            "frame_every": self.frame_every,
            "collision_radius": self.collision_radius,
            "phi_window": (list(self.phi_window)
                           if self.phi_window is not None else None),
            "phi_local_r": [float(r) for r in self.phi_local_r],
            "commands": [dict(c) for c in self.commands],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario: expected a JSON object")
        known = {f.name for f in dc_fields(cls)}
        for key in sorted(set(data) - known):
            raise ConfigError(f"{key}: unknown field")
        cfg = cls.__new__(cls)  # fill fields explicitly below
        d = dict(data)
        cfg.name = str(d.get("name", "scenario"))
        cfg.seed = d.get("seed", 0)
        if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int):
            raise ConfigError("seed: expected an integer")
        cfg.n_agents = d.get("n_agents", 9)
        cfg.duration = _require_number(d.get("duration", 60.0), "duration")
        cfg.tick = _require_number(d.get("tick", 0.025), "tick")
        mode = d.get("mode", "flocking")
        try:
            cfg.mode = ControlMode(mode)
        except ValueError:
            raise ConfigError(f"mode: expected 'flocking' or 'tracking', "
                              f"got {mode!r}") from None
        cfg.control = _params_from_dict(ControlParams,
                                        d.get("control", {}), "control")
        cfg.network = _params_from_dict(NetworkParams,
                                        d.get("network", {}), "network")
        cfg.pid = _params_from_dict(PidParams, d.get("pid", {}), "pid")
        cfg.plant = _params_from_dict(PlantParams, d.get("plant", {}),
                                      "plant", point_fields=("wind",))
        cfg.gps = _params_from_dict(GpsModel, d.get("gps", {}), "gps")
        arena = d.get("arena")
        cfg.arena = arena_from_dict(arena, "arena") if arena else None
        fmt = d.get("formation")
        cfg.formation = formation_from_dict(fmt, "formation") if fmt else None
        path = d.get("target_path", [])
        if not isinstance(path, list):
            raise ConfigError("target_path: expected a list")
        cfg.target_path = []
        for i, wp in enumerate(path):
            if not isinstance(wp, (list, tuple)) or len(wp) != 3:
                raise ConfigError(f"target_path[{i}]: expected [t, x, y]")
            cfg.target_path.append(tuple(
                _require_number(v, f"target_path[{i}][{j}]")
                for j, v in enumerate(wp)))
        leader = d.get("leader_id")
        if leader is not None and (isinstance(leader, bool)
                                   or not isinstance(leader, int)):
            raise ConfigError("leader_id: expected an integer or null")
        cfg.leader_id = leader
        cfg.initial_layout = InitialLayout.from_dict(
            d.get("initial_layout", {"kind": "random"}), "initial_layout")
        cfg.neighbor_expiry = _require_number(
            d.get("neighbor_expiry", 5.0), "neighbor_expiry")
        cfg.log_every = d.get("log_every", 1)
        cfg.frame_every = d.get("frame_every", 4)
        cfg.collision_radius = _require_number(
            d.get("collision_radius", 1.5), "collision_radius")
        win = d.get("phi_window")
        if win is not None:
            if not isinstance(win, (list, tuple)) or len(win) != 2:
                raise ConfigError("phi_window: expected [start, end]")
            win = (_require_number(win[0], "phi_window[0]"),
                   _require_number(win[1], "phi_window[1]"))
        cfg.phi_window = win
        rs = d.get("phi_local_r", [])
        if not isinstance(rs, list):
            raise ConfigError("phi_local_r: expected a list")
        cfg.phi_local_r = [_require_number(r, f"phi_local_r[{i}]")
                           for i, r in enumerate(rs)]
        cmds = d.get("commands", [])
        if not isinstance(cmds, list):
            raise ConfigError("commands: expected a list")
        cfg.commands = [dict(c) if isinstance(c, dict) else c for c in cmds]
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"scenario: invalid JSON ({e})") from e
        return cls.from_dict(data)


# --- tracklog -----------------------------------------------------------------


@dataclass
class Tracklog:
    """Per-record arrays of one run; index order is [record, agent, axis]."""

    times: np.ndarray            # (T,)
    position: np.ndarray         # (T, N, 2) true positions
    velocity: np.ndarray         # (T, N, 2) true velocities
    sensed_position: np.ndarray  # (T, N, 2) held GPS positions
    desired: np.ndarray          # (T, N, 2) controller output fed to the PID
    status: np.ndarray           # (T, N) AgentStatus as int8
    target: np.ndarray           # (T, 2); nan rows while no target exists

    _SPEC = (("times", "<f8"), ("position", "<f8"), ("velocity", "<f8"),
             ("sensed_position", "<f8"), ("desired", "<f8"),
             ("status", "<i1"), ("target", "<f8"))

    @property
    def n_records(self) -> int:
        return int(self.times.shape[0])

    @property
    def n_agents(self) -> int:
        return int(self.position.shape[1])

    def to_bytes(self) -> bytes:
        """Canonical byte serialization; equal runs produce equal bytes."""
        out = [b"FLKTRACK"]
        for name, dtype in self._SPEC:
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            head = (name + ":" + dtype + ":"
                    + ",".join(str(s) for s in arr.shape)).encode()
            out.append(struct.pack("<I", len(head)))
            out.append(head)
            raw = arr.tobytes()
            out.append(struct.pack("<Q", len(raw)))
            out.append(raw)
        return b"".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save_npz(self, path) -> None:
        np.savez_compressed(path, **{name: getattr(self, name)
                                     for name, _ in self._SPEC})

    @classmethod
    def load_npz(cls, path) -> "Tracklog":
        with np.load(path) as data:
            return cls(**{name: data[name] for name, _ in cls._SPEC})


# --- engine -------------------------------------------------------------------


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


class Simulation:
    """One scenario instance stepping on a fixed tick grid.

    Driving code calls step() until done (or run() for the whole thing) and
    may call apply_command() between ticks; commands never land mid-tick.
    frame_sink / command_sink callbacks, when set, observe telemetry frames
    and accepted commands as they happen.
    """

    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        n = cfg.n_agents
        tick = cfg.tick

        # Live, command-adjustable state; starts as a copy of the config.
        self.params = replace(cfg.control)
        self.formation = (replace(cfg.formation)
                          if cfg.formation is not None else None)
        self.mode = cfg.mode
        self._r2_auto = abs(self.params.r2 - self.params.r0 / 2.0) < 1e-12

        layout_rng = _stream(cfg.seed, 0)
        medium_rng = _stream(cfg.seed, 1)
        gps_rng = _stream(cfg.seed, 2)
        self._gust_rng = _stream(cfg.seed, 3)
        angles = np.array([_stream(cfg.seed, 4, i).uniform(0.0, 2.0 * math.pi)
                           for i in range(n)])
        self._fallback = np.stack([np.cos(angles), np.sin(angles)], axis=1)

        pos0 = sample_layout(cfg, layout_rng)
        self.status = np.full(n, int(AgentStatus.AIRBORNE), dtype=np.int8)
        self.plant = Plant(n, cfg.plant, tick, pos=pos0,
                           vel=np.zeros((n, 2)))
        self.pid = Pid(n, cfg.pid)
        self.gps = GpsSensor(n, cfg.gps, gps_rng)
        self.medium = Medium(n, cfg.network, medium_rng, tick)
        self.table = NeighborTable(n)
        self._pair_dirs = pair_direction_matrix(n)

        self._bcast_every = round((1.0 / cfg.network.broadcast_hz) / tick)
        self._gps_every = round((1.0 / cfg.gps.rate) / tick)
        self._schedule = sorted(
            (validate_command(c, n_agents=n, scheduled=True)
             for c in cfg.commands), key=lambda c: c["t"])
        self._next_cmd = 0

        self.k = 0
        self.total_ticks = round(cfg.duration / tick)
        self.desired = np.zeros((n, 2))
        self._desired_eff = np.zeros((n, 2))
        self._dirty = True
        self._valid = np.zeros((n, n), dtype=bool)
        self._prev_valid = np.zeros((n, n), dtype=bool)
        rel = pos0 - pos0.mean(axis=0)
        r = np.hypot(rel[:, 0], rel[:, 1])
        self._prev_theta = np.where(r < 1e-9, 0.0,
                                    np.arctan2(rel[:, 1], rel[:, 0]))
        self._target_path = (TargetPath(cfg.target_path)
                             if cfg.target_path else None)
        self._target_override: Optional[np.ndarray] = None
        self.target_now: Optional[np.ndarray] = None

        self.broadcast_rounds = 0
        self.gps_rounds = 0
        self.control_evals = 0
        self.packets_sent = 0
        self._min_d2 = math.inf
        self._ever_close = np.zeros((n, n), dtype=bool)

        self.applied_commands: List[dict] = []
        self.frame_sink: Optional[Callable[[dict], None]] = None
        self.command_sink: Optional[Callable[[dict], None]] = None

        self._log_t: List[float] = []
        self._log_pos: List[np.ndarray] = []
        self._log_vel: List[np.ndarray] = []
        self._log_sensed: List[np.ndarray] = []
        self._log_desired: List[np.ndarray] = []
        self._log_status: List[np.ndarray] = []
        self._log_target: List[np.ndarray] = []
        self._finished = False
        self._tracklog: Optional[Tracklog] = None

    # -- public surface ---------------------------------------------------

    @property
    def t_now(self) -> float:
        return self.k * self.cfg.tick

    @property
    def done(self) -> bool:
        return self.k >= self.total_ticks

    @property
    def min_pairwise_distance(self) -> float:
        return math.sqrt(self._min_d2) if math.isfinite(self._min_d2) \
            else math.inf

    @property
    def collision_count(self) -> int:
        return int(np.triu(self._ever_close, k=1).sum())

    def apply_command(self, cmd: dict) -> dict:
        """Execute one command between ticks; returns the accepted record.

        Raises CommandRejected (leaving the run untouched) on anything
        invalid.  Pacing kinds are not simulation state and are refused
        here; the loop driver owns them.
        """
        norm = validate_command(cmd, n_agents=self.cfg.n_agents)
        kind = norm["kind"]
        if kind in PACING_COMMANDS:
            raise CommandRejected(f"{kind}: handled by the session driver, "
                                  "not the simulation")
        if kind == "set_param":
            self.params, self.formation = _apply_param(
                self.params, self.formation, norm["name"], norm["value"],
                self._r2_auto)
        elif kind == "set_formation":
            shape = FormationShape(norm["shape"])
            if self.formation is not None:
                self.formation = replace(self.formation, shape=shape)
            else:
                flyers = self.cfg.n_agents - (
                    1 if self.cfg.leader_id is not None else 0)
                self.formation = FormationSpec(
                    shape=shape, n_agents=flyers, r0=self.params.r0)
        elif kind == "set_target":
            self._target_override = np.array([norm["x"], norm["y"]])
        elif kind == "force_land":
            sel = self.status == int(AgentStatus.AIRBORNE)
            if norm["agent"] != "all":
                pick = np.zeros_like(sel)
                pick[norm["agent"]] = True
                sel &= pick
            self.status[sel] = int(AgentStatus.LANDING)
        self._dirty = True
        record = {"t": round(self.t_now, 9), **norm}
        self.applied_commands.append(record)
        if self.command_sink is not None:
            self.command_sink(record)
        return record

    def step(self) -> None:
        """Advance exactly one tick."""
        if self._finished or self.done:
            raise RuntimeError("simulation already finished")
        k = self.k
        self._begin_tick(k)
        if k % self.cfg.log_every == 0:
            self._log_row()
        if self.frame_sink is not None and k % self.cfg.frame_every == 0:
            self.frame_sink(self.telemetry_frame())
        self._integrate()
        self.k += 1

    def finish(self) -> Tracklog:
        """Record the final state and return the tracklog (idempotent)."""
        if not self._finished:
            self._begin_tick(self.k)
            self._log_row()
            if self.frame_sink is not None and \
                    self.k % self.cfg.frame_every == 0:
                self.frame_sink(self.telemetry_frame())
            n = self.cfg.n_agents
            self._tracklog = Tracklog(
                times=np.array(self._log_t),
                position=np.array(self._log_pos).reshape(-1, n, 2),
                velocity=np.array(self._log_vel).reshape(-1, n, 2),
                sensed_position=np.array(self._log_sensed).reshape(-1, n, 2),
                desired=np.array(self._log_desired).reshape(-1, n, 2),
                status=np.array(self._log_status, dtype=np.int8
                                ).reshape(-1, n),
                target=np.array(self._log_target).reshape(-1, 2),
            )
            self._finished = True
        return self._tracklog

    def run(self) -> Tracklog:
        while not self.done:
            self.step()
        return self.finish()

    # -- per-tick pipeline -------------------------------------------------

    def _begin_tick(self, k: int) -> None:
        cfg = self.cfg
        t = k * cfg.tick

        # 1. Scheduled commands land on the tick boundary, before anything
        #    else sees the new tick.
        while (self._next_cmd < len(self._schedule)
               and self._schedule[self._next_cmd]["t"] <= t + 1e-9):
            cmd = dict(self._schedule[self._next_cmd])
            cmd.pop("t")
            self._next_cmd += 1
            self.apply_command(cmd)

        on_bcast = k % self._bcast_every == 0

        # 2. Radio medium: outage processes advance at the broadcast cadence.
        if on_bcast:
            self.medium.outage_step(t, self._bcast_every * cfg.tick)

        # 3. Deliveries due by this tick go into the neighbor caches.
        chunk = self.medium.drain_due(k)
        if chunk is not None:
            if self.table.ingest(chunk[0], chunk[1], chunk[2], chunk[3],
                                 chunk[4], chunk[5]):
                self._dirty = True

        # 4. Own-state sensing.
        if k % self._gps_every == 0:
            self.gps.fix(self.plant.pos, self.plant.vel, t)
            self.gps_rounds += 1
            self._dirty = True

        # 5. Everyone still flying broadcasts its latest fix.
        if on_bcast:
            active = self.status != int(AgentStatus.LANDED)
            self.packets_sent += self.medium.broadcast_batch(
                self.plant.pos, self.gps.sensed_pos, self.gps.sensed_vel,
                self.gps.last_fix_time, self.status, t, active)
            self.broadcast_rounds += 1

        # 6. Usable neighbor entries (expiry applied); a leader flies the
        #    target path and ignores the flock entirely.
        valid = self.table.valid_mask(t, cfg.neighbor_expiry)
        if cfg.leader_id is not None:
            valid[cfg.leader_id, :] = False
        if not np.array_equal(valid, self._prev_valid):
            self._dirty = True
            self._prev_valid = valid
        self._valid = valid

        # 7. Target motion.
        tgt = self._current_target(t)
        if (tgt is None) != (self.target_now is None) or (
                tgt is not None and not np.array_equal(tgt, self.target_now)):
            self._dirty = True
        self.target_now = tgt

        # 8. Recompute desired velocities only when some input changed.
        if self._dirty:
            self._compute_desired()
            self.control_evals += 1
            self._dirty = False
        airborne = self.status == int(AgentStatus.AIRBORNE)
        self._desired_eff = np.where(airborne[:, None], self.desired, 0.0)

        self._update_pair_stats()

    def _current_target(self, t: float) -> Optional[np.ndarray]:
        if self._target_override is not None:
            return self._target_override
        if self._target_path is not None:
            return self._target_path.position(t)
        return None

    def _compute_desired(self) -> None:
        cfg = self.cfg
        n = cfg.n_agents
        pos = self.gps.sensed_pos
        vel = self.gps.sensed_vel
        valid = self._valid
        leader = cfg.leader_id

        if self.mode is ControlMode.FLOCKING:
            views = BatchViews(
                pos=pos, vel=vel, nb_valid=valid, nb_pos=self.table.pos,
                nb_vel=self.table.vel, pair_dirs=self._pair_dirs,
                mode=ControlMode.FLOCKING, arena=cfg.arena,
                spp_fallback=self._fallback)
            self.desired = desired_velocity_batch(views, self.params)
            return

        com = local_com_batch(pos, valid, self.table.pos)
        tgt = self.target_now
        if leader is not None:
            # Followers know the target only as the leader's last broadcast.
            has_t = valid[:, leader].copy()
            t_pos = self.table.pos[:, leader].copy()
            if tgt is not None:
                has_t[leader] = True
                t_pos[leader] = tgt
            else:
                has_t[leader] = False
        elif tgt is not None:
            has_t = np.ones(n, dtype=bool)
            t_pos = np.tile(tgt, (n, 1))
        else:
            has_t = np.zeros(n, dtype=bool)
            t_pos = np.zeros((n, 2))

        r_fmt = np.zeros(n)
        shp: Optional[np.ndarray] = None
        has_shp: Optional[np.ndarray] = None
        tangential: Optional[np.ndarray] = None
        if self.formation is not None:
            fm = self.formation
            if fm.shape is FormationShape.GRID:
                shp = com.copy()
                r_fmt[:] = grid_assignment(fm.n_agents, fm.r0,
                                           np.zeros(2)).R_fmt
            elif fm.shape is FormationShape.RING:
                shp, tangential, theta = ring_assignment_batch(
                    pos, com, valid, self.table.pos, fm, self._prev_theta)
                self._prev_theta = theta
            else:
                shp = line_assignment_batch(pos, com, valid,
                                            self.table.pos, fm)
            has_shp = np.ones(n, dtype=bool)
        if leader is not None:
            r_fmt[leader] = 0.0
            if has_shp is not None:
                has_shp[leader] = False
            if tangential is not None:
                tangential[leader] = 0.0

        views = BatchViews(
            pos=pos, vel=vel, nb_valid=valid, nb_pos=self.table.pos,
            nb_vel=self.table.vel, pair_dirs=self._pair_dirs,
            mode=ControlMode.TRACKING, arena=cfg.arena,
            target_pos=t_pos, has_target=has_t, com=com,
            shp_pos=shp, has_shp=has_shp, r_fmt=r_fmt,
            tangential=tangential, spp_fallback=self._fallback)
        self.desired = desired_velocity_batch(views, self.params)

    def _integrate(self) -> None:
        cfg = self.cfg
        cmd = self.pid.step(self._desired_eff, self.gps.sensed_vel, cfg.tick)
        gust = (self._gust_rng.standard_normal((cfg.n_agents, 2))
                if cfg.plant.gust_std > 0 else None)
        freeze = self.status == int(AgentStatus.LANDED)
        self.plant.step(cmd, gust=gust, freeze=freeze)
        landing = self.status == int(AgentStatus.LANDING)
        if landing.any():
            speed = np.hypot(self.plant.vel[:, 0], self.plant.vel[:, 1])
            down = landing & (speed < LANDING_SPEED)
            if down.any():
                self.status[down] = int(AgentStatus.LANDED)
                self.plant.vel[down] = 0.0
                self.plant.accel[down] = 0.0

    def _update_pair_stats(self) -> None:
        if self.cfg.n_agents < 2:
            return
        pos = self.plant.pos
        diff = pos[:, None, :] - pos[None, :, :]
        d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
        np.fill_diagonal(d2, np.inf)
        m = float(d2.min())
        if m < self._min_d2:
            self._min_d2 = m
        r2 = self.cfg.collision_radius ** 2
        if m < r2:
            self._ever_close |= d2 < r2

    def _log_row(self) -> None:
        self._log_t.append(self.k * self.cfg.tick)
        self._log_pos.append(self.plant.pos.copy())
        self._log_vel.append(self.plant.vel.copy())
        self._log_sensed.append(self.gps.sensed_pos.copy())
        self._log_desired.append(self._desired_eff.copy())
        self._log_status.append(self.status.copy())
        self._log_target.append(
            self.target_now.copy() if self.target_now is not None
            else np.array([np.nan, np.nan]))

    # -- observation ------------------------------------------------------

    def params_digest(self) -> dict:
        """Currently active adjustable parameters."""
        out = {"r0": self.params.r0, "v_flock": self.params.v_flock,
               "v0": self.params.v0, "C_frict": self.params.C_frict,
               "D": self.params.D,
               "v_rotation": (self.formation.v_rotation
                              if self.formation is not None else 0.0)}
        return out

    def telemetry_frame(self) -> dict:
        """Snapshot for the ground station; one frame per frame_every ticks."""
        t = self.t_now
        cache = self.table.valid_mask(t, self.cfg.neighbor_expiry).sum(axis=1)
        phi = velocity_correlation(self.plant.vel)
        digest = self.params_digest()
        digest_id = hashlib.sha1(
            json.dumps(digest, sort_keys=True).encode()).hexdigest()[:12]
        agents = []
        for i in range(self.cfg.n_agents):
            agents.append({
                "id": i,
                "pos": [float(self.plant.pos[i, 0]),
                        float(self.plant.pos[i, 1])],
                "vel": [float(self.plant.vel[i, 0]),
                        float(self.plant.vel[i, 1])],
                "sensed_pos": [float(self.gps.sensed_pos[i, 0]),
                               float(self.gps.sensed_pos[i, 1])],
                "status": AgentStatus(int(self.status[i])).name.lower(),
                "cache": int(cache[i]),
            })
        return {
            "t": round(t, 6),
            "phi": None if math.isnan(phi) else phi,
            "mode": self.mode.value,
            "formation": (self.formation.shape.value
                          if self.formation is not None else None),
            "target": ([float(self.target_now[0]), float(self.target_now[1])]
                       if self.target_now is not None else None),
            "params": digest,
            "params_digest": digest_id,
            "agents": agents,
        }

    def live_metrics(self) -> dict:
        nn_mean, nn_std = neighbor_stats(self.plant.pos)
        phi = velocity_correlation(self.plant.vel)
        md = self.min_pairwise_distance
        return {
            "t": round(self.t_now, 6),
            "phi": None if math.isnan(phi) else phi,
            "nn_mean": None if math.isnan(nn_mean) else nn_mean,
            "nn_std": None if math.isnan(nn_std) else nn_std,
            "min_pairwise_distance": md if math.isfinite(md) else None,
            "collision_count": self.collision_count,
            "broadcast_rounds": self.broadcast_rounds,
            "gps_rounds": self.gps_rounds,
            "control_evals": self.control_evals,
            "packets_sent": self.packets_sent,
        }


# --- top-level entry ----------------------------------------------------------


def run_scenario(cfg: ScenarioConfig):
    """Run a scenario start to finish; returns (Tracklog, MetricsReport)."""
    sim = Simulation(cfg)
    log = sim.run()
    notes = [
        f"scenario={cfg.name} seed={cfg.seed}",
        ("gust model: white acceleration noise scaled by sqrt(tick); "
         f"velocity variance grows by gust_std^2 = "
         f"{cfg.plant.gust_std ** 2:.6g} (m/s)^2 per second"),
    ]
    report = build_report(
        log, window=cfg.phi_window, local_r=cfg.phi_local_r,
        collision_radius=cfg.collision_radius,
        min_pairwise=sim.min_pairwise_distance,
        collision_count=sim.collision_count, notes=notes)
    return log, report
