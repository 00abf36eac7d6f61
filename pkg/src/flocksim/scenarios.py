"""Built-in scenario presets.

Each factory returns a fresh ScenarioConfig so callers can tweak fields
without affecting later calls.  The set covers the standard demonstrations:
a leader towing a grid formation around a rectangle, a rotating ring resized
in flight, a line formation following a moving target, free flocking inside
an annulus, a grid holding over a static point, and the large-swarm
communication-range sweep behind the `sweep fig8` CLI verb.
"""

from __future__ import annotations

import math
from typing import Dict

from .control import ControlMode
from .core import Annulus, ControlParams, Disc, Rect
from .formation import FormationShape, FormationSpec
from .netsim import NetworkParams
from .sim import InitialLayout, ScenarioConfig
from .vehicle import GpsModel, PlantParams

__all__ = [
    "builtin_scenarios",
    "fig8_sweep",
    "grid_hold_9",
    "leader_grid_9",
    "line_follow",
    "ring_resize",
    "spp_annulus",
]

# Leader waypoint rectangle: 60 x 40 m, corners listed counterclockwise
# starting north-east.  Leg times assume the 2 m/s tracking speed; the lead-in
# from the origin to the first corner is sqrt(30^2 + 20^2) / 2 ~ 18.028 s.
_RECT_CORNERS = [(30.0, 20.0), (-30.0, 20.0), (-30.0, -20.0), (30.0, -20.0)]


def _rectangle_path(laps: int = 2) -> list:
    path = [(0.0, 0.0, 0.0)]
    t = 18.028
    path.append((t, *_RECT_CORNERS[0]))
    prev = _RECT_CORNERS[0]
    for _ in range(laps):
        for corner in _RECT_CORNERS[1:] + [_RECT_CORNERS[0]]:
            leg = math.hypot(corner[0] - prev[0], corner[1] - prev[1])
            t += leg / 2.0
            path.append((round(t, 3), *corner))
            prev = corner
    return path


def leader_grid_9(seed: int = 0) -> ScenarioConfig:
    """Ten vehicles: agent 0 tows nine grid-formation followers around a
    60 x 40 m rectangle twice at 2 m/s."""
    return ScenarioConfig(
        name="leader_grid_9",
        seed=seed,
        n_agents=10,
        duration=260.0,
        mode=ControlMode.TRACKING,
        control=ControlParams(r0=10.0, v0=2.0),
        formation=FormationSpec(shape=FormationShape.GRID, n_agents=9,
                                r0=10.0),
        leader_id=0,
        target_path=_rectangle_path(laps=2),
        initial_layout=InitialLayout(kind="random", min_spacing=5.0,
                                     area=Disc(center=(0.0, 0.0),
                                               radius=25.0)),
        phi_window=(25.0, 250.0),
    )


def ring_resize(seed: int = 0) -> ScenarioConfig:
    """Nine vehicles rotating on a ring over a fixed point; the lattice
    distance is stepped 7 -> 17 -> 7 m by live commands."""
    return ScenarioConfig(
        name="ring_resize",
        seed=seed,
        n_agents=9,
        duration=180.0,
        mode=ControlMode.TRACKING,
        control=ControlParams(r0=7.0, v0=2.0),
        formation=FormationSpec(shape=FormationShape.RING, n_agents=9,
                                r0=7.0, v_rotation=2.0),
        target_path=[(0.0, 0.0, 0.0)],
        initial_layout=InitialLayout(kind="random", min_spacing=3.5,
                                     area=Disc(center=(0.0, 0.0),
                                               radius=18.0)),
        commands=[
            {"t": 60.0, "kind": "set_param", "name": "r0", "value": 17.0},
            {"t": 120.0, "kind": "set_param", "name": "r0", "value": 7.0},
        ],
    )


def line_follow(seed: int = 0) -> ScenarioConfig:
    """Nine vehicles in a line formation following a target that moves
    60 m east and back at 1 m/s."""
    return ScenarioConfig(
        name="line_follow",
        seed=seed,
        n_agents=9,
        duration=150.0,
        mode=ControlMode.TRACKING,
        control=ControlParams(r0=10.0, v0=2.0),
        formation=FormationSpec(shape=FormationShape.LINE, n_agents=9,
                                r0=10.0),
        target_path=[(0.0, 0.0, 0.0), (60.0, 60.0, 0.0), (120.0, 0.0, 0.0)],
        initial_layout=InitialLayout(kind="random", min_spacing=5.0,
                                     area=Disc(center=(0.0, 0.0),
                                               radius=20.0)),
    )


def spp_annulus(seed: int = 0) -> ScenarioConfig:
    """Nine vehicles flocking freely inside a 15/45 m annulus; the soft
    walls funnel the flock into a circulating stream."""
    return ScenarioConfig(
        name="spp_annulus",
        seed=seed,
        n_agents=9,
        duration=270.0,
        mode=ControlMode.FLOCKING,
        control=ControlParams(r0=10.0, v_flock=2.0),
        arena=Annulus(center=(0.0, 0.0), r_inner=15.0, r_outer=45.0),
        initial_layout=InitialLayout(kind="random", min_spacing=5.0),
    )


def grid_hold_9(seed: int = 0) -> ScenarioConfig:
    """Nine vehicles gathering into a grid over a static target and holding
    position; exercises the damped, oscillation-free settling behavior."""
    return ScenarioConfig(
        name="grid_hold_9",
        seed=seed,
        n_agents=9,
        duration=240.0,
        mode=ControlMode.TRACKING,
        control=ControlParams(r0=10.0, v0=2.0),
        formation=FormationSpec(shape=FormationShape.GRID, n_agents=9,
                                r0=10.0),
        target_path=[(0.0, 0.0, 0.0)],
        initial_layout=InitialLayout(kind="random", min_spacing=5.0,
                                     area=Disc(center=(0.0, 0.0),
                                               radius=25.0)),
    )


def fig8_sweep(comm_range: float = 24.0, seed: int = 0) -> ScenarioConfig:
    """One point of the large-swarm communication-range sweep.

    100 vehicles flock for 10 simulated minutes inside a 300 m square with
    a fixed 1 s broadcast delay and acceleration noise; comm_range is the
    swept variable.  Local alignment within 40 m is the scored output.
    """
    r0 = 8.0
    return ScenarioConfig(
        name=f"fig8_rc{comm_range:g}_s{seed}",
        seed=seed,
        n_agents=100,
        duration=600.0,
        mode=ControlMode.FLOCKING,
        control=ControlParams(r0=r0, D=1.0, C_frict=30.0, v_flock=2.0,
                              dt_lookahead=1.0, tau=1.0),
        network=NetworkParams(comm_range=comm_range, delay_mean=1.0,
                              delay_std=0.0),
        gps=GpsModel(pos_error_std=0.0, vel_error_std=0.0),
        plant=PlantParams(gust_std=math.sqrt(0.1)),
        arena=Rect(center=(0.0, 0.0), half_width=150.0, half_height=150.0),
        initial_layout=InitialLayout(kind="random", min_spacing=r0 / 2.0),
        log_every=4,
        phi_local_r=[5.0 * r0],
    )


def builtin_scenarios() -> Dict[str, ScenarioConfig]:
    """Name -> fresh config for every preset (sweep preset at its default point)."""
    return {
        "leader_grid_9": leader_grid_9(),
        "ring_resize": ring_resize(),
        "line_follow": line_follow(),
        "spp_annulus": spp_annulus(),
        "grid_hold_9": grid_hold_9(),
        "fig8_sweep": fig8_sweep(),
    }
