"""Decentralized flocking and formation flight simulator.

A swarm of point-mass vehicles, each controlled only from its own delayed
and noisy picture of the world: GPS-style self sensing, periodic broadcasts
from nearby agents, and a shared set of control gains. The package bundles
the control laws, the degraded-communication model, a tick-based engine,
summary metrics, and a small ground-control gateway.
"""

from .core import (AgentState, AgentStatus, Annulus, Arena, ControlParams,
                   Disc, Rect, TargetState, clamp_speed, vec)
from .control import (ControlMode, LocalView, PerceivedNeighbor,
                      desired_velocity, transfer)
from .formation import FormationShape, FormationSpec, packing_radius

__all__ = [
    "AgentState", "AgentStatus", "Annulus", "Arena", "ControlParams",
    "Disc", "Rect", "TargetState", "clamp_speed", "vec",
    "ControlMode", "LocalView", "PerceivedNeighbor", "desired_velocity",
    "transfer", "FormationShape", "FormationSpec", "packing_radius",
]

__version__ = "0.1.0"
