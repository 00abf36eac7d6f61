"""Flock-level measurements: alignment order parameters, spacing statistics,
and safety counters.

Everything here is pure post-processing.  Functions take state arrays or a
finished tracklog and never touch the simulation, so they can run over live
telemetry and archived runs alike.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .control import SPEED_FLOOR

__all__ = [
    "MetricsReport",
    "build_report",
    "local_correlation",
    "neighbor_stats",
    "velocity_correlation",
]


def _velocity_array(states) -> np.ndarray:
    """Accept an (N, 2) array or a sequence of objects with .velocity."""
    if isinstance(states, np.ndarray):
        return np.asarray(states, dtype=np.float64)
    return np.array([np.asarray(s.velocity, dtype=np.float64) for s in states])


def _headings(vel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit headings and the eligibility mask (agents above the speed floor)."""
    speed = np.hypot(vel[:, 0], vel[:, 1])
    ok = speed >= SPEED_FLOOR
    units = np.zeros_like(vel)
    units[ok] = vel[ok] / speed[ok, None]
    return units, ok


def velocity_correlation(states) -> float:
    """Mean cosine between the headings of every agent pair.

    Agents slower than SPEED_FLOOR have no meaningful heading and are left
    out of the pair set.  Returns nan when fewer than two agents qualify.
    """
    vel = _velocity_array(states)
    units, ok = _headings(vel)
    m = int(ok.sum())
    if m < 2:
        return float("nan")
    u = units[ok]
    g = u @ u.T
    pair_sum = (g.sum() - np.trace(g)) / 2.0
    return float(pair_sum / (m * (m - 1) / 2.0))


def phi_series(velocity_log: np.ndarray) -> np.ndarray:
    """Per-record alignment for a (T, N, 2) velocity log; nan where undefined."""
    return np.array([velocity_correlation(v) for v in velocity_log])


def local_correlation(position_log: np.ndarray, velocity_log: np.ndarray,
                      times: np.ndarray, r: float,
                      window: Optional[Tuple[float, float]] = None) -> float:
    """Time-averaged alignment restricted to pairs closer than r.

    At each record the mean heading cosine is taken over pairs within r of
    each other (slow agents excluded); records with no qualifying pair do
    not contribute to the time average.  Returns nan when no record in the
    window has a qualifying pair.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    times = np.asarray(times, dtype=np.float64)
    sel = np.ones(times.shape[0], dtype=bool)
    if window is not None:
        t0, t1 = window
        sel = (times >= t0) & (times <= t1)
    vals: List[float] = []
    for pos, vel in zip(position_log[sel], velocity_log[sel]):
        units, ok = _headings(vel)
        if ok.sum() < 2:
            continue
        p = pos[ok]
        u = units[ok]
        diff = p[:, None, :] - p[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        close = np.triu(dist < r, k=1)
        if not close.any():
            continue
        g = u @ u.T
        vals.append(float(g[close].mean()))
    if not vals:
        return float("nan")
    return float(np.mean(vals))


def neighbor_stats(positions) -> Tuple[float, float]:
    """Mean and population std over agents of closest-neighbor distance.

    Returns (nan, nan) with fewer than two agents.
    """
    if not isinstance(positions, np.ndarray):
        positions = np.array(
            [np.asarray(s.position, dtype=np.float64) for s in positions])
    n = positions.shape[0]
    if n < 2:
        return (float("nan"), float("nan"))
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    np.fill_diagonal(dist, np.inf)
    nn = dist.min(axis=1)
    return (float(nn.mean()), float(nn.std()))


def nn_series(position_log: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest-neighbor mean and std per record for a (T, N, 2) log."""
    means = np.empty(position_log.shape[0])
    stds = np.empty(position_log.shape[0])
    for i, pos in enumerate(position_log):
        means[i], stds[i] = neighbor_stats(pos)
    return means, stds


def pairwise_safety(position_log: np.ndarray,
                    collision_radius: float) -> Tuple[float, int]:
    """Global minimum pairwise distance over the log and the number of agent
    pairs that ever came within collision_radius of each other."""
    t_len, n = position_log.shape[0], position_log.shape[1]
    if n < 2 or t_len == 0:
        return (float("inf"), 0)
    min_d2 = math.inf
    ever = np.zeros((n, n), dtype=bool)
    r2 = collision_radius * collision_radius
    for pos in position_log:
        diff = pos[:, None, :] - pos[None, :, :]
        d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
        np.fill_diagonal(d2, np.inf)
        m = float(d2.min())
        if m < min_d2:
            min_d2 = m
        if m < r2:
            ever |= d2 < r2
    count = int(np.triu(ever, k=1).sum())
    return (math.sqrt(min_d2), count)


# --- report ------------------------------------------------------------------


def _json_safe(value):
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, np.ndarray):
        return [_json_safe(float(v)) for v in value]
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


@dataclass
class MetricsReport:
    """Summary statistics of one run.

    phi is the per-record alignment series (nan where undefined); phi_mean
    and phi_std aggregate it over the requested window.  phi_local maps a
    radius to the windowed local alignment.  nn_* are closest-neighbor
    distance series.
    """

    times: np.ndarray
    phi: np.ndarray
    phi_mean: float
    phi_std: float
    phi_window: Optional[Tuple[float, float]]
    phi_local: Dict[float, float]
    nn_mean: np.ndarray
    nn_std: np.ndarray
    min_pairwise_distance: float
    collision_radius: float
    collision_count: int
    notes: List[str] = field(default_factory=list)

    def summary(self) -> dict:
        """JSON-ready dict; series included, nan and inf become null."""
        return {
            "phi_mean": _json_safe(self.phi_mean),
            "phi_std": _json_safe(self.phi_std),
            "phi_window": _json_safe(self.phi_window),
            "phi_local": _json_safe(self.phi_local),
            "min_pairwise_distance": _json_safe(self.min_pairwise_distance),
            "collision_radius": _json_safe(self.collision_radius),
            "collision_count": self.collision_count,
            "nn_mean_last": _json_safe(float(self.nn_mean[-1])
                                       if self.nn_mean.size else float("nan")),
            "nn_std_last": _json_safe(float(self.nn_std[-1])
                                      if self.nn_std.size else float("nan")),
            "times": _json_safe(self.times),
            "phi": _json_safe(self.phi),
            "nn_mean": _json_safe(self.nn_mean),
            "nn_std": _json_safe(self.nn_std),
            "notes": list(self.notes),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.summary(), indent=indent, allow_nan=False)

    def csv_series(self) -> Dict[str, str]:
        """One 't,value' CSV text per series."""
        out: Dict[str, str] = {}
        for name, series in (("phi", self.phi),
                             ("nn_mean", self.nn_mean),
                             ("nn_std", self.nn_std)):
            lines = ["t,value"]
            for t, v in zip(self.times, series):
                lines.append(f"{t:.6f},{'' if math.isnan(v) else repr(float(v))}")
            out[name] = "\n".join(lines) + "\n"
        return out


def build_report(log, *, window: Optional[Tuple[float, float]] = None,
                 local_r: Sequence[float] = (),
                 collision_radius: float = 1.5,
                 min_pairwise: Optional[float] = None,
                 collision_count: Optional[int] = None,
                 notes: Sequence[str] = ()) -> MetricsReport:
    """Compute a MetricsReport from a tracklog.

    min_pairwise and collision_count may be supplied by the engine (which
    sees every tick); otherwise they are scanned from the logged records.
    """
    times = np.asarray(log.times, dtype=np.float64)
    phi = phi_series(log.velocity)
    sel = np.ones(times.shape[0], dtype=bool)
    if window is not None:
        sel = (times >= window[0]) & (times <= window[1])
    windowed = phi[sel]
    finite = windowed[~np.isnan(windowed)]
    phi_mean = float(finite.mean()) if finite.size else float("nan")
    phi_std = float(finite.std()) if finite.size else float("nan")
    phi_local = {float(r): local_correlation(log.position, log.velocity,
                                             times, r, window)
                 for r in local_r}
    nn_mean, nn_std = nn_series(log.position)
    if min_pairwise is None or collision_count is None:
        scanned_min, scanned_count = pairwise_safety(log.position,
                                                     collision_radius)
        if min_pairwise is None:
            min_pairwise = scanned_min
        if collision_count is None:
            collision_count = scanned_count
    return MetricsReport(
        times=times, phi=phi, phi_mean=phi_mean, phi_std=phi_std,
        phi_window=tuple(window) if window is not None else None,
        phi_local=phi_local, nn_mean=nn_mean, nn_std=nn_std,
        min_pairwise_distance=float(min_pairwise),
        collision_radius=float(collision_radius),
        collision_count=int(collision_count), notes=list(notes))
