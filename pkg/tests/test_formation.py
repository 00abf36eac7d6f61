"""Slot geometry for grid, ring, and line keeping, with independent
constructions backing the circle-packing table entries used by the grid.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from flocksim.core import AgentState, vec
from flocksim.formation import (FormationShape, FormationSpec, InvalidCount,
                                grid_assignment, line_assignment,
                                line_assignment_batch, packing_radius,
                                ring_assignment, ring_assignment_batch,
                                ring_radius, rotation_direction)


def agent(x, y, vx=0.0, vy=0.0, id=0):
    return AgentState(id=id, position=vec(x, y), velocity=vec(vx, vy))


class Dot:
    """Bare position holder standing in for a cached neighbor."""

    def __init__(self, x, y):
        self.position = vec(x, y)


# -- packing table ------------------------------------------------------------

def _enclosing_ratio(centers):
    """Radius of the smallest origin-centered disc holding unit discs at the
    given centers, i.e. max |c| + 1, after checking the discs don't overlap."""
    centers = np.asarray(centers, dtype=np.float64)
    n = centers.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            assert np.hypot(*(centers[i] - centers[j])) >= 2.0 - 1e-9
    return np.hypot(centers[:, 0], centers[:, 1]).max() + 1.0


def test_packing_single():
    assert packing_radius(1) == 1.0


def test_packing_pair_against_construction():
    # Two tangent unit circles centered on a diameter: ratio exactly 2, and
    # no arrangement does better because the two centers are >= 2 apart so
    # one of them sits at least 1 from the origin.
    assert_allclose(_enclosing_ratio([(1.0, 0.0), (-1.0, 0.0)]), 2.0)
    assert_allclose(packing_radius(2), 2.0)


def test_packing_seven_against_construction():
    # One circle in the middle, six around it in a hexagon: ratio 3.
    hexa = [(0.0, 0.0)]
    hexa += [(2 * np.cos(k * np.pi / 3), 2 * np.sin(k * np.pi / 3))
             for k in range(6)]
    assert_allclose(_enclosing_ratio(hexa), 3.0)
    assert_allclose(packing_radius(7), 3.0)


def test_packing_seven_perturbations_never_beat_table():
    """Random valid rearrangements of seven unit circles never fit inside a
    tighter disc than the tabulated optimum."""
    rng = np.random.default_rng(42)
    base = np.array([(0.0, 0.0)] +
                    [(2 * np.cos(k * np.pi / 3), 2 * np.sin(k * np.pi / 3))
                     for k in range(6)])
    best = np.inf
    tried = 0
    while tried < 500:
        cand = base + rng.uniform(-0.4, 0.4, base.shape)
        cand = cand - cand.mean(axis=0)
        d = np.hypot(*(cand[:, None, :] - cand[None, :, :]).transpose(2, 0, 1))
        np.fill_diagonal(d, np.inf)
        if d.min() < 2.0:
            tried += 1
            continue
        best = min(best, np.hypot(cand[:, 0], cand[:, 1]).max() + 1.0)
        tried += 1
    assert best >= packing_radius(7) - 1e-6


def test_packing_monotone():
    vals = [packing_radius(n) for n in range(1, 41)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_packing_large_n_follows_density_estimate():
    # Beyond the table the ratio comes from the hexagonal density bound.
    assert_allclose(packing_radius(25), 1.0 + np.sqrt(25 / 0.9069), rtol=1e-12)


def test_packing_rejects_bad_count():
    with pytest.raises(InvalidCount):
        packing_radius(0)


# -- grid ----------------------------------------------------------------------

def test_grid_radius_examples():
    com = vec(3.0, -2.0)
    a = grid_assignment(7, 8.0, com)
    assert_allclose(a.R_fmt, 8.0)
    assert_allclose(a.x_shp, com)
    assert_allclose(grid_assignment(2, 10.0, com).R_fmt, 5.0)
    assert_allclose(grid_assignment(1, 10.0, com).R_fmt, 0.0)


# -- ring ----------------------------------------------------------------------

def test_ring_radius_example():
    spec = FormationSpec(shape=FormationShape.RING, n_agents=10, r0=7.0)
    assert_allclose(ring_radius(spec), 10 * 7.0 / (2 * np.pi))
    assert_allclose(ring_radius(spec), 11.1408, atol=1e-3)


def test_ring_two_agents_diametric():
    spec = FormationSpec(shape=FormationShape.RING, n_agents=2, r0=7.0)
    rho = ring_radius(spec)
    com = vec(0.0, 0.0)
    me = agent(rho, 0.0)
    other = Dot(-rho, 0.0)
    a = ring_assignment(me, [other], com, spec)
    assert_allclose(a.x_shp, [rho, 0.0], atol=1e-9)


def test_ring_bisects_largest_gap():
    spec = FormationSpec(shape=FormationShape.RING, n_agents=4, r0=7.0)
    rho = ring_radius(spec)
    com = vec(0.0, 0.0)
    th = np.deg2rad(5.0)
    me = agent(rho * np.cos(th), rho * np.sin(th))
    nbs = [Dot(0.0, rho), Dot(0.0, -rho)]   # 90 and 270 degrees
    a = ring_assignment(me, nbs, com, spec)
    assert_allclose(a.x_shp, [rho, 0.0], atol=1e-9)


def test_ring_equilibrium_is_fixed_point():
    n, r0 = 8, 7.0
    spec = FormationSpec(shape=FormationShape.RING, n_agents=n, r0=r0)
    rho = ring_radius(spec)
    com = vec(0.0, 0.0)
    angles = 2 * np.pi * np.arange(n) / n
    pts = rho * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    for i in range(n):
        nbs = [Dot(*pts[j]) for j in range(n) if j != i]
        a = ring_assignment(agent(*pts[i], id=i), nbs, com, spec)
        assert_allclose(a.x_shp, pts[i], atol=1e-9)
    # Adjacent slots sit one equilibrium distance apart along the arc.
    assert_allclose(rho * (2 * np.pi / n), r0)


def test_ring_tangential_boost_counterclockwise():
    spec = FormationSpec(shape=FormationShape.RING, n_agents=4, r0=7.0,
                         v_rotation=2.0)
    rho = ring_radius(spec)
    a = ring_assignment(agent(rho, 0.0), [], vec(0.0, 0.0), spec)
    assert_allclose(a.tangential_boost, [0.0, 2.0], atol=1e-12)


def test_ring_on_com_uses_previous_angle():
    spec = FormationSpec(shape=FormationShape.RING, n_agents=3, r0=7.0)
    com = vec(0.0, 0.0)
    a = ring_assignment(agent(0.0, 0.0), [], com, spec,
                        prev_angle=np.pi / 2)
    rho = ring_radius(spec)
    assert_allclose(a.x_shp, [0.0, rho], atol=1e-9)


def test_rotation_direction_signs():
    com = vec(0.0, 0.0)
    ccw = [agent(1.0, 0.0, vx=0.0, vy=1.0, id=0),
           agent(-1.0, 0.0, vx=0.0, vy=-1.0, id=1)]
    cw = [agent(1.0, 0.0, vx=0.0, vy=-1.0, id=0),
          agent(-1.0, 0.0, vx=0.0, vy=1.0, id=1)]
    still = [agent(1.0, 0.0, id=0), agent(-1.0, 0.0, id=1)]
    assert rotation_direction(ccw, com) == 1
    assert rotation_direction(cw, com) == -1
    assert rotation_direction(still, com) == 0


# -- line ----------------------------------------------------------------------

def test_line_middle_agent_keeps_midpoint():
    spec = FormationSpec(shape=FormationShape.LINE, n_agents=3, r0=8.0)
    com = vec(0.0, 0.0)
    a = line_assignment(agent(0.0, 0.0), [Dot(-8.0, 0.0), Dot(8.0, 0.0)],
                        com, spec)
    assert_allclose(a.x_shp, [0.0, 0.0], atol=1e-9)


def test_line_end_agent_gets_end_slot():
    spec = FormationSpec(shape=FormationShape.LINE, n_agents=5, r0=8.0)
    com = vec(0.0, 0.0)
    nbs = [Dot(-16.0, 0.0), Dot(-8.0, 0.0), Dot(0.0, 0.0), Dot(8.0, 0.0)]
    a = line_assignment(agent(16.0, 0.0), nbs, com, spec)
    assert_allclose(a.x_shp, [16.0, 0.0], atol=1e-9)
    b = line_assignment(agent(-16.0, 0.0),
                        [Dot(-8.0, 0.0), Dot(0.0, 0.0), Dot(8.0, 0.0),
                         Dot(16.0, 0.0)], com, spec)
    assert_allclose(b.x_shp, [-16.0, 0.0], atol=1e-9)


def test_line_equilibrium_is_fixed_point():
    n, r0 = 5, 8.0
    spec = FormationSpec(shape=FormationShape.LINE, n_agents=n, r0=r0)
    com = vec(0.0, 0.0)
    xs = (np.arange(n) - (n - 1) / 2) * r0
    pts = np.stack([xs, np.zeros(n)], axis=1)
    for i in range(n):
        nbs = [Dot(*pts[j]) for j in range(n) if j != i]
        a = line_assignment(agent(*pts[i], id=i), nbs, com, spec)
        assert_allclose(a.x_shp, pts[i], atol=1e-9)


def test_line_fit_rotates_with_the_swarm():
    spec = FormationSpec(shape=FormationShape.LINE, n_agents=3, r0=8.0)
    theta = 0.7
    R = np.array([[np.cos(theta), -np.sin(theta)],
                  [np.sin(theta), np.cos(theta)]])
    com = vec(1.0, -2.0)
    me = agent(9.0, -2.0)
    nbs = [Dot(1.0, -2.0), Dot(-7.0, -2.0)]
    base = line_assignment(me, nbs, com, spec).x_shp
    me_r = agent(*(R @ (me.position - com) + com))
    nbs_r = [Dot(*(R @ (n.position - com) + com)) for n in nbs]
    rot = line_assignment(me_r, nbs_r, com, spec).x_shp
    assert_allclose(rot, R @ (base - com) + com, atol=1e-9)


def test_line_degenerate_cluster_spreads_east():
    spec = FormationSpec(shape=FormationShape.LINE, n_agents=3, r0=8.0)
    com = vec(0.0, 0.0)
    a = line_assignment(agent(0.0, 0.0), [Dot(0.0, 0.0), Dot(0.0, 0.0)],
                        com, spec)
    # All stacked on one point: the fit direction falls back to east and
    # the slot lands on the line through the target along east.
    assert_allclose(a.x_shp[1], 0.0, atol=1e-9)


# -- batch agreement -------------------------------------------------------------

def test_ring_batch_matches_scalar():
    rng = np.random.default_rng(11)
    n = 7
    spec = FormationSpec(shape=FormationShape.RING, n_agents=n, r0=6.0,
                         v_rotation=1.5)
    pos = rng.uniform(-15, 15, (n, 2))
    com = rng.uniform(-3, 3, 2)
    valid = rng.random((n, n)) < 0.7
    np.fill_diagonal(valid, False)
    nb_pos = np.broadcast_to(pos[None, :, :], (n, n, 2)).copy()
    prev = rng.uniform(-np.pi, np.pi, n)
    shp, boost, theta = ring_assignment_batch(pos, np.tile(com, (n, 1)),
                                              valid, nb_pos, spec, prev)
    for i in range(n):
        nbs = [Dot(*pos[j]) for j in range(n) if valid[i, j]]
        want = ring_assignment(agent(*pos[i], id=i), nbs, com, spec,
                               prev_angle=float(prev[i]))
        assert_allclose(shp[i], want.x_shp, atol=1e-9, err_msg=f"agent {i}")
        assert_allclose(boost[i], want.tangential_boost, atol=1e-9)


def test_line_batch_matches_scalar():
    rng = np.random.default_rng(12)
    n = 6
    spec = FormationSpec(shape=FormationShape.LINE, n_agents=n, r0=6.0)
    pos = rng.uniform(-15, 15, (n, 2))
    com = rng.uniform(-3, 3, 2)
    valid = rng.random((n, n)) < 0.7
    np.fill_diagonal(valid, False)
    nb_pos = np.broadcast_to(pos[None, :, :], (n, n, 2)).copy()
    shp = line_assignment_batch(pos, np.tile(com, (n, 1)), valid, nb_pos, spec)
    for i in range(n):
        nbs = [Dot(*pos[j]) for j in range(n) if valid[i, j]]
        want = line_assignment(agent(*pos[i], id=i), nbs, com, spec)
        assert_allclose(shp[i], want.x_shp, atol=1e-9, err_msg=f"agent {i}")


def test_formation_spec_validation():
    with pytest.raises(ValueError):
        FormationSpec(shape=FormationShape.RING, n_agents=0, r0=7.0)
    with pytest.raises(ValueError):
        FormationSpec(shape=FormationShape.GRID, n_agents=5, r0=0.0)
