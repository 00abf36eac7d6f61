"""Shared geometry and parameter types."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from flocksim.core import (AgentState, AgentStatus, Annulus, ControlParams,
                           Disc, Rect, clamp_speed, norm, vec)


# -- clamp_speed ------------------------------------------------------------

def test_clamp_under_cap_unchanged():
    assert_allclose(clamp_speed(vec(3.0, 4.0), 5.0), [3.0, 4.0])


def test_clamp_over_cap_rescaled():
    assert_allclose(clamp_speed(vec(6.0, 8.0), 5.0), [3.0, 4.0])


def test_clamp_zero_cap():
    assert_allclose(clamp_speed(vec(6.0, 8.0), 0.0), [0.0, 0.0])


def test_clamp_negative_cap_rejected():
    with pytest.raises(ValueError):
        clamp_speed(vec(1.0, 0.0), -1.0)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 20))
def test_clamp_bounds_and_direction(x, y, cap):
    v = vec(x, y)
    out = clamp_speed(v, cap)
    assert norm(out) <= cap + 1e-9
    if norm(v) > 1e-9 and norm(out) > 1e-9:
        # Direction is preserved: cross product vanishes, dot is positive.
        assert abs(v[0] * out[1] - v[1] * out[0]) < 1e-6 * norm(v)
        assert v @ out > 0


# -- parameters -------------------------------------------------------------

def test_r2_defaults_to_half_r0():
    p = ControlParams(r0=12.0)
    assert p.r2 == 6.0


def test_explicit_r2_kept():
    assert ControlParams(r0=10.0, r2=3.0).r2 == 3.0


@pytest.mark.parametrize("kwargs", [
    {"r0": 0.0},
    {"r0": -1.0},
    {"r1": 0.0},
    {"r2": 0.0},
    {"r0": 8.0, "r2": 9.0},       # r2 must stay below r0
    {"d": 0.0},
    {"tau": 0.0},
    {"dt_lookahead": 0.0},
    {"v_max": 0.0},
    {"v_flock": -0.5},
    {"v_flock": 100.0},           # above v_max
    {"v0": 100.0},
    {"D": -1.0},
    {"C_frict": -1.0},
    {"C_shill": -1.0},
    {"alpha": 1.5},
    {"beta": -0.1},
    {"R": -2.0},
])
def test_param_validation_rejects(kwargs):
    with pytest.raises(ValueError):
        ControlParams(**kwargs)


def test_agent_state_defaults():
    a = AgentState(id=3, position=vec(1.0, 2.0), velocity=vec(0.0, 0.0))
    assert a.status == AgentStatus.AIRBORNE


# -- arenas -----------------------------------------------------------------

def test_disc_signed_distance():
    disc = Disc(center=vec(0.0, 0.0), radius=50.0)
    assert_allclose(disc.signed_distance(vec(30.0, 0.0)), -20.0)
    assert_allclose(disc.signed_distance(vec(60.0, 0.0)), 10.0)
    assert disc.contains(vec(30.0, 0.0))
    assert not disc.contains(vec(60.0, 0.0))


def test_disc_signed_distance_batch():
    disc = Disc(center=vec(1.0, 0.0), radius=2.0)
    pts = np.array([[1.0, 0.0], [4.0, 0.0], [1.0, 2.0]])
    assert_allclose(disc.signed_distance(pts), [-2.0, 1.0, 0.0])


def test_annulus_signed_distance():
    ring = Annulus(center=vec(0.0, 0.0), r_inner=15.0, r_outer=45.0)
    assert_allclose(ring.signed_distance(vec(30.0, 0.0)), -15.0)
    assert_allclose(ring.signed_distance(vec(10.0, 0.0)), 5.0)
    assert_allclose(ring.signed_distance(vec(50.0, 0.0)), 5.0)
    assert ring.contains(vec(0.0, 20.0))
    assert not ring.contains(vec(0.0, 5.0))


def test_annulus_validation():
    with pytest.raises(ValueError):
        Annulus(center=vec(0.0, 0.0), r_inner=10.0, r_outer=10.0)


def test_rect_signed_distance():
    box = Rect(center=vec(0.0, 0.0), half_width=150.0, half_height=100.0)
    assert_allclose(box.signed_distance(vec(0.0, 0.0)), -100.0)
    assert_allclose(box.signed_distance(vec(140.0, 0.0)), -10.0)
    assert_allclose(box.signed_distance(vec(160.0, 0.0)), 10.0)
    # Outside past a corner: Euclidean distance to the corner.
    assert_allclose(box.signed_distance(vec(153.0, 104.0)), 5.0)
    assert box.contains(vec(149.0, 99.0))
    assert not box.contains(vec(151.0, 0.0))


def test_rect_validation():
    with pytest.raises(ValueError):
        Rect(center=vec(0.0, 0.0), half_width=0.0, half_height=5.0)


@given(st.floats(-60, 60), st.floats(-60, 60))
def test_disc_distance_is_metric_consistent(x, y):
    disc = Disc(center=vec(5.0, -3.0), radius=20.0)
    s = float(disc.signed_distance(vec(x, y)))
    r = float(np.hypot(x - 5.0, y + 3.0))
    assert_allclose(s, r - 20.0, atol=1e-12)
