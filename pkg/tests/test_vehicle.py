"""Inner-loop behavior: PID algebra, plant lag and limits, GPS errors, and
the closed-loop response of the whole chain.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from flocksim.core import vec
from flocksim.vehicle import (GpsModel, GpsSensor, Pid, PidParams, Plant,
                              PlantParams, pid_step)


# -- PID ----------------------------------------------------------------------

def test_pid_first_step_command():
    pid = Pid(1, PidParams(kp=30.0, ki=1.0, kd=5.0, feedforward_gain=10.0))
    cmd = pid.step(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), 0.025)
    # kp * e + ff * target; derivative contributes nothing on step one.
    assert_allclose(cmd, [[40.0, 0.0]])


def test_pid_pure_feedforward():
    pid = Pid(1, PidParams(kp=0.0, ki=0.0, kd=0.0, feedforward_gain=2.0))
    cmd = pid.step(np.array([[3.0, -1.0]]), np.array([[3.0, -1.0]]), 0.025)
    assert_allclose(cmd, [[6.0, -2.0]])


def test_pid_integral_clamps():
    pid = Pid(1, PidParams(kp=0.0, ki=1.0, kd=0.0, i_limit=0.5,
                           feedforward_gain=0.0))
    for _ in range(2000):
        pid.step(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), 0.025)
    assert_allclose(pid.integral, [[0.5, 0.0]])
    cmd = pid.step(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), 0.025)
    assert_allclose(cmd, [[0.5, 0.0]])


def test_pid_integral_recovers_after_sign_flip():
    pid = Pid(1, PidParams(kp=0.0, ki=1.0, kd=0.0, i_limit=0.5,
                           feedforward_gain=0.0))
    for _ in range(100):
        pid.step(np.array([[10.0, 0.0]]), np.array([[0.0, 0.0]]), 0.025)
    assert_allclose(pid.integral, [[0.5, 0.0]])
    pid.step(np.array([[-10.0, 0.0]]), np.array([[0.0, 0.0]]), 0.025)
    assert pid.integral[0, 0] < 0.5  # unwinds immediately, no ratchet


def test_pid_derivative_acts_on_error_change():
    pid = Pid(1, PidParams(kp=0.0, ki=0.0, kd=2.0, feedforward_gain=0.0))
    pid.step(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), 0.1)
    cmd = pid.step(np.array([[2.0, 0.0]]), np.array([[0.0, 0.0]]), 0.1)
    assert_allclose(cmd, [[2.0 * (2.0 - 1.0) / 0.1, 0.0]])


def test_pid_rows_independent():
    pid = Pid(2, PidParams(kp=1.0, ki=0.0, kd=0.0, feedforward_gain=0.0))
    cmd = pid.step(np.array([[1.0, 0.0], [0.0, 2.0]]),
                   np.zeros((2, 2)), 0.025)
    assert_allclose(cmd, [[1.0, 0.0], [0.0, 2.0]])


def test_pid_scalar_wrapper():
    pid = Pid(1, PidParams(kp=30.0, ki=0.0, kd=0.0, feedforward_gain=10.0))
    out = pid_step(vec(1.0, 0.0), vec(0.0, 0.0), pid, 0.025)
    assert_allclose(out, [40.0, 0.0])


# -- plant ----------------------------------------------------------------------

def test_plant_rest_stays_at_rest():
    plant = Plant(1, PlantParams(command_delay=0.0), dt=0.025)
    for _ in range(100):
        plant.step(np.zeros((1, 2)))
    assert_allclose(plant.pos, 0.0)
    assert_allclose(plant.vel, 0.0)
    assert_allclose(plant.accel, 0.0)


def test_plant_acceleration_first_order_rise():
    dt = 0.001
    plant = Plant(1, PlantParams(command_delay=0.0, response_time=1.0,
                                 a_max=10.0), dt=dt)
    cmd = np.array([[2.0, 0.0]])
    for _ in range(1000):  # one time constant
        plant.step(cmd)
    assert_allclose(plant.accel[0, 0], 2.0 * (1 - math.exp(-1.0)), rtol=1e-2)
    assert plant.accel[0, 1] == 0.0


def test_plant_acceleration_clamped():
    plant = Plant(1, PlantParams(command_delay=0.0, a_max=3.0), dt=0.025)
    for _ in range(400):
        plant.step(np.array([[50.0, 0.0]]))
    assert np.hypot(*plant.accel[0]) <= 3.0 + 1e-9


def test_plant_speed_clamped():
    plant = Plant(1, PlantParams(command_delay=0.0, a_max=3.0, drag_tau=5.0,
                                 v_max=4.0), dt=0.025)
    for _ in range(2000):
        plant.step(np.array([[50.0, 0.0]]))
    assert np.hypot(*plant.vel[0]) <= 4.0 + 1e-9
    assert_allclose(np.hypot(*plant.vel[0]), 4.0, atol=1e-6)


def test_plant_transport_delay():
    dt = 0.1
    plant = Plant(1, PlantParams(command_delay=0.4), dt=dt)
    cmd = np.array([[1.0, 0.0]])
    for _ in range(4):
        plant.step(cmd)
        assert_allclose(plant.accel, 0.0)
    plant.step(cmd)
    assert plant.accel[0, 0] > 0.0


def test_plant_drag_decays_velocity():
    plant = Plant(1, PlantParams(command_delay=0.0, drag_tau=1.0),
                  dt=0.01, vel=np.array([[2.0, 0.0]]))
    for _ in range(100):  # one drag time constant
        plant.step(np.zeros((1, 2)))
    assert_allclose(plant.vel[0, 0], 2.0 * math.exp(-1.0), rtol=2e-2)


def test_plant_axes_permute():
    p = PlantParams(command_delay=0.0)
    a = Plant(1, p, dt=0.025)
    b = Plant(1, p, dt=0.025)
    for k in range(200):
        cmd = np.array([[math.sin(0.1 * k), 0.3]])
        a.step(cmd)
        b.step(cmd[:, ::-1].copy())
    assert_allclose(a.pos[0], b.pos[0, ::-1])
    assert_allclose(a.vel[0], b.vel[0, ::-1])


def test_plant_wind_advects_position():
    plant = Plant(1, PlantParams(command_delay=0.0,
                                 wind=vec(1.0, 0.0)), dt=0.1)
    for _ in range(10):
        plant.step(np.zeros((1, 2)))
    assert_allclose(plant.pos[0], [1.0, 0.0], atol=1e-9)
    assert_allclose(plant.vel[0], [0.0, 0.0])  # wind moves, airspeed stays


def test_plant_freeze_holds_row():
    plant = Plant(2, PlantParams(command_delay=0.0), dt=0.025,
                  vel=np.array([[1.0, 0.0], [1.0, 0.0]]))
    plant.step(np.ones((2, 2)), freeze=np.array([False, True]))
    assert plant.pos[0, 0] > 0.0
    assert_allclose(plant.pos[1], [0.0, 0.0])
    assert_allclose(plant.vel[1], [0.0, 0.0])


def test_plant_rejects_misaligned_delay():
    with pytest.raises(ValueError):
        Plant(1, PlantParams(command_delay=0.13), dt=0.025)


# -- closed loop ------------------------------------------------------------------

def _closed_loop(target_fn, duration, pid_params=None, plant_params=None,
                 dt=0.025, gps_every=8):
    """Drive one vehicle with held velocity measurements at the sensing rate;
    returns (times, target trace, achieved trace) for the x axis."""
    pid = Pid(1, pid_params or PidParams())
    plant = Plant(1, plant_params or PlantParams(), dt)
    sensed = plant.vel.copy()
    n = int(round(duration / dt))
    ts = np.empty(n)
    want = np.empty(n)
    got = np.empty(n)
    for k in range(n):
        t = k * dt
        if k % gps_every == 0:
            sensed = plant.vel.copy()
        tv = np.array([[target_fn(t), 0.0]])
        cmd = pid.step(tv, sensed, dt)
        plant.step(cmd)
        ts[k] = t + dt
        want[k] = tv[0, 0]
        got[k] = plant.vel[0, 0]
    return ts, want, got


def test_step_response_overshoot_and_settling():
    ts, want, got = _closed_loop(lambda t: 2.0, 30.0)
    assert got.max() <= 2.0 * 1.05
    tail = got[ts >= 20.0]
    assert np.all(np.abs(tail - 2.0) <= 0.04)


def test_step_response_ideal_chain_is_clean():
    pid = PidParams()
    plant = PlantParams(command_delay=0.0, response_time=1e-3)
    ts, want, got = _closed_loop(lambda t: 2.0, 10.0, pid, plant, gps_every=1)
    assert got.max() <= 2.0 * 1.001
    assert np.all(np.abs(got[ts >= 5.0] - 2.0) <= 0.04)


def test_velocity_tracking_lag_near_design_point():
    """A slow sinusoidal target is followed with roughly a second and a half
    of delay through the full sense-control-actuate chain."""
    period = 20.0
    ts, want, got = _closed_loop(
        lambda t: 2.0 * math.sin(2 * math.pi * t / period), 200.0)
    keep = ts >= 40.0
    want, got = want[keep] - want[keep].mean(), got[keep] - got[keep].mean()
    lags = np.arange(0, int(4.0 / 0.025)) * 0.025
    corr = [np.dot(want[:want.size - k], got[k:]) for k in range(lags.size)]
    best = lags[int(np.argmax(corr))]
    assert 1.2 <= best <= 1.8, f"response lag {best:.2f} s"


# -- GPS ---------------------------------------------------------------------------

def test_gps_exact_when_noise_free():
    model = GpsModel(pos_error_std=0.0, vel_error_std=0.0)
    gps = GpsSensor(2, model, np.random.default_rng(0))
    pos = np.array([[1.0, 2.0], [3.0, 4.0]])
    velo = np.array([[0.1, 0.0], [0.0, -0.2]])
    gps.fix(pos, velo, 0.0)
    assert_allclose(gps.sensed_pos, pos)
    assert_allclose(gps.sensed_vel, velo)


def test_gps_position_error_stationary_std():
    model = GpsModel(rate=5.0, pos_error_std=1.0, pos_error_corr_time=30.0,
                     vel_error_std=0.0)
    gps = GpsSensor(2000, model, np.random.default_rng(1))
    pos = np.zeros((2000, 2))
    velo = np.zeros((2000, 2))
    pool = [gps.pos_err.copy()]
    for k in range(60):
        gps.fix(pos, velo, 0.2 * k)
        pool.append(gps.pos_err.copy())
    samples = np.concatenate(pool).ravel()
    assert abs(samples.std() - 1.0) < 0.1


def test_gps_position_error_correlation_across_fixes():
    model = GpsModel(rate=5.0, pos_error_std=1.0, pos_error_corr_time=30.0,
                     vel_error_std=0.0)
    gps = GpsSensor(4000, model, np.random.default_rng(2))
    pos = np.zeros((4000, 2))
    velo = np.zeros((4000, 2))
    prev = gps.pos_err.copy()
    num = den = 0.0
    for k in range(50):
        gps.fix(pos, velo, 0.2 * k)
        num += float((prev * gps.pos_err).sum())
        den += float((prev * prev).sum())
        prev = gps.pos_err.copy()
    # Consecutive fixes 0.2 s apart with a 30 s correlation time.
    assert_allclose(num / den, math.exp(-0.2 / 30.0), atol=5e-3)


def test_gps_velocity_error_white():
    model = GpsModel(pos_error_std=0.0, vel_error_std=0.2)
    gps = GpsSensor(5000, model, np.random.default_rng(3))
    velo = np.zeros((5000, 2))
    gps.fix(np.zeros((5000, 2)), velo, 0.0)
    err1 = gps.sensed_vel.copy()
    gps.fix(np.zeros((5000, 2)), velo, 0.2)
    err2 = gps.sensed_vel.copy()
    assert abs(err1.std() - 0.2) < 0.02
    corr = float((err1 * err2).sum() / np.sqrt((err1 ** 2).sum()
                                               * (err2 ** 2).sum()))
    assert abs(corr) < 0.05
