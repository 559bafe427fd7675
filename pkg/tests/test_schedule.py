import numpy as np
import pytest

from samglab.schedule import (DiffusionSchedule, FlowGrid, ScheduleError, flow_coefficient,
                              linear_beta_schedule, tweedie_coefficient)


def test_one_step():
    np.testing.assert_allclose(linear_beta_schedule(1, 0.1, 0.1).alpha_bar, [1.0, 0.9])


def test_two_steps():
    np.testing.assert_allclose(linear_beta_schedule(2, 0.1, 0.1).alpha_bar, [1.0, 0.9, 0.81])


def test_standard_schedule_monotone():
    ab = linear_beta_schedule(1000, 1e-4, 0.02).alpha_bar
    assert ab[0] == 1 and np.all(np.diff(ab) < 0) and np.all(ab > 0)


@pytest.mark.parametrize("args", [(10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0), (0, 0.1, 0.2)])
def test_invalid(args):
    with pytest.raises(ScheduleError):
        linear_beta_schedule(*args)


def test_rejects_non_monotone():
    with pytest.raises(ScheduleError):
        DiffusionSchedule([1.0, 0.5, 0.6])
    with pytest.raises(ScheduleError):
        DiffusionSchedule([0.9, 0.5])


def test_tweedie_examples():
    assert tweedie_coefficient(DiffusionSchedule([1.0, 0.5]), 1, 4) == pytest.approx(4.0)
    assert tweedie_coefficient(DiffusionSchedule([1.0, 0.25]), 1, 1) == pytest.approx(3.0)
    assert tweedie_coefficient(DiffusionSchedule([1.0, 1 - 1e-12]), 1, 1) < 1e-11


def test_tweedie_range():
    s = linear_beta_schedule(5)
    with pytest.raises(ScheduleError):
        tweedie_coefficient(s, 0, 1)
    with pytest.raises(ScheduleError):
        tweedie_coefficient(s, 6, 1)


def test_tweedie_increasing():
    s = linear_beta_schedule(200, 1e-4, 0.05)
    c = [tweedie_coefficient(s, t, 3) for t in range(1, 201)]
    assert np.all(np.diff(c) > 0)


def test_flow_coefficient():
    assert flow_coefficient(0.1, 1) == pytest.approx(0.01)
    assert flow_coefficient(1.0, 3) == 3
    assert flow_coefficient(1e-9, 1) < 1e-17
    with pytest.raises(ScheduleError):
        flow_coefficient(0.0, 1)


def test_flow_grid():
    g = FlowGrid(4)
    np.testing.assert_allclose(g.times, [1.0, 0.75, 0.5, 0.25, 0.0])
    assert g.dt == 0.25
    with pytest.raises(ScheduleError):
        FlowGrid(0)


def test_timesteps_uniform():
    s = linear_beta_schedule(1000)
    ts = s.timesteps(50)
    assert ts[0] == 1000 and ts[-1] == 0 and len(ts) == 51
    assert np.all(np.diff(ts) == -20)
    assert np.all(np.diff(linear_beta_schedule(7).timesteps(3)) < 0)
