import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turboadmm.model import (AgentModel, InfeasibleScenarioError, ParameterError, Scenario,
                             agent_positions, circle_scenario, double_integrator, load_scenario,
                             problem_dimensions, reference_positions, save_scenario,
                             scenario_from_dict, scenario_to_dict, straight_line_reference)


def test_double_integrator_2d():
    A, B = double_integrator(1.0, 2)
    np.testing.assert_array_equal(A, [[1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
    np.testing.assert_array_equal(B, [[0.5, 0], [0, 0.5], [1, 0], [0, 1]])


def test_double_integrator_1d_half_step():
    A, B = double_integrator(0.5, 1)
    np.testing.assert_array_equal(A, [[1, 0.5], [0, 1]])
    np.testing.assert_array_equal(B, [[0.125], [0.5]])


@pytest.mark.parametrize("dt", [0.0, -1.0, math.inf, math.nan])
def test_double_integrator_rejects_bad_dt(dt):
    with pytest.raises(ParameterError):
        double_integrator(dt, 2)


def test_double_integrator_rejects_bad_dimension():
    with pytest.raises(ParameterError):
        double_integrator(1.0, 4)


@given(dt=st.floats(0.01, 5.0), d_p=st.integers(1, 3),
       seed=st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_position_advances_by_dt_times_velocity(dt, d_p, seed):
    A, _ = double_integrator(dt, d_p)
    x = np.random.default_rng(seed).standard_normal(2 * d_p)
    # exact in floating point: identity block plus dt * velocity
    np.testing.assert_array_equal((A @ x)[:d_p], x[:d_p] + dt * x[d_p:])


def test_straight_line_examples():
    ref = straight_line_reference([0, 0], [10, 0], 10, 1.0)
    np.testing.assert_allclose(ref[:, :2], np.c_[np.arange(11), np.zeros(11)])
    np.testing.assert_allclose(ref[:, 2:], np.tile([1.0, 0.0], (11, 1)))
    still = straight_line_reference([3, 4], [3, 4], 5, 1.0)
    np.testing.assert_allclose(still[:, :2], np.tile([3, 4], (6, 1)))
    np.testing.assert_allclose(still[:, 2:], 0.0)
    cross = straight_line_reference([-8, 0], [8, 0], 20, 1.0)
    np.testing.assert_allclose(cross[0, 2:], [0.8, 0.0])


def test_circle_two_agents():
    s = circle_scenario(2, radius=8)
    np.testing.assert_allclose(s.agents[0].x_init[:2], [8, 0])
    np.testing.assert_allclose(s.agents[1].x_init[:2], [-8, 0])
    np.testing.assert_allclose(s.agents[0].x_ref[-1, :2], [-8, 0])
    np.testing.assert_allclose(s.agents[1].x_ref[-1, :2], [8, 0])
    ref = reference_positions(s)
    assert np.linalg.norm(ref[0, 10] - ref[1, 10]) == 0.0  # cross at the origin
    assert np.all(s.agents[0].x_init[2:] == 0)


def test_circle_four_agents_angles():
    s = circle_scenario(4)
    starts = np.array([a.x_init[:2] for a in s.agents])
    np.testing.assert_allclose(starts, [[8, 0], [0, 8], [-8, 0], [0, -8]], atol=1e-12)


def test_circle_bounds_and_weights():
    s = circle_scenario(3, radius=8, T=20, dt=1.0, weights={"Q": 2.0})
    a = s.agents[0]
    np.testing.assert_allclose(a.x_ub, [16, 16, 0.8, 0.8])
    np.testing.assert_allclose(a.u_ub, [10, 10])
    np.testing.assert_allclose(np.diag(a.Q), [2, 2, 0, 0])


@pytest.mark.parametrize("N", [2, 3, 5, 8])
def test_references_cross_central_disc(N):
    s = circle_scenario(N)
    ref = reference_positions(s)
    assert np.all(np.linalg.norm(ref, axis=-1).min(axis=1) < s.d_safe)


def test_circle_preconditions():
    with pytest.raises(ParameterError):
        circle_scenario(1)
    with pytest.raises(InfeasibleScenarioError):
        circle_scenario(2, radius=2.0, d_safe=2.0)


@pytest.mark.parametrize("N, dims", [(2, (248, 160, 20)), (14, (1736, 1120, 1820))])
def test_problem_dimensions_examples(N, dims):
    assert tuple(problem_dimensions(circle_scenario(N))) == dims


def test_problem_dimensions_single_agent():
    s = circle_scenario(2)
    one = Scenario(agents=s.agents[:1], T=s.T, dt=s.dt, d_safe=s.d_safe)
    assert tuple(problem_dimensions(one)) == (124, 80, 0)


def test_agent_validation():
    s = circle_scenario(2)
    a = s.agents[0]
    fields = dict(A=a.A, B=a.B, Q=a.Q, R=a.R, Q_T=a.Q_T, C=a.C, x_init=a.x_init,
                  x_ref=a.x_ref, x_lb=a.x_lb, x_ub=a.x_ub, u_lb=a.u_lb, u_ub=a.u_ub)
    with pytest.raises(ParameterError, match="R"):
        AgentModel(**{**fields, "R": np.zeros((2, 2))})
    with pytest.raises(ParameterError, match="symmetric"):
        AgentModel(**{**fields, "Q": np.triu(np.ones((4, 4)))})
    with pytest.raises(ParameterError):
        AgentModel(**{**fields, "x_init": np.array([100.0, 0, 0, 0])})
    with pytest.raises(ParameterError):
        AgentModel(**{**fields, "u_lb": np.array([20.0, 0])})
    assert a.A.flags.writeable is False


def test_scenario_validation():
    s = circle_scenario(2)
    with pytest.raises(ParameterError):
        Scenario(agents=s.agents, T=19, dt=1.0, d_safe=2.0)
    with pytest.raises(ParameterError):
        Scenario(agents=(), T=20, dt=1.0, d_safe=2.0)
    with pytest.raises(ParameterError):
        Scenario(agents=s.agents, T=20, dt=1.0, d_safe=0.0)


def test_scenario_round_trip(tmp_path):
    s = circle_scenario(3, weights={"R": 0.5})
    path = tmp_path / "s.json"
    save_scenario(s, path, meta={"note": "x"})
    back = load_scenario(path)
    assert (back.N, back.T, back.dt, back.d_safe) == (s.N, s.T, s.dt, s.d_safe)
    for a, b in zip(s.agents, back.agents):
        for name in ("A", "B", "Q", "R", "Q_T", "C", "x_init", "x_ref", "x_lb", "x_ub",
                     "u_lb", "u_ub"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_infinite_bounds_survive_json():
    s = circle_scenario(2)
    doc = scenario_to_dict(s)
    doc["agents"][0]["bounds"]["u_ub"] = [None, None]
    back = scenario_from_dict(doc)
    assert np.all(np.isposinf(back.agents[0].u_ub))


def test_unknown_schema_rejected():
    doc = scenario_to_dict(circle_scenario(2))
    doc["schema"] = "turboadmm.scenario/2"
    with pytest.raises(ParameterError):
        scenario_from_dict(doc)


def test_agent_positions_selects_c():
    s = circle_scenario(2)
    pos = agent_positions(s, [a.x_ref for a in s.agents])
    np.testing.assert_array_equal(pos, reference_positions(s))
