
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from basepar.dynamics import (SampleFailure, TrajectoryConfig, assemble_observation, inverse_dynamics,
                              lagrangian, regressor_row)
from basepar.kinematics import State, solve_state
from basepar.model import param_index
from basepar.precision import PrecisionLevel

from oracles import G, lagrange_residual, pendulum_torque

DP = PrecisionLevel.native()
@pytest.mark.parametrize("q, qd, qdd", [(0.0, 0.0, 1.0), (0.7, -1.3, 0.4), (-2.1, 3.0, -0.9)])
def test_pendulum_closed_form(pendulum, rng, q, qd, qdd):
    phi = rng.standard_normal(10)
    tau = inverse_dynamics(pendulum, State(np.array([q]), np.array([qd]), np.array([qdd]), DP), phi)
    assert tau[0] == pytest.approx(pendulum_torque(phi, q, qdd), abs=1e-12)


@pytest.mark.parametrize("q, qd", [(0.0, 1.0), (0.9, -2.0), (2.5, 0.3)])
def test_pendulum_lagrangian_closed_form(pendulum, rng, q, qd):
    phi = rng.standard_normal(10)
    mx, mz, Iyy = phi[1], phi[3], phi[7]
    # the body x axis tips down as q grows about +y
    expected = 0.5 * Iyy * qd**2 - G * (mz * np.cos(q) - mx * np.sin(q))
    L = lagrangian(pendulum, State(np.array([q]), np.array([qd]), np.array([0.0]), DP), phi)
    assert float(L) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.integers(0, 2**31))
def test_regressor_linearity(q1, q2, qd, alpha, seed):
    from basepar.model import load_mechanism
    from basepar.sla import FIXTURES
    mech = load_mechanism(FIXTURES / "twolink")
    r = np.random.default_rng(seed)
    state = State(np.array([q1, q2]), np.array([qd, -qd]), r.standard_normal(2), DP)
    a, b = r.standard_normal(20), r.standard_normal(20)
    K = regressor_row(mech, state)
    lhs = K @ (alpha * a + b)
    rhs = alpha * inverse_dynamics(mech, state, a) + inverse_dynamics(mech, state, b)
    assert np.allclose(lhs, rhs, atol=1e-10 * (1 + np.abs(rhs).max()))


def test_regressor_matches_inverse_dynamics_on_closed_loop(sla, rng):
    st8 = solve_state(sla.mechanism, [0.2, 0.3], [0.5, 1.0], [-0.2, 0.7], level=DP)
    phi = rng.standard_normal(70)
    assert np.allclose(regressor_row(sla.mechanism, st8) @ phi, inverse_dynamics(sla.mechanism, st8, phi),
                       rtol=1e-11, atol=1e-11)


@pytest.mark.parametrize("name", ["pendulum", "twolink"])
def test_lagrange_equations(name, request, rng):
    mech = request.getfixturevalue(name)
    traj = TrajectoryConfig(tuple((("0.6", str(1 + c)), ("0.3", "sqrt(3)")) for c in range(mech.dof)))
    phi = rng.uniform(0.2, 1.0, mech.n_params)
    for t in (0.3, 1.7):
        fd, tau = lagrange_residual(mech, traj, t, phi)
        assert np.abs(fd - tau).max() <= 1e-6 * max(1.0, np.abs(tau).max())


def test_sample_times_are_uniform():
    traj = TrajectoryConfig(((("1", "1"),),), period="4", samples=8)
    assert [float(t) for t in traj.times(DP)] == [0.5 * k for k in range(8)]


def test_observation_shape_and_underdetermined_flag(pendulum):
    traj = TrajectoryConfig(((("0.5", "1"),),), samples=1)
    obs = assemble_observation(pendulum, traj)
    assert obs.W.shape == (1, 10)
    assert obs.meta["underdetermined"]


def test_sla_observation_shape(sla_dp):
    assert sla_dp.W.shape == (200, 70)
    assert not sla_dp.meta["underdetermined"]


def test_doubling_samples_over_doubled_period_keeps_rows(pendulum):
    traj = TrajectoryConfig(((("0.5", "1"), ("0.2", "3")),), period="2*pi", samples=10)
    a = assemble_observation(pendulum, traj).W
    b = assemble_observation(pendulum, traj.replace(samples=20, period="4*pi")).W
    # same sample times, one period further: the rows repeat
    assert np.allclose(np.vstack([a, a]), b)


def test_sample_failure_reports_index(sla):
    # the lower arm cannot swing 2.5 rad: the upper arm runs out of reach
    traj = TrajectoryConfig(((("2.5", "1"),), (("0.1", "1"),)), samples=12)
    with pytest.raises(SampleFailure) as info:
        assemble_observation(sla.mechanism, traj)
    assert 0 < info.value.index < 12


def test_no_effect_columns_vanish_at_double_precision(sla, sla_dp):
    W = sla_dp.W
    scale = np.abs(W).max()
    for i in sla.no_effect:
        assert np.abs(W[:, i]).max() <= 1e-12 * scale
    assert np.abs(W[:, param_index(1, "Iyy")]).max() > 1e-3 * scale
