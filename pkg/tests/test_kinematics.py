import numpy as np
import pytest

from basepar.dynamics import sample_states
from basepar.kinematics import (KinematicsError, forward, numeric_model, orthogonal_complement, residual,
                                solve_position, solve_state, solve_velocity_acceleration, jacobian)
from basepar.precision import PrecisionLevel, norm_inf

DP = PrecisionLevel.native()


def test_fourbar_parallelogram_follower_tracks_crank(fourbar):
    q = solve_position(fourbar, [0.3], level=DP)
    nm = numeric_model(fourbar, DP)
    follower = fourbar.coords.index("0-3")
    assert q[follower] == pytest.approx(0.3, abs=1e-12)
    assert norm_inf(residual(nm, q)) < 1e-12


def test_fourbar_coupler_translates(fourbar):
    st = solve_state(fourbar, [0.3], [1.2], [0.4], level=DP)
    kin = forward(numeric_model(fourbar, DP), st.q, st.qd, st.qdd)
    assert np.abs(kin.bodies[2].w).max() < 1e-12
    assert np.abs(kin.bodies[2].alpha).max() < 1e-10


def test_complement_annihilated_by_jacobian(sla):
    m = sla.mechanism
    q = solve_position(m, [0.2, 0.1], level=DP)
    J = jacobian(numeric_model(m, DP), q)
    R = orthogonal_complement(m, q, DP)
    assert np.abs(J @ R).max() < 1e-12


def test_velocities_match_finite_differences(sla):
    m = sla.mechanism
    q0 = solve_position(m, [0.2, 0.1], level=DP)
    qd, _ = solve_velocity_acceleration(m, q0, [0.7, -0.3], [0, 0], DP)
    h = 1e-6
    qp = solve_position(m, [0.2 + 0.7 * h, 0.1 - 0.3 * h], guess=q0, level=DP)
    qm = solve_position(m, [0.2 - 0.7 * h, 0.1 + 0.3 * h], guess=q0, level=DP)
    assert np.abs((qp - qm) / (2 * h) - qd).max() < 1e-6


def test_accelerations_match_finite_differences(fourbar):
    # along q(t) = sin t the dependent accelerations follow from differentiating velocities
    t, h = 0.4, 1e-5

    def qd_at(tt):
        st = solve_state(fourbar, [np.sin(tt)], [np.cos(tt)], [-np.sin(tt)], level=DP)
        return st.qd, st.qdd

    _, qdd = qd_at(t)
    fd = (qd_at(t + h)[0] - qd_at(t - h)[0]) / (2 * h)
    assert np.abs(fd - qdd).max() < 1e-6


def test_sla_trajectory_closes_at_30_digits(sla):
    lvl = PrecisionLevel(30)
    nm = numeric_model(sla.mechanism, lvl)
    _, states = sample_states(sla.mechanism, sla.trajectory.replace(samples=10), lvl)
    worst = max(float(norm_inf(residual(nm, s.q))) for s in states)
    assert worst < 1e-25


def test_unreachable_configuration_raises(sla):
    with pytest.raises(KinematicsError):
        solve_position(sla.mechanism, [2.5, 0.0], level=DP)
