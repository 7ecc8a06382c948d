"""Independent reference computations shared by the test modules."""
import math

import numpy as np

from basepar.dynamics import inverse_dynamics, lagrangian, trajectory_eval
from basepar.kinematics import State
from basepar.precision import PrecisionLevel

DP = PrecisionLevel.native()
G = 9.81


def pendulum_torque(phi, q, qdd):
    mx, mz, Iyy = phi[1], phi[3], phi[7]
    return Iyy * qdd - G * (mx * math.cos(q) + mz * math.sin(q))


def lagrange_residual(mech, traj, t, phi, h=1e-4):
    """d/dt dL/dqd - dL/dq by central differences along an open-chain trajectory."""
    n = mech.dof

    def state(tt, dq=None, dqd=None):
        q, qd, qdd = trajectory_eval(traj, tt, DP)
        if dq is not None:
            q = q + dq
        if dqd is not None:
            qd = qd + dqd
        return State(q, qd, qdd, DP)

    def L(s):
        return lagrangian(mech, s, phi)

    def p(tt):
        out = np.zeros(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out[i] = (L(state(tt, dqd=e)) - L(state(tt, dqd=-e))) / (2 * h)
        return out

    dpdt = (p(t + h) - p(t - h)) / (2 * h)
    dLdq = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        dLdq[i] = (L(state(t, dq=e)) - L(state(t, dq=-e))) / (2 * h)
    return dpdt - dLdq, inverse_dynamics(mech, state(t), phi)
