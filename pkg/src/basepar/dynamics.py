"""Inverse dynamics, Lagrangian, regressor rows and the observation matrix.

Bodies carry non-centroidal parameters: mass, first moments ``m*r_G`` and the
inertia tensor about the body reference point, all in the body frame.
Tree forces come from a Newton-Euler evaluation of every body's inertial
wrench; closed loops are handled by projecting with the orthogonal
complement of the constraint Jacobian.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (KinematicsError, State, cross, dot, forward, numeric_model,
                         orthogonal_complement, solve_position, solve_velocity_acceleration)
from .model import Mechanism
from .precision import PrecisionLevel, eval_expr


class SampleFailure(KinematicsError):
    def __init__(self, index, cause):
        super().__init__(f"kinematics failed at sample {index}: {cause}")
        self.index = index
        self.cause = cause


# -- excitation trajectory -------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryConfig:
    """Finite Fourier series per independent coordinate.

    ``harmonics[c]`` is a list of ``(amplitude, angular frequency)`` expression
    pairs giving ``q_c(t) = sum a sin(w t)``.  Samples are taken at
    ``t_k = k * period / samples`` for ``k = 0 .. samples-1``.
    """

    harmonics: tuple
    period: str = "2*pi"
    samples: int = 100

    def to_dict(self) -> dict:
        return {"harmonics": [[list(h) for h in c] for c in self.harmonics],
                "period": self.period, "samples": self.samples}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrajectoryConfig":
        return cls(tuple(tuple((str(a), str(w)) for a, w in c) for c in doc["harmonics"]),
                   str(doc.get("period", "2*pi")), int(doc.get("samples", 100)))

    def replace(self, **kw) -> "TrajectoryConfig":
        doc = {"harmonics": self.harmonics, "period": self.period, "samples": self.samples}
        doc.update(kw)
        return TrajectoryConfig(**doc)

    def times(self, level: PrecisionLevel):
        with level.context():
            T = eval_expr(self.period, {}, level)
            return [T * k / self.samples for k in range(self.samples)]


def trajectory_eval(config: TrajectoryConfig, t, level: PrecisionLevel = PrecisionLevel()):
    """Positions, rates and accelerations of the independent coordinates at time ``t``."""
    with level.context():
        t = level.scalar(t) if not isinstance(t, (str,)) else eval_expr(t, {}, level)
        q, qd, qdd = [], [], []
        for series in config.harmonics:
            x = v = a = level.scalar(0)
            for amp, freq in series:
                A = eval_expr(amp, {}, level)
                w = eval_expr(freq, {}, level)
                s, c = level.sin(w * t), level.cos(w * t)
                x = x + A * s
                v = v + A * w * c
                a = a - A * w * w * s
            q.append(x)
            qd.append(v)
            qdd.append(a)
        return level.array(q), level.array(qd), level.array(qdd)


# -- per-body inertial wrench ------------------------------------------------------

def inertia_tensor(phi10, level):
    _, _, _, _, Ixx, Ixy, Ixz, Iyy, Iyz, Izz = phi10
    return np.array([[Ixx, Ixy, Ixz], [Ixy, Iyy, Iyz], [Ixz, Iyz, Izz]], dtype=level.dtype)


def body_wrench(bk, phi10, g, level):
    """Force and moment (about the world origin) needed to move one body, gravity included."""
    m = phi10[0]
    d = bk.R @ np.array(phi10[1:4], dtype=level.dtype)
    Iw = bk.R @ inertia_tensor(phi10, level) @ bk.R.T
    acc = bk.a - g
    F = m * acc + cross(bk.alpha, d) + cross(bk.w, cross(bk.w, d))
    M = Iw @ bk.alpha + cross(bk.w, Iw @ bk.w) + cross(d, acc)
    return F, M + cross(bk.p, F)


def _project_wrench(nm, kin, body, F, M, Q):
    for i in nm.body_coords[body]:
        kind, u, o = kin.prims[i]
        Q[i] = Q[i] + (dot(u, F) if kind == "P" else dot(u, M - cross(o, F)))


def tree_forces(mech: Mechanism, state: State, phi, level: PrecisionLevel):
    """Generalized forces on every tree coordinate (open-tree inverse dynamics)."""
    nm = numeric_model(mech, level)
    with level.context():
        phi = level.convert(phi)
        kin = forward(nm, state.q, state.qd, state.qdd)
        Q = level.zeros(nm.n_coords)
        for b in range(1, mech.n_bodies + 1):
            F, M = body_wrench(kin.bodies[b], phi[10 * (b - 1):10 * b], nm.gravity, level)
            _project_wrench(nm, kin, b, F, M, Q)
        return Q


def inverse_dynamics(mech: Mechanism, state: State, phi, level: PrecisionLevel = PrecisionLevel()):
    """Generalized forces on the independent coordinates, linear in ``phi``."""
    with level.context():
        Q = tree_forces(mech, state, phi, level)
        R = orthogonal_complement(mech, state.q, level)
        return R.T @ Q


def regressor_row(mech: Mechanism, state: State, level: PrecisionLevel = PrecisionLevel()):
    """dof x 10n block K with K @ phi == inverse_dynamics(phi); built from unit loads."""
    nm = numeric_model(mech, level)
    with level.context():
        kin = forward(nm, state.q, state.qd, state.qdd)
        n = mech.n_params
        Qcols = level.zeros((nm.n_coords, n))
        zero, one = level.scalar(0), level.scalar(1)
        for b in range(1, mech.n_bodies + 1):
            for k in range(10):
                unit = [zero] * 10
                unit[k] = one
                F, M = body_wrench(kin.bodies[b], unit, nm.gravity, level)
                col = level.zeros(nm.n_coords)
                _project_wrench(nm, kin, b, F, M, col)
                Qcols[:, 10 * (b - 1) + k] = col
        R = orthogonal_complement(mech, state.q, level)
        return R.T @ Qcols


def lagrangian(mech: Mechanism, state: State, phi, level: PrecisionLevel = PrecisionLevel()):
    """Inertial part of the Lagrangian T - V (gravity potential included)."""
    nm = numeric_model(mech, level)
    with level.context():
        phi = level.convert(phi)
        kin = forward(nm, state.q, state.qd)
        g = nm.gravity
        L = level.scalar(0)
        half = level.scalar("0.5")
        for b in range(1, mech.n_bodies + 1):
            bk = kin.bodies[b]
            p10 = phi[10 * (b - 1):10 * b]
            m = p10[0]
            d = bk.R @ p10[1:4]
            Iw = bk.R @ inertia_tensor(p10, level) @ bk.R.T
            L = (L + half * m * dot(bk.v, bk.v) + dot(bk.v, cross(bk.w, d))
                 + half * dot(bk.w, Iw @ bk.w) + dot(g, bk.p * m + d))
        return L


# -- observation matrix ---------------------------------------------------------------

@dataclass
class ObservationMatrix:
    W: np.ndarray
    states: list
    times: list
    level: PrecisionLevel
    trajectory: TrajectoryConfig | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.W.shape

    def states_digest(self) -> str:
        h = hashlib.sha256()
        for s in self.states:
            for arr in (s.q, s.qd, s.qdd):
                h.update(",".join(self.level.fmt(x) for x in arr).encode())
        return h.hexdigest()


MAX_SUBDIVISION = 6
# largest change of an independent coordinate per Newton solve during continuation
MAX_STEP = 0.05


def _track(mech, qi_from, q_from, qi_to, level, depth=0):
    """Position at ``qi_to`` by continuation from a solved configuration.

    When Newton fails from ``q_from`` the step in independent coordinates is
    halved recursively, so large sample spacings stay on the same branch.
    """
    try:
        return solve_position(mech, qi_to, q_from, level)
    except KinematicsError:
        if q_from is None or depth >= MAX_SUBDIVISION:
            raise
    mid = (qi_from + qi_to) / 2
    q_mid = _track(mech, qi_from, q_from, mid, level, depth + 1)
    return _track(mech, mid, q_mid, qi_to, level, depth + 1)


def sample_states(mech: Mechanism, trajectory: TrajectoryConfig, level: PrecisionLevel):
    """Constraint-consistent states along the trajectory, by sequential continuation."""
    times = trajectory.times(level)
    states = []
    q_prev = qi_prev = None
    with level.context():
        for k, t in enumerate(times):
            qi, qdi, qddi = trajectory_eval(trajectory, t, level)
            try:
                q = q_prev
                if q_prev is None:
                    q = _track(mech, None, None, qi, level)
                else:
                    n = max(1, math.ceil(max(float(abs(x)) for x in qi - qi_prev) / MAX_STEP))
                    for j in range(1, n + 1):
                        target = qi_prev + (qi - qi_prev) * j / n
                        start = qi_prev + (qi - qi_prev) * (j - 1) / n
                        q = _track(mech, start, q, target, level)
                qd, qdd = solve_velocity_acceleration(mech, q, qdi, qddi, level)
            except KinematicsError as exc:
                raise SampleFailure(k, exc) from exc
            states.append(State(q, qd, qdd, level))
            q_prev, qi_prev = q, qi
    return times, states


def assemble_observation(mech: Mechanism, trajectory: TrajectoryConfig,
                         level: PrecisionLevel = PrecisionLevel()) -> ObservationMatrix:
    """Stack regressor rows over all trajectory samples (sample order)."""
    need = -(-mech.n_params // mech.dof)
    if trajectory.samples < 1:
        raise ValueError("trajectory needs at least one sample")
    with level.context():
        times, states = sample_states(mech, trajectory, level)
        rows = [regressor_row(mech, s, level) for s in states]
        W = np.vstack(rows) if rows else level.zeros((0, mech.n_params))
    meta = {"underdetermined": trajectory.samples < need}
    return ObservationMatrix(W, states, times, level, trajectory, meta)


def random_states(mech: Mechanism, trajectory: TrajectoryConfig, count: int, rng,
                  level: PrecisionLevel = PrecisionLevel()) -> list:
    """Valid states with positions drawn from the trajectory and random rates.

    Positions are taken at random sample times (so loop closure is known to
    converge); independent velocities and accelerations are standard normal.
    """
    _, states = sample_states(mech, trajectory, level)
    picks = rng.choice(len(states), size=min(count, len(states)), replace=False)
    out = []
    with level.context():
        for k in sorted(int(i) for i in picks):
            q = states[k].q
            qd_i = level.array(rng.standard_normal(mech.dof))
            qdd_i = level.array(rng.standard_normal(mech.dof))
            qd, qdd = solve_velocity_acceleration(mech, q, qd_i, qdd_i, level)
            out.append(State(q, qd, qdd, level))
    return out
