"""Tree kinematics and loop closure by coordinate partitioning.

Each tree joint is expanded into 1-dof primitives (S = three revolutes
about the child frame axes, U = two revolutes) so forward kinematics,
constraint Jacobians and the Newton-Euler sweep only ever see revolute and
prismatic primitives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .model import Mechanism
from .precision import PrecisionLevel, eval_expr, norm_inf


class KinematicsError(RuntimeError):
    pass


class NonConvergence(KinematicsError):
    pass


class SingularJacobian(KinematicsError):
    pass


MAX_NEWTON = 200


# -- small vector helpers (object or float arrays) ----------------------------------

def cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]], dtype=a.dtype)


def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def skew(a, level):
    z = level.scalar(0)
    return np.array([[z, -a[2], a[1]], [a[2], z, -a[0]], [-a[1], a[0], z]], dtype=level.dtype)


def axis_rotation(axis, angle, level):
    """Rodrigues rotation about a unit ``axis``."""
    s, c = level.sin(angle), level.cos(angle)
    K = skew(axis, level)
    return level.eye(3) + s * K + (1 - c) * (K @ K)


_UNIT = {"x": ("1", "0", "0"), "y": ("0", "1", "0"), "z": ("0", "0", "1")}


@dataclass
class NumericJoint:
    joint: object
    parent_point: np.ndarray
    child_point: np.ndarray
    axes: list
    R0: np.ndarray
    guess: list
    coord_slice: slice


class NumericModel:
    """Joint data of a mechanism evaluated once at a precision level."""

    def __init__(self, mech: Mechanism, level: PrecisionLevel):
        self.mech = mech
        self.level = level
        geom = mech.geometry
        ev = lambda e: eval_expr(e, geom, level)  # noqa: E731
        with level.context():
            self.gravity = level.array([ev(g) for g in mech.gravity])
            self.joints = {}
            offset = 0
            tree_ids = set(mech.tree_joints)
            for j in mech.tree + mech.loop_joints:
                R0 = level.eye(3)
                if j.rotation is not None:
                    if j.rotation[0] == "matrix":
                        R0 = level.array([ev(e) for e in j.rotation[1]]).reshape(3, 3)
                    else:
                        for ax, ang in j.rotation[1]:
                            a = level.array([ev(e) for e in _UNIT[ax.lower()]])
                            R0 = R0 @ axis_rotation(a, ev(ang), level)
                n = j.ndof if j.id in tree_ids else 0
                guess = [ev(g) for g in j.guess] if j.guess else [level.scalar(0)] * j.ndof
                self.joints[j.id] = NumericJoint(
                    joint=j,
                    parent_point=level.array([ev(e) for e in j.parent_point]),
                    child_point=level.array([ev(e) for e in j.child_point]),
                    axes=[level.array([ev(e) for e in a]) for a in j.effective_axes()],
                    R0=R0,
                    guess=guess,
                    coord_slice=slice(offset, offset + n),
                )
                offset += n
        self.n_coords = offset
        self.tree = [self.joints[j.id] for j in mech.tree]
        self.loops = [self.joints[j.id] for j in mech.loop_joints]
        self.ind = mech.independent_indices
        self.dep = mech.dependent_indices
        # coordinates influencing each body
        self.body_coords = {0: []}
        for nj in self.tree:
            j = nj.joint
            self.body_coords[j.child] = self.body_coords[j.parent] + list(range(self.n_coords)[nj.coord_slice])

    def initial_guess(self):
        q = self.level.zeros(self.n_coords)
        for nj in self.tree:
            q[nj.coord_slice] = nj.guess
        return q


_MODEL_CACHE: dict = {}


def numeric_model(mech: Mechanism, level: PrecisionLevel) -> NumericModel:
    key = (id(mech), level)
    hit = _MODEL_CACHE.get(key)
    if hit is None or hit[0] is not mech:
        hit = (mech, NumericModel(mech, level))
        _MODEL_CACHE[key] = hit
    return hit[1]


@dataclass
class BodyKinematics:
    """World-frame kinematics of one body's reference point and frame."""

    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    w: np.ndarray
    a: np.ndarray
    alpha: np.ndarray


@dataclass
class TreeKinematics:
    bodies: dict
    # per coordinate: (kind, world axis, world point or None)
    prims: list


def forward(nm: NumericModel, q, qd=None, qdd=None) -> TreeKinematics:
    """Positions, velocities and accelerations of every body (world frame)."""
    level = nm.level
    with level.context():
        zero3 = level.zeros(3)
        qd = level.zeros(nm.n_coords) if qd is None else qd
        qdd = level.zeros(nm.n_coords) if qdd is None else qdd
        bodies = {0: BodyKinematics(zero3, level.eye(3), zero3, zero3, zero3, zero3)}
        prims = [None] * nm.n_coords
        for nj in nm.tree:
            j = nj.joint
            P = bodies[j.parent]
            rp = P.R @ nj.parent_point
            o = P.p + rp
            v_o = P.v + cross(P.w, rp)
            a_o = P.a + cross(P.alpha, rp) + cross(P.w, cross(P.w, rp))
            RJ = P.R @ nj.R0
            w, alpha = P.w, P.alpha
            idx = range(nm.n_coords)[nj.coord_slice]
            if j.kind == "P":
                i = idx[0]
                u = RJ @ nj.axes[0]
                d = u * q[i]
                prims[i] = ("P", u, None)
                vu = u * qd[i]
                o = o + d
                v_o = v_o + cross(P.w, d) + vu
                a_o = a_o + cross(P.alpha, d) + cross(P.w, cross(P.w, d)) + 2 * cross(P.w, vu) + u * qdd[i]
            else:
                for k, i in enumerate(idx):
                    u = RJ @ nj.axes[k]
                    prims[i] = ("R", u, o)
                    alpha = alpha + u * qdd[i] + cross(w, u * qd[i])
                    w = w + u * qd[i]
                    RJ = RJ @ axis_rotation(nj.axes[k], q[i], level)
            r = -(RJ @ nj.child_point)
            bodies[j.child] = BodyKinematics(
                p=o + r, R=RJ, v=v_o + cross(w, r), w=w,
                a=a_o + cross(alpha, r) + cross(w, cross(w, r)), alpha=alpha)
        return TreeKinematics(bodies, prims)


# -- loop closure -------------------------------------------------------------------

def _perp_pair(axis, level):
    """Two vectors spanning the plane orthogonal to a unit axis."""
    ref = level.array([1, 0, 0]) if abs(axis[0]) < 0.9 else level.array([0, 1, 0])
    n1 = cross(axis, ref)
    n1 = n1 / level.sqrt(dot(n1, n1))
    return n1, cross(axis, n1)


def _closure_terms(nm: NumericModel, kin: TreeKinematics):
    """Residual pieces: list of (kind, data) per loop equation group."""
    level = nm.level
    terms = []
    for nj in nm.loops:
        j = nj.joint
        A, B = kin.bodies[j.parent], kin.bodies[j.child]
        rA, rB = A.R @ nj.parent_point, B.R @ nj.child_point
        terms.append(("point", j.parent, j.child, rA, rB))
        if j.kind == "R":
            uA = A.R @ (nj.R0 @ nj.axes[0])
            n1, n2 = _perp_pair(nj.axes[0], level)
            terms.append(("axis", j.parent, j.child, uA, B.R @ n1))
            terms.append(("axis", j.parent, j.child, uA, B.R @ n2))
        elif j.kind == "U":
            terms.append(("axis", j.parent, j.child, A.R @ (nj.R0 @ nj.axes[0]), B.R @ nj.axes[1]))
    return terms


def residual(nm: NumericModel, q):
    """Loop-closure residual vector Phi(q)."""
    level = nm.level
    with level.context():
        kin = forward(nm, q)
        out = []
        for kind, a, b, x, y in _closure_terms(nm, kin):
            if kind == "point":
                out.extend(kin.bodies[a].p + x - kin.bodies[b].p - y)
            else:
                out.append(dot(x, y))
        return level.array(out) if out else level.zeros(0)


def _dpoint(kin, body, X, i):
    """d(world point X fixed on body)/dq_i."""
    kind, u, o = kin.prims[i]
    return u if kind == "P" else cross(u, X - o)


def jacobian(nm: NumericModel, q, kin=None):
    """Constraint Jacobian dPhi/dq (n_eq x n_coords)."""
    level = nm.level
    with level.context():
        kin = kin or forward(nm, q)
        rows = []
        for kind, a, b, x, y in _closure_terms(nm, kin):
            if kind == "point":
                XA, XB = kin.bodies[a].p + x, kin.bodies[b].p + y
                block = level.zeros((3, nm.n_coords))
                for i in nm.body_coords[a]:
                    block[:, i] = block[:, i] + _dpoint(kin, a, XA, i)
                for i in nm.body_coords[b]:
                    block[:, i] = block[:, i] - _dpoint(kin, b, XB, i)
                rows.extend(block)
            else:
                row = level.zeros(nm.n_coords)
                for i in nm.body_coords[a]:
                    if kin.prims[i][0] == "R":
                        row[i] = row[i] + dot(cross(kin.prims[i][1], x), y)
                for i in nm.body_coords[b]:
                    if kin.prims[i][0] == "R":
                        row[i] = row[i] + dot(x, cross(kin.prims[i][1], y))
                rows.append(row)
        if not rows:
            return level.zeros((0, nm.n_coords))
        return np.array(rows, dtype=level.dtype).reshape(len(rows), nm.n_coords)


def _bias(nm: NumericModel, q, qd):
    """Jdot*qd: second time derivative of Phi at zero acceleration."""
    level = nm.level
    kin = forward(nm, q, qd, None)
    out = []
    for kind, a, b, x, y in _closure_terms(nm, kin):
        A, B = kin.bodies[a], kin.bodies[b]
        if kind == "point":
            accA = A.a + cross(A.alpha, x) + cross(A.w, cross(A.w, x))
            accB = B.a + cross(B.alpha, y) + cross(B.w, cross(B.w, y))
            out.extend(accA - accB)
        else:
            xd, yd = cross(A.w, x), cross(B.w, y)
            xdd = cross(A.alpha, x) + cross(A.w, xd)
            ydd = cross(B.alpha, y) + cross(B.w, yd)
            out.append(dot(xdd, y) + 2 * dot(xd, yd) + dot(x, ydd))
    return level.array(out) if out else level.zeros(0)


def _newton_tol(level):
    return 1e-10 if level.is_native else level.tol(5)


def _check_conditioning(Jd, level):
    limit = 1e12 if level.is_native else level.scalar(f"1e{level.digits - 4}")
    c = linalg.cond1(Jd, level)
    if not c < limit:
        raise SingularJacobian(f"dependent-coordinate Jacobian condition {float(c):.3e} exceeds {float(limit):.1e}")


def solve_position(mech: Mechanism, q_ind, guess=None, level: PrecisionLevel = PrecisionLevel()):
    """Newton-Raphson on the dependent coordinates; independent ones are held fixed."""
    nm = numeric_model(mech, level)
    with level.context():
        q = level.convert(nm.initial_guess() if guess is None else guess).copy()
        q[nm.ind] = level.convert(q_ind)
        if not nm.loops:
            return q
        tol = _newton_tol(level)
        polished = False
        for _ in range(MAX_NEWTON):
            phi = residual(nm, q)
            err = norm_inf(phi)
            if err <= tol:
                if polished:
                    return q
                polished = True
            J = jacobian(nm, q)
            Jd = J[:, nm.dep]
            try:
                step = linalg.solve(Jd, phi, level)
            except linalg.SingularMatrixError as exc:
                raise SingularJacobian(str(exc)) from exc
            q[nm.dep] = q[nm.dep] - step
            if polished:
                if norm_inf(residual(nm, q)) > err:
                    q[nm.dep] = q[nm.dep] + step
                _check_conditioning(Jd, level)
                return q
        raise NonConvergence(f"loop closure not converged after {MAX_NEWTON} iterations (|Phi|={float(err):.3e})")


def orthogonal_complement(mech: Mechanism, q, level: PrecisionLevel = PrecisionLevel()):
    """Matrix R (n_coords x dof) with J R = 0 and identity rows on the independent coordinates."""
    nm = numeric_model(mech, level)
    with level.context():
        n, dof = nm.n_coords, len(nm.ind)
        Rm = level.zeros((n, dof))
        for k, i in enumerate(nm.ind):
            Rm[i, k] = level.scalar(1)
        if not nm.loops:
            return Rm
        J = jacobian(nm, q)
        try:
            Rm[nm.dep, :] = -linalg.solve(J[:, nm.dep], J[:, nm.ind], level)
        except linalg.SingularMatrixError as exc:
            raise SingularJacobian(str(exc)) from exc
        return Rm


def solve_velocity_acceleration(mech: Mechanism, q, qd_ind, qdd_ind, level: PrecisionLevel = PrecisionLevel()):
    """Full velocities and accelerations consistent with the differentiated constraints."""
    nm = numeric_model(mech, level)
    with level.context():
        qd = level.zeros(nm.n_coords)
        qdd = level.zeros(nm.n_coords)
        qd[nm.ind] = level.convert(qd_ind)
        qdd[nm.ind] = level.convert(qdd_ind)
        if not nm.loops:
            return qd, qdd
        J = jacobian(nm, q)
        Jd, Ji = J[:, nm.dep], J[:, nm.ind]
        try:
            fac = (Jd,) if level.is_native else linalg.lu_factor(Jd, level)
            sol = (lambda b: linalg.solve(Jd, b, level)) if level.is_native else (lambda b: linalg.lu_solve(fac, b, level))
            qd[nm.dep] = -sol(Ji @ qd[nm.ind])
            bias = _bias(nm, q, qd)
            qdd[nm.dep] = -sol(Ji @ qdd[nm.ind] + bias)
        except linalg.SingularMatrixError as exc:
            raise SingularJacobian(str(exc)) from exc
        return qd, qdd


@dataclass
class State:
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    level: PrecisionLevel


def solve_state(mech: Mechanism, q_ind, qd_ind, qdd_ind, guess=None, level: PrecisionLevel = PrecisionLevel()) -> State:
    q = solve_position(mech, q_ind, guess, level)
    qd, qdd = solve_velocity_acceleration(mech, q, qd_ind, qdd_ind, level)
    return State(q, qd, qdd, level)
