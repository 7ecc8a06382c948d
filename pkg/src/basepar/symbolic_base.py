"""Closed-form base parameters by elimination and multipole transfer.

Every inertial parameter of every body is tracked as a linear form over the
original parameters, with coefficients that are exact rational functions of
the geometry symbols.  A plan of eliminations and transfers rewrites these
forms; the forms that survive are the base parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import sympy
from sympy.polys.fields import FracElement

from .model import Mechanism, PARAM_NAMES, param_index, param_label, parse_param_label
from .precision import ExprError, PrecisionLevel, eval_expr, expr_symbols, walk_expr

TENSOR = (("Ixx", 0, 0), ("Ixy", 0, 1), ("Ixz", 0, 2), ("Iyy", 1, 1), ("Iyz", 1, 2), ("Izz", 2, 2))
FIRST = ("mx", "my", "mz")

# which conditions each joint kind admits, by step kind
TRANSFER_RULES = {
    "S": {"monopole": {1}},
    "U": {"monopole": {1}},
    "R": {"monopole": {1}, "dipole": {2}, "quadrupole": {5}},
    "P": {"dipole": {3}, "quadrupole": {6}},
}
ELIMINATION_CONDITIONS = {1, 2, 5}


class SymbolicError(ValueError):
    pass


class RuleViolation(SymbolicError):
    pass


class Unsolvable(SymbolicError):
    pass


class PlanError(SymbolicError):
    """A plan step failed; carries the step index."""

    def __init__(self, index, cause):
        super().__init__(f"step {index}: {cause}")
        self.index = index
        self.cause = cause


# -- rational expressions ------------------------------------------------------------

class RatField:
    """Rational functions over QQ in a fixed set of geometry symbols."""

    def __init__(self, names):
        self.names = tuple(sorted(set(names)))
        # sympy needs at least one generator
        self.K, *gens = sympy.field(",".join(self.names) or "_g", sympy.QQ)
        self.gens = dict(zip(self.names, gens)) if self.names else {}

    @property
    def zero(self):
        return self.K.zero

    @property
    def one(self):
        return self.K.one

    def const(self, value) -> FracElement:
        return self.K(sympy.Rational(str(value)))

    def parse(self, text) -> FracElement:
        """Parse a rational geometry expression (no transcendental functions)."""

        def symbol(name):
            if name not in self.gens:
                raise ExprError(f"symbol {name!r} is not a rational geometry symbol")
            return self.gens[name]

        return walk_expr(text, self.const, symbol, funcs={})


def evaluate_ratexpr(expr: FracElement, values: dict, level: PrecisionLevel):
    """Numerical value of a rational function, given symbol values at ``level``."""
    names = [str(g) for g in expr.field.symbols]

    def poly(p):
        total = level.scalar(0)
        for monom, coeff in p.terms():
            term = level.scalar(Fraction(int(coeff.numerator), int(coeff.denominator)))
            for name, e in zip(names, monom):
                if e:
                    term = term * values[name] ** e
            total = total + term
        return total

    with level.context():
        den = poly(expr.denom)
        if den == 0:
            raise ZeroDivisionError("denominator vanishes at the given geometry")
        return poly(expr.numer) / den


def render(expr: FracElement) -> str:
    return sympy.sstr(expr.as_expr())


# -- linear forms ----------------------------------------------------------------------

class LinearForm(dict):
    """Flat parameter index -> nonzero rational coefficient."""

    def add(self, other: "LinearForm", scale=None) -> "LinearForm":
        out = LinearForm(self)
        for k, c in other.items():
            v = out.get(k, 0) + (c if scale is None else c * scale)
            if v == 0:
                out.pop(k, None)
            else:
                out[k] = v
        return out

    def scale(self, c) -> "LinearForm":
        if c == 0:
            return LinearForm()
        return LinearForm({k: v * c for k, v in self.items()})

    def render(self) -> str:
        parts = []
        for k in sorted(self):
            c = self[k]
            if c == 1:
                parts.append(f"+ {param_label(k)}")
            elif c == -1:
                parts.append(f"- {param_label(k)}")
            else:
                parts.append(f"+ ({render(c)})*{param_label(k)}")
        text = " ".join(parts) or "0"
        return text[2:] if text.startswith("+ ") else text


@dataclass
class SymbolicInertia:
    """Forms for one body's ten parameters."""

    body: int
    forms: dict

    @classmethod
    def unit(cls, body: int, F: RatField) -> "SymbolicInertia":
        return cls(body, {n: LinearForm({param_index(body, n): F.one}) for n in PARAM_NAMES})


# -- plan steps ----------------------------------------------------------------------------

STEP_KINDS = ("eliminate", "monopole", "dipole", "quadrupole")


@dataclass(frozen=True)
class PlanStep:
    kind: str
    condition: int
    body: int | None = None          # eliminate
    joint: str | None = None         # transfers
    donor: int | None = None
    acceptor: int | None = None
    targets: tuple = ()              # parameter labels to annihilate

    @classmethod
    def from_dict(cls, d: dict) -> "PlanStep":
        kind = d["kind"]
        if kind not in STEP_KINDS:
            raise SymbolicError(f"unknown step kind {kind!r}")
        targets = d.get("targets", [d["target"]] if "target" in d else [])
        return cls(kind, int(d["condition"]), d.get("body"), d.get("joint"), d.get("donor"),
                   d.get("acceptor"), tuple(targets))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "condition": self.condition}
        if self.kind == "eliminate":
            out["body"] = self.body
        else:
            out.update(joint=self.joint, donor=self.donor, acceptor=self.acceptor, targets=list(self.targets))
        return out


def load_plan(path) -> list[PlanStep]:
    doc = json.loads(Path(path).read_text())
    steps = doc["steps"] if isinstance(doc, dict) else doc
    return [PlanStep.from_dict(s) for s in steps]


# -- geometry helpers ------------------------------------------------------------------------

def _axis_rot(axis, quarter_turns):
    """Exact integer rotation by a multiple of pi/2 about a coordinate axis."""
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][quarter_turns % 4]
    i = "xyz".index(axis)
    j, k = (i + 1) % 3, (i + 2) % 3
    R = [[0] * 3 for _ in range(3)]
    R[i][i] = 1
    R[j][j], R[j][k], R[k][j], R[k][k] = c, -s, s, c
    return R


def _matmul(A, B):
    return [[sum(A[i][k] * B[k][j] for k in range(3)) for j in range(3)] for i in range(3)]


def joint_rotation(mech: Mechanism, joint, F: RatField):
    """Child-to-parent rotation at zero joint coordinates, exactly.

    Only rotations whose entries are rational (explicit matrices, or sequences
    of quarter turns) are representable.
    """
    if joint.rotation is None:
        return [[F.const(int(i == j)) for j in range(3)] for i in range(3)]
    kind, data = joint.rotation
    if kind == "matrix":
        return [[F.parse(data[3 * i + j]) for j in range(3)] for i in range(3)]
    R = [[int(i == j) for j in range(3)] for i in range(3)]
    for axis, angle in data:
        a = float(eval_expr(angle, mech.geometry, PrecisionLevel.native()))
        turns = a / (math.pi / 2)
        if abs(turns - round(turns)) > 1e-12:
            raise RuleViolation(f"joint {joint.id}: rotation by {angle} is not a quarter turn")
        R = _matmul(R, _axis_rot(axis, round(turns)))
    return [[F.const(x) for x in row] for row in R]


def _is_zero_point(point) -> bool:
    return all(str(c).strip() in ("0", "0.0") for c in point)


# -- engine ------------------------------------------------------------------------------------

@dataclass
class SymbolicSolution:
    field: RatField
    state: dict
    struck: set
    annihilated: list
    log: list = field(default_factory=list)
    n_bodies: int = 0

    def forms(self) -> dict:
        """Surviving base-parameter forms keyed by the flat index of their own parameter."""
        out = {}
        for b, inertia in self.state.items():
            for name, form in inertia.forms.items():
                k = param_index(b, name)
                if k in self.struck or k in self.annihilated:
                    continue
                out[k] = form
        return dict(sorted(out.items()))

    def table(self) -> list[tuple[str, str]]:
        return [(param_label(k), f.render()) for k, f in self.forms().items()]

    def to_dict(self) -> dict:
        return {
            "count": len(self.forms()),
            "struck": [param_label(k) for k in sorted(self.struck)],
            "annihilated": [param_label(k) for k in self.annihilated],
            "forms": [{"parameter": param_label(k),
                       "terms": {param_label(j): render(c) for j, c in sorted(f.items())}}
                      for k, f in self.forms().items()],
            "log": self.log,
        }


class PlanState:
    """Mutable symbolic state while a plan is applied."""

    def __init__(self, mech: Mechanism, steps):
        self.mech = mech
        names = set()
        for s in steps:
            if s.kind == "eliminate":
                continue
            j = mech.joint(s.joint)
            # the ground side of a joint never enters the forms
            sides = (() if j.parent == 0 else j.parent_point) + (() if j.child == 0 else j.child_point)
            for e in (*sides, *(a for ax in j.axes for a in ax)):
                names |= expr_symbols(e)
            if j.rotation and j.rotation[0] == "matrix":
                for e in j.rotation[1]:
                    names |= expr_symbols(e)
        names.discard("pi")
        self.F = RatField(names)
        self.state = {b.id: SymbolicInertia.unit(b.id, self.F) for b in mech.bodies if b.id != 0}
        self.struck: set = set()
        self.annihilated: list = []
        self.log: list = []

    # elimination ------------------------------------------------------------
    def tree_joint(self, body):
        for j in self.mech.tree:
            if j.child == body:
                return j
        raise RuleViolation(f"body {body} has no tree joint")

    def eliminate(self, step: PlanStep):
        b = step.body
        if b not in self.state:
            raise RuleViolation(f"no moving body {b}")
        if step.condition not in ELIMINATION_CONDITIONS:
            raise RuleViolation(f"elimination condition {step.condition} is outside the rule table")
        j = self.tree_joint(b)
        if j.parent != 0:
            raise RuleViolation(f"body {b} is not connected to ground")
        if step.condition == 1:
            if j.kind == "P" or not _is_zero_point(j.child_point):
                raise RuleViolation(f"body {b}: origin is not a ground-fixed point")
            names = ["m"]
        else:
            if j.kind != "R":
                raise RuleViolation(f"body {b}: condition {step.condition} needs a ground revolute joint")
            axis = [self.F.parse(a) for a in j.axes[0]]
            nz = [i for i, a in enumerate(axis) if a != 0]
            if len(nz) != 1 or axis[nz[0]] not in (1, -1):
                raise RuleViolation(f"body {b}: joint axis is not aligned with a body axis")
            k = nz[0]
            if step.condition == 2:
                names = [FIRST[k]]
            else:
                keep = ("Ixx", "Iyy", "Izz")[k]
                names = [n for n, _, _ in TENSOR if n != keep]
        struck = [param_index(b, n) for n in names]
        self.struck.update(struck)
        self.log.append({"step": "eliminate", "body": b, "condition": step.condition,
                         "struck": [param_label(i) for i in struck]})

    # transfers ----------------------------------------------------------------
    def _frames(self, step: PlanStep):
        j = self.mech.joint(step.joint)
        if {step.donor, step.acceptor} != {j.parent, j.child}:
            raise RuleViolation(f"joint {j.id} does not connect bodies {step.donor} and {step.acceptor}")
        allowed = TRANSFER_RULES[j.kind].get(step.kind, set())
        if step.condition not in allowed:
            raise RuleViolation(f"{step.kind} transfer by condition {step.condition} is not admissible on a {j.kind} joint")
        if step.donor == 0:
            raise RuleViolation("ground cannot donate")
        F = self.F
        pp = None if j.parent == 0 else [F.parse(e) for e in j.parent_point]
        cp = None if j.child == 0 else [F.parse(e) for e in j.child_point]
        R = joint_rotation(self.mech, j, F) if step.kind != "monopole" else None
        axis = [F.parse(e) for e in j.effective_axes()[0]] if j.axes or j.kind == "S" else None
        if step.donor == j.child:
            rd, ra = cp, pp
            to_acc = (lambda v: [sum(R[i][k] * v[k] for k in range(3)) for i in range(3)]) if R else None
        else:
            rd, ra = pp, cp
            to_acc = (lambda v: [sum(R[k][i] * v[k] for k in range(3)) for i in range(3)]) if R else None
        # axis directions are stated in the child frame
        if axis is not None and R is not None and step.donor == j.parent:
            axis = [sum(R[i][k] * axis[k] for k in range(3)) for i in range(3)]
        return j, rd, ra, to_acc, R, axis

    def _deltas(self, step, rd, ra, to_acc, R, axis, target):
        """Per-unit-amount change of every (body, parameter): {(b, name): coeff}."""
        F = self.F
        out = {}

        def put(b, name, c):
            if c != 0:
                out[(b, name)] = out.get((b, name), F.zero) + c

        def mono(b, r, sign):
            put(b, "m", F.one * sign)
            for i, n in enumerate(FIRST):
                put(b, n, r[i] * sign)
            rr = sum(x * x for x in r)
            for n, i, k in TENSOR:
                put(b, n, ((rr if i == k else 0) - r[i] * r[k]) * sign)

        def dip(b, r, u, sign):
            for i, n in enumerate(FIRST):
                put(b, n, u[i] * sign)
            ru = sum(x * y for x, y in zip(r, u))
            for n, i, k in TENSOR:
                put(b, n, ((2 * ru if i == k else 0) - r[i] * u[k] - u[i] * r[k]) * sign)

        def tensor(b, T, sign):
            for n, i, k in TENSOR:
                put(b, n, T[i][k] * sign)

        ground = step.acceptor == 0
        if step.kind == "monopole":
            mono(step.donor, rd, -1)
            if not ground:
                mono(step.acceptor, ra, 1)
        elif step.kind == "dipole":
            u = axis
            dip(step.donor, rd, u, -1)
            if not ground:
                dip(step.acceptor, ra, to_acc(u), 1)
        elif step.condition == 5:
            u = axis
            T = [[(1 if i == k else 0) - u[i] * u[k] for k in range(3)] for i in range(3)]
            tensor(step.donor, T, -1)
            if not ground:
                ua = to_acc(u)
                tensor(step.acceptor, [[(1 if i == k else 0) - ua[i] * ua[k] for k in range(3)] for i in range(3)], 1)
        else:
            # condition 6: move exactly the target tensor entry, rotated into the acceptor
            name = target[0]
            _, i0, k0 = next(t for t in TENSOR if t[0] == name)
            E = [[F.zero] * 3 for _ in range(3)]
            E[i0][k0] = F.one
            E[k0][i0] = F.one
            tensor(step.donor, E, -1)
            if ground:
                pass
            elif step.donor == self.mech.joint(step.joint).child:
                Ea = [[sum(R[i][a] * E[a][c] * R[k][c] for a in range(3) for c in range(3)) for k in range(3)] for i in range(3)]
            else:
                Ea = [[sum(R[a][i] * E[a][c] * R[c][k] for a in range(3) for c in range(3)) for k in range(3)] for i in range(3)]
            tensor(step.acceptor, Ea, 1)
        return out

    def transfer(self, step: PlanStep):
        j, rd, ra, to_acc, R, axis = self._frames(step)
        if step.kind in ("dipole", "quadrupole") and step.condition != 6:
            if axis is None:
                raise RuleViolation(f"joint {j.id} has no axis for a {step.kind} transfer")
        if not step.targets:
            raise SymbolicError("transfer without a zero-target")
        if step.condition != 6 and len(step.targets) != 1:
            raise SymbolicError("only full-tensor transfers may name several zero-targets")
        for label in step.targets:
            idx = parse_param_label(label)
            b, name = idx // 10 + 1, PARAM_NAMES[idx % 10]
            if b not in (step.donor, step.acceptor):
                raise RuleViolation(f"zero-target {label} is not on the donor or acceptor")
            if step.condition == 6 and name not in dict((t[0], 0) for t in TENSOR):
                raise RuleViolation(f"full-tensor transfer cannot target {label}")
            deltas = self._deltas(step, rd, ra, to_acc, R, axis, (name,))
            resp = deltas.get((b, name), self.F.zero)
            if resp == 0:
                raise Unsolvable(f"{label} does not respond to this transfer")
            amount = self.state[b].forms[name].scale(-1 / resp)
            for (bb, nn), c in deltas.items():
                if bb == 0:
                    continue
                self.state[bb].forms[nn] = self.state[bb].forms[nn].add(amount, c)
            if self.state[b].forms[name]:
                raise Unsolvable(f"{label} was not annihilated")
            self.annihilated.append(idx)
            self.log.append({"step": step.kind, "joint": step.joint, "condition": step.condition,
                             "donor": step.donor, "acceptor": step.acceptor, "target": label,
                             "amount": amount.render()})


def run_plan(mech: Mechanism, plan) -> SymbolicSolution:
    steps = [s if isinstance(s, PlanStep) else PlanStep.from_dict(s) for s in plan]
    eng = PlanState(mech, steps)
    for i, s in enumerate(steps):
        try:
            eng.eliminate(s) if s.kind == "eliminate" else eng.transfer(s)
        except (SymbolicError, ExprError, KeyError) as exc:
            raise PlanError(i, exc) from exc
    return solution_of(eng)


def _apply(state: PlanState, step: PlanStep, kind: str):
    if step.kind != kind:
        raise SymbolicError(f"expected a {kind} step, got {step.kind}")
    state.eliminate(step) if kind == "eliminate" else state.transfer(step)
    return state


def eliminate(state: PlanState, step: PlanStep) -> PlanState:
    return _apply(state, step, "eliminate")


def transfer_monopole(state: PlanState, step: PlanStep) -> PlanState:
    return _apply(state, step, "monopole")


def transfer_dipole(state: PlanState, step: PlanStep) -> PlanState:
    return _apply(state, step, "dipole")


def transfer_quadrupole(state: PlanState, step: PlanStep) -> PlanState:
    return _apply(state, step, "quadrupole")


def solution_of(state: PlanState) -> SymbolicSolution:
    return SymbolicSolution(state.F, state.state, state.struck, state.annihilated, state.log,
                            state.mech.n_bodies)


# -- evaluation ---------------------------------------------------------------------------------

@dataclass
class SymbolicBeta:
    phi1: list
    phi2: list
    beta: np.ndarray
    level: PrecisionLevel


def evaluate_solution(sol: SymbolicSolution, geom, level: PrecisionLevel = PrecisionLevel()) -> SymbolicBeta:
    """Numeric (phi1, phi2, beta) from the symbolic forms at the given geometry."""
    forms = sol.forms()
    phi1 = list(forms)
    n = 10 * sol.n_bodies
    phi2 = [k for k in range(n) if k not in forms]
    col = {k: c for c, k in enumerate(phi2)}
    values = {name: eval_expr(name, geom, level) for name in sol.field.names}
    beta = level.zeros((len(phi1), len(phi2)))
    for r, k in enumerate(phi1):
        form = forms[k]
        if form.get(k) != 1:
            raise SymbolicError(f"form of {param_label(k)} does not carry its own parameter with coefficient 1")
        for j, c in form.items():
            if j == k:
                continue
            if j not in col:
                raise SymbolicError(f"form of {param_label(k)} mixes in base parameter {param_label(j)}")
            beta[r, col[j]] = evaluate_ratexpr(c, values, level)
    return SymbolicBeta(phi1, phi2, beta, level)


def transformed_parameters(sol: SymbolicSolution, geom, phi, level: PrecisionLevel = PrecisionLevel()):
    """Post-plan parameter vector: each slot holds its form's value, struck or annihilated slots zero."""
    values = {name: eval_expr(name, geom, level) for name in sol.field.names}
    forms = sol.forms()
    with level.context():
        phi = level.convert(phi)
        out = level.zeros(len(phi))
        for k, form in forms.items():
            total = level.scalar(0)
            for j, c in form.items():
                total = total + evaluate_ratexpr(c, values, level) * phi[j]
            out[k] = total
        return out


# -- kinetics preservation ------------------------------------------------------------------------

def invariance_report(mech: Mechanism, sol: SymbolicSolution, states, phis,
                      level: PrecisionLevel = PrecisionLevel()) -> dict:
    """Compare dynamics under original and plan-transformed parameters.

    Returns the worst relative torque difference and, per parameter vector,
    the spread of ``L(phi) - L(phi')`` over the states.  Transfers to ground
    shift the Lagrangian by a constant, so only the spread must vanish.
    """
    from .dynamics import inverse_dynamics, lagrangian

    worst_tau, worst_dl = 0.0, 0.0
    with level.context():
        for phi in phis:
            phi = level.convert(phi)
            phi2 = transformed_parameters(sol, mech.geometry, phi, level)
            dls = []
            for st in states:
                t1 = inverse_dynamics(mech, st, phi, level)
                t2 = inverse_dynamics(mech, st, phi2, level)
                scale = max(float(abs(x)) for x in t1) or 1.0
                worst_tau = max(worst_tau, max(float(abs(a - b)) for a, b in zip(t1, t2)) / scale)
                L1 = lagrangian(mech, st, phi, level)
                dls.append((L1 - lagrangian(mech, st, phi2, level), abs(L1)))
            ref = dls[0][0]
            scale = max(float(s) for _, s in dls) or 1.0
            worst_dl = max(worst_dl, max(float(abs(d - ref)) for d, _ in dls) / scale)
    return {"max_rel_torque_diff": worst_tau, "max_rel_lagrangian_spread": worst_dl,
            "states": len(states), "parameter_sets": len(phis), "level": str(level)}
