"""Mechanism description, inertial parameter layout and model-file I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .precision import ExprError, PrecisionLevel, eval_expr, expr_symbols

PARAM_NAMES = ("m", "mx", "my", "mz", "Ixx", "Ixy", "Ixz", "Iyy", "Iyz", "Izz")
JOINT_DOF = {"R": 1, "P": 1, "S": 3, "U": 2}
# loop-closure equations contributed by a closing joint
LOOP_EQUATIONS = {"S": 3, "U": 4, "R": 5}
DEFAULT_GRAVITY = ("0", "0", "-9.81")


class ModelError(ValueError):
    """Malformed or inconsistent mechanism description."""


def param_index(body: int, name: str, n_bodies: int | None = None) -> int:
    """Flat index of parameter ``name`` of ``body`` (bodies numbered from 1)."""
    if name not in PARAM_NAMES:
        raise KeyError(f"unknown inertial parameter {name!r}")
    if body < 1 or (n_bodies is not None and body > n_bodies):
        raise IndexError(f"body {body} out of range")
    return 10 * (body - 1) + PARAM_NAMES.index(name)


def param_label(index: int) -> str:
    """Inverse of :func:`param_index`, e.g. ``41 -> 'mx5'``."""
    body, k = divmod(index, 10)
    return f"{PARAM_NAMES[k]}{body + 1}"


def parse_param_label(label: str) -> int:
    """``'Iyy4' -> param_index(4, 'Iyy')``."""
    for name in sorted(PARAM_NAMES, key=len, reverse=True):
        if label.startswith(name) and label[len(name):].isdigit():
            return param_index(int(label[len(name):]), name)
    raise KeyError(f"cannot parse parameter label {label!r}")


@dataclass(frozen=True)
class GeomParams:
    """Geometry table: symbol -> decimal text (or expression), ``None`` if symbolic only."""

    entries: dict = field(default_factory=dict)

    def merged(self, overrides) -> "GeomParams":
        if overrides is None:
            return self
        extra = overrides.entries if isinstance(overrides, GeomParams) else overrides
        out = dict(self.entries)
        out.update({k: _as_text(v) for k, v in extra.items()})
        return GeomParams(out)

    def value(self, name: str, level: PrecisionLevel | None = None):
        return eval_expr(name, self, level or PrecisionLevel.native())

    def __contains__(self, name):
        return name in self.entries


@dataclass(frozen=True)
class Body:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Joint:
    """A joint between two bodies.

    ``parent_point``/``child_point`` locate the joint centre in the parent
    and child frames.  ``rotation`` is the child-frame orientation relative to
    the parent frame at zero joint coordinates, either a 3x3 matrix of
    expressions or a list of ``[axis, angle]`` elementary rotations.  Axes are
    expressed in the child frame.
    """

    id: str
    kind: str
    parent: int
    child: int
    parent_point: tuple = ("0", "0", "0")
    child_point: tuple = ("0", "0", "0")
    axes: tuple = ()
    rotation: tuple | None = None
    guess: tuple = ()

    @property
    def ndof(self) -> int:
        return JOINT_DOF[self.kind]

    @property
    def coord_names(self) -> list[str]:
        if self.ndof == 1:
            return [self.id]
        return [f"{self.id}[{k}]" for k in range(self.ndof)]

    def effective_axes(self) -> tuple:
        if self.kind == "S" and not self.axes:
            return (("1", "0", "0"), ("0", "1", "0"), ("0", "0", "1"))
        return self.axes


@dataclass(frozen=True)
class Mechanism:
    name: str
    bodies: tuple
    joints: tuple
    tree_joints: tuple
    independent_coords: tuple
    geometry: GeomParams
    gravity: tuple = DEFAULT_GRAVITY

    # -- structure --------------------------------------------------------------
    @property
    def n_bodies(self) -> int:
        """Number of moving bodies (ground excluded)."""
        return len(self.bodies) - 1

    @property
    def n_params(self) -> int:
        return 10 * self.n_bodies

    def joint(self, jid: str) -> Joint:
        for j in self.joints:
            if j.id == jid:
                return j
        raise KeyError(f"no joint {jid!r}")

    @property
    def tree(self) -> list:
        """Tree joints ordered root-first (every parent placed before its children)."""
        by_child = {self.joint(j).child: self.joint(j) for j in self.tree_joints}
        order, placed = [], {0}
        while len(order) < len(by_child):
            progressed = False
            for child, j in sorted(by_child.items()):
                if child not in placed and j.parent in placed:
                    order.append(j)
                    placed.add(child)
                    progressed = True
            if not progressed:
                raise ModelError("tree joints do not reach every body from ground")
        return order

    @property
    def loop_joints(self) -> list:
        return [j for j in self.joints if j.id not in self.tree_joints]

    @property
    def coords(self) -> list[str]:
        return [c for j in self.tree for c in j.coord_names]

    @property
    def n_loop_equations(self) -> int:
        return sum(LOOP_EQUATIONS[j.kind] for j in self.loop_joints)

    @property
    def dof(self) -> int:
        return len(self.coords) - self.n_loop_equations

    @property
    def independent_indices(self) -> list[int]:
        coords = self.coords
        return [coords.index(c) for c in self.independent_coords]

    @property
    def dependent_indices(self) -> list[int]:
        ind = set(self.independent_indices)
        return [i for i in range(len(self.coords)) if i not in ind]

    def ancestors(self, body: int) -> list:
        """Tree joints on the path from ground to ``body`` (root first)."""
        by_child = {self.joint(j).child: self.joint(j) for j in self.tree_joints}
        path = []
        while body != 0:
            j = by_child[body]
            path.append(j)
            body = j.parent
        return path[::-1]

    def with_geometry(self, overrides) -> "Mechanism":
        return Mechanism(self.name, self.bodies, self.joints, self.tree_joints,
                         self.independent_coords, self.geometry.merged(overrides), self.gravity)

    def symbols(self) -> set[str]:
        """Every geometry symbol referenced by joint data."""
        names = set()
        for j in self.joints:
            for e in (*j.parent_point, *j.child_point, *[c for a in j.axes for c in a]):
                names |= expr_symbols(e)
        return names - {"pi"}


# -- validation ------------------------------------------------------------------

def validate(mech: Mechanism) -> Mechanism:
    ids = [b.id for b in mech.bodies]
    if len(set(ids)) != len(ids):
        raise ModelError("duplicate body id")
    if sorted(ids) != list(range(len(ids))):
        raise ModelError("bodies must be numbered 0..n with 0 the ground")
    jids = [j.id for j in mech.joints]
    if len(set(jids)) != len(jids):
        raise ModelError("duplicate joint id")
    for j in mech.joints:
        if j.kind not in JOINT_DOF:
            raise ModelError(f"joint {j.id}: unknown kind {j.kind!r}")
        if j.parent not in ids or j.child not in ids:
            raise ModelError(f"joint {j.id}: dangling body reference")
        if j.parent == j.child:
            raise ModelError(f"joint {j.id}: parent equals child")
        need_axes = {"R": 1, "P": 1, "U": 2, "S": 0}[j.kind]
        if j.kind != "S" and len(j.axes) != need_axes:
            raise ModelError(f"joint {j.id}: {j.kind} joint needs {need_axes} axis vector(s)")
    for t in mech.tree_joints:
        if t not in jids:
            raise ModelError(f"tree joint {t!r} not defined")
    children = [mech.joint(t).child for t in mech.tree_joints]
    if len(set(children)) != len(children) or 0 in children or sorted(children) != ids[1:]:
        raise ModelError("tree joints must give every moving body exactly one parent")
    mech.tree  # raises on cycles / unreachable bodies
    for j in mech.loop_joints:
        if j.kind not in LOOP_EQUATIONS:
            raise ModelError(f"loop-closing joint {j.id}: kind {j.kind} not supported (use S, U or R)")
    coords = mech.coords
    for c in mech.independent_coords:
        if c not in coords:
            raise ModelError(f"independent coordinate {c!r} is not a tree coordinate")
    if mech.dof != len(mech.independent_coords):
        raise ModelError(f"model has {mech.dof} dof but {len(mech.independent_coords)} independent coordinates")
    _check_numeric(mech)
    return mech


def _check_numeric(mech: Mechanism):
    level = PrecisionLevel.native()
    geom = mech.geometry
    for name, val in geom.entries.items():
        if val is None:
            continue
        try:
            x = eval_expr(name, geom, level)
        except ExprError as exc:
            raise ModelError(f"geometry {name}: {exc}") from exc
        if not math.isfinite(x):
            raise ModelError(f"geometry {name} is not finite")
    if not all(v is not None for v in geom.entries.values()):
        return  # purely symbolic entries: numeric checks deferred to evaluation
    for j in mech.joints:
        for axis in j.effective_axes():
            vec = [eval_expr(e, geom, level) for e in axis]
            if abs(math.sqrt(sum(v * v for v in vec)) - 1.0) > 1e-9:
                raise ModelError(f"joint {j.id}: axis {axis} is not a unit vector")
        if j.rotation is not None and j.rotation[0] == "matrix":
            m = [eval_expr(e, geom, level) for e in j.rotation[1]]
            rows = [m[0:3], m[3:6], m[6:9]]
            for a in range(3):
                for b in range(3):
                    dot = sum(rows[k][a] * rows[k][b] for k in range(3))
                    if abs(dot - (1.0 if a == b else 0.0)) > 1e-9:
                        raise ModelError(f"joint {j.id}: rotation is not orthonormal")


# -- file I/O ------------------------------------------------------------------

def _as_text(v):
    if v is None:
        return None
    if isinstance(v, (Decimal, int)):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _vec(v, n=3):
    if len(v) != n:
        raise ModelError(f"expected {n} components, got {v!r}")
    return tuple(_as_text(x) for x in v)


def _rotation(spec):
    if spec is None:
        return None
    if isinstance(spec, dict):
        if "matrix" in spec:
            rows = spec["matrix"]
            return ("matrix", tuple(_as_text(x) for row in rows for x in _vec(row)))
        if "sequence" in spec:
            return ("sequence", tuple((str(ax), _as_text(ang)) for ax, ang in spec["sequence"]))
    if isinstance(spec, list) and len(spec) == 3 and all(isinstance(r, list) and len(r) == 3 for r in spec):
        return ("matrix", tuple(_as_text(x) for row in spec for x in row))
    raise ModelError(f"cannot interpret rotation {spec!r}")


def mechanism_from_dict(doc: dict, overrides=None) -> Mechanism:
    try:
        bodies = tuple(Body(int(b["id"]), str(b.get("name", ""))) for b in doc["bodies"])
        joints = []
        for jd in doc["joints"]:
            joints.append(Joint(
                id=str(jd["id"]),
                kind=str(jd["kind"]).upper(),
                parent=int(jd["parent"]),
                child=int(jd["child"]),
                parent_point=_vec(jd.get("parent_point", [0, 0, 0])),
                child_point=_vec(jd.get("child_point", [0, 0, 0])),
                axes=tuple(_vec(a) for a in jd.get("axes", [])),
                rotation=_rotation(jd.get("rotation")),
                guess=tuple(_as_text(g) for g in jd.get("guess", [])),
            ))
        geometry = GeomParams({k: _as_text(v) for k, v in doc.get("geometry", {}).items()})
        mech = Mechanism(
            name=str(doc.get("name", "mechanism")),
            bodies=bodies,
            joints=tuple(joints),
            tree_joints=tuple(str(t) for t in doc["tree_joints"]),
            independent_coords=tuple(str(c) for c in doc["independent_coords"]),
            geometry=geometry.merged(overrides),
            gravity=_vec(doc.get("gravity", list(DEFAULT_GRAVITY))),
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"model document missing or malformed field: {exc}") from exc
    return validate(mech)


def resolve_model_path(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "model.json"
    return p


def load_mechanism(path, overrides=None) -> Mechanism:
    """Read and validate a JSON model file (or a directory holding ``model.json``)."""
    p = resolve_model_path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    try:
        doc = json.loads(p.read_text(), parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{p}: {exc}") from exc
    return mechanism_from_dict(doc, overrides)


def mechanism_to_dict(mech: Mechanism) -> dict:
    def rot(r):
        if r is None:
            return None
        if r[0] == "matrix":
            return {"matrix": [list(r[1][0:3]), list(r[1][3:6]), list(r[1][6:9])]}
        return {"sequence": [list(x) for x in r[1]]}

    joints = []
    for j in mech.joints:
        jd = {"id": j.id, "kind": j.kind, "parent": j.parent, "child": j.child,
              "parent_point": list(j.parent_point), "child_point": list(j.child_point)}
        if j.axes:
            jd["axes"] = [list(a) for a in j.axes]
        if j.rotation is not None:
            jd["rotation"] = rot(j.rotation)
        if j.guess:
            jd["guess"] = list(j.guess)
        joints.append(jd)
    return {
        "name": mech.name,
        "geometry": dict(mech.geometry.entries),
        "gravity": list(mech.gravity),
        "bodies": [{"id": b.id, "name": b.name} for b in mech.bodies],
        "joints": joints,
        "tree_joints": list(mech.tree_joints),
        "independent_coords": list(mech.independent_coords),
    }


def dump_mechanism(mech: Mechanism, path) -> None:
    Path(path).write_text(json.dumps(mechanism_to_dict(mech), indent=2) + "\n")
