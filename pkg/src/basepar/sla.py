"""Built-in double-wishbone (short-long arm) suspension fixture.

Named dimensions are fixed reference values.  The remaining hard points are
free choices frozen in ``fixtures/sla/model.json``; no reference coefficient
depends on them.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .dynamics import TrajectoryConfig
from .model import Mechanism, load_mechanism, parse_param_label
from .symbolic_base import load_plan

FIXTURES = Path(str(resources.files("basepar") / "fixtures"))

NAMED_GEOMETRY = {"D22": "0.2501", "D12": "0.3196", "D13": "0.082", "D31": "0.1301",
                  "L7": "0.427", "L10": "0.319"}
# wheel-centre offsets, inverted from the reference regrouping coefficients
DK_DEFAULTS = {"DKx": "-0.0168", "DKy": "-0.018", "DKz": "-0.2285"}



def load_trajectory(model_dir) -> TrajectoryConfig | None:
    """Trajectory shipped next to a model file, if any."""
    p = Path(model_dir)
    p = p / "trajectory.json" if p.is_dir() else p.with_name("trajectory.json")
    if not p.exists():
        return None
    return TrajectoryConfig.from_dict(json.loads(p.read_text()))


# q1 = 0.5 sin 3t + 0.1 sin 10t,  q2 = 0.3 sin(sqrt(2) t) + 0.7 sin(sqrt(17) t)
EXCITATION = load_trajectory(FIXTURES / "sla")

# regrouped parameters matching the reference grouping
PIN_LABELS = ("my1", "Ixx1", "Ixy1", "Ixz1", "Iyz1", "Izz1", "Iyy1",
              "my2", "Ixx2", "Ixy2", "Ixz2", "Iyz2", "Izz2", "Iyy2",
              "m1", "m2", "m4", "m5", "mx5", "Izz5", "Iyy4", "m6", "m7",
              "Ixx7", "Ixy7", "Ixz7", "Iyy7", "Iyz7", "Izz7")
NO_EFFECT_LABELS = ("my1", "Ixx1", "Ixy1", "Ixz1", "Iyz1", "Izz1",
                    "my2", "Ixx2", "Ixy2", "Ixz2", "Iyz2", "Izz2", "m6")
BASE_COUNT = 41


@dataclass(frozen=True)
class Expected:
    base: str
    parameter: str
    value: str
    kind: str


@dataclass(frozen=True)
class SlaFixture:
    mechanism: Mechanism
    trajectory: TrajectoryConfig
    plan: tuple
    pin: tuple
    expected: tuple

    @property
    def no_effect(self) -> list[int]:
        return sorted(parse_param_label(x) for x in NO_EFFECT_LABELS)


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def load_expected(path=None) -> tuple:
    path = Path(path) if path else FIXTURES / "sla" / "expected.csv"
    with open(path, newline="") as fh:
        return tuple(Expected(**row) for row in csv.DictReader(fh))


def sla_defaults(overrides=None) -> SlaFixture:
    mech = load_mechanism(FIXTURES / "sla", overrides)
    plan = tuple(load_plan(FIXTURES / "sla" / "plan.json"))
    pin = tuple(sorted(parse_param_label(x) for x in PIN_LABELS))
    return SlaFixture(mech, EXCITATION, plan, pin, load_expected())
