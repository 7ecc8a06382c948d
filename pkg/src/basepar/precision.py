"""Configurable-precision real arithmetic.

A :class:`PrecisionLevel` is either native double precision or ``P``
significant decimal digits backed by MPFR (through :mod:`gmpy2`).  Every
numeric routine in the package takes a level explicitly and runs its
arithmetic inside ``level.context()``; nothing relies on ambient precision.
"""
from __future__ import annotations

import ast
import contextlib
import math
import operator
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import numpy as np

# extra binary digits carried beyond the requested decimal precision
GUARD_BITS = 4


class ExprError(ValueError):
    """Malformed expression, unbound symbol or division by zero."""


@dataclass(frozen=True)
class PrecisionLevel:
    """``digits=None`` selects native doubles, otherwise ``digits`` >= 20."""

    digits: int | None = None

    def __post_init__(self):
        if self.digits is not None and self.digits < 20:
            raise ValueError(f"decimal precision needs at least 20 digits, got {self.digits}")

    @classmethod
    def native(cls) -> "PrecisionLevel":
        return cls(None)

    @classmethod
    def decimal(cls, digits: int) -> "PrecisionLevel":
        return cls(int(digits))

    @classmethod
    def parse(cls, text) -> "PrecisionLevel":
        if isinstance(text, PrecisionLevel):
            return text
        if text is None or str(text).strip().lower() in ("native", "dp", "double"):
            return cls.native()
        return cls.decimal(int(text))

    @property
    def is_native(self) -> bool:
        return self.digits is None

    @property
    def effective_digits(self) -> int:
        """Decimal digits used when a tolerance of the form 10^(k-P) is needed."""
        return 16 if self.digits is None else self.digits

    @property
    def bits(self) -> int:
        if self.digits is None:
            return 53
        return math.ceil(self.digits * math.log2(10)) + GUARD_BITS

    @property
    def dtype(self):
        return np.float64 if self.digits is None else object

    def __str__(self):
        return "native" if self.digits is None else f"decimal({self.digits})"

    def context(self):
        if self.digits is None:
            return contextlib.nullcontext()
        return gmpy2.context(gmpy2.get_context(), precision=self.bits)

    def tol(self, k: int):
        """``10**(k - P)`` as a scalar of this level."""
        return self.scalar(f"1e{k - self.effective_digits}")

    # -- scalar construction -------------------------------------------------
    def scalar(self, x):
        if self.digits is None:
            if isinstance(x, Fraction):
                return x.numerator / x.denominator
            return float(x)
        with self.context():
            if isinstance(x, Fraction):
                return gmpy2.mpfr(x.numerator) / x.denominator
            if isinstance(x, (int, str)):
                return gmpy2.mpfr(x)
            if isinstance(x, gmpy2.mpfr):
                return +x  # rounds to current precision
            return gmpy2.mpfr(float(x))

    def array(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=object)
        out = np.empty(arr.shape, dtype=self.dtype)
        flat_in = arr.reshape(-1)
        flat_out = out.reshape(-1)
        for i, v in enumerate(flat_in):
            flat_out[i] = self.scalar(v)
        return out

    def zeros(self, shape) -> np.ndarray:
        if self.digits is None:
            return np.zeros(shape)
        out = np.empty(shape, dtype=object)
        zero = self.scalar(0)
        out.reshape(-1)[:] = [zero] * out.size
        return out

    def eye(self, n: int) -> np.ndarray:
        out = self.zeros((n, n))
        one = self.scalar(1)
        for i in range(n):
            out[i, i] = one
        return out

    def convert(self, arr) -> np.ndarray:
        """Re-express an array (float or object) at this level."""
        return self.array(np.asarray(arr, dtype=object))

    # -- elementary functions ------------------------------------------------
    def sin(self, x):
        return math.sin(x) if self.digits is None else gmpy2.sin(x)

    def cos(self, x):
        return math.cos(x) if self.digits is None else gmpy2.cos(x)

    def sqrt(self, x):
        return math.sqrt(x) if self.digits is None else gmpy2.sqrt(x)

    def atan2(self, y, x):
        return math.atan2(y, x) if self.digits is None else gmpy2.atan2(y, x)

    def pi(self):
        return math.pi if self.digits is None else gmpy2.const_pi()

    def fmt(self, x) -> str:
        return format_scalar(x, self)


def format_scalar(x, level: PrecisionLevel) -> str:
    """Full-precision decimal string (round-trips at ``level``)."""
    if level.is_native or isinstance(x, float):
        return repr(float(x))
    with level.context():
        x = gmpy2.mpfr(x)
        if gmpy2.is_zero(x):
            return "0"
        if not gmpy2.is_finite(x):
            return str(x)
        mant, exp, _ = x.digits(10, level.digits + 2)
        sign = ""
        if mant.startswith("-"):
            sign, mant = "-", mant[1:]
        mant = mant.rstrip("0") or "0"
        head, tail = mant[0], mant[1:]
        body = head + ("." + tail if tail else "")
        return f"{sign}{body}e{exp - 1}"


def norm_inf(arr) -> object:
    """Largest absolute entry of an array (0 for empty arrays)."""
    flat = np.asarray(arr).reshape(-1)
    if flat.size == 0:
        return 0
    return max(abs(v) for v in flat)


# -- expressions ----------------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
}


def parse_expr(text: str) -> ast.Expression:
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"cannot parse expression {text!r}") from exc
    return tree


def expr_symbols(text) -> set[str]:
    """Names referenced by an expression (function names excluded)."""
    tree = parse_expr(str(text))
    funcs = {id(n.func) for n in ast.walk(tree) if isinstance(n, ast.Call)}
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and id(n) not in funcs}


def walk_expr(text, const, symbol, funcs=None):
    """Evaluate an arithmetic expression with caller-supplied leaf handlers.

    ``const`` receives the literal's source text so decimals are never routed
    through binary floats; ``symbol`` receives a name.  Supported syntax:
    ``+ - * /``, unary sign, integer powers and the calls listed in ``funcs``.
    """
    text = str(text)
    tree = parse_expr(text)
    funcs = funcs or {}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return const(ast.get_source_segment(text, node))
        if isinstance(node, ast.Name):
            return symbol(node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            val = ev(node.operand)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            left, right = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Div) and right == 0:
                raise ExprError(f"division by zero in {text!r}")
            return _BINOPS[type(node.op)](left, right)
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Pow):
            exponent = node.right
            sign = 1
            if isinstance(exponent, ast.UnaryOp) and isinstance(exponent.op, ast.USub):
                sign, exponent = -1, exponent.operand
            if not (isinstance(exponent, ast.Constant) and isinstance(exponent.value, int)):
                raise ExprError(f"only integer powers are supported: {text!r}")
            base = ev(node.left)
            n = exponent.value
            if sign < 0:
                if base == 0:
                    raise ExprError(f"division by zero in {text!r}")
                return 1 / base**n
            return base**n
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            if node.func.id not in funcs:
                raise ExprError(f"unsupported function {node.func.id!r} in {text!r}")
            return funcs[node.func.id](*[ev(a) for a in node.args])
        raise ExprError(f"unsupported syntax in {text!r}")

    return ev(tree)


def eval_expr(expr, env, level: PrecisionLevel):
    """Evaluate ``expr`` with geometry ``env`` (name -> decimal text) at ``level``."""
    values = env.entries if hasattr(env, "entries") else env

    def symbol(name):
        if name == "pi":
            return level.pi()
        if name not in values or values[name] is None:
            raise ExprError(f"unbound symbol {name!r}")
        return walk_expr(values[name], level.scalar, symbol, funcs)

    funcs = {"sqrt": level.sqrt, "sin": level.sin, "cos": level.cos, "atan2": level.atan2}
    with level.context():
        return walk_expr(expr, level.scalar, symbol, funcs)
