"""Scalar index-expression trees shared by the frontend and the scalar IR.

Expressions are immutable. Tensor-access index arguments must stay affine in
index variables; :func:`to_affine` is the single source of truth for that.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, Optional, Union

BINOPS = ("add", "sub", "mul", "div", "max", "min")
UNOPS = ("exp", "exp2", "log2", "neg")
REDUCE_OPS = ("sum", "max", "min", "prod")

_BIN_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


@dataclass(frozen=True)
class Expr:
    def children(self) -> tuple["Expr", ...]:
        return ()

    def walk(self) -> Iterator["Expr"]:
        yield self
        for c in self.children():
            yield from c.walk()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Special(Expr):
    """Named irrational constant (currently only log2(e))."""

    kind: str  # "log2e"


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Access(Expr):
    tensor: str
    index: tuple[Expr, ...]

    def children(self):
        return self.index


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    a: Expr
    b: Expr

    def children(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class Un(Expr):
    op: str
    x: Expr

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class Reduce(Expr):
    """Frontend-only reduction marker; eliminated by elaboration."""

    op: str
    axes: tuple[str, ...]
    body: Expr

    def children(self):
        return (self.body,)


NEG_INF_CONST = Const(float("-inf"))
POS_INF_CONST = Const(float("inf"))
LOG2E = Special("log2e")


def const(v) -> Const:
    return Const(float(v))


def add(a, b) -> Expr:
    return Bin("add", a, b)


def sub(a, b) -> Expr:
    return Bin("sub", a, b)


def mul(a, b) -> Expr:
    return Bin("mul", a, b)


def div(a, b) -> Expr:
    return Bin("div", a, b)


def reduction_identity(op: str) -> Const:
    if op == "sum":
        return Const(0.0)
    if op == "prod":
        return Const(1.0)
    if op == "max":
        return NEG_INF_CONST
    if op == "min":
        return POS_INF_CONST
    raise ValueError(f"unknown reduction op {op!r}")


def combine_to_binop(op: str) -> str:
    return {"sum": "add", "prod": "mul", "max": "max", "min": "min"}[op]


# ---------------------------------------------------------------------------
# Affine forms


class Affine:
    """Affine combination of variables: sum(coef_v * v) + const.

    Coefficients and the constant are integers (index arithmetic is
    integral everywhere in this compiler).
    """

    __slots__ = ("coefs", "const")

    def __init__(self, coefs: Optional[dict] = None, const_: int = 0):
        self.coefs = {k: v for k, v in (coefs or {}).items() if v != 0}
        self.const = const_

    @staticmethod
    def var(name: str) -> "Affine":
        return Affine({name: 1}, 0)

    @staticmethod
    def number(c: int) -> "Affine":
        return Affine({}, c)

    def __add__(self, other: "Affine") -> "Affine":
        coefs = dict(self.coefs)
        for k, v in other.coefs.items():
            coefs[k] = coefs.get(k, 0) + v
        return Affine(coefs, self.const + other.const)

    def __sub__(self, other: "Affine") -> "Affine":
        coefs = dict(self.coefs)
        for k, v in other.coefs.items():
            coefs[k] = coefs.get(k, 0) - v
        return Affine(coefs, self.const - other.const)

    def scale(self, c: int) -> "Affine":
        return Affine({k: v * c for k, v in self.coefs.items()}, self.const * c)

    def is_const(self) -> bool:
        return not self.coefs

    def vars(self) -> set:
        return set(self.coefs)

    def subst(self, mapping: dict) -> "Affine":
        """Substitute variables by other Affine forms."""
        out = Affine.number(self.const)
        for k, c in self.coefs.items():
            repl = mapping.get(k)
            if repl is None:
                out = out + Affine({k: c}, 0)
            else:
                out = out + repl.scale(c)
        return out

    def evaluate(self, env: dict) -> int:
        total = self.const
        for k, c in self.coefs.items():
            total += c * env[k]
        return total

    def value_range(self, extents: dict) -> tuple[int, int]:
        """Min/max over 0 <= v < extents[v] for every variable."""
        lo = hi = self.const
        for k, c in self.coefs.items():
            e = extents[k] - 1
            if c >= 0:
                hi += c * e
            else:
                lo += c * e
        return lo, hi

    def as_expr(self) -> Expr:
        e: Optional[Expr] = None
        for k in sorted(self.coefs):
            c = self.coefs[k]
            term: Expr = Var(k) if c == 1 else Bin("mul", Const(float(c)), Var(k))
            e = term if e is None else Bin("add", e, term)
        if e is None:
            return Const(float(self.const))
        if self.const:
            e = Bin("add", e, Const(float(self.const)))
        return e

    def key(self) -> tuple:
        return (tuple(sorted(self.coefs.items())), self.const)

    def __eq__(self, other):
        return isinstance(other, Affine) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Affine({self.coefs}, {self.const})"


def to_affine(e: Expr) -> Optional[Affine]:
    """Affine form of an index expression, or None if non-affine."""
    if isinstance(e, Const):
        if float(e.value).is_integer():
            return Affine.number(int(e.value))
        return None
    if isinstance(e, Var):
        return Affine.var(e.name)
    if isinstance(e, Un) and e.op == "neg":
        a = to_affine(e.x)
        return None if a is None else a.scale(-1)
    if isinstance(e, Bin):
        a = to_affine(e.a)
        b = to_affine(e.b)
        if a is None or b is None:
            return None
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            if a.is_const():
                return b.scale(a.const)
            if b.is_const():
                return a.scale(b.const)
            return None
    return None


def substitute(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Replace Var nodes by expressions."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Access):
        return Access(e.tensor, tuple(substitute(i, mapping) for i in e.index))
    if isinstance(e, Bin):
        return Bin(e.op, substitute(e.a, mapping), substitute(e.b, mapping))
    if isinstance(e, Un):
        return Un(e.op, substitute(e.x, mapping))
    if isinstance(e, Reduce):
        inner = {k: v for k, v in mapping.items() if k not in e.axes}
        return Reduce(e.op, e.axes, substitute(e.body, inner))
    return e


def rewrite_accesses(e: Expr, fn: Callable[[Access], Expr]) -> Expr:
    if isinstance(e, Access):
        return fn(Access(e.tensor, tuple(rewrite_accesses(i, fn) for i in e.index)))
    if isinstance(e, Bin):
        return Bin(e.op, rewrite_accesses(e.a, fn), rewrite_accesses(e.b, fn))
    if isinstance(e, Un):
        return Un(e.op, rewrite_accesses(e.x, fn))
    if isinstance(e, Reduce):
        return Reduce(e.op, e.axes, rewrite_accesses(e.body, fn))
    return e


def accesses(e: Expr) -> list[Access]:
    return [n for n in e.walk() if isinstance(n, Access)]


def free_vars(e: Expr) -> set:
    out: set = set()

    def go(n: Expr, bound: frozenset):
        if isinstance(n, Var):
            if n.name not in bound:
                out.add(n.name)
        elif isinstance(n, Reduce):
            inner = bound | frozenset(n.axes)
            go(n.body, inner)
        else:
            for c in n.children():
                go(c, bound)

    go(e, frozenset())
    return out


def _fmt_const(v: float) -> str:
    if v == float("-inf"):
        return "-inf"
    if v == float("inf"):
        return "inf"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_expr(e: Expr) -> str:
    """Canonical, re-parseable text for an expression."""
    return _fmt(e, 0)


def _fmt(e: Expr, prec: int) -> str:
    if isinstance(e, Const):
        s = _fmt_const(e.value)
        if s.startswith("-") and prec >= 2:
            return f"({s})"
        return s
    if isinstance(e, Special):
        return e.kind
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Access):
        args = ", ".join(_fmt(i, 0) for i in e.index)
        return f"{e.tensor}({args})"
    if isinstance(e, Un):
        if e.op == "neg":
            s = f"-{_fmt(e.x, 2)}"
            return f"({s})" if prec >= 2 else s
        return f"{e.op}({_fmt(e.x, 0)})"
    if isinstance(e, Reduce):
        axes = ", ".join(e.axes)
        return f"{e.op}({axes}, {_fmt(e.body, 0)})"
    if isinstance(e, Bin):
        if e.op in ("max", "min"):
            return f"{e.op}({_fmt(e.a, 0)}, {_fmt(e.b, 0)})"
        mine = 1 if e.op in ("add", "sub") else 2
        s = f"{_fmt(e.a, mine)} {_BIN_SYMBOL[e.op]} {_fmt(e.b, mine + 1)}"
        return f"({s})" if prec > mine else s
    raise TypeError(f"unknown expr node {e!r}")
