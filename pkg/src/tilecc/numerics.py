"""Precision-dispatched tensor arithmetic.

Every evaluator in the pipeline (reference oracle, scalar interpreter, tile
evaluators) goes through one of these namespaces so that a given precision
means the same thing everywhere:

* ``fp32`` / ``fp64``: numpy arrays of the matching dtype, IEEE semantics.
* ``rational``: numpy object arrays holding exact values (see
  :mod:`tilecc.exact`).

Reductions are sequential along the reduced axis in ascending order; the
bitwise-equality guarantees between pipeline stages rely on every evaluator
using these helpers rather than numpy's pairwise reductions.
"""

from __future__ import annotations

from enum import Enum
from fractions import Fraction

import numpy as np

from . import exact as ex
from .exprs import (
    Access,
    Bin,
    Const,
    Expr,
    Reduce,
    Special,
    Un,
    Var,
)


class Precision(str, Enum):
    FP32 = "fp32"
    FP64 = "fp64"
    RATIONAL = "rational"

    @staticmethod
    def parse(s: str) -> "Precision":
        s = s.lower()
        aliases = {"fp32": Precision.FP32, "fp64": Precision.FP64,
                   "rational": Precision.RATIONAL, "exact": Precision.RATIONAL,
                   "exact-rational": Precision.RATIONAL}
        if s not in aliases:
            raise ValueError(f"unknown precision {s!r}")
        return aliases[s]


class EvalError(Exception):
    """Numeric fault during evaluation, with a short context string."""

    def __init__(self, kind: str, where: str = ""):
        self.kind = kind
        self.where = where
        super().__init__(f"{kind}" + (f" at {where}" if where else ""))


class DivisionByZero(EvalError):
    def __init__(self, where: str = ""):
        super().__init__("division by zero", where)


LOG2E_F64 = float(np.log2(np.exp(np.float64(1.0))))

_u_exp = np.frompyfunc(ex.exact_exp, 1, 1)
_u_exp2 = np.frompyfunc(ex.exact_exp2, 1, 1)
_u_log2 = np.frompyfunc(ex.exact_log2, 1, 1)
_u_neg = np.frompyfunc(ex.exact_neg, 1, 1)
_u_add = np.frompyfunc(ex.exact_add, 2, 1)
_u_sub = np.frompyfunc(ex.exact_sub, 2, 1)
_u_mul = np.frompyfunc(ex.exact_mul, 2, 1)
_u_div = np.frompyfunc(ex.exact_div, 2, 1)
_u_max = np.frompyfunc(ex.exact_max, 2, 1)
_u_min = np.frompyfunc(ex.exact_min, 2, 1)
_u_iszero = np.frompyfunc(ex.is_zero, 1, 1)


class Ops:
    """One arithmetic namespace per precision."""

    def __init__(self, precision: Precision):
        self.precision = precision
        self.is_exact = precision is Precision.RATIONAL
        self.dtype = {Precision.FP32: np.float32,
                      Precision.FP64: np.float64,
                      Precision.RATIONAL: object}[precision]

    # -- constructors -----------------------------------------------------
    def scalar(self, v):
        if self.is_exact:
            return ex.from_number(v)
        return self.dtype(v)

    def full(self, shape, v):
        if self.is_exact:
            a = np.empty(shape, dtype=object)
            a[...] = ex.from_number(v)
            return a
        return np.full(shape, v, dtype=self.dtype)

    def zeros(self, shape):
        return self.full(shape, 0)

    def asarray(self, data):
        if self.is_exact:
            a = np.asarray(data, dtype=object)
            conv = np.frompyfunc(ex.from_number, 1, 1)
            return conv(a)
        return np.asarray(data, dtype=self.dtype)

    # -- elementwise -------------------------------------------------------
    def binop(self, op: str, a, b, where: str = ""):
        if self.is_exact:
            fn = {"add": _u_add, "sub": _u_sub, "mul": _u_mul,
                  "div": _u_div, "max": _u_max, "min": _u_min}[op]
            try:
                return fn(a, b)
            except ex.ExactDivisionByZero:
                raise DivisionByZero(where) from None
        if op == "div":
            db = np.asarray(b)
            if np.any(db == 0):
                raise DivisionByZero(where)
        fn = {"add": np.add, "sub": np.subtract, "mul": np.multiply,
              "div": np.divide, "max": np.maximum, "min": np.minimum}[op]
        return fn(a, b)

    def unop(self, op: str, x, where: str = ""):
        if self.is_exact:
            fn = {"exp": _u_exp, "exp2": _u_exp2, "log2": _u_log2, "neg": _u_neg}[op]
            return fn(x)
        fn = {"exp": np.exp, "exp2": np.exp2, "log2": np.log2,
              "neg": np.negative}[op]
        return fn(x)

    # -- reductions (sequential along the axis, ascending) -----------------
    def reduce_along(self, op: str, arr: np.ndarray, axis: int):
        arr = np.asarray(arr, dtype=self.dtype) if not self.is_exact else np.asarray(arr, dtype=object)
        n = arr.shape[axis]
        if n == 0:
            raise EvalError("reduction over empty axis")
        if self.is_exact and op in ("sum", "prod"):
            return self._exact_accumulate(op, arr, axis)
        index = [slice(None)] * arr.ndim
        index[axis] = 0
        acc = arr[tuple(index)]
        if not self.is_exact:
            acc = acc.copy() if isinstance(acc, np.ndarray) else acc
        binop = {"sum": "add", "prod": "mul", "max": "max", "min": "min"}[op]
        for i in range(1, n):
            index[axis] = i
            acc = self.binop(binop, acc, arr[tuple(index)])
        return acc

    def _exact_accumulate(self, op: str, arr: np.ndarray, axis: int):
        """In-place ring-dict accumulation; dramatically faster than
        repeated functional adds when terms pile up."""
        moved = np.moveaxis(arr, axis, 0)
        n = moved.shape[0]
        flat = moved.reshape(n, -1)
        out = np.empty(flat.shape[1], dtype=object)
        for j in range(flat.shape[1]):
            col = flat[:, j]
            if op == "prod":
                acc = col[0]
                for i in range(1, n):
                    acc = ex.exact_mul(acc, col[i])
                out[j] = acc
                continue
            # op == sum: accumulate rationals and ring terms separately
            rat = 0
            ring: dict = {}
            for i in range(n):
                v = col[i]
                if isinstance(v, int):
                    rat += v
                elif isinstance(v, Fraction):
                    rat = rat + v
                elif isinstance(v, ex.ERing):
                    for key, coef in v.terms.items():
                        cur = ring.get(key)
                        ring[key] = coef if cur is None else cur + coef
                else:
                    # EFrac / infinities: fall back to functional fold
                    acc = col[0]
                    for k in range(1, n):
                        acc = ex.exact_add(acc, col[k])
                    out[j] = acc
                    break
            else:
                if isinstance(rat, Fraction) and rat.denominator == 1:
                    rat = rat.numerator
                if ring:
                    if rat:
                        cur = ring.get((0, 0))
                        ring[(0, 0)] = rat if cur is None else cur + rat
                    ring = {k: c for k, c in ring.items() if c != 0}
                    out[j] = ex._demote(ex.ERing(ring))
                else:
                    out[j] = rat
        return out.reshape(moved.shape[1:])

    def dot(self, a: np.ndarray, b: np.ndarray):
        """Matrix product with a sequential k-loop so per-element accumulation
        order matches the scalar interpreter exactly."""
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise EvalError(f"dot shape mismatch {a.shape} x {b.shape}")
        if self.is_exact:
            prod = _u_mul(a[:, :, None], b[None, :, :])
            return self._exact_accumulate("sum", prod, 1)
        acc = np.zeros((a.shape[0], b.shape[1]), dtype=self.dtype)
        for k in range(a.shape[1]):
            acc = acc + a[:, k : k + 1] * b[k : k + 1, :]
        return acc

    # -- comparisons / checks ----------------------------------------------
    def any_zero(self, arr) -> bool:
        if self.is_exact:
            return bool(np.any(_u_iszero(np.asarray(arr, dtype=object))))
        return bool(np.any(np.asarray(arr) == 0))

    def arrays_equal(self, a, b) -> bool:
        if self.is_exact:
            eq = np.frompyfunc(ex.exact_eq, 2, 1)
            return bool(np.all(eq(np.asarray(a, dtype=object), np.asarray(b, dtype=object))))
        a = np.asarray(a)
        b = np.asarray(b)
        return a.shape == b.shape and bool(np.all(a == b))


OPS = {p: Ops(p) for p in Precision}


def ops_for(precision) -> Ops:
    if isinstance(precision, str):
        precision = Precision.parse(precision)
    return OPS[precision]


def eval_expr(e: Expr, ops: Ops, env: dict, load):
    """Evaluate a scalar expression tree.

    ``env`` maps index-variable names to Python ints (or numpy index arrays
    for vectorized evaluation); ``load`` maps an Access node to a value.
    """
    if isinstance(e, Const):
        return ops.scalar(e.value)
    if isinstance(e, Special):
        if e.kind == "log2e":
            if ops.is_exact:
                raise ex.ExactError("log2(e) is not representable outside exp2 folding")
            return ops.scalar(LOG2E_F64)
        raise EvalError(f"unknown special constant {e.kind}")
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Access):
        return load(e)
    if isinstance(e, Un):
        # exact-mode identity: exp2(log2e * x) == exp(x)
        if ops.is_exact and e.op == "exp2":
            arg = e.x
            if isinstance(arg, Bin) and arg.op == "mul":
                if isinstance(arg.a, Special) and arg.a.kind == "log2e":
                    return ops.unop("exp", eval_expr(arg.b, ops, env, load))
                if isinstance(arg.b, Special) and arg.b.kind == "log2e":
                    return ops.unop("exp", eval_expr(arg.a, ops, env, load))
        return ops.unop(e.op, eval_expr(e.x, ops, env, load))
    if isinstance(e, Bin):
        a = eval_expr(e.a, ops, env, load)
        b = eval_expr(e.b, ops, env, load)
        return ops.binop(e.op, a, b)
    if isinstance(e, Reduce):
        raise EvalError("reduction marker survived into evaluation")
    raise EvalError(f"unknown expression node {type(e).__name__}")
