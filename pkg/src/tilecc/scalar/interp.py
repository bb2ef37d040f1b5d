"""Reference interpreter for the scalar IR (per-element, program order)."""

from __future__ import annotations

import numpy as np

from ..errors import OutOfBounds
from ..exprs import Access, Expr
from ..numerics import Ops, eval_expr, ops_for
from .ir import ComputeStmt, LoopNode, ScalarModule, Scope, build_tree, validate


def interpret_scalar(module: ScalarModule, inputs: dict, precision=None) -> dict:
    """Execute kernels in order; returns every buffer's final contents."""
    precision = precision or module.precision
    ops = ops_for(precision)
    problems = validate(module)
    if problems:
        raise OutOfBounds("module does not validate: " + "; ".join(problems[:3]))

    bufs: dict[str, np.ndarray] = {}
    for decl in module.buffers:
        if decl.is_input:
            arr = ops.asarray(inputs[decl.name])
            if arr.shape != decl.shape:
                raise OutOfBounds(
                    f"input {decl.name!r}: expected {decl.shape}, got {arr.shape}"
                )
            bufs[decl.name] = arr.copy()
        else:
            bufs[decl.name] = ops.zeros(decl.shape)

    for ki in range(len(module.kernels)):
        tree = build_tree(module, ki)
        _run_body(tree, {}, bufs, ops)
    return bufs


def _run_body(body: list, env: dict, bufs: dict, ops: Ops) -> None:
    for node in body:
        if isinstance(node, LoopNode):
            var = node.loop.var
            for i in range(node.loop.extent):
                env[var] = i
                _run_body(node.body, env, bufs, ops)
            del env[var]
        else:
            _run_stmt(node, env, bufs, ops)


def _run_stmt(stmt: ComputeStmt, env: dict, bufs: dict, ops: Ops) -> None:
    smap = stmt.subst_map()
    env2 = dict(env)
    for axis, e in smap.items():
        env2[axis] = _eval_int(e, env)
    for g in stmt.guards:
        if not (_eval_int(g.expr, env2) < g.bound):
            return

    def load(acc: Access):
        arr = bufs[acc.tensor]
        idx = tuple(_eval_int(i, env2) for i in acc.index)
        _bounds(acc.tensor, idx, arr.shape, stmt.sid, env2)
        return arr[idx] if idx else arr[()]

    value = eval_expr(stmt.rhs, ops, env2, load)
    tgt = bufs[stmt.target]
    tidx = tuple(_eval_int(i, env2) for i in stmt.index)
    _bounds(stmt.target, tidx, tgt.shape, stmt.sid, env2)
    if tidx:
        tgt[tidx] = value
    else:
        tgt[()] = value


def _eval_int(e: Expr, env: dict) -> int:
    from ..exprs import Bin, Const, Un, Var

    if isinstance(e, Const):
        return int(e.value)
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Bin):
        a = _eval_int(e.a, env)
        b = _eval_int(e.b, env)
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            return a * b
        if e.op == "div":
            return a // b
        if e.op == "max":
            return max(a, b)
        if e.op == "min":
            return min(a, b)
    if isinstance(e, Un) and e.op == "neg":
        return -_eval_int(e.x, env)
    raise OutOfBounds(f"non-integer index expression {e!r}")


def _bounds(name: str, idx: tuple, shape: tuple, sid: int, env: dict) -> None:
    if len(idx) != len(shape):
        raise OutOfBounds(f"stmt {sid}: rank mismatch on {name!r}")
    for i, (x, n) in enumerate(zip(idx, shape)):
        if not (0 <= x < n):
            raise OutOfBounds(
                f"stmt {sid}: {name}[{i}] = {x} outside [0, {n}) at point "
                + str({k: v for k, v in env.items() if isinstance(v, int)})
            )
