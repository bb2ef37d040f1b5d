"""Denotational evaluator for the VR-tile IR."""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import CompilerError
from ..exprs import to_affine
from ..numerics import EvalError, Ops, ops_for
from .ir import (
    VBin,
    VBinding,
    VBroadcast,
    VDot,
    VExpr,
    VFor,
    VKernel,
    VLit,
    VLoad,
    VRModule,
    VRef,
    VReduce,
    VReshape,
    VScale,
    VSlice,
    VStore,
    VTranspose,
    VUn,
    validate_vr,
)


def eval_vr(module: VRModule, inputs: dict, precision=None) -> dict:
    precision = precision or module.precision
    ops = ops_for(precision)
    problems = validate_vr(module)
    if problems:
        raise CompilerError("VR module invalid: " + "; ".join(problems[:3]))
    bufs: dict[str, np.ndarray] = {}
    for decl in module.buffers:
        if decl.is_input:
            bufs[decl.name] = ops.asarray(inputs[decl.name]).copy()
        else:
            bufs[decl.name] = ops.zeros(decl.shape)
    for k in module.kernels:
        _run_kernel(k, bufs, ops)
    return bufs


def _run_kernel(k: VKernel, bufs: dict, ops: Ops) -> None:
    ranges = [range(extent) for _, _, extent in k.blocks]
    for point in itertools.product(*ranges):
        env: dict = {var: val for (var, _, _), val in zip(k.blocks, point)}
        vals: dict = {}
        _run_body(k.body, env, vals, bufs, ops)


def _run_body(body, env: dict, vals: dict, bufs: dict, ops: Ops) -> None:
    for item in body:
        if isinstance(item, VStore):
            _store(item, env, vals, bufs, ops)
            continue
        if isinstance(item.expr, VFor):
            f = item.expr
            cur = [vals[init] for _, init in f.params]
            for i in range(f.extent):
                inner = dict(env)
                inner[f.var] = i
                scope = dict(vals)
                for (pname, _), v in zip(f.params, cur):
                    scope[pname] = v
                _run_body(f.body, inner, scope, bufs, ops)
                cur = [scope[y] for y in f.yields]
            for name, v in zip(item.names, cur):
                vals[name] = v
        else:
            vals[item.names[0]] = _eval(item.expr, env, vals, bufs, ops)


def _slices(slices: tuple[VSlice, ...], env: dict):
    out = []
    for s in slices:
        a = to_affine(s.offset)
        if a is None:
            raise EvalError("non-affine slice offset")
        off = a.evaluate(env)
        out.append(slice(off, off + s.length))
    return tuple(out)


def _store(item: VStore, env, vals, bufs, ops) -> None:
    arr = bufs[item.buffer]
    idx = _slices(item.slices, env)
    value = vals[item.value]
    view_shape = tuple(s.stop - s.start for s in idx)
    arr[idx] = np.asarray(value).reshape(view_shape)


def _eval(e: VExpr, env, vals, bufs, ops: Ops):
    if isinstance(e, VLit):
        return ops.full(e.shape, e.value) if e.shape else ops.scalar(e.value)
    if isinstance(e, VRef):
        return vals[e.name]
    if isinstance(e, VLoad):
        arr = bufs[e.buffer]
        return arr[_slices(e.slices, env)].copy()
    if isinstance(e, VBin):
        return ops.binop(e.op, _eval(e.a, env, vals, bufs, ops),
                         _eval(e.b, env, vals, bufs, ops))
    if isinstance(e, VUn):
        # exact mode folds exp2(log2e * x) back to exp(x)
        if e.op == "exp2" and ops.is_exact and isinstance(e.x, VScale) \
                and e.x.kind == "log2e":
            return ops.unop("exp", _eval(e.x.x, env, vals, bufs, ops))
        return ops.unop(e.op, _eval(e.x, env, vals, bufs, ops))
    if isinstance(e, VScale):
        from ..numerics import LOG2E_F64

        if ops.is_exact:
            raise EvalError("scaling by log2(e) outside exp2 folding in exact mode")
        return ops.binop("mul", ops.scalar(LOG2E_F64),
                         _eval(e.x, env, vals, bufs, ops))
    if isinstance(e, VDot):
        a = _eval(e.a, env, vals, bufs, ops)
        b = _eval(e.b, env, vals, bufs, ops)
        acc = _eval(e.seed, env, vals, bufs, ops) if e.seed is not None else ops.zeros(e.shape)
        if not isinstance(acc, np.ndarray) or acc.shape != e.shape:
            base = ops.zeros(e.shape)
            base[...] = acc
            acc = base
        for kk in range(a.shape[1]):
            acc = acc + a[:, kk : kk + 1] * b[kk : kk + 1, :]
        return acc
    if isinstance(e, VReduce):
        x = _eval(e.x, env, vals, bufs, ops)
        keep = [i for i in range(x.ndim) if i not in e.axes]
        moved = np.moveaxis(x, e.axes, tuple(range(len(keep), x.ndim)))
        flat = moved.reshape(tuple(moved.shape[: len(keep)]) + (-1,))
        if e.seed is not None:
            acc = _eval(e.seed, env, vals, bufs, ops)
            if not isinstance(acc, np.ndarray) or acc.shape != e.shape:
                base = ops.zeros(e.shape) if e.shape else ops.scalar(0)
                if e.shape:
                    base[...] = acc
                    acc = base
            start = 0
        else:
            acc = flat[..., 0]
            start = 1
        binop = {"sum": "add", "prod": "mul", "max": "max", "min": "min"}[e.op]
        for i in range(start, flat.shape[-1]):
            acc = ops.binop(binop, acc, flat[..., i])
        return acc
    if isinstance(e, VTranspose):
        return np.transpose(_eval(e.x, env, vals, bufs, ops), e.perm)
    if isinstance(e, VReshape):
        return np.asarray(_eval(e.x, env, vals, bufs, ops)).reshape(e.shape)
    if isinstance(e, VBroadcast):
        return np.broadcast_to(_eval(e.x, env, vals, bufs, ops), e.shape).copy()
    raise EvalError(f"cannot evaluate {type(e).__name__}")
