"""High-precision reference evaluation and the binary tensor container."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ..errors import CompilerError, ShapeMismatch
from ..exprs import (
    Access,
    Bin,
    Const,
    Expr,
    Reduce,
    Special,
    Un,
    Var,
)
from ..numerics import DivisionByZero, Ops, Precision, ops_for
from .ast import BoundProgram


def oracle_eval(bound: BoundProgram, inputs: dict, precision) -> dict:
    """Evaluate every def by naive loops at the requested precision.

    Returns a dict holding each defined tensor. The evaluation order is
    defs in program order; per output element, reduction contributions
    accumulate in ascending lexicographic order of the reduce axes, which is
    exactly the order the elaborated scalar IR uses.
    """
    ops = ops_for(precision)
    env: dict[str, np.ndarray] = {}
    for name in bound.input_names():
        if name not in inputs:
            raise CompilerError(f"missing input tensor {name!r}")
        arr = ops.asarray(inputs[name])
        if arr.shape != bound.shapes[name]:
            raise ShapeMismatch(
                f"input {name!r}: expected shape {bound.shapes[name]}, got {arr.shape}"
            )
        env[name] = arr

    results: dict[str, np.ndarray] = {}
    for cd in bound.program.defs:
        axis_ext = bound.axis_extents[cd.target]
        target_axes = list(cd.axis_names())
        shape = tuple(axis_ext[v] for v in target_axes)
        idx_env = _axis_index_env(target_axes, shape)
        body = cd.body
        if cd.reduce is not None:
            body = Reduce(cd.reduce[0], cd.reduce[1], body)
        red_ext = bound.reduce_extents[cd.target]
        try:
            value = _eval(body, ops, idx_env, env, shape, red_ext)
        except DivisionByZero as err:
            raise DivisionByZero(f"def {cd.target!r}") from err
        out = ops.zeros(shape)
        out[...] = value
        env[cd.target] = out
        results[cd.target] = out
    return results


def _axis_index_env(axes: list[str], shape: tuple[int, ...]) -> dict:
    idx = {}
    rank = len(axes)
    for pos, v in enumerate(axes):
        sl = [None] * rank
        sl[pos] = slice(None)
        idx[v] = np.arange(shape[pos])[tuple(sl)]
    return idx


def _eval(e: Expr, ops: Ops, idx_env: dict, tensors: dict, shape, red_ext: dict):
    if isinstance(e, Const):
        return ops.full(shape, e.value) if shape else ops.scalar(e.value)
    if isinstance(e, Special):
        from ..numerics import LOG2E_F64

        return ops.full(shape, LOG2E_F64) if shape else ops.scalar(LOG2E_F64)
    if isinstance(e, Var):
        return idx_env[e.name]
    if isinstance(e, Access):
        arr = tensors[e.tensor]
        if not e.index:
            return arr[()]
        coords = []
        for i in e.index:
            from ..exprs import to_affine

            a = to_affine(i)
            if a is None:
                raise CompilerError(f"non-affine index into {e.tensor!r}")
            coords.append(a.evaluate(idx_env))
        return arr[tuple(np.broadcast_arrays(*coords))] if len(coords) > 1 else arr[coords[0]]
    if isinstance(e, Un):
        if ops.is_exact and e.op == "exp2" and isinstance(e.x, Bin) and e.x.op == "mul":
            if isinstance(e.x.a, Special) and e.x.a.kind == "log2e":
                return ops.unop("exp", _eval(e.x.b, ops, idx_env, tensors, shape, red_ext))
            if isinstance(e.x.b, Special) and e.x.b.kind == "log2e":
                return ops.unop("exp", _eval(e.x.a, ops, idx_env, tensors, shape, red_ext))
        return ops.unop(e.op, _eval(e.x, ops, idx_env, tensors, shape, red_ext))
    if isinstance(e, Bin):
        a = _eval(e.a, ops, idx_env, tensors, shape, red_ext)
        b = _eval(e.b, ops, idx_env, tensors, shape, red_ext)
        return ops.binop(e.op, a, b)
    if isinstance(e, Reduce):
        from ..exprs import combine_to_binop, reduction_identity

        acc = ops.full(shape, reduction_identity(e.op).value) if shape else ops.scalar(
            reduction_identity(e.op).value
        )
        extents = [red_ext[a] for a in e.axes]
        combine = combine_to_binop(e.op)
        import itertools

        for point in itertools.product(*(range(n) for n in extents)):
            inner_env = dict(idx_env)
            for a, v in zip(e.axes, point):
                inner_env[a] = v
            val = _eval(e.body, ops, inner_env, tensors, shape, red_ext)
            acc = ops.binop(combine, acc, val)
        return acc
    raise CompilerError(f"cannot evaluate node {type(e).__name__}")


# ---------------------------------------------------------------------------
# Binary tensor container: magic NTNS1, then per tensor
#   u32 name length, name bytes (utf-8), u8 dtype (0=fp32, 1=fp64),
#   u8 rank, rank x u64 dims, row-major little-endian payload.

_MAGIC = b"NTNS1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def write_tensors(fp: BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    fp.write(_MAGIC)
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CompilerError(
                f"container supports fp32/fp64 payloads; {name!r} has dtype {arr.dtype}"
            )
        code = _CODES[arr.dtype]
        nb = name.encode("utf-8")
        fp.write(struct.pack("<I", len(nb)))
        fp.write(nb)
        fp.write(struct.pack("<BB", code, arr.ndim))
        for d in arr.shape:
            fp.write(struct.pack("<Q", d))
        fp.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def read_tensors(fp: BinaryIO) -> dict[str, np.ndarray]:
    magic = fp.read(5)
    if magic != _MAGIC:
        raise CompilerError(f"bad container magic {magic!r}")
    out: dict[str, np.ndarray] = {}
    while True:
        head = fp.read(4)
        if not head:
            break
        (nlen,) = struct.unpack("<I", head)
        name = fp.read(nlen).decode("utf-8")
        code, rank = struct.unpack("<BB", fp.read(2))
        if code not in _DTYPES:
            raise CompilerError(f"unknown dtype byte {code} for tensor {name!r}")
        dims = tuple(struct.unpack("<Q", fp.read(8))[0] for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        payload = fp.read(count * _DTYPES[code].itemsize)
        out[name] = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(dims).copy()
    return out
