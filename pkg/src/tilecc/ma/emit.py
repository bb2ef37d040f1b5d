"""Tile-language text emission from MA modules.

`generic` is the stable golden format; `triton-like` and `tilelang-like` are
best-effort syntax skins over the same structure for eyeballing what a
backend would receive. Neither skin claims to be executable code.
"""

from __future__ import annotations

from ..exprs import format_expr
from ..scalar.ir import Scope
from ..vr.ir import (
    VBin,
    VBroadcast,
    VDot,
    VExpr,
    VLit,
    VReduce,
    VReshape,
    VScale,
    VTranspose,
    VUn,
)
from .ir import MACompute, MACopy, MAKernel, MALoop, MAModule, MARef

FLAVORS = ("generic", "triton-like", "tilelang-like")

_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}


def emit_tile_text(module: MAModule, flavor: str = "generic") -> str:
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}; pick one of {FLAVORS}")
    lines: list[str] = []
    if flavor != "generic":
        lines.append(f"# {flavor} rendering; structural sketch, not executable")
    for b in module.buffers:
        if b.scope is Scope.GLOBAL:
            shape = ", ".join(str(d) for d in b.shape)
            kind = "in" if b.is_input else ("out" if b.is_output else "tmp")
            lines.append(f"# {kind} {b.name}[{module.precision.value}]({shape})")
    for k in module.kernels:
        params = " ".join(f"{n}={v}" for n, v in k.params)
        lines.append(f"def {k.name}({params}) [{k.backend}]:")
        for var, axis, extent in k.blocks:
            if flavor == "triton-like":
                idx = {"blockIdx.x": 0, "blockIdx.y": 1, "blockIdx.z": 2}[axis]
                lines.append(f"  {var} = tl.program_id({idx})  # 0..{extent}")
            elif flavor == "tilelang-like":
                lines.append(f"  {var} = T.block_idx(\"{axis.split('.')[-1]}\")  # 0..{extent}")
            else:
                lines.append(f"  {var} = block(\"{axis}\", 0, {extent})")
        _body(module, k.body, lines, 1, flavor)
    return "\n".join(lines) + "\n"


def _slice_str(slices) -> str:
    return ", ".join(str(s) for s in slices)


def _body(module: MAModule, body, lines: list[str], depth: int, flavor: str):
    pad = "  " * depth
    for st in body:
        if isinstance(st, MALoop):
            if flavor == "tilelang-like":
                lines.append(f"{pad}for {st.var} in T.serial({st.extent}):")
            else:
                lines.append(f"{pad}for {st.var} in range({st.extent}):")
            _body(module, st.body, lines, depth + 1, flavor)
            continue
        if isinstance(st, MACopy):
            dst = f"{st.dst}[{_slice_str(st.dst_slices)}]"
            src = f"{st.src}[{_slice_str(st.src_slices)}]"
            if flavor == "triton-like":
                lines.append(f"{pad}tl.store({dst}, tl.load({src}))")
            elif flavor == "tilelang-like":
                lines.append(f"{pad}T.copy({src}, {dst})")
            else:
                lines.append(f"{pad}{dst} = {src}")
            continue
        dst = f"{st.dst}[{_slice_str(st.dst_slices)}]"
        lines.append(f"{pad}{dst} = {_expr(st.expr, flavor, 0)}")


def _expr(e: VExpr, flavor: str, prec: int) -> str:
    if isinstance(e, VLit):
        v = e.value
        sv = "-inf" if v == float("-inf") else ("inf" if v == float("inf") else
                                                (str(int(v)) if float(v).is_integer() else repr(v)))
        if flavor == "triton-like":
            return f"tl.full({list(e.shape)}, {sv})"
        if flavor == "tilelang-like":
            return f"T.fill({list(e.shape)}, {sv})"
        return f"tile({sv}, {list(e.shape)})"
    if isinstance(e, MARef):
        ref = f"{e.buffer}[{_slice_str(e.slices)}]"
        if flavor == "triton-like":
            return f"tl.load({ref})" if prec >= 0 else ref
        return ref
    if isinstance(e, VBin):
        if e.op in ("max", "min"):
            fn = {"generic": {"max": "maximum", "min": "minimum"},
                  "triton-like": {"max": "tl.maximum", "min": "tl.minimum"},
                  "tilelang-like": {"max": "T.max", "min": "T.min"}}[flavor][e.op]
            return f"{fn}({_expr(e.a, flavor, 0)}, {_expr(e.b, flavor, 0)})"
        mine = _PREC[e.op]
        s = f"{_expr(e.a, flavor, mine)} {_INFIX[e.op]} {_expr(e.b, flavor, mine + 1)}"
        return f"({s})" if prec > mine else s
    if isinstance(e, VUn):
        fn = {"generic": e.op, "triton-like": f"tl.{e.op}",
              "tilelang-like": f"T.{e.op}"}[flavor]
        return f"{fn}({_expr(e.x, flavor, 0)})"
    if isinstance(e, VScale):
        return f"log2e * {_expr(e.x, flavor, 3)}"
    if isinstance(e, VDot):
        fn = {"generic": "dot", "triton-like": "tl.dot",
              "tilelang-like": "T.gemm"}[flavor]
        seed = ""
        if e.seed is not None and not (isinstance(e.seed, VLit) and e.seed.value == 0.0):
            seed = f", acc={_expr(e.seed, flavor, 0)}"
        return f"{fn}({_expr(e.a, flavor, 0)}, {_expr(e.b, flavor, 0)}{seed})"
    if isinstance(e, VReduce):
        ax = e.axes[0] if len(e.axes) == 1 else list(e.axes)
        fn = {"generic": e.op, "triton-like": f"tl.{e.op}",
              "tilelang-like": f"T.{e.op}"}[flavor]
        seed = ""
        if e.seed is not None and not _ident_seed(e.seed, e.op):
            seed = f", init={_expr(e.seed, flavor, 0)}"
        return f"{fn}({_expr(e.x, flavor, 0)}, axis={ax}{seed})"
    if isinstance(e, VTranspose):
        if e.perm == (1, 0):
            return f"{_expr(e.x, flavor, 3)}.T"
        return f"transpose({_expr(e.x, flavor, 0)}, {list(e.perm)})"
    if isinstance(e, VReshape):
        return f"reshape({_expr(e.x, flavor, 0)}, {list(e.shape)})"
    if isinstance(e, VBroadcast):
        return f"broadcast({_expr(e.x, flavor, 0)}, {list(e.shape)})"
    raise TypeError(f"unknown node {type(e).__name__}")


def _ident_seed(e: VExpr, op: str) -> bool:
    if not isinstance(e, VLit):
        return False
    return {"sum": e.value == 0.0, "prod": e.value == 1.0,
            "max": e.value == float("-inf"),
            "min": e.value == float("inf")}[op]
