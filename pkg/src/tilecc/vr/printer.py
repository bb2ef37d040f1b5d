"""Text form of the VR-tile IR (golden format)."""

from __future__ import annotations

from ..exprs import format_expr
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
    VStore,
    VTranspose,
    VUn,
)

_BINFN = {"add": "add", "sub": "sub", "mul": "mul", "div": "div",
          "max": "maximum", "min": "minimum"}
_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def print_vr(module: VRModule) -> str:
    lines: list[str] = []
    for k in module.kernels:
        params = (" " + " ".join(f"{n}={v}" for n, v in k.params)) if k.params else ""
        lines.append(f"kernel {k.name} [{k.backend}]{params}:")
        for var, axis, extent in k.blocks:
            lines.append(f"  {var} = block(\"{axis}\", 0, {extent})")
        _body(k.body, lines, 1)
    return "\n".join(lines) + "\n"


def _body(items, lines: list[str], depth: int) -> None:
    pad = "  " * depth
    for item in items:
        if isinstance(item, VStore):
            sl = ", ".join(str(s) for s in item.slices)
            lines.append(f"{pad}store({item.value}, {item.buffer}[{sl}])")
            continue
        if isinstance(item.expr, VFor):
            f = item.expr
            names = ", ".join(item.names)
            params = ", ".join(f"{p} = {init}" for p, init in f.params)
            lines.append(f"{pad}{names or '_'} = for {f.var} in loop({f.extent})"
                         f" params ({params}) {{")
            _body(f.body, lines, depth + 1)
            lines.append(f"{pad}  yield ({', '.join(f.yields)})")
            lines.append(f"{pad}}}")
            continue
        lines.append(f"{pad}{item.names[0]} = {fmt_vexpr(item.expr)}")


def fmt_vexpr(e: VExpr) -> str:
    if isinstance(e, VLit):
        v = e.value
        sv = "-inf" if v == float("-inf") else ("inf" if v == float("inf") else
                                                (str(int(v)) if float(v).is_integer() else repr(v)))
        return f"tile({sv}, {list(e.shape)})"
    if isinstance(e, VRef):
        return e.name
    if isinstance(e, VLoad):
        sl = ", ".join(str(s) for s in e.slices)
        return f"{e.buffer}[{sl}]"
    if isinstance(e, VBin):
        if e.op in ("max", "min"):
            return f"{_BINFN[e.op]}({fmt_vexpr(e.a)}, {fmt_vexpr(e.b)})"
        return f"{fmt_vexpr(e.a)} {_INFIX[e.op]} {fmt_vexpr(e.b)}"
    if isinstance(e, VUn):
        return f"{e.op}({fmt_vexpr(e.x)})"
    if isinstance(e, VScale):
        return f"log2e * {fmt_vexpr(e.x)}"
    if isinstance(e, VDot):
        seed = f", init={fmt_vexpr(e.seed)}" if e.seed is not None and not _is_zero(e.seed) else ""
        return f"dot({fmt_vexpr(e.a)}, {fmt_vexpr(e.b)}{seed})"
    if isinstance(e, VReduce):
        ax = e.axes[0] if len(e.axes) == 1 else list(e.axes)
        seed = ""
        if e.seed is not None and not _is_identity(e.seed, e.op):
            seed = f", init={fmt_vexpr(e.seed)}"
        return f"{e.op}({fmt_vexpr(e.x)}, axis={ax}{seed})"
    if isinstance(e, VTranspose):
        if e.perm == (1, 0):
            return f"{fmt_vexpr(e.x)}.T"
        return f"transpose({fmt_vexpr(e.x)}, {list(e.perm)})"
    if isinstance(e, VReshape):
        return f"reshape({fmt_vexpr(e.x)}, {list(e.shape)})"
    if isinstance(e, VBroadcast):
        return f"broadcast({fmt_vexpr(e.x)}, {list(e.shape)})"
    raise TypeError(f"unknown VR node {type(e).__name__}")


def _is_zero(e: VExpr) -> bool:
    return isinstance(e, VLit) and e.value == 0.0


def _is_identity(e: VExpr, op: str) -> bool:
    if not isinstance(e, VLit):
        return False
    return {"sum": e.value == 0.0, "prod": e.value == 1.0,
            "max": e.value == float("-inf"), "min": e.value == float("inf")}[op]
