"""Virtual-register tile IR: tiles are SSA values, loops are expressions.

Loops carry their cross-iteration state explicitly as parameters and yield
the next values; memory writes happen only through store statements. This is
what makes whole-loop algebraic rewrites (hoisting, telescoping) local,
structural pattern matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

from ..errors import CompilerError
from ..exprs import Expr, format_expr
from ..numerics import Precision
from ..scalar.ir import BufferDecl, Scope


@dataclass(frozen=True)
class VSlice:
    offset: Expr  # affine over block/loop vars
    length: int

    def __str__(self):
        off = format_expr(self.offset)
        return f"{off}:{off}+{self.length}" if off != "0" else f"0:{self.length}"


class VExpr:
    shape: tuple[int, ...]

    def children(self) -> tuple["VExpr", ...]:
        return ()

    def walk(self) -> Iterator["VExpr"]:
        yield self
        for c in self.children():
            yield from c.walk()


@dataclass(frozen=True)
class VLit(VExpr):
    value: float
    shape: tuple[int, ...]


@dataclass(frozen=True)
class VLoad(VExpr):
    buffer: str
    slices: tuple[VSlice, ...]
    shape: tuple[int, ...]


@dataclass(frozen=True)
class VRef(VExpr):
    name: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class VBin(VExpr):
    op: str  # add sub mul div max min
    a: VExpr
    b: VExpr
    shape: tuple[int, ...]

    def children(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class VUn(VExpr):
    op: str  # exp exp2 log2 neg
    x: VExpr
    shape: tuple[int, ...]

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class VScale(VExpr):
    """Multiply by a named scalar constant (currently log2e)."""

    kind: str
    x: VExpr
    shape: tuple[int, ...]

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class VDot(VExpr):
    a: VExpr  # (m, k)
    b: VExpr  # (k, n)
    seed: Optional[VExpr]  # (m, n); zeros when omitted
    shape: tuple[int, ...]

    def children(self):
        return (self.a, self.b) + ((self.seed,) if self.seed is not None else ())


@dataclass(frozen=True)
class VReduce(VExpr):
    op: str  # sum max min prod
    x: VExpr
    axes: tuple[int, ...]  # reduced jointly, flat ascending order
    seed: Optional[VExpr]  # folded first, matching scalar accumulation order
    shape: tuple[int, ...]

    def children(self):
        return (self.x,) + ((self.seed,) if self.seed is not None else ())


@dataclass(frozen=True)
class VTranspose(VExpr):
    x: VExpr
    perm: tuple[int, ...]
    shape: tuple[int, ...]

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class VReshape(VExpr):
    x: VExpr
    shape: tuple[int, ...]

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class VBroadcast(VExpr):
    x: VExpr
    shape: tuple[int, ...]

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class VBinding:
    names: tuple[str, ...]
    expr: Union[VExpr, "VFor"]


@dataclass(frozen=True)
class VStore:
    value: str
    buffer: str
    slices: tuple[VSlice, ...]


@dataclass(frozen=True)
class VFor:
    var: str
    extent: int
    params: tuple[tuple[str, str], ...]  # (param name, init value name)
    body: tuple[Union[VBinding, VStore], ...]
    yields: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]  # result shapes, aligned with params


@dataclass(frozen=True)
class VKernel:
    name: str
    blocks: tuple[tuple[str, str, int], ...]  # (var, gpu axis, extent)
    body: tuple[Union[VBinding, VStore], ...]
    backend: str = "generic"
    params: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class VRModule:
    buffers: tuple[BufferDecl, ...]
    kernels: tuple[VKernel, ...]
    output: str
    precision: Precision

    def buffer(self, name: str) -> BufferDecl:
        for b in self.buffers:
            if b.name == name:
                return b
        raise CompilerError(f"unknown buffer {name!r}")


# ---------------------------------------------------------------------------
# Validation: SSA + dominance + shape consistency


def validate_vr(module: VRModule) -> list[str]:
    problems: list[str] = []
    for k in module.kernels:
        defined: set = {v for v, _, _ in k.blocks}
        _validate_body(module, k.body, set(defined), problems, k.name)
    return problems


def _validate_body(module: VRModule, body, defined: set, problems: list, where: str):
    for item in body:
        if isinstance(item, VStore):
            if item.value not in defined:
                problems.append(f"{where}: store of undefined value {item.value!r}")
            continue
        for n in item.names:
            if n in defined:
                problems.append(f"{where}: SSA violation, {n!r} bound twice")
        if isinstance(item.expr, VFor):
            f = item.expr
            inner = set(defined)
            for pname, init in f.params:
                if init not in defined:
                    problems.append(f"{where}: loop param init {init!r} undefined")
                inner.add(pname)
            inner.add(f.var)
            _validate_body(module, f.body, inner, problems, where)
            for y in f.yields:
                if y not in inner:
                    problems.append(f"{where}: yield of undefined value {y!r}")
            if len(f.yields) != len(f.params):
                problems.append(f"{where}: loop yields {len(f.yields)} values for "
                                f"{len(f.params)} params")
        else:
            for node in item.expr.walk():
                if isinstance(node, VRef) and node.name not in defined:
                    problems.append(f"{where}: use of undefined value {node.name!r}")
        for n in item.names:
            defined.add(n)


# ---------------------------------------------------------------------------
# Op counting (static and dynamic)

_COUNTED = ("add", "sub", "mul", "div", "max", "min", "exp", "exp2", "log2",
            "neg", "dot", "sum", "prod", "load", "store", "scale")


def count_ops(module: VRModule) -> dict[str, dict[str, int]]:
    """Per-op-tag counts: 'static' counts each syntactic op once; 'dynamic'
    multiplies ops inside loop expressions by the loop extents."""
    static: dict[str, int] = {}
    dynamic: dict[str, int] = {}

    def bump(tag: str, mult: int):
        static[tag] = static.get(tag, 0) + 1
        dynamic[tag] = dynamic.get(tag, 0) + mult

    def expr(e: VExpr, mult: int):
        for node in e.walk():
            if isinstance(node, VBin):
                bump(node.op, mult)
            elif isinstance(node, VUn):
                bump(node.op, mult)
            elif isinstance(node, VScale):
                bump("scale", mult)
            elif isinstance(node, VDot):
                bump("dot", mult)
            elif isinstance(node, VReduce):
                bump(node.op if node.op in ("max", "min", "prod") else "sum", mult)
            elif isinstance(node, VLoad):
                bump("load", mult)

    def body(items, mult: int):
        for item in items:
            if isinstance(item, VStore):
                bump("store", mult)
                continue
            if isinstance(item.expr, VFor):
                f = item.expr
                body(f.body, mult * f.extent)
            else:
                expr(item.expr, mult)

    for k in module.kernels:
        kmult = 1
        for _, _, extent in k.blocks:
            kmult *= extent
        body(k.body, kmult)
    return {"static": dict(sorted(static.items())),
            "dynamic": dict(sorted(dynamic.items()))}
