"""Memory-access tile IR: plain loops, explicit tile slices, no loop
expressions. This is the shape tile backends expect."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from ..errors import CompilerError
from ..numerics import Precision
from ..scalar.ir import BufferDecl, Scope
from ..vr.ir import VExpr, VSlice


@dataclass(frozen=True)
class MARef(VExpr):
    """Tile-shaped read of a buffer slice inside a compute expression."""

    buffer: str
    slices: tuple[VSlice, ...]
    shape: tuple[int, ...]


@dataclass(frozen=True)
class MACopy:
    dst: str
    dst_slices: tuple[VSlice, ...]
    src: str
    src_slices: tuple[VSlice, ...]


@dataclass(frozen=True)
class MACompute:
    dst: str
    dst_slices: tuple[VSlice, ...]
    expr: VExpr


@dataclass(frozen=True)
class MALoop:
    var: str
    extent: int
    body: tuple


MAStmt = Union[MACopy, MACompute, MALoop]


@dataclass(frozen=True)
class MAKernel:
    name: str
    blocks: tuple[tuple[str, str, int], ...]
    body: tuple[MAStmt, ...]
    backend: str = "generic"
    params: tuple[tuple[str, int], ...] = ()

    def param(self, name: str, default: int) -> int:
        for k, v in self.params:
            if k == name:
                return v
        return default


@dataclass(frozen=True)
class MAModule:
    buffers: tuple[BufferDecl, ...]
    kernels: tuple[MAKernel, ...]
    output: str
    precision: Precision

    def buffer(self, name: str) -> BufferDecl:
        for b in self.buffers:
            if b.name == name:
                return b
        raise CompilerError(f"unknown buffer {name!r}")


def validate_ma(module: MAModule) -> list[str]:
    problems: list[str] = []
    names = {b.name for b in module.buffers}

    def check_expr(e: VExpr, where: str):
        for n in e.walk():
            if isinstance(n, MARef):
                if n.buffer not in names:
                    problems.append(f"{where}: read of unknown buffer {n.buffer!r}")
                elif len(n.slices) != len(module.buffer(n.buffer).shape):
                    problems.append(f"{where}: rank mismatch on {n.buffer!r}")

    def check_body(body, where: str):
        for st in body:
            if isinstance(st, MALoop):
                check_body(st.body, where)
            elif isinstance(st, MACopy):
                for b in (st.dst, st.src):
                    if b not in names:
                        problems.append(f"{where}: copy touches unknown buffer {b!r}")
            else:
                if st.dst not in names:
                    problems.append(f"{where}: write to unknown buffer {st.dst!r}")
                check_expr(st.expr, where)

    for k in module.kernels:
        check_body(k.body, k.name)
    return problems
