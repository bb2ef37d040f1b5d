"""Scalar loop-nest IR: the substrate all scheduling transforms act on.

Statements are kept flat, in program order; each statement carries the chain
of loop variables enclosing it (outermost first) plus a substitution that
rewrites its original axis names into affine expressions over those loop
variables. Consecutive statements sharing a chain prefix share those loops.
The nested loop tree is materialized on demand (printing, interpretation,
validation); transforms only edit chains, substitutions, and statement order,
which keeps fusion and tiling mostly free of tree surgery.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

from ..errors import CompilerError
from ..exprs import (
    Access,
    Affine,
    Expr,
    Var,
    accesses,
    format_expr,
    free_vars,
    to_affine,
)
from ..numerics import Precision


class Scope(str, Enum):
    GLOBAL = "Global"
    SHARED = "Shared"
    REGISTER = "Register"


class LoopKind(str, Enum):
    MAP = "Map"
    REDUCE = "Reduce"
    SCAN = "Scan"
    UNKNOWN = "Unknown"


class TilingRole(str, Enum):
    OUTER = "Outer"
    INNER = "Inner"
    UNTILED = "Untiled"


class StmtKind(str, Enum):
    ELEMENTWISE = "ElementWise"
    REDUCTION = "Reduction"
    INIT = "Init"


@dataclass(frozen=True)
class BufferDecl:
    name: str
    shape: tuple[int, ...]
    precision: Precision
    scope: Scope = Scope.GLOBAL
    is_input: bool = False
    is_output: bool = False


@dataclass(frozen=True)
class LoopDef:
    var: str
    extent: int
    kind: LoopKind = LoopKind.UNKNOWN
    role: TilingRole = TilingRole.UNTILED
    binding: Optional[str] = None  # "blockIdx.x" | "blockIdx.y" | "blockIdx.z"
    carried: tuple[str, ...] = ()  # buffers turned into loop-carried values


@dataclass(frozen=True)
class Guard:
    """Predicate `expr < bound` applied to a statement (boundary tiles)."""

    expr: Expr
    bound: int


@dataclass(frozen=True)
class ComputeStmt:
    sid: int
    target: str
    index: tuple[Expr, ...]
    rhs: Expr
    kind: StmtKind
    reduce_op: Optional[str] = None  # combine op when this is an accumulator update
    chain: tuple[str, ...] = ()
    subst: tuple[tuple[str, Expr], ...] = ()  # axis name -> expr over loop vars
    guards: tuple[Guard, ...] = ()

    def subst_map(self) -> dict[str, Expr]:
        return dict(self.subst)

    def realized_index(self) -> tuple[Affine, ...]:
        return tuple(self._realize(i) for i in self.index)

    def _realize(self, e: Expr) -> Affine:
        a = realize_affine(e, self.subst_map())
        if a is None:
            raise CompilerError(
                f"stmt {self.sid}: non-affine realized index {format_expr(e)}"
            )
        return a

    def realized_rhs_accesses(self) -> list[tuple[Access, tuple[Affine, ...]]]:
        smap = self.subst_map()
        out = []
        for acc in accesses(self.rhs):
            aff = tuple(realize_affine(i, smap) for i in acc.index)
            if any(x is None for x in aff):
                raise CompilerError(
                    f"stmt {self.sid}: non-affine access to {acc.tensor}"
                )
            out.append((acc, aff))
        return out


def realize_affine(e: Expr, smap: dict[str, Expr]) -> Optional[Affine]:
    """Affine form of an index expression after axis substitution."""
    a = to_affine(e)
    if a is None:
        return None
    mapping = {}
    for v in list(a.coefs):
        if v in smap:
            sub = to_affine(smap[v])
            if sub is None:
                return None
            mapping[v] = sub
    return a.subst(mapping)


@dataclass(frozen=True)
class ScalarModule:
    buffers: tuple[BufferDecl, ...]
    loops: tuple[LoopDef, ...]
    stmts: tuple[ComputeStmt, ...]
    kernels: tuple[tuple[int, ...], ...]  # statement sids per kernel, in order
    output: str
    precision: Precision
    backend: str = "generic"
    params: tuple[tuple[str, int], ...] = ()  # warps / pipeline stages etc.

    # -- lookups ------------------------------------------------------------
    def buffer(self, name: str) -> BufferDecl:
        for b in self.buffers:
            if b.name == name:
                return b
        raise CompilerError(f"unknown buffer {name!r}")

    def has_buffer(self, name: str) -> bool:
        return any(b.name == name for b in self.buffers)

    def loop(self, var: str) -> LoopDef:
        for l in self.loops:
            if l.var == var:
                return l
        raise CompilerError(f"unknown loop {var!r}")

    def has_loop(self, var: str) -> bool:
        return any(l.var == var for l in self.loops)

    def stmt(self, sid: int) -> ComputeStmt:
        for s in self.stmts:
            if s.sid == sid:
                return s
        raise CompilerError(f"unknown statement id {sid}")

    def kernel_of(self, sid: int) -> int:
        for ki, sids in enumerate(self.kernels):
            if sid in sids:
                return ki
        raise CompilerError(f"statement {sid} not in any kernel")

    def kernel_stmts(self, ki: int) -> list[ComputeStmt]:
        order = {sid: i for i, sid in enumerate(self.kernels[ki])}
        return sorted(
            (s for s in self.stmts if s.sid in order), key=lambda s: order[s.sid]
        )

    def next_sid(self) -> int:
        return max((s.sid for s in self.stmts), default=-1) + 1

    # -- functional updates ---------------------------------------------------
    def with_stmts(self, stmts: Iterable[ComputeStmt], kernels=None) -> "ScalarModule":
        return replace(
            self,
            stmts=tuple(stmts),
            kernels=self.kernels if kernels is None else tuple(tuple(k) for k in kernels),
        )

    def with_loop(self, loop: LoopDef) -> "ScalarModule":
        loops = [loop if l.var == loop.var else l for l in self.loops]
        if not any(l.var == loop.var for l in self.loops):
            loops.append(loop)
        return replace(self, loops=tuple(loops))

    def with_loops(self, new: Iterable[LoopDef]) -> "ScalarModule":
        m = self
        for l in new:
            m = m.with_loop(l)
        return m

    def with_buffer(self, buf: BufferDecl) -> "ScalarModule":
        bufs = [buf if b.name == buf.name else b for b in self.buffers]
        if not any(b.name == buf.name for b in self.buffers):
            bufs.append(buf)
        return replace(self, buffers=tuple(bufs))

    def drop_buffer(self, name: str) -> "ScalarModule":
        return replace(self, buffers=tuple(b for b in self.buffers if b.name != name))

    def fresh_loop_name(self, base: str) -> str:
        if not self.has_loop(base):
            return base
        i = 2
        while self.has_loop(f"{base}_{i}"):
            i += 1
        return f"{base}_{i}"

    def fresh_buffer_name(self, base: str) -> str:
        if not self.has_buffer(base):
            return base
        i = 2
        while self.has_buffer(f"{base}_{i}"):
            i += 1
        return f"{base}_{i}"

    def structural_key(self) -> str:
        from .printer import print_module

        return print_module(self)

    def digest(self) -> str:
        return hashlib.sha256(self.structural_key().encode()).hexdigest()


# ---------------------------------------------------------------------------
# Tree view


@dataclass
class LoopNode:
    loop: LoopDef
    body: list  # list[LoopNode | ComputeStmt]


def build_tree(module: ScalarModule, ki: int) -> list:
    """Nest a kernel's statements by shared chain prefixes."""
    stmts = module.kernel_stmts(ki)
    return _group(module, stmts, 0)


def _group(module: ScalarModule, stmts: list[ComputeStmt], depth: int) -> list:
    out: list = []
    i = 0
    while i < len(stmts):
        s = stmts[i]
        if len(s.chain) <= depth:
            out.append(s)
            i += 1
            continue
        var = s.chain[depth]
        j = i
        while j < len(stmts) and len(stmts[j].chain) > depth and stmts[j].chain[depth] == var:
            j += 1
        node = LoopNode(module.loop(var), _group(module, stmts[i:j], depth + 1))
        out.append(node)
        i = j
    return out


# ---------------------------------------------------------------------------
# Validation


def validate(module: ScalarModule) -> list[str]:
    """Invariant checks; an empty list means the module is well-formed."""
    problems: list[str] = []
    buf_names = {b.name for b in module.buffers}
    loop_vars = {l.var for l in module.loops}
    seen_sids: set = set()

    kernel_sids = [sid for k in module.kernels for sid in k]
    stmt_sids = [s.sid for s in module.stmts]
    if sorted(kernel_sids) != sorted(stmt_sids):
        problems.append("kernel partition does not cover statements exactly")

    for s in module.stmts:
        if s.sid in seen_sids:
            problems.append(f"duplicate statement id {s.sid}")
        seen_sids.add(s.sid)
        if s.target not in buf_names:
            problems.append(f"stmt {s.sid}: writes unknown buffer {s.target!r}")
        for v in s.chain:
            if v not in loop_vars:
                problems.append(f"stmt {s.sid}: chain uses unknown loop {v!r}")
        smap = s.subst_map()
        used = set()
        for e in (*s.index, s.rhs, *(g.expr for g in s.guards)):
            used |= free_vars(e)
        for e in smap.values():
            used |= free_vars(e)
        used -= set(smap)
        loose = used - set(s.chain)
        if loose:
            problems.append(f"stmt {s.sid}: out-of-scope vars {sorted(loose)}")
        for acc in accesses(s.rhs):
            if acc.tensor not in buf_names:
                problems.append(f"stmt {s.sid}: reads unknown buffer {acc.tensor!r}")
        if s.reduce_op is not None:
            reads = {a.tensor for a in accesses(s.rhs)}
            if s.target not in reads:
                problems.append(
                    f"stmt {s.sid}: declared reduction update never reads its target"
                )
        if s.kind is StmtKind.REDUCTION and s.reduce_op is None:
            problems.append(f"stmt {s.sid}: Reduction statement without combine op")

    # chain consistency: within a kernel a loop var must appear at one depth,
    # over one contiguous run
    for ki in range(len(module.kernels)):
        stmts = module.kernel_stmts(ki)
        depth_of: dict[str, int] = {}
        for s in stmts:
            for d, v in enumerate(s.chain):
                if v in depth_of and depth_of[v] != d:
                    problems.append(
                        f"kernel {ki}: loop {v!r} used at depths {depth_of[v]} and {d}"
                    )
                depth_of[v] = d
        for v, d in depth_of.items():
            rows = [i for i, s in enumerate(stmts) if len(s.chain) > d and s.chain[d] == v]
            if rows and rows != list(range(rows[0], rows[-1] + 1)):
                problems.append(f"kernel {ki}: loop {v!r} spans non-contiguous statements")

    # Inner loops must not contain Outer loops
    for s in module.stmts:
        inner_seen = False
        for v in s.chain:
            role = module.loop(v).role
            if role is TilingRole.INNER:
                inner_seen = True
            elif inner_seen and role is TilingRole.OUTER:
                problems.append(f"stmt {s.sid}: Outer loop {v!r} nested inside Inner loops")

    # bound loops must be Map
    for l in module.loops:
        if l.binding is not None and l.kind not in (LoopKind.MAP, LoopKind.UNKNOWN):
            problems.append(f"loop {l.var!r}: bound to {l.binding} but kind {l.kind.value}")

    # in-bounds accesses over the full iteration domain (affine range audit)
    extents = {l.var: l.extent for l in module.loops}
    for s in module.stmts:
        try:
            shapes = {b.name: b.shape for b in module.buffers}
            tidx = s.realized_index()
            tshape = shapes.get(s.target)
            if tshape is not None:
                if len(tidx) != len(tshape):
                    problems.append(f"stmt {s.sid}: rank mismatch writing {s.target!r}")
                elif not s.guards:
                    for pos, a in enumerate(tidx):
                        lo, hi = a.value_range(extents)
                        if lo < 0 or hi >= tshape[pos]:
                            problems.append(
                                f"stmt {s.sid}: write to {s.target}[{pos}] covers "
                                f"[{lo},{hi}] outside extent {tshape[pos]}"
                            )
            if not s.guards:
                for acc, aff in s.realized_rhs_accesses():
                    shape = shapes.get(acc.tensor)
                    if shape is None:
                        continue
                    if len(aff) != len(shape):
                        problems.append(f"stmt {s.sid}: rank mismatch reading {acc.tensor!r}")
                        continue
                    for pos, a in enumerate(aff):
                        lo, hi = a.value_range(extents)
                        if lo < 0 or hi >= shape[pos]:
                            problems.append(
                                f"stmt {s.sid}: read of {acc.tensor}[{pos}] covers "
                                f"[{lo},{hi}] outside extent {shape[pos]}"
                            )
        except CompilerError as err:
            problems.append(str(err))

    return problems
