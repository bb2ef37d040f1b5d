"""Lower a bound tensor-expression program onto the scalar loop-nest IR.

Each def becomes a perfect loop nest: target axes outermost, reduction axes
innermost, with an identity-writing init statement ahead of every
accumulator. Reductions nested inside a larger body (for example a division
applied to a sum) are split into internal accumulator buffers first, so every
emitted statement is either an init, a single reduction update, or an
elementwise assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..exprs import (
    Access,
    Bin,
    Expr,
    Reduce,
    Var,
    combine_to_binop,
    free_vars,
    reduction_identity,
)
from ..numerics import Precision
from ..scalar.ir import (
    BufferDecl,
    ComputeStmt,
    LoopDef,
    LoopKind,
    ScalarModule,
    Scope,
    StmtKind,
)
from .ast import BoundProgram


@dataclass
class _Emitter:
    buffers: list
    loops: list
    stmts: list
    kernels: list
    precision: Precision
    sid: int = 0
    loop_names: set = None

    def fresh_loop(self, base: str, extent: int) -> str:
        name = base
        i = 2
        while name in self.loop_names:
            name = f"{base}_{i}"
            i += 1
        self.loop_names.add(name)
        self.loops.append(LoopDef(name, extent, LoopKind.UNKNOWN))
        return name

    def emit(self, **kw) -> ComputeStmt:
        s = ComputeStmt(sid=self.sid, **kw)
        self.sid += 1
        self.stmts.append(s)
        return s


def elaborate(bound: BoundProgram) -> ScalarModule:
    program = bound.program
    precision = program.precision()
    em = _Emitter([], [], [], [], precision, loop_names=set())

    defined = {d.target for d in program.defs}
    for decl in program.decls:
        em.buffers.append(
            BufferDecl(
                decl.name,
                bound.shapes[decl.name],
                decl.precision,
                Scope.GLOBAL,
                is_input=decl.name not in defined,
            )
        )

    for cd in program.defs:
        kernel_start = em.sid
        axis_ext = dict(bound.axis_extents[cd.target])
        red_ext = dict(bound.reduce_extents[cd.target])
        all_ext = {**axis_ext, **red_ext}

        if cd.target not in {b.name for b in em.buffers}:
            em.buffers.append(
                BufferDecl(
                    cd.target,
                    bound.shapes[cd.target],
                    precision,
                    Scope.GLOBAL,
                    is_output=cd.target == program.output,
                )
            )

        axis_order = list(cd.axis_names()) + [
            v for v in all_ext if v not in cd.axis_names()
        ]
        body = _split_nested_reductions(em, cd.target, cd.body, all_ext, axis_order)

        target_axes = list(cd.axis_names())
        if cd.reduce is not None:
            _emit_reduction(
                em, cd.target, target_axes, cd.reduce[0], list(cd.reduce[1]),
                body, all_ext,
            )
        else:
            _emit_map(em, cd.target, target_axes, body, all_ext)

        em.kernels.append(tuple(range(kernel_start, em.sid)))

    return ScalarModule(
        buffers=tuple(em.buffers),
        loops=tuple(em.loops),
        stmts=tuple(em.stmts),
        kernels=tuple(em.kernels),
        output=program.output,
        precision=precision,
    )


def _split_nested_reductions(
    em: _Emitter, host: str, e: Expr, ext: dict, axis_order: list[str]
) -> Expr:
    """Replace nested Reduce nodes by accesses to synthesized accumulators."""
    if isinstance(e, Reduce):
        inner = _split_nested_reductions(em, host, e.body, ext, axis_order)
        free = free_vars(inner) - set(e.axes)
        over = [v for v in axis_order if v in free]
        over += sorted(free - set(over))
        counter = sum(1 for b in em.buffers if b.name.startswith(f"{host}_racc"))
        name = f"{host}_racc{counter}"
        shape = tuple(ext[v] for v in over)
        em.buffers.append(BufferDecl(name, shape, em.precision, Scope.GLOBAL))
        _emit_reduction(em, name, over, e.op, list(e.axes), inner, ext)
        return Access(name, tuple(Var(v) for v in over))
    if isinstance(e, Bin):
        return Bin(e.op, _split_nested_reductions(em, host, e.a, ext, axis_order),
                   _split_nested_reductions(em, host, e.b, ext, axis_order))
    from ..exprs import Un

    if isinstance(e, Un):
        return Un(e.op, _split_nested_reductions(em, host, e.x, ext, axis_order))
    return e


def _nest(em: _Emitter, axes: list[str], ext: dict) -> tuple[tuple, tuple]:
    chain = []
    subst = []
    for v in axes:
        lv = em.fresh_loop(v, ext[v])
        chain.append(lv)
        subst.append((v, Var(lv)))
    return tuple(chain), tuple(subst)


def _emit_map(em: _Emitter, target: str, axes: list[str], body: Expr, ext: dict):
    chain, subst = _nest(em, axes, ext)
    em.emit(
        target=target,
        index=tuple(Var(v) for v in axes),
        rhs=body,
        kind=StmtKind.ELEMENTWISE,
        chain=chain,
        subst=subst,
    )


def _emit_reduction(
    em: _Emitter,
    target: str,
    target_axes: list[str],
    op: str,
    red_axes: list[str],
    body: Expr,
    ext: dict,
):
    index = tuple(Var(v) for v in target_axes)
    init_chain, init_subst = _nest(em, target_axes, ext)
    em.emit(
        target=target,
        index=index,
        rhs=reduction_identity(op),
        kind=StmtKind.INIT,
        chain=init_chain,
        subst=init_subst,
    )
    upd_chain, upd_subst = _nest(em, target_axes + red_axes, ext)
    em.emit(
        target=target,
        index=index,
        rhs=Bin(combine_to_binop(op), Access(target, index), body),
        kind=StmtKind.REDUCTION,
        reduce_op=op,
        chain=upd_chain,
        subst=upd_subst,
    )
