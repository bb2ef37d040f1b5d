"""The scheduling primitives.

All primitives are pure: they take a ScalarModule and return a new one.
Statement ids are preserved; statements synthesized by a transform (repair
scales, staging copies) take fresh ids past the current maximum, in a
deterministic order, so schedules can reference nodes stably across replay.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

from ..errors import (
    AxisTaken,
    CompilerError,
    FootprintNotAffine,
    IllegalReorder,
    IterationMismatch,
    NoRepairRule,
    NonElementWisePath,
    NotElementWiseProducer,
    NotParallel,
    NotPerfectNest,
    NotRematerializable,
    NotScanShaped,
    WouldViolateDependence,
)
from ..exprs import (
    Access,
    Affine,
    Bin,
    Const,
    Expr,
    Var,
    accesses,
    rewrite_accesses,
    substitute,
    to_affine,
)
from ..scalar.graph import build_block_graph, classify_loops
from ..scalar.ir import (
    BufferDecl,
    ComputeStmt,
    Guard,
    LoopDef,
    LoopKind,
    ScalarModule,
    Scope,
    StmtKind,
    TilingRole,
    realize_affine,
)
from .repair import DEFAULT_REGISTRY, RepairRegistry


# ---------------------------------------------------------------------------
# Shared helpers


def stmt_target_axes(s: ComputeStmt) -> list[str]:
    from ..exprs import free_vars

    out: list[str] = []
    smap = s.subst_map()
    for e in s.index:
        for v in sorted(free_vars(e)):
            if v in smap and v not in out:
                out.append(v)
    return out


def stmt_axes_in_chain_order(s: ComputeStmt) -> list[str]:
    smap = s.subst_map()
    pos = {}
    for axis, e in smap.items():
        a = to_affine(e)
        first = min(
            (s.chain.index(v) for v in (a.vars() if a else set()) if v in s.chain),
            default=len(s.chain),
        )
        pos[axis] = first
    return sorted(smap, key=lambda ax: (pos[ax], ax))


def accumulates_along(module: ScalarModule, buffer: str) -> set:
    """Loops across whose iterations `buffer` keeps accumulating state."""
    out: set = set()
    for s in module.stmts:
        if s.target != buffer:
            continue
        reads_self = any(a.tensor == buffer for a in accesses(s.rhs))
        if not reads_self:
            continue
        widx = s.realized_index()
        for v in s.chain:
            if not any(v in a.coefs for a in widx):
                out.add(v)
    return out


def running_valued_buffers(module: ScalarModule, ki: int, loop_var: str) -> set:
    """Buffers whose values inside `loop_var` are still evolving: direct
    accumulators across the loop, plus anything computed (transitively) from
    one inside the loop. Reading these from a statement fused under the loop
    would observe partially-reduced state."""
    stmts = [s for s in module.kernel_stmts(ki) if loop_var in s.chain]
    tainted: set = set()
    for s in stmts:
        if loop_var in accumulates_along(module, s.target):
            tainted.add(s.target)
    changed = True
    while changed:
        changed = False
        for s in stmts:
            if s.target in tainted:
                continue
            reads = {a.tensor for a in accesses(s.rhs)}
            if reads & tainted:
                tainted.add(s.target)
                changed = True
    return tainted


def _loops_in_exprs(exprs, smap) -> set:
    out: set = set()
    for e in exprs:
        a = realize_affine(e, smap)
        if a is not None:
            out |= a.vars()
    return out


def _remove_unused_loops(module: ScalarModule) -> ScalarModule:
    used: set = set()
    for s in module.stmts:
        used |= set(s.chain)
    return replace(module, loops=tuple(l for l in module.loops if l.var in used))


def _insert_in_list(kernel: list[int], stmt_map: dict, prefix: tuple[str, ...],
                    new_sids: list[int], at_start: bool = False) -> None:
    """Insert sids adjacent to the run of kernel stmts sharing `prefix`."""
    rows = [
        i
        for i, sid in enumerate(kernel)
        if stmt_map[sid].chain[: len(prefix)] == prefix
    ]
    at = (rows[0] if at_start else rows[-1] + 1) if rows else len(kernel)
    kernel[at:at] = new_sids


def _rebuild(module: ScalarModule, stmt_map: dict, kernels) -> ScalarModule:
    kernels = [list(k) for k in kernels if k]
    stmts = [stmt_map[sid] for k in kernels for sid in k]
    return module.with_stmts(stmts, kernels)


# ---------------------------------------------------------------------------
# bi_level_tile


def bi_level_tile(module: ScalarModule, sid: int, factors: dict,
                  inner_cap: Optional[int] = None) -> ScalarModule:
    """Split every loop of the statement's perfect nest into outer/inner and
    hoist all outer loops outside all inner loops."""
    s = module.stmt(sid)
    nest = list(s.chain)
    if not nest:
        return module  # 0-dim statement: nothing to tile
    for v in nest:
        l = module.loop(v)
        if l.role is not TilingRole.UNTILED:
            raise NotPerfectNest(f"loop {v!r} already tiled")
    others = [t for t in module.stmts if t.sid != sid and set(t.chain) & set(nest)]
    if others:
        raise NotPerfectNest(
            f"nest of stmt {sid} shares loops with stmts {[t.sid for t in others]}"
        )
    kinds = {v: module.loop(v).kind for v in nest}
    if any(k in (LoopKind.SCAN, LoopKind.UNKNOWN) for k in kinds.values()) and len(nest) > 1:
        scans = [v for v in nest if kinds[v] in (LoopKind.SCAN, LoopKind.UNKNOWN)]
        raise IllegalReorder(f"cannot reorder across sequential loops {scans}")

    outer_chain: list[str] = []
    inner_chain: list[str] = []
    new_loops: list[LoopDef] = []
    subst = dict(s.subst_map())
    guards = list(s.guards)
    mod = module
    for v in nest:
        l = module.loop(v)
        f = factors.get(v, "whole")
        if f == "whole":
            # keep the loop as a full-width tile dimension, no outer twin
            inner_chain.append(v)
            new_loops.append(replace(l, role=TilingRole.INNER))
            continue
        f = int(f)
        if f < 1:
            raise NotPerfectNest(f"factor for {v!r} must be >= 1")
        f = min(f, l.extent)
        if inner_cap is not None and f > inner_cap:
            f = inner_cap
        outer_name = mod.fresh_loop_name(v + "0")
        mod = mod.with_loop(LoopDef(outer_name, math.ceil(l.extent / f), l.kind,
                                    TilingRole.OUTER))
        inner_name = mod.fresh_loop_name(v + "1")
        mod = mod.with_loop(LoopDef(inner_name, f, l.kind, TilingRole.INNER))
        outer_chain.append(outer_name)
        inner_chain.append(inner_name)
        rebuilt = Bin("add", Bin("mul", Const(float(f)), Var(outer_name)), Var(inner_name))
        # axis expressions referencing v get the reconstruction
        for axis in list(subst):
            subst[axis] = substitute(subst[axis], {v: rebuilt})
        guards = [Guard(substitute(g.expr, {v: rebuilt}), g.bound) for g in guards]
        if l.extent % f != 0:
            guards.append(Guard(rebuilt, l.extent))

    chain = tuple(outer_chain + inner_chain)
    new_stmt = replace(s, chain=chain, subst=tuple(sorted(subst.items())),
                       guards=tuple(guards))
    mod = mod.with_loops(new_loops)
    mod = mod.with_stmts(new_stmt if t.sid == sid else t for t in mod.stmts)
    return _remove_unused_loops(mod)


# ---------------------------------------------------------------------------
# fuse_classic


def _match_consumer_axes(consumer: ComputeStmt, producer: ComputeStmt) -> dict:
    """Map consumer axis -> producer axis via reads of the produced buffer."""
    mapping: dict[str, str] = {}
    prod_index = producer.index
    for acc in accesses(consumer.rhs):
        if acc.tensor != producer.target:
            continue
        if len(acc.index) != len(prod_index):
            raise IterationMismatch(
                f"rank mismatch reading {producer.target!r} in stmt {consumer.sid}"
            )
        for pos, (ci, pi) in enumerate(zip(acc.index, prod_index)):
            if not isinstance(pi, Var):
                raise IterationMismatch(
                    f"producer {producer.sid} writes a non-var index at {pos}"
                )
            if isinstance(ci, Var) and ci.name in dict(consumer.subst):
                prev = mapping.get(ci.name)
                if prev is not None and prev != pi.name:
                    raise IterationMismatch(
                        f"axis {ci.name!r} matches both {prev!r} and {pi.name!r}"
                    )
                mapping[ci.name] = pi.name
    if not mapping:
        raise IterationMismatch(
            f"stmt {consumer.sid} has no var-indexed read of {producer.target!r}"
        )
    return mapping


def _rehome(module: ScalarModule, consumer: ComputeStmt, producer: ComputeStmt,
            depth: int) -> tuple[ComputeStmt, ScalarModule]:
    """Rebuild the consumer's loops under the producer's chain prefix."""
    axmap = _match_consumer_axes(consumer, producer)
    dest_chain = list(producer.chain[:depth])
    psubst = producer.subst_map()
    csubst = consumer.subst_map()
    mod = module
    fresh: list[str] = []
    new_subst: dict[str, Expr] = {}

    def realize_axis(expr: Expr) -> Expr:
        """Producer-axis realization with non-dest loops replaced by fresh ones."""
        nonlocal mod
        a = to_affine(expr)
        if a is None:
            raise IterationMismatch("non-affine producer realization")
        mapping = {}
        for v in sorted(a.coefs, key=lambda x: producer.chain.index(x) if x in producer.chain else 99):
            if v in dest_chain:
                continue
            l = mod.loop(v)
            nv = mod.fresh_loop_name(v)
            mod = mod.with_loop(LoopDef(nv, l.extent, l.kind, TilingRole.INNER))
            fresh.append(nv)
            mapping[v] = Affine.var(nv)
        return a.subst(mapping).as_expr()

    for axis in stmt_axes_in_chain_order(consumer):
        if axis in axmap:
            new_subst[axis] = realize_axis(psubst[axmap[axis]])
        else:
            a = to_affine(csubst[axis])
            if a is None:
                raise IterationMismatch(f"non-affine axis realization for {axis!r}")
            mapping = {}
            for v in sorted(a.coefs, key=lambda x: consumer.chain.index(x) if x in consumer.chain else 99):
                l = mod.loop(v)
                nv = mod.fresh_loop_name(v)
                mod = mod.with_loop(LoopDef(nv, l.extent, l.kind, TilingRole.INNER))
                fresh.append(nv)
                mapping[v] = Affine.var(nv)
            new_subst[axis] = a.subst(mapping).as_expr()

    new_stmt = replace(
        consumer,
        chain=tuple(dest_chain + fresh),
        subst=tuple(sorted(new_subst.items())),
    )
    return new_stmt, mod


def _verify_cover_map(stmt_map: dict, stmt: ComputeStmt, dest_depth_chain) -> None:
    """Reads of in-kernel buffers must match their writers element-for-element
    on the shared loops (same realized index as functions of those loops)."""
    writers: dict[str, ComputeStmt] = {}
    for t in stmt_map.values():
        if t.kind is not StmtKind.INIT or t.target not in writers:
            writers.setdefault(t.target, t)
            if t.kind is not StmtKind.INIT:
                writers[t.target] = t
    smap = stmt.subst_map()
    for acc in accesses(stmt.rhs):
        w = writers.get(acc.tensor)
        if w is None or w.sid == stmt.sid:
            continue
        ra = [realize_affine(i, smap) for i in acc.index]
        wa = w.realized_index()
        if any(x is None for x in ra) or len(ra) != len(wa):
            raise IterationMismatch(f"cannot align read of {acc.tensor!r}")
        for rx, wx in zip(ra, wa):
            for v in dest_depth_chain:
                if rx.coefs.get(v, 0) != wx.coefs.get(v, 0):
                    raise IterationMismatch(
                        f"read of {acc.tensor!r} disagrees with its writer on loop {v!r}"
                    )


def fuse_classic(module: ScalarModule, sid: int, dest_sid: int, depth: int,
                 _allow_accumulating_reads: bool = False) -> ScalarModule:
    """Fuse a statement under the loop-chain prefix of a producer statement."""
    s = module.stmt(sid)
    dest = module.stmt(dest_sid)
    if depth < 1 or depth > len(dest.chain):
        raise NotElementWiseProducer(f"invalid fusion depth {depth}")
    dest_chain = dest.chain[:depth]

    # the dest loops must be element-wise levels of the producer: its write
    # index must advance with each of them
    widx = dest.realized_index()
    for v in dest_chain:
        if not any(v in a.coefs for a in widx):
            raise NotElementWiseProducer(
                f"loop {v!r} is not an element-wise level of producer {dest_sid}"
            )

    graph = build_block_graph(module)
    if dest_sid not in graph.producers(sid):
        raise NotElementWiseProducer(f"stmt {dest_sid} does not produce for stmt {sid}")

    ki_dest = module.kernel_of(dest_sid)
    ki_src = module.kernel_of(sid)

    if not _allow_accumulating_reads:
        for acc in accesses(s.rhs):
            if acc.tensor == s.target:
                continue
            if not any(t.target == acc.tensor and module.kernel_of(t.sid) == ki_dest
                       for t in module.stmts):
                continue
            for v in dest_chain:
                if acc.tensor in running_valued_buffers(module, ki_dest, v):
                    raise WouldViolateDependence(
                        f"stmt {sid} would read {acc.tensor!r} inside loop {v!r} "
                        f"where its value is still evolving"
                    )
    new_stmt, mod = _rehome(module, s, dest, depth)

    # a loop the fused statement accumulates across must not be block-bound
    new_widx = new_stmt.realized_index()
    for v in dest_chain:
        if module.loop(v).binding is not None and not any(
            v in a.coefs for a in new_widx
        ):
            raise WouldViolateDependence(
                f"fusing stmt {sid} would carry {s.target!r} across the "
                f"block-bound loop {v!r}"
            )

    stmt_map = {t.sid: t for t in mod.stmts}
    stmt_map[sid] = new_stmt

    # init partner of a reduction moves above the loops realizing its reduce axes
    init_new: Optional[ComputeStmt] = None
    init_prefix: tuple[str, ...] = ()
    if s.kind is StmtKind.REDUCTION:
        init = _init_partner(module, s)
        if init is not None and init.sid == dest_sid:
            init = None  # fusing into the init's own nest: it already sits right
        if init is not None:
            tgt_axes = stmt_target_axes(new_stmt)
            red_axes = [a for a in new_stmt.subst_map() if a not in tgt_axes]
            red_loops = _loops_in_exprs(
                [new_stmt.subst_map()[a] for a in red_axes], {}
            )
            cut = len(dest_chain)
            for i, v in enumerate(dest_chain):
                if v in red_loops:
                    cut = i
                    break
            init_prefix = tuple(dest_chain[:cut])
            init_new, mod = _rehome_init(mod, init, new_stmt, init_prefix)
            stmt_map[init_new.sid] = init_new

    _verify_cover_map(stmt_map, new_stmt, dest_chain)

    kernels = [list(k) for k in mod.kernels]
    moved = [sid] + ([init_new.sid] if init_new is not None else [])
    for k in kernels:
        for m_sid in moved:
            if m_sid in k:
                k.remove(m_sid)
    ki_dest = next(i for i, k in enumerate(kernels) if dest_sid in k)
    if init_new is not None:
        if len(init_prefix) < len(dest_chain):
            # above the first reduce-realizing loop, before its run
            _insert_in_list(kernels[ki_dest], stmt_map,
                            tuple(dest_chain[: len(init_prefix) + 1]),
                            [init_new.sid], at_start=True)
        else:
            _insert_in_list(kernels[ki_dest], stmt_map, tuple(dest_chain),
                            [init_new.sid])
    _insert_in_list(kernels[ki_dest], stmt_map, tuple(dest_chain), [sid])
    mod = _rebuild(mod, stmt_map, kernels)
    mod = _remove_unused_loops(mod)
    return classify_loops(mod)


def _init_partner(module: ScalarModule, s: ComputeStmt) -> Optional[ComputeStmt]:
    for t in module.stmts:
        if t.kind is StmtKind.INIT and t.target == s.target and t.sid != s.sid:
            return t
    return None


def _rehome_init(module: ScalarModule, init: ComputeStmt, fused: ComputeStmt,
                 prefix: tuple[str, ...]) -> tuple[ComputeStmt, ScalarModule]:
    """Give the init statement the fused statement's target-axis realization,
    chained under `prefix` with fresh loops for the sub-prefix parts.

    Init and update use distinct axis names; the correspondence is positional
    on the (pure-var) target index.
    """
    mod = module
    fsub = fused.subst_map()
    new_subst: dict[str, Expr] = {}
    fresh: list[str] = []
    if len(init.index) != len(fused.index):
        raise IterationMismatch("init/update target rank mismatch")
    for ii, fi in zip(init.index, fused.index):
        if not isinstance(ii, Var) or not isinstance(fi, Var):
            raise IterationMismatch("init/update target index is not a plain axis")
        a = to_affine(fsub[fi.name])
        if a is None:
            raise IterationMismatch("non-affine axis in init rehome")
        mapping = {}
        for v in sorted(a.coefs, key=lambda x: fused.chain.index(x) if x in fused.chain else 99):
            if v in prefix:
                continue
            l = mod.loop(v)
            nv = mod.fresh_loop_name(v)
            mod = mod.with_loop(LoopDef(nv, l.extent, l.kind, TilingRole.INNER))
            fresh.append(nv)
            mapping[v] = Affine.var(nv)
        new_subst[ii.name] = a.subst(mapping).as_expr()
    new_init = replace(init, chain=tuple(list(prefix) + fresh),
                       subst=tuple(sorted(new_subst.items())))
    return new_init, mod


# ---------------------------------------------------------------------------
# rolling_update


def _elementwise_factors(e: Expr) -> list[Expr]:
    """Top-level multiplicative factorization."""
    if isinstance(e, Bin) and e.op == "mul":
        return _elementwise_factors(e.a) + _elementwise_factors(e.b)
    return [e]


def _inline_path(module: ScalarModule, expr: Expr, path_stmts: list[ComputeStmt]) -> Expr:
    """Inline elementwise path statements into expr (by axis-matched rhs)."""
    by_target = {t.target: t for t in path_stmts}

    def repl(acc: Access) -> Expr:
        t = by_target.get(acc.tensor)
        if t is None:
            return acc
        mapping = {}
        for pos, ti in enumerate(t.index):
            if not isinstance(ti, Var):
                raise NonElementWisePath(
                    f"captured stmt {t.sid} writes non-var index"
                )
            mapping[ti.name] = acc.index[pos]
        return substitute(_inline_path(module, t.rhs, path_stmts), mapping)

    return rewrite_accesses(expr, repl)


def rolling_update(module: ScalarModule, r2_sid: int, loop_var: str,
                   fold_division: bool = False,
                   registry: RepairRegistry = DEFAULT_REGISTRY) -> ScalarModule:
    """Fuse reduction r2 into a loop that computes a running upstream
    reduction, repairing r2's accumulator each iteration and capturing the
    element-wise statements on the path.

    With ``fold_division``, when r2's only consumer divides it by another
    reduction already rolled in the same loop, the division is folded into
    the loop body (divide each iteration, rescale by the previous value the
    next iteration); the expression rewriter later telescopes this into a
    single post-loop division.
    """
    r2 = module.stmt(r2_sid)
    if r2.kind is not StmtKind.REDUCTION or r2.reduce_op is None:
        raise NoRepairRule(f"stmt {r2_sid} is not a reduction update")
    loop = module.loop(loop_var)
    graph = build_block_graph(module)

    # candidate r1s: reductions running across loop_var upstream of r2
    preds = set(graph.predecessors(r2_sid))
    candidates = [
        t
        for t in module.stmts
        if t.sid in preds
        and t.kind is StmtKind.REDUCTION
        and loop_var in t.chain
        and loop_var in accumulates_along(module, t.target)
    ]
    if not candidates:
        raise NotScanShaped(
            f"loop {loop_var!r} carries no running reduction upstream of stmt {r2_sid}"
        )

    r1 = rule = None
    path_stmts: list[ComputeStmt] = []
    last_err: Optional[Exception] = None
    for cand in candidates:
        paths = graph.paths(cand.sid, r2_sid, limit=64)
        path_sids: list[int] = []
        ok = True
        for p in paths:
            for sid in p[1:-1]:
                t = module.stmt(sid)
                if t.kind is not StmtKind.ELEMENTWISE:
                    last_err = NonElementWisePath(
                        f"stmt {sid} on the path {cand.sid}->{r2_sid} is not element-wise"
                    )
                    ok = False
                    break
                if sid not in path_sids:
                    path_sids.append(sid)
            if not ok:
                break
        if not ok:
            continue
        cand_path = [module.stmt(sid) for sid in sorted(path_sids)]
        # bridge check: inline the path into r2's contribution and match the
        # r1-dependent factor against the registry
        try:
            contrib = _strip_self(r2)
            inlined = _inline_path(module, contrib, cand_path)
        except (NoRepairRule, NonElementWisePath) as err:
            last_err = err
            continue
        factors = _elementwise_factors(inlined)
        r_factors = [f for f in factors if any(
            isinstance(n, Access) and n.tensor == cand.target for n in f.walk())]
        if len(r_factors) != 1:
            last_err = NoRepairRule(
                f"contribution of stmt {r2_sid} must contain the running value "
                f"{cand.target!r} in exactly one factor (found {len(r_factors)})"
            )
            continue
        shape_probe = _abstract_factor(r_factors[0], cand.target)
        found = registry.find(cand.reduce_op, r2.reduce_op, shape_probe)
        if found is None:
            last_err = NoRepairRule(
                f"no repair rule for ({cand.reduce_op}, bridge, {r2.reduce_op})"
            )
            continue
        r1, rule, path_stmts = cand, found, cand_path
        break
    if r1 is None:
        raise last_err if last_err is not None else NoRepairRule(
            f"no rolling-update candidate for stmt {r2_sid}"
        )

    mod = module
    stmt_map = {t.sid: t for t in mod.stmts}
    kernels = [list(k) for k in mod.kernels]
    ki_dest = next(i for i, k in enumerate(kernels) if r1.sid in k)
    dest_prefix = r1.chain[: r1.chain.index(loop_var) + 1]
    above_prefix = dest_prefix[:-1]

    # 1. running-value snapshot + repair scale (reused across rollings)
    prev_name = f"{r1.target}_prev"
    scale_name = f"{r1.target}_scale"
    next_sid = mod.next_sid()
    if not mod.has_buffer(prev_name):
        r1_decl = mod.buffer(r1.target)
        block_axes = stmt_target_axes(r1)
        fsub = r1.subst_map()
        mod2 = mod
        prev_chain: list[str] = list(dest_prefix)
        prev_subst: dict[str, Expr] = {}
        for axis in block_axes:
            a = to_affine(fsub[axis])
            mapping = {}
            for v in sorted(a.coefs, key=lambda x: r1.chain.index(x) if x in r1.chain else 99):
                if v in dest_prefix:
                    continue
                l = mod2.loop(v)
                nv = mod2.fresh_loop_name(v)
                mod2 = mod2.with_loop(LoopDef(nv, l.extent, l.kind, TilingRole.INNER))
                prev_chain.append(nv)
                mapping[v] = Affine.var(nv)
            prev_subst[axis] = a.subst(mapping).as_expr()
        mod = mod2
        mod = mod.with_buffer(BufferDecl(prev_name, r1_decl.shape, r1_decl.precision,
                                         r1_decl.scope))
        mod = mod.with_buffer(BufferDecl(scale_name, r1_decl.shape, r1_decl.precision,
                                         r1_decl.scope))
        prev_stmt = ComputeStmt(
            sid=next_sid,
            target=prev_name,
            index=r1.index,
            rhs=Access(r1.target, r1.index),
            kind=StmtKind.ELEMENTWISE,
            chain=tuple(prev_chain),
            subst=tuple(sorted(prev_subst.items())),
        )
        next_sid += 1
        scale_rhs = rule.repair(Access(prev_name, r1.index), Access(r1.target, r1.index))
        scale_chain: list[str] = list(dest_prefix)
        scale_subst: dict[str, Expr] = {}
        mod2 = mod
        for axis in stmt_target_axes(r1):
            a = to_affine(r1.subst_map()[axis])
            mapping = {}
            for v in sorted(a.coefs, key=lambda x: r1.chain.index(x) if x in r1.chain else 99):
                if v in dest_prefix:
                    continue
                l = mod2.loop(v)
                nv = mod2.fresh_loop_name(v)
                mod2 = mod2.with_loop(LoopDef(nv, l.extent, l.kind, TilingRole.INNER))
                scale_chain.append(nv)
                mapping[v] = Affine.var(nv)
            scale_subst[axis] = a.subst(mapping).as_expr()
        mod = mod2
        scale_stmt = ComputeStmt(
            sid=next_sid,
            target=scale_name,
            index=r1.index,
            rhs=scale_rhs,
            kind=StmtKind.ELEMENTWISE,
            chain=tuple(scale_chain),
            subst=tuple(sorted(scale_subst.items())),
        )
        next_sid += 1
        stmt_map[prev_stmt.sid] = prev_stmt
        stmt_map[scale_stmt.sid] = scale_stmt
        _insert_in_list(kernels[ki_dest], stmt_map, tuple(dest_prefix),
                        [prev_stmt.sid], at_start=True)
        # scale goes right after r1's update
        at = kernels[ki_dest].index(r1.sid) + 1
        kernels[ki_dest][at:at] = [scale_stmt.sid]
        mod = _rebuild(mod, stmt_map, kernels)
        kernels = [list(k) for k in mod.kernels]
        ki_dest = next(i for i, k in enumerate(kernels) if r1.sid in k)

    # 2. capture path statements (re-home inside the loop, after the scale)
    for t in path_stmts:
        cur = mod.stmt(t.sid)
        if loop_var in cur.chain:
            continue  # already captured by an earlier rolling
        producer = _pick_kernel_producer(mod, cur, ki_dest)
        new_t, mod = _rehome(mod, cur, producer, len(dest_prefix))
        stmt_map = {x.sid: x for x in mod.stmts}
        stmt_map[t.sid] = new_t
        kernels = [list(k) for k in mod.kernels]
        for k in kernels:
            if t.sid in k:
                k.remove(t.sid)
        ki_dest = next(i for i, k in enumerate(kernels) if r1.sid in k)
        _insert_in_list(kernels[ki_dest], stmt_map, tuple(dest_prefix), [t.sid])
        mod = _rebuild(mod, stmt_map, kernels)
        kernels = [list(k) for k in mod.kernels]

    # 3. move r2 inside the loop with a repair statement ahead of it
    cur_r2 = mod.stmt(r2_sid)
    producer = _pick_kernel_producer(mod, cur_r2, ki_dest)
    new_r2, mod = _rehome(mod, cur_r2, producer, len(dest_prefix))
    _check_reduce_cover(mod, cur_r2, new_r2)
    stmt_map = {x.sid: x for x in mod.stmts}
    stmt_map[r2_sid] = new_r2
    kernels = [list(k) for k in mod.kernels]
    for k in kernels:
        if r2_sid in k:
            k.remove(r2_sid)
    ki_dest = next(i for i, k in enumerate(kernels) if r1.sid in k)

    init = _init_partner(mod, cur_r2)
    if init is not None:
        init_new, mod = _rehome_init(mod, init, new_r2, tuple(above_prefix))
        stmt_map[init_new.sid] = init_new
        for k in kernels:
            if init.sid in k:
                k.remove(init.sid)
        _insert_in_list(kernels[ki_dest], stmt_map,
                        tuple(dest_prefix), [init_new.sid], at_start=True)

    corr = _axis_correspondence(module, r2, r1, path_stmts)
    repair_stmt = ComputeStmt(
        sid=mod.next_sid(),
        target=new_r2.target,
        index=new_r2.index,
        rhs=Bin("mul", Access(new_r2.target, new_r2.index),
                Access(scale_name, _index_for_r1_indexed_buffer(r1, corr))),
        kind=StmtKind.REDUCTION,
        reduce_op="prod",
        chain=tuple(dest_prefix) + _target_only_chain(mod, new_r2, len(dest_prefix)),
        subst=_target_only_subst(mod, new_r2, len(dest_prefix)),
    )
    mod = mod.with_stmts(list(mod.stmts) + [repair_stmt],
                         [list(k) for k in mod.kernels])
    stmt_map[repair_stmt.sid] = repair_stmt
    _insert_in_list(kernels[ki_dest], stmt_map, tuple(dest_prefix),
                    [repair_stmt.sid, r2_sid])
    mod = _rebuild(mod, stmt_map, kernels)

    if fold_division:
        mod = _fold_division(mod, r2_sid, loop_var, scale_name)

    mod = _remove_unused_loops(mod)
    return classify_loops(mod)


def _strip_self(r: ComputeStmt) -> Expr:
    """The non-self operand of a reduction update's combine."""
    rhs = r.rhs
    if isinstance(rhs, Bin):
        a_self = any(isinstance(n, Access) and n.tensor == r.target for n in rhs.a.walk())
        b_self = any(isinstance(n, Access) and n.tensor == r.target for n in rhs.b.walk())
        if a_self and not b_self:
            return rhs.b
        if b_self and not a_self:
            return rhs.a
    raise NoRepairRule(f"stmt {r.sid}: cannot split the accumulator update")


def _abstract_factor(f: Expr, r_name: str) -> Expr:
    """Replace accesses to the running value by $r and any other leaf by $x."""

    def repl(acc: Access) -> Expr:
        return Var("$r") if acc.tensor == r_name else Var("$x")

    out = rewrite_accesses(f, repl)

    def keep_structure(e: Expr) -> Expr:
        if isinstance(e, Bin):
            return Bin(e.op, keep_structure(e.a), keep_structure(e.b))
        if isinstance(e, Un):
            return Un(e.op, keep_structure(e.x))
        if isinstance(e, Var) and not e.name.startswith("$"):
            return Var("$x")
        return e

    from ..exprs import Un

    return keep_structure(out)


def _pick_kernel_producer(module: ScalarModule, stmt: ComputeStmt, ki: int) -> ComputeStmt:
    """A non-init producer of stmt living in kernel ki (for axis matching)."""
    kernel_sids = set(module.kernels[ki])
    reads = {a.tensor for a in accesses(stmt.rhs) if a.tensor != stmt.target}
    best = None
    for t in module.stmts:
        if t.sid in kernel_sids and t.target in reads and t.kind is not StmtKind.INIT:
            if best is None or len(t.chain) > len(best.chain):
                best = t
    if best is None:
        raise IterationMismatch(
            f"stmt {stmt.sid} reads nothing produced in the destination kernel"
        )
    return best


def _check_reduce_cover(module: ScalarModule, old: ComputeStmt,
                        new: ComputeStmt) -> None:
    """The rehomed statement must cover exactly the same iteration range per
    axis as it did before fusion."""
    extents = {l.var: l.extent for l in module.loops}
    old_map = old.subst_map()
    for axis, e in new.subst_map().items():
        a = to_affine(e)
        b = to_affine(old_map[axis])
        if a is None or b is None:
            raise IterationMismatch("non-affine axis realization")
        lo, hi = a.value_range(extents)
        lo0, hi0 = b.value_range(extents)
        if (lo, hi) != (lo0, hi0):
            raise IterationMismatch(
                f"axis {axis!r} covers [{lo},{hi}] after fusion, was [{lo0},{hi0}]"
            )


def _target_only_chain(module: ScalarModule, stmt: ComputeStmt, skip: int) -> tuple:
    """Chain parts (after `skip`) that realize the statement's target axes."""
    tgt = stmt_target_axes(stmt)
    keep_loops = _loops_in_exprs([stmt.subst_map()[a] for a in tgt], {})
    return tuple(v for v in stmt.chain[skip:] if v in keep_loops)


def _target_only_subst(module: ScalarModule, stmt: ComputeStmt, skip: int) -> tuple:
    tgt = stmt_target_axes(stmt)
    return tuple(sorted((a, e) for a, e in stmt.subst if a in tgt))


def _axis_correspondence(module: ScalarModule, src: ComputeStmt,
                         dst: ComputeStmt, via: list[ComputeStmt]) -> dict:
    """Map src's axes onto dst's axes by composing access matches along the
    read chain src -> ... -> dst."""
    hops = {t.target: t for t in via}
    hops[dst.target] = dst
    corr: dict[str, str] = {a: a for a in src.subst_map()}
    cur = src
    seen: set = set()
    while cur.sid != dst.sid:
        nxt = None
        for acc in accesses(cur.rhs):
            t = hops.get(acc.tensor)
            if t is not None and t.sid != cur.sid and t.sid not in seen:
                nxt = t
                break
        if nxt is None:
            raise IterationMismatch(
                f"no read chain from stmt {src.sid} to stmt {dst.sid}"
            )
        seen.add(nxt.sid)
        m = _match_consumer_axes(cur, nxt)
        corr = {a: m[b] for a, b in corr.items() if b in m}
        cur = nxt
    return corr


def _index_for_r1_indexed_buffer(r1: ComputeStmt, corr: dict) -> tuple:
    """Index a buffer laid out like r1's target, using the given src->r1
    axis correspondence (inverted)."""
    inv = {v: k for k, v in corr.items()}
    idx = []
    for e in r1.index:
        if not isinstance(e, Var) or e.name not in inv:
            raise IterationMismatch(
                "repair scale dimension has no corresponding consumer axis"
            )
        idx.append(Var(inv[e.name]))
    return tuple(idx)


def _fold_division(module: ScalarModule, r2_sid: int, loop_var: str,
                   scale_name: str) -> ScalarModule:
    """Turn `out = acc / den` (den co-rolled in the same loop) into the
    per-iteration divide-then-rescale form on acc itself."""
    r2 = module.stmt(r2_sid)
    graph = build_block_graph(module)
    consumers = [module.stmt(c) for c in graph.consumers(r2_sid)
                 if module.stmt(c).kind is StmtKind.ELEMENTWISE]
    div_stmt = None
    den_name = None
    for c in consumers:
        if isinstance(c.rhs, Bin) and c.rhs.op == "div":
            num, den = c.rhs.a, c.rhs.b
            if (isinstance(num, Access) and num.tensor == r2.target
                    and isinstance(den, Access)):
                if loop_var in accumulates_along(module, den.tensor):
                    div_stmt = c
                    den_name = den.tensor
                    break
    if div_stmt is None:
        raise NoRepairRule(
            f"no division of {r2.target!r} by a co-rolled reduction to fold"
        )

    mod = module
    kernels = [list(k) for k in mod.kernels]
    ki = next(i for i, k in enumerate(kernels) if r2_sid in k)
    dest_prefix = r2.chain[: r2.chain.index(loop_var) + 1]

    # snapshot of the denominator at iteration start
    den_decl = mod.buffer(den_name)
    den_writer = next(t for t in mod.stmts if t.target == den_name
                      and t.kind is StmtKind.REDUCTION)
    den_prev = mod.fresh_buffer_name(f"{den_name}_prev")
    mod = mod.with_buffer(BufferDecl(den_prev, den_decl.shape, den_decl.precision,
                                     den_decl.scope))
    stmt_map = {t.sid: t for t in mod.stmts}
    prev_chain: list[str] = list(dest_prefix)
    prev_subst: dict[str, Expr] = {}
    mod2 = mod
    for axis in stmt_target_axes(den_writer):
        a = to_affine(den_writer.subst_map()[axis])
        mapping = {}
        for v in sorted(a.coefs, key=lambda x: den_writer.chain.index(x) if x in den_writer.chain else 99):
            if v in dest_prefix:
                continue
            l = mod2.loop(v)
            nv = mod2.fresh_loop_name(v)
            mod2 = mod2.with_loop(LoopDef(nv, l.extent, l.kind, TilingRole.INNER))
            prev_chain.append(nv)
            mapping[v] = Affine.var(nv)
        prev_subst[axis] = a.subst(mapping).as_expr()
    mod = mod2
    den_prev_stmt = ComputeStmt(
        sid=mod.next_sid(),
        target=den_prev,
        index=den_writer.index,
        rhs=Access(den_name, den_writer.index),
        kind=StmtKind.ELEMENTWISE,
        chain=tuple(prev_chain),
        subst=tuple(sorted(prev_subst.items())),
    )
    stmt_map[den_prev_stmt.sid] = den_prev_stmt
    mod = mod.with_stmts(list(mod.stmts) + [den_prev_stmt], kernels)
    _insert_in_list(kernels[ki], stmt_map, tuple(dest_prefix),
                    [den_prev_stmt.sid], at_start=True)

    # rescale acc by the previous denominator, then divide by the new one,
    # in the same iteration, around the existing repair/contribution pair
    tchain = tuple(dest_prefix) + _target_only_chain(mod, mod.stmt(r2_sid), len(dest_prefix))
    tsubst = _target_only_subst(mod, mod.stmt(r2_sid), len(dest_prefix))
    r2_now = mod.stmt(r2_sid)
    # denominator index in r2's frame, via the division statement's accesses
    div_to_r2 = {}
    for acc in accesses(div_stmt.rhs):
        if acc.tensor == r2_now.target:
            for pos, (ci, pi) in enumerate(zip(acc.index, r2_now.index)):
                if isinstance(ci, Var) and isinstance(pi, Var):
                    div_to_r2[ci.name] = pi.name
    den_acc = next(a for a in accesses(div_stmt.rhs) if a.tensor == den_name)
    den_idx = []
    for e in den_acc.index:
        if not isinstance(e, Var) or e.name not in div_to_r2:
            raise IterationMismatch("cannot align the folded denominator")
        den_idx.append(Var(div_to_r2[e.name]))
    den_idx = tuple(den_idx)
    base_sid = mod.next_sid()
    rescale = ComputeStmt(
        sid=base_sid,
        target=r2_now.target,
        index=r2_now.index,
        rhs=Bin("mul", Access(r2_now.target, r2_now.index), Access(den_prev, den_idx)),
        kind=StmtKind.REDUCTION,
        reduce_op="prod",
        chain=tchain,
        subst=tsubst,
    )
    divide = ComputeStmt(
        sid=base_sid + 1,
        target=r2_now.target,
        index=r2_now.index,
        rhs=Bin("div", Access(r2_now.target, r2_now.index), Access(den_name, den_idx)),
        kind=StmtKind.ELEMENTWISE,
        chain=tchain,
        subst=tsubst,
    )
    stmt_map[rescale.sid] = rescale
    stmt_map[divide.sid] = divide
    mod = mod.with_stmts(list(mod.stmts) + [rescale, divide], kernels)
    # rescale immediately before the repair stmt that precedes r2
    at = kernels[ki].index(r2_sid) - 1  # repair stmt position
    kernels[ki][at:at] = [rescale.sid]
    at = kernels[ki].index(r2_sid) + 1
    kernels[ki][at:at] = [divide.sid]

    # the old division becomes a copy-out after the loop
    new_div = replace(div_stmt, rhs=Access(r2_now.target, div_stmt.rhs.a.index))
    stmt_map[div_stmt.sid] = new_div
    mod = _rebuild(mod, stmt_map, kernels)
    return classify_loops(mod)


# ---------------------------------------------------------------------------
# cache_stage / rematerialize / split_scan_buffer / bind_block


def _footprint(module: ScalarModule, buffer: str, at_loop: str):
    """Per-iteration footprint of all accesses to `buffer` in statements
    under `at_loop`: per-dim (offset affine over outer loops, length)."""
    decl = module.buffer(buffer)
    extents = {l.var: l.extent for l in module.loops}
    dims: list[tuple[Affine, int]] = [None] * len(decl.shape)
    users: list[int] = []
    for s in module.stmts:
        if at_loop not in s.chain:
            continue
        cut = s.chain.index(at_loop) + 1
        outer = set(s.chain[:cut])
        affs = []
        if s.target == buffer:
            affs.extend(s.realized_index())
        for acc, aff in s.realized_rhs_accesses():
            if acc.tensor == buffer:
                affs.extend(aff)
        if not affs:
            continue
        users.append(s.sid)
        rank = len(decl.shape)
        for i in range(0, len(affs), rank):
            group = affs[i : i + rank]
            for pos, a in enumerate(group):
                off_coefs = {v: c for v, c in a.coefs.items() if v in outer}
                inner = Affine({v: c for v, c in a.coefs.items() if v not in outer}, 0)
                lo, hi = inner.value_range(extents)
                if lo != 0:
                    raise FootprintNotAffine(
                        f"{buffer}[{pos}]: inner footprint does not start at 0"
                    )
                off = Affine(off_coefs, a.const)
                length = hi + 1
                cur = dims[pos]
                if cur is None:
                    dims[pos] = (off, length)
                elif cur[0] != off or cur[1] != length:
                    raise FootprintNotAffine(
                        f"{buffer}[{pos}]: accesses disagree on the staged slice"
                    )
    if not users:
        raise FootprintNotAffine(f"{buffer!r} has no accesses under loop {at_loop!r}")
    return dims, users


def cache_stage(module: ScalarModule, buffer: str, scope: Scope, at_loop: str,
                direction: str = "read") -> ScalarModule:
    """Stage a buffer into a more local memory level at `at_loop`.

    direction "read": copy in before uses; "write": copy out after uses;
    "inplace": no copy, re-scope and shrink the buffer itself (all accesses
    must live under `at_loop`).
    """
    decl = module.buffer(buffer)
    loop = module.loop(at_loop)
    dims, users = _footprint(module, buffer, at_loop)
    shape = tuple(length for _, length in dims)

    if direction == "inplace":
        outside = [s.sid for s in module.stmts
                   if at_loop not in s.chain and _touches(s, buffer)]
        if outside:
            raise FootprintNotAffine(
                f"cannot re-scope {buffer!r}: statements {outside} access it "
                f"outside loop {at_loop!r}"
            )
        if decl.is_input or decl.is_output:
            raise FootprintNotAffine(f"{buffer!r} is external, cannot re-scope")
        mod = module.with_buffer(replace(decl, shape=shape, scope=scope))
        new_stmts = [_rebase_stmt(s, buffer, dims, at_loop) for s in module.stmts]
        mod = mod.with_stmts(new_stmts)
        return mod

    staged = module.fresh_buffer_name(
        f"{buffer}_{'s' if scope is Scope.SHARED else 'r'}"
    )
    mod = module.with_buffer(BufferDecl(staged, shape, decl.precision, scope))
    # copy statement
    copy_chain: list[str] = []
    copy_axes: list[str] = []
    anchor = next(s for s in module.stmts if s.sid == users[0])
    cut = anchor.chain.index(at_loop) + 1
    copy_chain.extend(anchor.chain[:cut])
    mod2 = mod
    for pos, (off, length) in enumerate(dims):
        nv = mod2.fresh_loop_name(f"c{pos}")
        mod2 = mod2.with_loop(LoopDef(nv, length, LoopKind.MAP, TilingRole.INNER))
        copy_chain.append(nv)
        copy_axes.append(nv)
    mod = mod2
    src_index = tuple(
        (off + Affine.var(v)).as_expr() for (off, _), v in zip(dims, copy_axes)
    )
    dst_index = tuple(Var(v) for v in copy_axes)
    if direction == "read":
        copy_stmt = ComputeStmt(
            sid=mod.next_sid(), target=staged, index=dst_index,
            rhs=Access(buffer, src_index), kind=StmtKind.ELEMENTWISE,
            chain=tuple(copy_chain), subst=(),
        )
    elif direction == "write":
        copy_stmt = ComputeStmt(
            sid=mod.next_sid(), target=buffer, index=src_index,
            rhs=Access(staged, dst_index), kind=StmtKind.ELEMENTWISE,
            chain=tuple(copy_chain), subst=(),
        )
    else:
        raise ValueError(f"unknown staging direction {direction!r}")

    # redirect uses under at_loop
    new_stmts = []
    for s in module.stmts:
        if s.sid in users:
            new_stmts.append(_redirect_stmt(s, buffer, staged, dims, at_loop))
        else:
            new_stmts.append(s)
    kernels = [list(k) for k in mod.kernels]
    stmt_map = {s.sid: s for s in new_stmts}
    stmt_map[copy_stmt.sid] = copy_stmt
    ki = next(i for i, k in enumerate(kernels)
              if any(s in k for s in users))
    prefix = tuple(copy_chain[:cut])
    mod = mod.with_stmts(new_stmts + [copy_stmt], kernels)
    _insert_in_list(kernels[ki], stmt_map, prefix, [copy_stmt.sid],
                    at_start=(direction == "read"))
    mod = _rebuild(mod, stmt_map, kernels)
    return mod


def _touches(s: ComputeStmt, buffer: str) -> bool:
    return s.target == buffer or any(a.tensor == buffer for a in accesses(s.rhs))


def _rebase_access_index(index, smap, dims):
    out = []
    for pos, e in enumerate(index):
        a = realize_affine(e, smap)
        off, _ = dims[pos]
        out.append((a - off).as_expr())
    return tuple(out)


def _rebase_stmt(s: ComputeStmt, buffer: str, dims, at_loop: str) -> ComputeStmt:
    if not _touches(s, buffer):
        return s
    smap = s.subst_map()

    def repl(acc: Access) -> Expr:
        if acc.tensor != buffer:
            return acc
        return Access(buffer, _rebase_access_index(acc.index, smap, dims))

    new_rhs = rewrite_accesses(s.rhs, repl)
    new_index = s.index
    if s.target == buffer:
        new_index = _rebase_access_index(s.index, smap, dims)
    return replace(s, rhs=new_rhs, index=new_index)


def _redirect_stmt(s: ComputeStmt, buffer: str, staged: str, dims, at_loop: str) -> ComputeStmt:
    smap = s.subst_map()

    def repl(acc: Access) -> Expr:
        if acc.tensor != buffer:
            return acc
        return Access(staged, _rebase_access_index(acc.index, smap, dims))

    new_rhs = rewrite_accesses(s.rhs, repl)
    new_index = s.index
    new_target = s.target
    if s.target == buffer:
        new_target = staged
        new_index = _rebase_access_index(s.index, smap, dims)
    return replace(s, rhs=new_rhs, index=new_index, target=new_target)


def rematerialize(module: ScalarModule, buffer: str) -> ScalarModule:
    """Recompute an element-wise buffer at each use and drop the buffer."""
    writers = [s for s in module.stmts if s.target == buffer]
    if len(writers) != 1 or writers[0].kind is not StmtKind.ELEMENTWISE:
        raise NotRematerializable(
            f"{buffer!r} must have exactly one element-wise definition"
        )
    d = writers[0]
    if not all(isinstance(i, Var) for i in d.index):
        raise NotRematerializable(f"{buffer!r} definition has a non-var index")
    decl = module.buffer(buffer)
    if decl.is_input or decl.is_output:
        raise NotRematerializable(f"{buffer!r} is external")

    def inline(acc: Access) -> Expr:
        if acc.tensor != buffer:
            return acc
        mapping = {i.name: x for i, x in zip(d.index, acc.index)}
        return substitute(d.rhs, mapping)

    new_stmts = []
    for s in module.stmts:
        if s.sid == d.sid:
            continue
        new_stmts.append(replace(s, rhs=rewrite_accesses(s.rhs, inline)))
    kernels = [[sid for sid in k if sid != d.sid] for k in module.kernels]
    mod = module.with_stmts(new_stmts, kernels)
    mod = mod.drop_buffer(buffer)
    mod = _remove_unused_loops(mod)
    return classify_loops(mod)


def split_scan_buffer(module: ScalarModule, buffer: str, loop_var: str) -> ScalarModule:
    """Mark a buffer's cross-iteration accesses along a sequential loop as a
    loop-carried value (consumed by the tile lowering)."""
    loop = module.loop(loop_var)
    if loop.kind is LoopKind.MAP:
        raise NotScanShaped(f"loop {loop_var!r} is parallel; nothing is carried")
    if buffer in loop.carried:
        return module
    saw_carry = False
    for s in module.stmts:
        if loop_var not in s.chain:
            continue
        writes_here = s.target == buffer
        reads_here = any(a.tensor == buffer for a in accesses(s.rhs))
        if not (writes_here or reads_here):
            continue
        if writes_here:
            widx = s.realized_index()
            if any(loop_var in a.coefs and a.coefs[loop_var] != 0 for a in widx):
                # moving writes: only the strict offset-(-1) scan shape passes
                ok = False
                for acc, aff in s.realized_rhs_accesses():
                    if acc.tensor != buffer:
                        continue
                    for pos in range(len(aff)):
                        diff = aff[pos] - widx[pos]
                        if diff.is_const() and diff.const == -abs(
                            widx[pos].coefs.get(loop_var, 1)
                        ):
                            ok = True
                if not ok:
                    raise NotScanShaped(
                        f"{buffer!r} writes move with {loop_var!r} but reads are "
                        f"not at offset -1"
                    )
                saw_carry = True
            else:
                saw_carry = True
    if not saw_carry:
        raise NotScanShaped(f"{buffer!r} carries nothing along {loop_var!r}")
    return module.with_loop(replace(loop, carried=tuple(sorted(set(loop.carried) | {buffer}))))


def bind_block(module: ScalarModule, loop_var: str, axis: str) -> ScalarModule:
    loop = module.loop(loop_var)
    if loop.kind is not LoopKind.MAP:
        raise NotParallel(f"loop {loop_var!r} has kind {loop.kind.value}")
    if loop.role is TilingRole.INNER:
        raise NotParallel(f"loop {loop_var!r} is an inner (tile) loop")
    for s in module.stmts:
        if loop_var in s.chain:
            ki = module.kernel_of(s.sid)
            for t in module.kernel_stmts(ki):
                for v in t.chain:
                    other = module.loop(v)
                    if other.binding == axis and other.var != loop_var:
                        raise AxisTaken(f"{axis} already bound to loop {other.var!r}")
            break
    return module.with_loop(replace(loop, binding=axis))


def probe_rolling(module: ScalarModule, r2_sid: int, loop_var: str,
                  registry: RepairRegistry = DEFAULT_REGISTRY):
    """Dry feasibility check for rolling_update: returns (r1 sid, captured
    sids) when the fusion would apply, else None. Mirrors the transform's
    candidate and bridge matching without building anything."""
    try:
        r2 = module.stmt(r2_sid)
    except CompilerError:
        return None
    if r2.kind is not StmtKind.REDUCTION or r2.reduce_op is None:
        return None
    if not module.has_loop(loop_var):
        return None
    graph = build_block_graph(module)
    preds = set(graph.predecessors(r2_sid))
    for cand in module.stmts:
        if not (
            cand.sid in preds
            and cand.kind is StmtKind.REDUCTION
            and loop_var in cand.chain
            and loop_var in accumulates_along(module, cand.target)
        ):
            continue
        paths = graph.paths(cand.sid, r2_sid, limit=64)
        path_sids: list[int] = []
        ok = True
        for p in paths:
            for sid in p[1:-1]:
                t = module.stmt(sid)
                if t.kind is not StmtKind.ELEMENTWISE:
                    ok = False
                    break
                if sid not in path_sids:
                    path_sids.append(sid)
            if not ok:
                break
        if not ok:
            continue
        try:
            contrib = _strip_self(r2)
            inlined = _inline_path(module, contrib,
                                   [module.stmt(x) for x in sorted(path_sids)])
        except (NoRepairRule, NonElementWisePath):
            continue
        factors = _elementwise_factors(inlined)
        r_factors = [f for f in factors if any(
            isinstance(n, Access) and n.tensor == cand.target for n in f.walk())]
        if len(r_factors) != 1:
            continue
        if registry.find(cand.reduce_op, r2.reduce_op,
                         _abstract_factor(r_factors[0], cand.target)) is None:
            continue
        return cand.sid, sorted(path_sids)
    return None


def probe_fold_division(module: ScalarModule, r2_sid: int, loop_var: str) -> bool:
    """Would rolling r2 into loop_var be able to fold its consumer division?"""
    try:
        r2 = module.stmt(r2_sid)
    except CompilerError:
        return False
    graph = build_block_graph(module)
    for c in graph.consumers(r2_sid):
        cs = module.stmt(c)
        if cs.kind is not StmtKind.ELEMENTWISE or not isinstance(cs.rhs, Bin):
            continue
        if cs.rhs.op != "div":
            continue
        num, den = cs.rhs.a, cs.rhs.b
        if (isinstance(num, Access) and num.tensor == r2.target
                and isinstance(den, Access)
                and loop_var in accumulates_along(module, den.tensor)):
            return True
    return False
