"""Scalar IR -> VR-tile IR: inner loop nests become tile expressions,
register buffers become virtual registers, loop-carried buffers become
loop-expression parameters (the mem2reg step of the pipeline)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..errors import CompilerError, ResidualGuard, ResidualScan, UnsupportedPattern
from ..exprs import (
    Access,
    Affine,
    Bin,
    Const,
    Expr,
    Un,
    Var,
    accesses,
    reduction_identity,
    to_affine,
)
from ..scalar.ir import (
    ComputeStmt,
    LoopKind,
    ScalarModule,
    Scope,
    StmtKind,
    TilingRole,
    realize_affine,
)
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
    VSlice,
    VStore,
    VTranspose,
    VUn,
)

BLOCK_AXES = ("blockIdx.x", "blockIdx.y", "blockIdx.z")


@dataclass
class _Value:
    name: str
    shape: tuple[int, ...]
    tags: tuple[Optional[str], ...]  # inner loop var per dim (None: size-1 dim)


@dataclass
class _Ctx:
    module: ScalarModule
    counter: int = 0
    env: dict = field(default_factory=dict)  # register buffer -> _Value

    def fresh(self, hint: str) -> str:
        self.counter += 1
        return f"v_{hint}_{self.counter}"


def lower_to_vr(module: ScalarModule) -> VRModule:
    kernels = []
    for ki in range(len(module.kernels)):
        kernels.append(_lower_kernel(module, ki))
    mod = VRModule(
        buffers=module.buffers,
        kernels=tuple(kernels),
        output=module.output,
        precision=module.precision,
    )
    return dce(mod)


def dce(module: VRModule) -> VRModule:
    """Drop bindings whose values are never used (loads emitted while probing
    for a dot pattern, alias chains left by rewrites)."""
    from dataclasses import replace as dc_replace

    def collect_uses(items, used: set):
        for item in items:
            if isinstance(item, VStore):
                used.add(item.value)
            elif isinstance(item.expr, VFor):
                f = item.expr
                for _, init in f.params:
                    used.add(init)
                used.update(f.yields)
                collect_uses(f.body, used)
            else:
                for n in item.expr.walk():
                    if isinstance(n, VRef):
                        used.add(n.name)

    def has_store(items) -> bool:
        for item in items:
            if isinstance(item, VStore):
                return True
            if isinstance(item, VBinding) and isinstance(item.expr, VFor):
                if has_store(item.expr.body):
                    return True
        return False

    def sweep_body(body, used) -> list:
        new_items = []
        for item in body:
            if isinstance(item, VBinding) and isinstance(item.expr, VFor):
                f = item.expr
                nb = sweep_body(f.body, used)
                item = VBinding(item.names, dc_replace(f, body=tuple(nb)))
                if any(n in used for n in item.names) or has_store(nb):
                    new_items.append(item)
                continue
            if isinstance(item, VStore) or any(n in used for n in item.names):
                new_items.append(item)
        return new_items

    def sweep_fixpoint(body):
        items = list(body)
        while True:
            used: set = set()
            collect_uses(items, used)
            nxt = sweep_body(items, used)
            if nxt == items:
                return items
            items = nxt

    kernels = []
    for k in module.kernels:
        kernels.append(dc_replace(k, body=tuple(sweep_fixpoint(k.body))))
    return dc_replace(module, kernels=tuple(kernels))


def _lower_kernel(module: ScalarModule, ki: int) -> VKernel:
    stmts = module.kernel_stmts(ki)
    for s in stmts:
        if s.guards:
            raise ResidualGuard(
                f"stmt {s.sid} carries boundary predication; pick dividing tile "
                f"factors before lowering"
            )
    # leading bound loops, common to every statement
    blocks: list[tuple[str, str, int]] = []
    depth = 0
    while True:
        vars_at = {s.chain[depth] if len(s.chain) > depth else None for s in stmts}
        if len(vars_at) != 1:
            break
        v = vars_at.pop()
        if v is None:
            break
        loop = module.loop(v)
        if loop.binding is None:
            break
        blocks.append((v, loop.binding, loop.extent))
        depth += 1
    for s in stmts:
        for v in s.chain[depth:]:
            if module.loop(v).binding is not None:
                raise CompilerError(
                    f"bound loop {v!r} is not a common kernel prefix"
                )

    ctx = _Ctx(module)
    body = _lower_level(ctx, stmts, depth)
    _check_no_residual_scan(module, stmts, depth)
    return VKernel(
        name=f"k{ki}",
        blocks=tuple(blocks),
        body=tuple(body),
        backend=module.backend,
        params=module.params,
    )


def _check_no_residual_scan(module: ScalarModule, stmts, depth: int) -> None:
    loop_vars = {v for s in stmts for v in s.chain[depth:]}
    for v in sorted(loop_vars):
        loop = module.loop(v)
        if loop.role is TilingRole.INNER:
            continue
        carried = carried_buffers(module, stmts, v)
        missing = carried - set(loop.carried)
        if missing:
            raise ResidualScan(
                f"loop {v!r} carries {sorted(missing)} without a "
                f"split-scan-buffer step"
            )


def carried_buffers(module: ScalarModule, stmts, loop_var: str) -> set:
    """Buffers whose previous-iteration value is observed inside the loop:
    first touch in program order is a read (a self-reading update counts)."""
    first_touch: dict[str, str] = {}
    for s in stmts:
        if loop_var not in s.chain:
            continue
        for acc in accesses(s.rhs):
            first_touch.setdefault(acc.tensor, "read")
        widx = s.realized_index()
        moves = any(loop_var in a.coefs for a in widx)
        first_touch.setdefault(s.target, "write" if not moves else "moving-write")
    out = set()
    for buf, kind in first_touch.items():
        if kind != "read":
            continue
        writers = [s for s in stmts if s.target == buf and loop_var in s.chain]
        if not writers:
            continue  # read-only within the loop: plain reuse, not carried
        out.add(buf)
    return out


def _lower_level(ctx: _Ctx, stmts: list[ComputeStmt], depth: int) -> list:
    module = ctx.module
    body: list = []
    i = 0
    while i < len(stmts):
        s = stmts[i]
        structural = (
            len(s.chain) > depth
            and module.loop(s.chain[depth]).role is not TilingRole.INNER
        )
        if not structural:
            body.extend(_lower_stmt(ctx, s, depth))
            i += 1
            continue
        var = s.chain[depth]
        j = i
        while j < len(stmts) and len(stmts[j].chain) > depth and stmts[j].chain[depth] == var:
            j += 1
        body.append(_lower_for(ctx, stmts[i:j], var, depth + 1))
        i = j
    return body


def _lower_for(ctx: _Ctx, stmts: list[ComputeStmt], var: str, depth: int) -> VBinding:
    module = ctx.module
    loop = module.loop(var)
    params: list[tuple[str, str]] = []
    param_shapes: list[tuple[int, ...]] = []
    saved: dict[str, _Value] = {}
    for buf in loop.carried:
        if buf not in ctx.env:
            raise ResidualScan(
                f"carried buffer {buf!r} has no live value before loop {var!r}"
            )
        init = ctx.env[buf]
        pname = ctx.fresh(buf)
        params.append((pname, init.name))
        param_shapes.append(init.shape)
        saved[buf] = init
        ctx.env[buf] = _Value(pname, init.shape, init.tags)
    inner = _lower_level(ctx, stmts, depth)
    yields = []
    shapes = []
    for (buf, init) in zip(loop.carried, [saved[b] for b in loop.carried]):
        cur = ctx.env[buf]
        yields.append(cur.name)
        shapes.append(cur.shape)
    result_names = tuple(ctx.fresh(buf) for buf in loop.carried)
    vfor = VFor(
        var=var,
        extent=loop.extent,
        params=tuple(params),
        body=tuple(inner),
        yields=tuple(yields),
        shapes=tuple(shapes),
    )
    for buf, rname, shape in zip(loop.carried, result_names, shapes):
        ctx.env[buf] = _Value(rname, shape, ctx.env[buf].tags)
    return VBinding(result_names, vfor)


# ---------------------------------------------------------------------------
# Statement lowering


def _lower_stmt(ctx: _Ctx, s: ComputeStmt, depth: int) -> list:
    module = ctx.module
    inner_vars = list(s.chain[depth:])
    for v in inner_vars:
        if module.loop(v).role is not TilingRole.INNER:
            raise UnsupportedPattern(
                f"stmt {s.sid}: loop {v!r} below the structural level is not inner"
            )
    extents = {v: module.loop(v).extent for v in inner_vars}
    tile_axes = inner_vars
    smap = s.subst_map()

    # target dims: which inner var moves each target index position
    tgt_decl = module.buffer(s.target)
    tgt_aff = [realize_affine(e, smap) for e in s.index]
    tgt_tags: list[Optional[str]] = []
    for a in tgt_aff:
        tag = None
        for v in inner_vars:
            if a.coefs.get(v, 0) != 0:
                tag = v
                break
        tgt_tags.append(tag)
    reduce_axes = [v for v in inner_vars if v not in tgt_tags]

    out: list = []

    def emit(hint: str, expr: VExpr, tags) -> _Value:
        name = ctx.fresh(hint)
        out.append(VBinding((name,), expr))
        return _Value(name, expr.shape, tuple(tags))

    value = _lower_rhs(ctx, s, depth, inner_vars, extents, reduce_axes,
                       tgt_tags, emit)

    # align result to the buffer's dim order
    want_tags = tuple(tgt_tags)
    value = _align(ctx, value, want_tags,
                   tuple(extents[t] if t else 1 for t in want_tags), emit, s.sid)

    if tgt_decl.scope is Scope.REGISTER:
        ctx.env[s.target] = _Value(value.name, value.shape, value.tags)
        return out
    # memory store
    slices = []
    for pos, a in enumerate(tgt_aff):
        tag = tgt_tags[pos]
        if tag is not None:
            if a.coefs.get(tag) != 1:
                raise UnsupportedPattern(
                    f"stmt {s.sid}: strided store of {s.target!r}"
                )
            off = Affine({k: c for k, c in a.coefs.items() if k != tag}, a.const)
            slices.append(VSlice(off.as_expr(), extents[tag]))
        else:
            slices.append(VSlice(a.as_expr(), 1))
    out.append(VStore(value.name, s.target, tuple(slices)))
    ctx.env[s.target] = value  # last stored tile is the live value (scan case)
    return out


def _lower_rhs(ctx: _Ctx, s: ComputeStmt, depth: int, inner_vars, extents,
               reduce_axes, tgt_tags, emit) -> _Value:
    if s.kind is StmtKind.REDUCTION and s.reduce_op is not None and reduce_axes:
        seed_expr, contrib = _split_update(s)
        seed = _lower_expr(ctx, s, seed_expr, depth, inner_vars, extents, emit)
        seed = _align(ctx, seed, tuple(tgt_tags),
                      tuple(extents[t] if t else 1 for t in tgt_tags), emit, s.sid)
        dot = _try_dot(ctx, s, contrib, depth, inner_vars, extents,
                       reduce_axes, tgt_tags, seed, emit)
        if dot is not None:
            return dot
        full = _lower_expr(ctx, s, contrib, depth, inner_vars, extents, emit)
        tgt_live = [t for t in tgt_tags if t is not None]
        want = tgt_live + reduce_axes
        full = _align(ctx, full, tuple(want),
                      tuple(extents[t] for t in want), emit, s.sid)
        axes = tuple(range(len(tgt_live), len(want)))
        sv = _strip_ones(ctx, seed, emit)
        expr = VReduce(s.reduce_op, VRef(full.name, full.shape), axes,
                       VRef(sv.name, sv.shape),
                       tuple(extents[t] for t in tgt_live))
        return emit(s.target, expr, tuple(tgt_live))
    # element-wise (including zero-reduce-axis accumulator updates)
    return _lower_expr(ctx, s, s.rhs, depth, inner_vars, extents, emit)


def _split_update(s: ComputeStmt) -> tuple[Expr, Expr]:
    rhs = s.rhs
    if isinstance(rhs, Bin):
        a_self = any(isinstance(n, Access) and n.tensor == s.target for n in rhs.a.walk())
        b_self = any(isinstance(n, Access) and n.tensor == s.target for n in rhs.b.walk())
        if a_self and not b_self and isinstance(rhs.a, Access):
            return rhs.a, rhs.b
        if b_self and not a_self and isinstance(rhs.b, Access):
            return rhs.b, rhs.a
    raise UnsupportedPattern(f"stmt {s.sid}: accumulator update is not seed (+) contrib")


def _try_dot(ctx: _Ctx, s: ComputeStmt, contrib: Expr, depth, inner_vars,
             extents, reduce_axes, tgt_tags, seed: _Value, emit) -> Optional[_Value]:
    if s.reduce_op != "sum" or len(reduce_axes) != 1:
        return None
    tgt = [t for t in tgt_tags if t is not None]
    if len(tgt) != 2:
        return None
    if not (isinstance(contrib, Bin) and contrib.op == "mul"):
        return None
    r = reduce_axes[0]
    t1, t2 = tgt
    a = _lower_expr(ctx, s, contrib.a, depth, inner_vars, extents, emit)
    b = _lower_expr(ctx, s, contrib.b, depth, inner_vars, extents, emit)

    def tagset(v: _Value):
        return {t for t in v.tags if t is not None}

    if tagset(a) == {t1, r} and tagset(b) == {r, t2}:
        pass
    elif tagset(a) == {r, t2} and tagset(b) == {t1, r}:
        a, b = b, a
    else:
        return None
    a = _align(ctx, a, (t1, r), (extents[t1], extents[r]), emit, s.sid)
    b = _align(ctx, b, (r, t2), (extents[r], extents[t2]), emit, s.sid)
    sd = _strip_ones(ctx, seed, emit)
    expr = VDot(VRef(a.name, a.shape), VRef(b.name, b.shape),
                VRef(sd.name, sd.shape), (extents[t1], extents[t2]))
    return emit(s.target, expr, (t1, t2))


def _lower_expr(ctx: _Ctx, s: ComputeStmt, e: Expr, depth, inner_vars,
                extents, emit) -> _Value:
    module = ctx.module
    smap = s.subst_map()

    def go(e: Expr) -> _Value:
        if isinstance(e, Const):
            v = emit("c", VLit(float(e.value), ()), ())
            return v
        if isinstance(e, Var):
            raise UnsupportedPattern(
                f"stmt {s.sid}: index variable {e.name!r} used as a value"
            )
        if isinstance(e, Access):
            return _lower_access(ctx, s, e, depth, inner_vars, extents, emit)
        if isinstance(e, Un):
            x = go(e.x)
            return emit("t", VUn(e.op, VRef(x.name, x.shape), x.shape), x.tags)
        if isinstance(e, Bin):
            a = go(e.a)
            b = go(e.b)
            want: list[str] = []
            for v in inner_vars:
                if v in a.tags or v in b.tags:
                    want.append(v)
            shape = tuple(extents[v] for v in want)
            aa = _align(ctx, a, tuple(want), shape, emit, s.sid)
            bb = _align(ctx, b, tuple(want), shape, emit, s.sid)
            return emit("t", VBin(e.op, VRef(aa.name, aa.shape),
                                  VRef(bb.name, bb.shape), shape), tuple(want))
        raise UnsupportedPattern(f"stmt {s.sid}: cannot lower {type(e).__name__}")

    return go(e)


def _lower_access(ctx: _Ctx, s: ComputeStmt, acc: Access, depth, inner_vars,
                  extents, emit) -> _Value:
    module = ctx.module
    smap = s.subst_map()
    decl = module.buffer(acc.tensor)
    affs = [realize_affine(i, smap) for i in acc.index]
    if any(a is None for a in affs):
        raise UnsupportedPattern(f"stmt {s.sid}: non-affine access to {acc.tensor!r}")
    tags: list[Optional[str]] = []
    for a in affs:
        tag = None
        for v in inner_vars:
            c = a.coefs.get(v, 0)
            if c != 0:
                if c != 1:
                    raise UnsupportedPattern(
                        f"stmt {s.sid}: strided access to {acc.tensor!r}"
                    )
                if tag is not None:
                    raise UnsupportedPattern(
                        f"stmt {s.sid}: two inner loops index one dim of {acc.tensor!r}"
                    )
                tag = v
        tags.append(tag)
    if decl.scope is Scope.REGISTER:
        val = ctx.env.get(acc.tensor)
        if val is None:
            raise CompilerError(
                f"stmt {s.sid}: register buffer {acc.tensor!r} read before write"
            )
        # the register tile covers the whole buffer; its dims follow buffer
        # order, so retag them with this access's inner vars
        if val.shape != decl.shape:
            raise UnsupportedPattern(
                f"stmt {s.sid}: register tile shape mismatch on {acc.tensor!r}"
            )
        for pos, (a, tag) in enumerate(zip(affs, tags)):
            rest = {k: c for k, c in a.coefs.items() if k != tag}
            if rest or a.const != 0:
                raise UnsupportedPattern(
                    f"stmt {s.sid}: offset access into register {acc.tensor!r}"
                )
            if tag is not None and extents[tag] != decl.shape[pos]:
                raise UnsupportedPattern(
                    f"stmt {s.sid}: partial register tile of {acc.tensor!r}"
                )
        return _Value(val.name, val.shape, tuple(tags))
    slices = []
    shape = []
    for a, tag in zip(affs, tags):
        if tag is not None:
            off = Affine({k: c for k, c in a.coefs.items() if k != tag}, a.const)
            slices.append(VSlice(off.as_expr(), extents[tag]))
            shape.append(extents[tag])
        else:
            slices.append(VSlice(a.as_expr(), 1))
            shape.append(1)
    expr = VLoad(acc.tensor, tuple(slices), tuple(shape))
    return emit(acc.tensor, expr, tuple(tags))


def _strip_ones(ctx: _Ctx, v: _Value, emit) -> _Value:
    """Drop size-1 dims (untagged) so seeds match reduced shapes."""
    if all(t is not None for t in v.tags):
        return v
    keep = [i for i, t in enumerate(v.tags) if t is not None]
    shape = tuple(v.shape[i] for i in keep)
    tags = tuple(v.tags[i] for i in keep)
    nv = emit("t", VReshape(VRef(v.name, v.shape), shape), tags)
    return nv


def _align(ctx: _Ctx, v: _Value, want_tags: tuple, want_shape: tuple,
           emit, sid: int) -> _Value:
    """Permute / reshape / broadcast a value so its dims follow want_tags."""
    cur = v
    # drop size-1 untagged dims first
    if any(t is None for t in cur.tags) and cur.shape:
        cur = _strip_ones(ctx, cur, emit)
    live = [t for t in cur.tags if t is not None]
    for t in live:
        if t not in want_tags:
            raise UnsupportedPattern(
                f"stmt {sid}: value varies along {t!r} which the target lacks"
            )
    order = [t for t in want_tags if t in live]
    if live != order:
        perm = tuple(live.index(t) for t in order)
        shape = tuple(cur.shape[p] for p in perm)
        cur = emit("t", VTranspose(VRef(cur.name, cur.shape), perm, shape), tuple(order))
        live = order
    if tuple(live) == tuple(want_tags) and cur.shape == want_shape:
        return cur
    # insert size-1 dims for missing axes, then broadcast
    exp_shape = tuple(
        cur.shape[live.index(t)] if t in live else 1 for t in want_tags
    )
    if cur.shape != exp_shape:
        cur = emit("t", VReshape(VRef(cur.name, cur.shape), exp_shape),
                   tuple(t if t in live else None for t in want_tags))
    if exp_shape != want_shape:
        cur = emit("t", VBroadcast(VRef(cur.name, cur.shape), want_shape),
                   tuple(want_tags))
    else:
        cur = _Value(cur.name, cur.shape, tuple(want_tags))
    return cur
