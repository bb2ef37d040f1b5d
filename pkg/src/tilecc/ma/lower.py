"""VR-tile -> MA-tile desugaring.

Loop expressions become plain loops over register accumulator buffers;
compute bindings become tile-compute statements writing register tiles;
loads and shape adapters are inlined into the consuming expressions so the
emitted statements read memory slices directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..errors import CompilerError
from ..numerics import Precision
from ..scalar.ir import BufferDecl, Scope
from ..vr.ir import (
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
)
from .device import VirtualDevice
from .ir import MACompute, MACopy, MAKernel, MALoop, MAModule, MARef


@dataclass
class _MCtx:
    buffers: list
    # SSA name -> either a register buffer name or an inlinable expression
    values: dict = field(default_factory=dict)
    precision: Precision = Precision.FP32

    def new_buffer(self, name: str, shape: tuple[int, ...]) -> str:
        base = name
        existing = {b.name for b in self.buffers}
        i = 2
        while name in existing:
            name = f"{base}_{i}"
            i += 1
        self.buffers.append(BufferDecl(name, shape, self.precision, Scope.REGISTER))
        return name


def _full_slices(shape: tuple[int, ...]) -> tuple[VSlice, ...]:
    from ..exprs import Const

    return tuple(VSlice(Const(0.0), n) for n in shape)


def lower_to_ma(module: VRModule, device: VirtualDevice) -> MAModule:
    kernels = []
    buffers = list(module.buffers)
    for k in module.kernels:
        ctx = _MCtx(buffers, precision=module.precision)
        body = _lower_items(ctx, k.body)
        kernels.append(MAKernel(k.name, k.blocks, tuple(body), k.backend, k.params))
    return MAModule(tuple(buffers), tuple(kernels), module.output, module.precision)


def _lower_items(ctx: _MCtx, items) -> list:
    out: list = []
    for item in items:
        if isinstance(item, VStore):
            out.extend(_lower_store(ctx, item))
            continue
        if isinstance(item.expr, VFor):
            out.extend(_lower_for(ctx, item))
            continue
        name = item.names[0]
        expr = item.expr
        if isinstance(expr, (VLit, VRef, VLoad, VReshape, VBroadcast, VTranspose)):
            # pure data movement / literals: inline into consumers
            ctx.values[name] = _inline(ctx, expr)
            continue
        inlined = _inline(ctx, expr)
        buf = ctx.new_buffer(_clean(name), expr.shape)
        out.append(MACompute(buf, _full_slices(expr.shape), inlined))
        ctx.values[name] = MARef(buf, _full_slices(expr.shape), expr.shape)
    return out


def _clean(ssa: str) -> str:
    # v_S_22 -> xS22 style register names
    parts = ssa.split("_")
    if parts[0] == "v" and len(parts) >= 3:
        return "x" + "".join(parts[1:-1]) + parts[-1]
    return ssa


def _inline(ctx: _MCtx, e: VExpr) -> VExpr:
    if isinstance(e, VRef):
        val = ctx.values.get(e.name)
        if val is None:
            raise CompilerError(f"MA lowering: unbound value {e.name!r}")
        return val
    if isinstance(e, VLoad):
        return MARef(e.buffer, e.slices, e.shape)
    if isinstance(e, VLit):
        return e
    if isinstance(e, VBin):
        return VBin(e.op, _inline(ctx, e.a), _inline(ctx, e.b), e.shape)
    if isinstance(e, VUn):
        return VUn(e.op, _inline(ctx, e.x), e.shape)
    if isinstance(e, VScale):
        return VScale(e.kind, _inline(ctx, e.x), e.shape)
    if isinstance(e, VDot):
        return VDot(_inline(ctx, e.a), _inline(ctx, e.b),
                    _inline(ctx, e.seed) if e.seed is not None else None, e.shape)
    if isinstance(e, VReduce):
        return VReduce(e.op, _inline(ctx, e.x), e.axes,
                       _inline(ctx, e.seed) if e.seed is not None else None, e.shape)
    if isinstance(e, VTranspose):
        return VTranspose(_inline(ctx, e.x), e.perm, e.shape)
    if isinstance(e, VReshape):
        return VReshape(_inline(ctx, e.x), e.shape)
    if isinstance(e, VBroadcast):
        return VBroadcast(_inline(ctx, e.x), e.shape)
    raise CompilerError(f"MA lowering: unexpected node {type(e).__name__}")


def _lower_store(ctx: _MCtx, st: VStore) -> list:
    val = ctx.values.get(st.value)
    if val is None:
        raise CompilerError(f"MA lowering: store of unbound value {st.value!r}")
    if isinstance(val, MARef):
        return [MACopy(st.buffer, st.slices, val.buffer, val.slices)]
    # literal or composed expression: emit a compute into the target slice
    return [MACompute(st.buffer, st.slices, val)]


def _lower_for(ctx: _MCtx, item: VBinding) -> list:
    f: VFor = item.expr
    out: list = []
    # accumulator buffers, one per loop-carried parameter
    param_bufs: list[str] = []
    for (pname, init), shape in zip(f.params, f.shapes):
        buf = ctx.new_buffer(_clean(pname) + "_acc", shape)
        param_bufs.append(buf)
        init_val = ctx.values.get(init)
        if init_val is None:
            raise CompilerError(f"MA lowering: loop init {init!r} unbound")
        if isinstance(init_val, MARef):
            out.append(MACopy(buf, _full_slices(shape), init_val.buffer, init_val.slices))
        else:
            out.append(MACompute(buf, _full_slices(shape), init_val))
        ctx.values[pname] = MARef(buf, _full_slices(shape), shape)
    body = _lower_items(ctx, f.body)
    # write back the yielded values; a yield reading another parameter's
    # buffer must go through a temporary so sequential assignment stays safe
    own = set(param_bufs)
    staged: list[tuple[str, str, tuple]] = []
    for buf, y, shape in zip(param_bufs, f.yields, f.shapes):
        yval = ctx.values.get(y)
        if yval is None:
            raise CompilerError(f"MA lowering: yield {y!r} unbound")
        reads = {n.buffer for n in (yval.walk() if isinstance(yval, VExpr) else [])
                 if isinstance(n, MARef)}
        hazardous = bool((reads & own) - {buf})
        if isinstance(yval, MARef) and not hazardous:
            if yval.buffer != buf:
                body.append(MACopy(buf, _full_slices(shape), yval.buffer, yval.slices))
        elif not hazardous:
            body.append(MACompute(buf, _full_slices(shape), yval))
        else:
            tmp = ctx.new_buffer(_clean(y) + "_tmp", shape)
            if isinstance(yval, MARef):
                body.append(MACopy(tmp, _full_slices(shape), yval.buffer, yval.slices))
            else:
                body.append(MACompute(tmp, _full_slices(shape), yval))
            staged.append((buf, tmp, shape))
    for buf, tmp, shape in staged:
        body.append(MACopy(buf, _full_slices(shape), tmp, _full_slices(shape)))
    out.append(MALoop(f.var, f.extent, tuple(body)))
    for name, buf, shape in zip(item.names, param_bufs, f.shapes):
        ctx.values[name] = MARef(buf, _full_slices(shape), shape)
    return out
