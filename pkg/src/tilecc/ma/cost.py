"""Analytic (static) cost model and capacity checking for MA modules.

The static counters are closed forms over loop extents and slice shapes and
match the interpreter's dynamic counters exactly on predication-free
programs (both sides share the per-expression flop arithmetic).
"""

from __future__ import annotations

import numpy as np

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
from .device import VirtualDevice
from .interp import FLOP_WEIGHTS, ITEM_BYTES, CostReport, modeled_cost
from .ir import MACompute, MACopy, MAKernel, MALoop, MAModule, MARef


def expr_flops(e: VExpr) -> int:
    """Weighted scalar-op count of one tile expression evaluation."""
    total = 0
    for n in e.walk():
        size = 1
        for d in n.shape:
            size *= d
        if isinstance(n, VBin):
            total += size * FLOP_WEIGHTS[n.op]
        elif isinstance(n, VUn):
            total += size * FLOP_WEIGHTS[n.op]
        elif isinstance(n, VScale):
            total += size * FLOP_WEIGHTS["scale"]
        elif isinstance(n, VDot):
            m, k = n.a.shape
            n2 = n.b.shape[1]
            total += 2 * m * k * n2
        elif isinstance(n, VReduce):
            isz = 1
            for d in n.x.shape:
                isz *= d
            total += isz
    return total


def _expr_read_bytes(e: VExpr, scope_of: dict, item: int) -> dict:
    out = {Scope.GLOBAL: 0, Scope.SHARED: 0, Scope.REGISTER: 0}
    for n in e.walk():
        if isinstance(n, MARef):
            size = 1
            for s in n.slices:
                size *= s.length
            out[scope_of[n.buffer]] += size * item
    return out


def cost_model(module: MAModule, device: VirtualDevice) -> CostReport:
    """Static counters: every statement weighted by its enclosing extents."""
    item = ITEM_BYTES[module.precision.value]
    scope_of = {b.name: b.scope for b in module.buffers}
    report = CostReport(kernels=len(module.kernels))

    def walk(body, mult: int):
        for st in body:
            if isinstance(st, MALoop):
                report.steps += mult * st.extent
                walk(st.body, mult * st.extent)
                continue
            report.steps += mult
            if isinstance(st, MACopy):
                size = 1
                for s in st.src_slices:
                    size *= s.length
                report.add_bytes(scope_of[st.src], mult * size * item)
                report.add_bytes(scope_of[st.dst], mult * size * item)
                continue
            dsize = 1
            for s in st.dst_slices:
                dsize *= s.length
            report.add_bytes(scope_of[st.dst], mult * dsize * item)
            for scope, nbytes in _expr_read_bytes(st.expr, scope_of, item).items():
                report.add_bytes(scope, mult * nbytes)
            report.flops += mult * expr_flops(st.expr)

    for k in module.kernels:
        mult = 1
        for _, _, extent in k.blocks:
            mult *= extent
        walk(k.body, mult)

    warps = module.kernels[0].param("warps", device.warp_default) if module.kernels else device.warp_default
    stages = module.kernels[0].param("stages", device.stage_default) if module.kernels else device.stage_default
    backend = module.kernels[0].backend if module.kernels else "generic"
    report.modeled_cost = modeled_cost(report, device, backend, warps, stages)
    return report


def check_capacity(module: MAModule, device: VirtualDevice) -> list[str]:
    """Peak live Shared/Register bytes per block via static liveness.

    Shared demand is scaled by the pipeline-stage count (double buffering);
    registers are checked against the per-block register file.
    """
    item = ITEM_BYTES[module.precision.value]
    problems: list[str] = []
    for k in module.kernels:
        stages = k.param("stages", device.stage_default)
        order: list = []

        def flat(body):
            for st in body:
                if isinstance(st, MALoop):
                    flat(st.body)
                else:
                    order.append(st)

        flat(k.body)
        first: dict[str, int] = {}
        last: dict[str, int] = {}
        for i, st in enumerate(order):
            bufs = []
            if isinstance(st, MACopy):
                bufs = [st.src, st.dst]
            else:
                bufs = [st.dst] + [n.buffer for n in st.expr.walk()
                                   if isinstance(n, MARef)]
            for b in bufs:
                first.setdefault(b, i)
                last[b] = i
        sizes = {b.name: int(np.prod(b.shape, dtype=np.int64)) * item
                 for b in module.buffers}
        scope_of = {b.name: b.scope for b in module.buffers}
        peak_shared = 0
        peak_reg = 0
        for i in range(len(order)):
            live_shared = sum(sizes[b] for b in first
                              if scope_of.get(b) is Scope.SHARED
                              and first[b] <= i <= last[b])
            live_reg = sum(sizes[b] for b in first
                           if scope_of.get(b) is Scope.REGISTER
                           and first[b] <= i <= last[b])
            peak_shared = max(peak_shared, live_shared)
            peak_reg = max(peak_reg, live_reg)
        eff_shared = peak_shared * stages
        if eff_shared > device.shared_bytes:
            worst = max(
                (b for b in first if scope_of.get(b) is Scope.SHARED),
                key=lambda b: sizes[b], default="?",
            )
            problems.append(
                f"{k.name}: shared demand {eff_shared} B (peak {peak_shared} x "
                f"{stages} stages) exceeds {device.shared_bytes} B; largest "
                f"buffer {worst!r}"
            )
        if peak_reg > device.register_bytes:
            worst = max(
                (b for b in first if scope_of.get(b) is Scope.REGISTER),
                key=lambda b: sizes[b], default="?",
            )
            problems.append(
                f"{k.name}: register demand {peak_reg} B exceeds "
                f"{device.register_bytes} B; largest buffer {worst!r}"
            )
    return problems
