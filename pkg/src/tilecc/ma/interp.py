"""MA-tile interpreter with per-scope traffic accounting.

Two byte counters are kept per scope:

* ``bytes_moved``: every executed load/store slice counts, every time it
  executes (conservation: equals the sum over executed statements of their
  slice bytes);
* ``unique Global elements`` touched per kernel and, per block, a read audit
  used to certify single-pass structure (each element of a buffer read
  exactly once within one block's execution).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import CompilerError, OutOfBounds
from ..exprs import to_affine
from ..numerics import DivisionByZero, Ops, ops_for
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
    VSlice,
    VTranspose,
    VUn,
)
from .device import VirtualDevice
from .ir import MACompute, MACopy, MAKernel, MALoop, MAModule, MARef

ITEM_BYTES = {"fp32": 4, "fp64": 8, "rational": 8}

# documented flop weights per scalar operation
FLOP_WEIGHTS = {"add": 1, "sub": 1, "mul": 1, "div": 4, "max": 1, "min": 1,
                "exp": 8, "exp2": 4, "log2": 4, "neg": 1, "scale": 1}


@dataclass
class CostReport:
    bytes_global: int = 0
    bytes_shared: int = 0
    bytes_register: int = 0
    flops: int = 0
    kernels: int = 0
    steps: int = 0
    modeled_cost: float = 0.0
    unique_global_bytes: int = 0
    read_audit: dict = field(default_factory=dict)

    def bytes_for(self, scope: Scope) -> int:
        return {Scope.GLOBAL: self.bytes_global, Scope.SHARED: self.bytes_shared,
                Scope.REGISTER: self.bytes_register}[scope]

    def add_bytes(self, scope: Scope, n: int) -> None:
        if scope is Scope.GLOBAL:
            self.bytes_global += n
        elif scope is Scope.SHARED:
            self.bytes_shared += n
        else:
            self.bytes_register += n

    def to_json(self) -> str:
        data = {
            "bytes": {"Global": self.bytes_global, "Shared": self.bytes_shared,
                      "Register": self.bytes_register},
            "unique_global_bytes": self.unique_global_bytes,
            "flops": self.flops,
            "kernels": self.kernels,
            "steps": self.steps,
            "modeled_cost": round(self.modeled_cost, 6),
            "read_audit": self.read_audit,
        }
        return json.dumps(data, indent=2, sort_keys=False) + "\n"


def modeled_cost(report: CostReport, device: VirtualDevice, backend: str,
                 warps: int, stages: int) -> float:
    """cost = global*wg/(1 + d*(stages-1)) + shared*ws + register*wr
    + flops*wf*sqrt(4/warps), all scaled by the backend factors."""
    byte_f, flop_f = device.factors(backend)
    wg = device.cost_global / (1.0 + device.stage_discount * (stages - 1))
    cost = (
        report.bytes_global * wg
        + report.bytes_shared * device.cost_shared
        + report.bytes_register * device.cost_register
    ) * byte_f
    cost += report.flops * device.cost_flop * (4.0 / warps) ** 0.5 * flop_f
    cost += report.kernels * device.launch_cost
    return cost


def interpret_ma(module: MAModule, inputs: dict, device: VirtualDevice,
                 precision=None) -> tuple[dict, CostReport]:
    precision = precision or module.precision
    ops = ops_for(precision)
    item = ITEM_BYTES[module.precision.value]
    bufs: dict[str, np.ndarray] = {}
    for decl in module.buffers:
        if decl.is_input:
            arr = ops.asarray(inputs[decl.name])
            if arr.shape != decl.shape:
                raise OutOfBounds(f"input {decl.name!r}: wrong shape {arr.shape}")
            bufs[decl.name] = arr.copy()
        else:
            bufs[decl.name] = ops.zeros(decl.shape)

    report = CostReport(kernels=len(module.kernels))
    scope_of = {b.name: b.scope for b in module.buffers}
    audit: dict[str, dict] = {}

    for k in module.kernels:
        touched: dict[str, np.ndarray] = {}
        ranges = [range(e) for _, _, e in k.blocks]
        for point in itertools.product(*ranges):
            env = {var: val for (var, _, _), val in zip(k.blocks, point)}
            block_reads: dict[str, np.ndarray] = {}
            _run(k.body, env, bufs, ops, report, scope_of, item, touched,
                 block_reads, module)
            for buf, counts in block_reads.items():
                a = audit.setdefault(
                    buf, {"reads": 0, "unique": 0, "blocks": 0, "single_pass": True}
                )
                total = int(counts.sum())
                uniq = int((counts > 0).sum())
                a["reads"] += total
                a["unique"] += uniq
                a["blocks"] += 1
                if total != uniq:
                    a["single_pass"] = False
        for buf, mask in touched.items():
            report.unique_global_bytes += int((mask > 0).sum()) * item

    warps = module.kernels[0].param("warps", device.warp_default) if module.kernels else device.warp_default
    stages = module.kernels[0].param("stages", device.stage_default) if module.kernels else device.stage_default
    backend = module.kernels[0].backend if module.kernels else "generic"
    report.read_audit = {k: audit[k] for k in sorted(audit)}
    report.modeled_cost = modeled_cost(report, device, backend, warps, stages)
    return bufs, report


def _slices(slices: tuple[VSlice, ...], env: dict):
    out = []
    for s in slices:
        a = to_affine(s.offset)
        off = a.evaluate(env)
        out.append(slice(off, off + s.length))
    return tuple(out)


def _note_access(report, scope_of, item, touched, block_reads, buf, idx,
                 nbytes, module, is_read):
    scope = scope_of[buf]
    report.add_bytes(scope, nbytes)
    if scope is Scope.GLOBAL:
        if buf not in touched:
            touched[buf] = np.zeros(module.buffer(buf).shape, dtype=np.int32)
        touched[buf][idx] += 1
        if is_read:
            if buf not in block_reads:
                block_reads[buf] = np.zeros(module.buffer(buf).shape, dtype=np.int32)
            block_reads[buf][idx] += 1


def _run(body, env, bufs, ops, report, scope_of, item, touched, block_reads,
         module) -> None:
    for st in body:
        report.steps += 1
        if isinstance(st, MALoop):
            report.steps -= 1
            for i in range(st.extent):
                report.steps += 1
                env2 = dict(env)
                env2[st.var] = i
                _run(st.body, env2, bufs, ops, report, scope_of, item, touched,
                     block_reads, module)
            continue
        if isinstance(st, MACopy):
            sidx = _slices(st.src_slices, env)
            didx = _slices(st.dst_slices, env)
            val = bufs[st.src][sidx]
            n = int(np.prod([s.stop - s.start for s in sidx])) if sidx else 1
            _note_access(report, scope_of, item, touched, block_reads, st.src,
                         sidx, n * item, module, True)
            _note_access(report, scope_of, item, touched, block_reads, st.dst,
                         didx, n * item, module, False)
            bufs[st.dst][didx] = val.reshape(
                tuple(s.stop - s.start for s in didx)
            )
            continue
        # MACompute
        from .cost import expr_flops

        value = _eval(st.expr, env, bufs, ops, report, scope_of, item,
                      touched, block_reads, module)
        didx = _slices(st.dst_slices, env)
        n = int(np.prod([s.stop - s.start for s in didx])) if didx else 1
        _note_access(report, scope_of, item, touched, block_reads, st.dst,
                     didx, n * item, module, False)
        report.flops += expr_flops(st.expr)
        shape = tuple(s.stop - s.start for s in didx)
        bufs[st.dst][didx] = np.asarray(value).reshape(shape)


def _eval(e: VExpr, env, bufs, ops: Ops, report, scope_of, item, touched,
          block_reads, module):
    def go(e: VExpr):
        if isinstance(e, VLit):
            return ops.full(e.shape, e.value) if e.shape else ops.scalar(e.value)
        if isinstance(e, MARef):
            idx = _slices(e.slices, env)
            n = int(np.prod([s.stop - s.start for s in idx])) if idx else 1
            _note_access(report, scope_of, item, touched, block_reads, e.buffer,
                         idx, n * item, module, True)
            return bufs[e.buffer][idx].copy()
        if isinstance(e, VBin):
            a = go(e.a)
            b = go(e.b)
            try:
                return ops.binop(e.op, a, b)
            except DivisionByZero:
                raise DivisionByZero("tile divide") from None
        if isinstance(e, VUn):
            if e.op == "exp2" and ops.is_exact and isinstance(e.x, VScale) and \
                    e.x.kind == "log2e":
                return ops.unop("exp", go(e.x.x))
            return ops.unop(e.op, go(e.x))
        if isinstance(e, VScale):
            from ..numerics import LOG2E_F64

            return ops.binop("mul", ops.scalar(LOG2E_F64), go(e.x))
        if isinstance(e, VDot):
            a = go(e.a)
            b = go(e.b)
            acc = go(e.seed) if e.seed is not None else ops.zeros(e.shape)
            if not isinstance(acc, np.ndarray) or acc.shape != e.shape:
                base = ops.zeros(e.shape)
                base[...] = acc
                acc = base
            for kk in range(a.shape[1]):
                acc = acc + a[:, kk : kk + 1] * b[kk : kk + 1, :]
            return acc
        if isinstance(e, VReduce):
            x = go(e.x)
            keep = [i for i in range(x.ndim) if i not in e.axes]
            moved = np.moveaxis(x, e.axes, tuple(range(len(keep), x.ndim)))
            flat = moved.reshape(tuple(moved.shape[: len(keep)]) + (-1,))
            if e.seed is not None:
                acc = go(e.seed)
                if not isinstance(acc, np.ndarray) or getattr(acc, "shape", None) != e.shape:
                    base = ops.zeros(e.shape) if e.shape else ops.scalar(0)
                    if e.shape:
                        base[...] = acc
                        acc = base
                start = 0
            else:
                acc = flat[..., 0]
                start = 1
            binop = {"sum": "add", "prod": "mul", "max": "max", "min": "min"}[e.op]
            for i in range(start, flat.shape[-1]):
                acc = ops.binop(binop, acc, flat[..., i])
            return acc
        if isinstance(e, VTranspose):
            return np.transpose(go(e.x), e.perm)
        if isinstance(e, VReshape):
            return np.asarray(go(e.x)).reshape(e.shape)
        if isinstance(e, VBroadcast):
            return np.broadcast_to(go(e.x), e.shape).copy()
        raise CompilerError(f"MA eval: unexpected node {type(e).__name__}")

    return go(e)
