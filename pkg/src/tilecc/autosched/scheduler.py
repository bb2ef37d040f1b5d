"""Automatic schedule-seed construction.

Statements are visited in a pre-order (producers before consumers) walk of
the block graph. Each visit runs four passes in a fixed order: tiling,
fusion, data localization, regularization. Fusion is greedy-classic first,
then rolling update for reductions; element-wise statements that cannot fuse
look ahead for a capturing reduction and defer to it. Every applied step is
recorded, so a seed replays from the unscheduled module to an identical
final module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from ..errors import CompilerError, TransformError
from ..exprs import Var, accesses
from ..scalar.graph import build_block_graph, classify_loops
from ..scalar.ir import (
    ComputeStmt,
    LoopKind,
    ScalarModule,
    Scope,
    StmtKind,
    TilingRole,
)
from ..schedule import transforms as tf
from ..schedule.repair import DEFAULT_REGISTRY
from ..schedule.replay import apply_step
from ..schedule.steps import Schedule, Step, TunableDecl
from ..ma.device import VirtualDevice


@dataclass
class SchedulerOptions:
    max_seeds: int = 16
    inner_cap: int | None = None  # default: device.inner_cap
    backends: tuple[str, ...] | None = None  # default: device profile's list
    enable_fusion: bool = True  # classic fusion + capture
    enable_rolling: bool = True  # rolling-update reduction fusion
    enable_localization: bool = True
    enable_regularization: bool = True
    temporal_reuse_threshold: int = 2
    pressure_fraction: float = 0.5

    def __post_init__(self):
        if self.max_seeds < 1:
            raise ValueError("max_seeds must be >= 1")


@dataclass
class SeedState:
    schedule: Schedule
    module: ScalarModule
    deferred: set = field(default_factory=set)
    log: list = field(default_factory=list)

    def apply(self, op: str, provenance: str, **kw) -> "SeedState":
        step = Step.of(op, **kw)
        module = apply_step(self.module, step, self.schedule, {}, DEFAULT_REGISTRY)
        return SeedState(
            schedule=self.schedule.append(step, provenance),
            module=module,
            deferred=set(self.deferred),
            log=list(self.log),
        )

    def note(self, msg: str) -> None:
        self.log.append(msg)


def run_autoscheduler(module: ScalarModule, device: VirtualDevice,
                      opts: SchedulerOptions | None = None) -> list[SeedState]:
    """Build schedule seeds; each returned state carries the schedule, the
    scheduled module snapshot, and the pass log."""
    opts = opts or SchedulerOptions()
    cap = opts.inner_cap if opts.inner_cap is not None else device.inner_cap
    backends = opts.backends if opts.backends is not None else device.backends()

    base = classify_loops(module)
    graph = build_block_graph(base)
    init_partner: dict[int, int] = {}
    for s in base.stmts:
        if s.kind is StmtKind.REDUCTION:
            for t in base.stmts:
                if t.kind is StmtKind.INIT and t.target == s.target:
                    init_partner[s.sid] = t.sid
    order = _preorder(base, graph, skip=set(init_partner.values()))
    consumer_reduced = _consumer_reduced_axes(base, graph)
    max_original = max((s.sid for s in base.stmts), default=-1)

    states = [SeedState(Schedule(), base)]
    visited: set = set()
    for sid in order:
        for p in graph.producers(sid):
            assert p in visited or p in init_partner.values(), (
                f"pre-order violated at stmt {sid}"
            )
        new_states: list[SeedState] = []
        for st in states:
            new_states.extend(
                _visit(st, sid, device, opts, cap, init_partner,
                       consumer_reduced, visited, max_original)
            )
        visited.add(sid)
        visited.update(init_partner.values())
        states = new_states[: max(opts.max_seeds, 1)]

    out: list[SeedState] = []
    for st in states:
        st = _finalize(st, device, opts, max_original)
        for backend in backends:
            variant = SeedState(st.schedule, st.module, set(st.deferred),
                                list(st.log))
            variant.schedule = variant.schedule.declare(TunableDecl(
                "backend", "backend", tuple(backends), backend))
            variant.schedule = variant.schedule.declare(TunableDecl(
                "warps", "warp-count", tuple(device.warp_choices),
                device.warp_default))
            variant.schedule = variant.schedule.declare(TunableDecl(
                "stages", "pipeline-stages",
                tuple(range(device.stage_min, device.stage_max + 1)),
                device.stage_default))
            variant = variant.apply("SetBackend", "regularization",
                                    backend="$backend")
            variant = variant.apply("SetParam", "regularization",
                                    name="warps", value="$warps")
            variant = variant.apply("SetParam", "regularization",
                                    name="stages", value="$stages")
            variant.note(f"backend variant {backend}")
            out.append(variant)
    out = _prerank(out, device)[: opts.max_seeds]
    return out


def _preorder(module: ScalarModule, graph, skip: set) -> list[int]:
    """Topological order, producers before consumers, ties by statement id."""
    sids = [s.sid for s in module.stmts if s.sid not in skip]
    remaining = set(sids)
    placed: set = set(skip)
    out: list[int] = []
    while remaining:
        ready = sorted(
            sid for sid in remaining
            if all(p in placed for p in graph.producers(sid))
        )
        if not ready:
            raise CompilerError("cyclic block graph")
        for sid in ready:
            out.append(sid)
            placed.add(sid)
            remaining.discard(sid)
    return out


def _consumer_reduced_axes(module: ScalarModule, graph) -> dict[int, set]:
    """Per statement: positions of its target index that some consumer
    reduces over. Outer loops realizing these positions stay sequential so
    later reduction fusion has a destination."""
    out: dict[int, set] = {}
    for s in module.stmts:
        reduced: set = set()
        for c_sid in graph.consumers(s.sid):
            c = module.stmt(c_sid)
            tgt_axes = set(tf.stmt_target_axes(c))
            red_axes = set(c.subst_map()) - tgt_axes
            if not red_axes:
                continue
            for acc in accesses(c.rhs):
                if acc.tensor != s.target:
                    continue
                for pos, idx in enumerate(acc.index):
                    if isinstance(idx, Var) and idx.name in red_axes:
                        reduced.add(pos)
        out[s.sid] = reduced
    return out


# ---------------------------------------------------------------------------
# Per-statement visit


def _visit(state: SeedState, sid: int, device, opts, cap, init_partner,
           consumer_reduced, visited, max_original) -> list[SeedState]:
    s = state.module.stmt(sid)
    plans = _plan_fusion(state, s, device, opts, visited)

    states: list[SeedState] = []
    if not plans:
        # tiling pass (nothing to fuse into)
        st = _pass_tiling(state, sid, device, opts, cap, init_partner,
                          consumer_reduced)
        states.append(st)
    else:
        for plan in plans:
            states.append(_execute_plan(state, sid, plan))

    out: list[SeedState] = []
    for st in states:
        if opts.enable_localization and sid not in st.deferred:
            st = _pass_localization(st, sid, device, opts, visited, max_original)
        out.append(st)
    return out


def _pass_tiling(state: SeedState, sid: int, device, opts, cap, init_partner,
                 consumer_reduced) -> SeedState:
    s = state.module.stmt(sid)
    if not s.chain:
        state.note(f"s{sid}: scalar statement, nothing to tile")
        return state
    if any(state.module.loop(v).role is not TilingRole.UNTILED for v in s.chain):
        return state  # already owned by a tiled nest
    anchor_sid = init_partner.get(sid, sid)
    anchor = state.module.stmt(anchor_sid)

    factors: list = []
    st = state
    map_pos = 0
    for v in anchor.chain:
        loop = st.module.loop(v)
        if loop.kind is not LoopKind.MAP:
            # reduction/sequential axes stay full-width tiles when they fit,
            # else split down to the cap for a sequential outer loop
            if loop.extent <= cap:
                factors.append((v, "whole"))
            else:
                factors.append((v, cap))
            continue
        allowed = _tile_choices(loop.extent, cap)
        if len(allowed) > 1:
            tname = f"t{anchor_sid}_{v}"
            default = _tile_default(allowed, map_pos)
            st.schedule = st.schedule.declare(
                TunableDecl(tname, "tile-size", tuple(allowed), default))
            factors.append((v, f"${tname}"))
        else:
            factors.append((v, _tile_default(allowed, map_pos)))
        map_pos += 1
    st = st.apply("BiLevelTile", "tiling", stmt=anchor_sid,
                  factors=tuple(factors), inner_cap=cap)
    if anchor_sid != sid:
        depth = sum(1 for v in st.module.stmt(anchor_sid).chain
                    if st.module.loop(v).role is TilingRole.OUTER)
        if depth > 0:
            st = st.apply("FuseClassic", "tiling", stmt=sid, dest=anchor_sid,
                          depth=depth)
        st.note(f"s{sid}: tiled with init s{anchor_sid}")
    else:
        st.note(f"s{sid}: tiled")
    # bind outer Map loops, skipping axes a consumer will reduce over
    reduced_positions = consumer_reduced.get(sid, set())
    anchor_now = st.module.stmt(anchor_sid)
    skip_loops: set = set()
    for pos in reduced_positions:
        if pos < len(anchor_now.index):
            e = anchor_now.index[pos]
            if isinstance(e, Var):
                aff = st.module.stmt(anchor_sid).subst_map().get(e.name)
                if aff is not None:
                    from ..exprs import to_affine

                    a = to_affine(aff)
                    if a is not None:
                        skip_loops |= a.vars()
    axes = ["blockIdx.x", "blockIdx.y", "blockIdx.z"]
    bound = 0
    for v in st.module.stmt(anchor_sid).chain:
        loop = st.module.loop(v)
        if loop.role is not TilingRole.OUTER or loop.kind is not LoopKind.MAP:
            continue
        if v in skip_loops:
            st.note(f"s{sid}: loop {v} left sequential (consumer reduces it)")
            continue
        if bound >= len(axes):
            break
        try:
            st = st.apply("BindBlock", "tiling", loop=v, axis=axes[bound])
            bound += 1
        except Exception:
            continue
    return st


def _tile_choices(extent: int, cap: int) -> list[int]:
    out = []
    p = 16
    while p <= cap:
        if extent % p == 0 and p < extent:
            out.append(p)
        p *= 2
    if extent <= cap:
        out.append(extent)
    if not out:
        # fall back to the largest power-of-two divisor within the cap
        p = 1
        best = 1
        while p <= cap:
            if extent % p == 0:
                best = p
            p *= 2
        out.append(best)
    return sorted(set(out))


def _tile_default(allowed: list[int], position: int) -> int:
    prefer = 64 if position == 0 else 128
    best = allowed[0]
    for a in allowed:
        if a <= prefer:
            best = a
    return best


@dataclass
class _Plan:
    kind: str  # classic | rolling | defer
    dest: int = -1
    depth: int = 0
    loop: str = ""
    fold: bool = False
    note: str = ""


def _plan_fusion(state: SeedState, s: ComputeStmt, device, opts,
                 visited) -> list[_Plan]:
    """Dry-select fusion actions for this statement; [] means none apply."""
    if not opts.enable_fusion:
        return []
    if s.kind is StmtKind.INIT:
        return []
    module = state.module
    graph = build_block_graph(module)
    producers = [module.stmt(p) for p in graph.producers(s.sid)]
    anchors = [p for p in producers if p.kind is not StmtKind.INIT
               and p.sid not in state.deferred]

    classic: _Plan | None = None
    for anchor in sorted(anchors, key=lambda a: (-len(a.chain), a.sid)):
        outer_len = 0
        for v in anchor.chain:
            if module.loop(v).role is TilingRole.INNER:
                break
            outer_len += 1
        if outer_len == 0 and anchor.chain and all(
            module.loop(v).role is TilingRole.UNTILED for v in anchor.chain
        ):
            outer_len = len(anchor.chain)  # untiled dest: share the whole nest
        for depth in range(outer_len, 0, -1):
            trial = _try_classic(state, s.sid, anchor.sid, depth, device)
            if trial is not None:
                classic = _Plan("classic", dest=anchor.sid, depth=depth,
                                note=f"s{s.sid}: classic fusion into s{anchor.sid} "
                                     f"at depth {depth}")
                break
        if classic:
            break

    rolling: _Plan | None = None
    fold_available = False
    if opts.enable_rolling and s.kind is StmtKind.REDUCTION:
        loops: list[str] = []
        for p_sid in graph.predecessors(s.sid):
            p = module.stmt(p_sid)
            if p.kind is not StmtKind.REDUCTION:
                continue
            for v in p.chain:
                loop = module.loop(v)
                if loop.role is TilingRole.INNER:
                    continue
                if v not in loops and v in tf.accumulates_along(module, p.target):
                    loops.append(v)
        for loop_var in loops:
            probe = tf.probe_rolling(module, s.sid, loop_var, DEFAULT_REGISTRY)
            if probe is not None:
                fold_available = tf.probe_fold_division(module, s.sid, loop_var)
                rolling = _Plan("rolling", loop=loop_var, fold=fold_available,
                                note=f"s{s.sid}: rolling update into {loop_var} "
                                     f"(captures {probe[1]})")
                break

    plans: list[_Plan] = []
    if rolling is not None:
        plans.append(rolling)
        if fold_available:
            alt = replace(rolling, fold=False,
                          note=rolling.note + " [no division folding]")
            plans.append(alt)
    elif classic is not None:
        plans.append(classic)
    elif s.kind is StmtKind.ELEMENTWISE:
        # look ahead: can a successor reduction capture this statement?
        for c_sid in sorted(graph.successors(s.sid)):
            c = module.stmt(c_sid)
            if c.kind is not StmtKind.REDUCTION or not opts.enable_rolling:
                continue
            for p_sid in graph.predecessors(c_sid):
                p = module.stmt(p_sid)
                if p.kind is not StmtKind.REDUCTION:
                    continue
                for v in p.chain:
                    if module.loop(v).role is TilingRole.INNER:
                        continue
                    if v not in tf.accumulates_along(module, p.target):
                        continue
                    probe = tf.probe_rolling(module, c_sid, v, DEFAULT_REGISTRY)
                    if probe is not None and s.sid in probe[1]:
                        return [_Plan("defer",
                                      note=f"s{s.sid}: deferred for capture by "
                                           f"s{c_sid} into {v}")]
    return plans


def _try_classic(state: SeedState, sid: int, dest: int, depth: int,
                 device) -> ScalarModule | None:
    try:
        module = tf.fuse_classic(state.module, sid, dest, depth)
    except TransformError:
        return None
    # locality budget: reading more than a tile's worth of an in-kernel
    # intermediate means the fusion materializes an oversized block footprint
    fused = module.stmt(sid)
    ki = module.kernel_of(sid)
    kernel_targets = {t.target for t in module.kernel_stmts(ki) if t.sid != sid}
    extents = {l.var: l.extent for l in module.loops}
    depth_chain = set(fused.chain[:depth])
    for acc, aff in fused.realized_rhs_accesses():
        if acc.tensor not in kernel_targets:
            continue
        elems = 1
        for a in aff:
            inner = {v: c for v, c in a.coefs.items() if v not in depth_chain}
            lo, hi = type(a)(inner, 0).value_range(extents)
            elems *= hi - lo + 1
        if elems > device.max_tile_elems:
            return None
    return module


def _execute_plan(state: SeedState, sid: int, plan: _Plan) -> SeedState:
    if plan.kind == "defer":
        st = SeedState(state.schedule, state.module, set(state.deferred),
                       list(state.log))
        st.deferred.add(sid)
        st.note(plan.note)
        return st
    try:
        if plan.kind == "classic":
            st = state.apply("FuseClassic", "fusion", stmt=sid, dest=plan.dest,
                             depth=plan.depth)
            st.note(plan.note)
            return st
        if plan.kind == "rolling":
            st = state.apply("RollingUpdate", "fusion", stmt=sid, loop=plan.loop,
                             fold_division=plan.fold)
            st.note(plan.note + (" [fold division]" if plan.fold else ""))
            # captured statements are placed now
            st.deferred = {d for d in st.deferred
                           if plan.loop not in st.module.stmt(d).chain}
            return st
    except (CompilerError, Exception) as err:
        st = SeedState(state.schedule, state.module, set(state.deferred),
                       list(state.log))
        st.note(f"s{sid}: {plan.kind} fusion refused late ({err}); "
                f"statement starts a new kernel")
        return st
    raise CompilerError(f"unknown plan {plan.kind}")


# ---------------------------------------------------------------------------
# Localization


def _pass_localization(state: SeedState, sid: int, device, opts, visited,
                       max_original) -> SeedState:
    st = state
    module = st.module
    try:
        s = module.stmt(sid)
    except CompilerError:
        return st
    # read staging for reused global inputs / cross-kernel tensors
    staged_budget = _staged_shared_bytes(module, device)
    for acc, aff in s.realized_rhs_accesses():
        decl_names = {b.name for b in module.buffers}
        if acc.tensor not in decl_names:
            continue
        decl = module.buffer(acc.tensor)
        if decl.scope is not Scope.GLOBAL:
            continue
        ki = module.kernel_of(sid)
        produced_here = any(t.target == acc.tensor for t in module.kernel_stmts(ki))
        if produced_here:
            continue  # in-place localization handles kernel-local tensors
        if module.has_buffer(f"{acc.tensor}_s"):
            continue
        at_loop, reuse = _reuse_frame(module, s, aff)
        if at_loop is None or reuse < opts.temporal_reuse_threshold:
            continue
        footprint = _footprint_bytes(module, acc.tensor, aff, s, at_loop)
        if footprint is None:
            continue
        if (staged_budget + footprint) * device.stage_default > device.shared_bytes:
            st.note(f"s{sid}: skip staging {acc.tensor} (shared capacity)")
            continue
        try:
            st = st.apply("CacheStage", "localization", buffer=acc.tensor,
                          scope=Scope.SHARED.value, loop=at_loop,
                          direction="read")
            st.note(f"s{sid}: staged {acc.tensor} to Shared at {at_loop} "
                    f"(reuse {reuse})")
            module = st.module
            staged_budget += footprint
        except TransformError:
            continue
    # in-place decisions wait for _finalize: rewriting producer/consumer
    # index relations mid-walk would defeat later fusion matching
    return st


def _staged_shared_bytes(module: ScalarModule, device) -> int:
    from ..ma.interp import ITEM_BYTES

    item = ITEM_BYTES[module.precision.value]
    total = 0
    for b in module.buffers:
        if b.scope is Scope.SHARED:
            n = 1
            for d in b.shape:
                n *= d
            total += n * item
    return total


def _reuse_frame(module: ScalarModule, s: ComputeStmt, aff) -> tuple:
    access_vars: set = set()
    for a in aff:
        access_vars |= a.vars()
    at_loop = None
    for v in s.chain:
        loop = module.loop(v)
        if loop.role is TilingRole.INNER:
            break
        if v in access_vars or loop.binding is not None:
            at_loop = v
    if at_loop is None:
        return None, 0
    reuse = 1
    seen = False
    for v in s.chain:
        if v == at_loop:
            seen = True
            continue
        if seen and v not in access_vars:
            reuse *= module.loop(v).extent
    return at_loop, reuse


def _footprint_bytes(module, buffer, aff, s, at_loop):
    from ..ma.interp import ITEM_BYTES

    item = ITEM_BYTES[module.precision.value]
    extents = {l.var: l.extent for l in module.loops}
    cut = s.chain.index(at_loop) + 1
    outer = set(s.chain[:cut])
    n = 1
    for a in aff:
        from ..exprs import Affine

        inner = Affine({v: c for v, c in a.coefs.items() if v not in outer}, 0)
        lo, hi = inner.value_range(extents)
        n *= hi - lo + 1
    return n * item


def _localize_completed(state: SeedState, device, opts, visited,
                        max_original) -> SeedState:
    from ..ma.interp import ITEM_BYTES

    st = state
    module = st.module
    item = ITEM_BYTES[module.precision.value]
    done = visited | {t.sid for t in module.stmts if t.sid > max_original}
    for decl in module.buffers:
        if decl.scope is not Scope.GLOBAL or decl.is_input or decl.is_output:
            continue
        touching = [t for t in module.stmts if tf._touches(t, decl.name)]
        if not touching:
            continue
        if not all(t.sid in done or t.kind is StmtKind.INIT for t in touching):
            continue
        kernels = {module.kernel_of(t.sid) for t in touching}
        if len(kernels) != 1:
            continue
        prefix = touching[0].chain
        for t in touching[1:]:
            n = 0
            while n < len(prefix) and n < len(t.chain) and prefix[n] == t.chain[n]:
                n += 1
            prefix = prefix[:n]
        at_loop = None
        for v in prefix:
            if module.loop(v).role is not TilingRole.INNER:
                at_loop = v
        if at_loop is None:
            continue
        size = 1
        for d in decl.shape:
            size *= d
        try:
            dims, _ = tf._footprint(module, decl.name, at_loop)
        except TransformError:
            continue
        foot = 1
        for _, length in dims:
            foot *= length
        foot_bytes = foot * item
        if foot_bytes <= opts.pressure_fraction * device.register_bytes:
            try:
                st = st.apply("CacheStage", "localization", buffer=decl.name,
                              scope=Scope.REGISTER.value, loop=at_loop,
                              direction="inplace")
                st.note(f"localized {decl.name} in Register at {at_loop}")
                module = st.module
                continue
            except TransformError:
                pass
        # pressure: rematerialize cheap element-wise definitions
        writers = [t for t in touching if t.target == decl.name]
        if len(writers) == 1 and writers[0].kind is StmtKind.ELEMENTWISE:
            try:
                st = st.apply("Rematerialize", "localization", buffer=decl.name)
                st.note(f"rematerialized {decl.name} (register pressure)")
                module = st.module
                continue
            except TransformError:
                pass
        if foot_bytes * device.stage_default <= device.shared_bytes:
            try:
                st = st.apply("CacheStage", "localization", buffer=decl.name,
                              scope=Scope.SHARED.value, loop=at_loop,
                              direction="inplace")
                st.note(f"localized {decl.name} in Shared at {at_loop}")
                module = st.module
            except TransformError:
                pass
    return st


# ---------------------------------------------------------------------------
# Regularization


def _pass_regularization(state: SeedState, device, opts) -> SeedState:
    from ..vr.lower import carried_buffers

    st = state
    module = st.module
    for ki in range(len(module.kernels)):
        stmts = module.kernel_stmts(ki)
        loop_vars = []
        for t in stmts:
            for v in t.chain:
                loop = module.loop(v)
                if loop.role is not TilingRole.INNER and v not in loop_vars:
                    loop_vars.append(v)
        for v in loop_vars:
            loop = module.loop(v)
            if loop.kind is LoopKind.MAP or loop.binding is not None:
                continue
            carried = carried_buffers(module, stmts, v)
            missing = sorted(carried - set(loop.carried))
            for buf in missing:
                try:
                    st = st.apply("SplitScanBuffer", "regularization",
                                  buffer=buf, loop=v)
                    st.note(f"split scan buffer {buf} along {v}")
                    module = st.module
                except TransformError:
                    pass
    return st


def _finalize(state: SeedState, device, opts, max_original) -> SeedState:
    st = state
    if opts.enable_localization:
        st = _localize_completed(
            st, device, opts,
            visited={s.sid for s in st.module.stmts}, max_original=max_original,
        )
    if opts.enable_regularization:
        st = _pass_regularization(st, device, opts)
    return st


def _prerank(states: list[SeedState], device) -> list[SeedState]:
    """Deterministic pre-ranking by the analytic cost of the lowered module
    at default tunables; unlowerable seeds are dropped with a note."""
    from ..ma.cost import cost_model
    from ..ma.lower import lower_to_ma
    from ..vr.lower import lower_to_vr
    from ..vr.rewrite import rewrite

    ranked = []
    for i, st in enumerate(states):
        try:
            vr = lower_to_vr(st.module)
            vr, _ = rewrite(vr)
            ma = lower_to_ma(vr, device)
            cost = cost_model(ma, device).modeled_cost
        except CompilerError as err:
            st.note(f"seed dropped at pre-ranking: {err}")
            continue
        ranked.append((cost, i, st))
    ranked.sort(key=lambda t: (t[0], t[1]))
    return [st for _, _, st in ranked]
