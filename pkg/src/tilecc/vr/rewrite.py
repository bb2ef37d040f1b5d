"""Expression rewriting on the VR-tile IR.

Built-in rules, in application order:

* standard identities: shape-op folding over literals, x*1, x+0, x/1,
  integer constant folding, double transpose;
* ``exp(x) -> exp2(log2e * x)`` with the constant folded (hardware-informed);
* multiplicative hoist out of a loop expression's yield, committed only when
  an exact-arithmetic probe of the rewritten loop agrees with the original;
* telescoping divide/multiply cancellation across loop iterations (the
  rescaling pattern produced by folded-division reduction fusion), removing
  2n-1 dynamic operations for an n-iteration loop.

Every pass strictly decreases a weighted dynamic op count (exp weighs 4,
exp2 2, div 2, everything else 1), which bounds the engine's runtime.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .. import exact as ex
from ..numerics import ops_for
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
    VScale,
    VStore,
    VTranspose,
    VUn,
    count_ops,
)
from .lower import dce

_WEIGHTS = {"exp": 4, "exp2": 2, "log2": 2, "div": 2}


def _weighted_dynamic(module: VRModule) -> int:
    dyn = count_ops(module)["dynamic"]
    return sum(_WEIGHTS.get(tag, 1) * n for tag, n in dyn.items() if tag not in ("load", "store"))


@dataclass
class RewriteRule:
    name: str
    soundness: str  # "exact" | "fp-reassociating"
    apply: Callable  # (kernel body items, defs) -> (new items, fire count)


@dataclass
class RewriteReport:
    entries: list = field(default_factory=list)
    passes: int = 0

    def to_json(self) -> str:
        import json

        return json.dumps(
            [{"rule": r, "fire_count": f, "ops_removed": d} for r, f, d in self.entries],
            indent=2,
        ) + "\n"


def rewrite(module: VRModule, rules: Optional[list] = None,
            max_passes: int = 10) -> tuple[VRModule, RewriteReport]:
    """Apply rules to fixpoint (bounded by max_passes); deterministic."""
    rules = rules if rules is not None else default_rules()
    report = RewriteReport()
    cur = module
    for _ in range(max_passes):
        fired_any = False
        for rule in rules:
            before = _weighted_dynamic(cur)
            nxt, fires = _apply_rule(cur, rule)
            if fires:
                nxt = dce(nxt)
                after = _weighted_dynamic(nxt)
                report.entries.append((rule.name, fires, before - after))
                cur = nxt
                fired_any = True
        report.passes += 1
        if not fired_any:
            break
    return cur, report


def _apply_rule(module: VRModule, rule: RewriteRule) -> tuple[VRModule, int]:
    kernels = []
    total = 0
    for k in module.kernels:
        body, fires = rule.apply(list(k.body), {})
        total += fires
        kernels.append(replace(k, body=tuple(body)))
    return replace(module, kernels=tuple(kernels)), total


# ---------------------------------------------------------------------------
# Helpers


def _map_expr(e: VExpr, fn: Callable[[VExpr], VExpr]) -> VExpr:
    """Bottom-up rebuild."""
    if isinstance(e, VBin):
        e = VBin(e.op, _map_expr(e.a, fn), _map_expr(e.b, fn), e.shape)
    elif isinstance(e, VUn):
        e = VUn(e.op, _map_expr(e.x, fn), e.shape)
    elif isinstance(e, VScale):
        e = VScale(e.kind, _map_expr(e.x, fn), e.shape)
    elif isinstance(e, VDot):
        e = VDot(_map_expr(e.a, fn), _map_expr(e.b, fn),
                 _map_expr(e.seed, fn) if e.seed is not None else None, e.shape)
    elif isinstance(e, VReduce):
        e = VReduce(e.op, _map_expr(e.x, fn), e.axes,
                    _map_expr(e.seed, fn) if e.seed is not None else None, e.shape)
    elif isinstance(e, VTranspose):
        e = VTranspose(_map_expr(e.x, fn), e.perm, e.shape)
    elif isinstance(e, VReshape):
        e = VReshape(_map_expr(e.x, fn), e.shape)
    elif isinstance(e, VBroadcast):
        e = VBroadcast(_map_expr(e.x, fn), e.shape)
    return fn(e)


def _rewrite_exprs(items: list, simplify: Callable, defs: dict) -> tuple[list, int]:
    """Apply an expression-level simplifier to every binding, innermost first."""
    fires = 0
    out = []
    for item in items:
        if isinstance(item, VStore):
            out.append(item)
            continue
        if isinstance(item.expr, VFor):
            f = item.expr
            inner, n = _rewrite_exprs(list(f.body), simplify, dict(defs))
            fires += n
            out.append(VBinding(item.names, replace(f, body=tuple(inner))))
            continue

        count = [0]

        def fn(e: VExpr) -> VExpr:
            r = simplify(e, defs)
            if r is not None:
                count[0] += 1
                return r
            return e

        new_expr = _map_expr(item.expr, fn)
        fires += count[0]
        defs[item.names[0]] = new_expr
        out.append(VBinding(item.names, new_expr))
    return out, fires


def _is_lit(e: VExpr, value: Optional[float] = None) -> bool:
    return isinstance(e, VLit) and (value is None or e.value == value)


def _lit_of(e: VExpr, defs: dict) -> Optional[VLit]:
    if isinstance(e, VLit):
        return e
    if isinstance(e, VRef):
        d = defs.get(e.name)
        if isinstance(d, VLit):
            return d
    return None


def _strip_adapters(e: VExpr, binds: Optional[dict] = None):
    """Peel reshape/broadcast wrappers, chasing refs to adapter bindings;
    returns (core, rebuild). rebuild produces the same adapter chain as one
    nested expression."""
    wrappers = []
    while True:
        if isinstance(e, (VReshape, VBroadcast)):
            wrappers.append(e)
            e = e.x
            continue
        if binds is not None and isinstance(e, VRef) and e.name in binds:
            target = binds[e.name]
            if isinstance(target, (VReshape, VBroadcast)):
                e = target
                continue
        break

    def rebuild(core: VExpr) -> VExpr:
        out = core
        for w in reversed(wrappers):
            if isinstance(w, VReshape):
                out = VReshape(out, w.shape)
            else:
                out = VBroadcast(out, w.shape)
        return out

    return e, rebuild


# ---------------------------------------------------------------------------
# Standard identities


def _simplify_identities(e: VExpr, defs: dict) -> Optional[VExpr]:
    if isinstance(e, VRef):
        d = defs.get(e.name)
        if isinstance(d, VRef):  # collapse alias chains
            return VRef(d.name, e.shape)
    if isinstance(e, (VReshape, VBroadcast)):
        lit = _lit_of(e.x, defs)
        if lit is not None:
            return VLit(lit.value, e.shape)
    if isinstance(e, VTranspose):
        lit = _lit_of(e.x, defs)
        if lit is not None:
            return VLit(lit.value, e.shape)
        if isinstance(e.x, VTranspose):
            perm = tuple(e.x.perm[p] for p in e.perm)
            if perm == tuple(range(len(perm))):
                return e.x.x
            return VTranspose(e.x.x, perm, e.shape)
    if isinstance(e, VReshape) and isinstance(e.x, VReshape):
        return VReshape(e.x.x, e.shape)
    if isinstance(e, VBroadcast) and isinstance(e.x, VBroadcast):
        return VBroadcast(e.x.x, e.shape)
    if isinstance(e, VReshape) and e.x.shape == e.shape:
        return e.x
    if isinstance(e, VBroadcast) and e.x.shape == e.shape:
        return e.x
    if isinstance(e, VBin):
        la = _lit_of(e.a, defs)
        lb = _lit_of(e.b, defs)
        if e.op == "mul":
            if lb is not None and lb.value == 1.0:
                return _shaped(e.a, e.shape)
            if la is not None and la.value == 1.0:
                return _shaped(e.b, e.shape)
        if e.op == "add":
            if lb is not None and lb.value == 0.0:
                return _shaped(e.a, e.shape)
            if la is not None and la.value == 0.0:
                return _shaped(e.b, e.shape)
        if e.op == "sub" and lb is not None and lb.value == 0.0:
            return _shaped(e.a, e.shape)
        if e.op == "div" and lb is not None and lb.value == 1.0:
            return _shaped(e.a, e.shape)
        if la is not None and lb is not None and e.op in ("add", "sub", "mul"):
            va, vb = la.value, lb.value
            if float(va).is_integer() and float(vb).is_integer() and \
                    abs(va) < 2**40 and abs(vb) < 2**40:
                r = {"add": va + vb, "sub": va - vb, "mul": va * vb}[e.op]
                return VLit(float(r), e.shape)
    return None


def _shaped(e: VExpr, shape: tuple) -> VExpr:
    if e.shape == shape:
        return e
    if isinstance(e, VLit):
        return VLit(e.value, shape)
    if len(e.shape) == len(shape):
        return VBroadcast(e, shape)
    return VBroadcast(VReshape(e, (1,) * (len(shape) - len(e.shape)) + e.shape), shape)


RULE_IDENTITIES = RewriteRule(
    "identities", "exact",
    lambda items, defs: _rewrite_exprs(items, _simplify_identities, defs),
)


# ---------------------------------------------------------------------------
# Rule 3: exp(x) -> exp2(log2e * x)


def _simplify_exp2(e: VExpr, defs: dict) -> Optional[VExpr]:
    if isinstance(e, VUn) and e.op == "exp":
        return VUn("exp2", VScale("log2e", e.x, e.x.shape), e.shape)
    return None


RULE_EXP2 = RewriteRule(
    "exp-to-exp2", "exact",
    lambda items, defs: _rewrite_exprs(items, _simplify_exp2, defs),
)


# ---------------------------------------------------------------------------
# Rule 1: hoist a loop-invariant multiplicative factor out of a yield


def _loop_rule(items: list, defs: dict, per_loop: Callable) -> tuple[list, int]:
    fires = 0
    out = []
    scope = dict(defs)
    for item in items:
        if isinstance(item, VBinding) and isinstance(item.expr, VFor):
            f = item.expr
            inner, n = _loop_rule(list(f.body), dict(scope), per_loop)
            fires += n
            item = VBinding(item.names, replace(f, body=tuple(inner)))
            res = per_loop(item, scope)
            if res is not None:
                new_items, n2 = res
                fires += n2
                out.extend(new_items)
                continue
        if isinstance(item, VBinding) and not isinstance(item.expr, VFor):
            scope[item.names[0]] = item.expr
        out.append(item)
    return out, fires


def _bound_names(body) -> set:
    names: set = set()
    for it in body:
        if isinstance(it, VBinding):
            names.update(it.names)
    return names


def _probe_loop(orig: VBinding, new_items: list, scope: dict) -> bool:
    """Exact-arithmetic differential check of a rewritten loop fragment on
    synthetic positive values. Conservative: any failure vetoes the rewrite."""
    f = orig.expr
    if any(isinstance(x, VStore) for x in f.body):
        return False
    for it in f.body:
        if isinstance(it, VBinding) and not isinstance(it.expr, VFor):
            for n in it.expr.walk():
                if isinstance(n, VLoad):
                    return False
        elif isinstance(it, VBinding):
            return False
    free: set = set()
    bound = _bound_names(f.body) | {p for p, _ in f.params}
    for it in f.body:
        if isinstance(it, VBinding):
            for n in it.expr.walk():
                if isinstance(n, VRef) and n.name not in bound:
                    free.add(n.name)
    for _, init in f.params:
        free.add(init)
    for it in new_items:
        if isinstance(it, VBinding) and not isinstance(it.expr, VFor):
            for n in it.expr.walk():
                if isinstance(n, VRef) and n.name not in bound:
                    free.add(n.name)

    rng = random.Random(0)
    vals: dict = {}
    import numpy as np

    for name in sorted(free):
        shape = None
        if name in scope:
            shape = scope[name].shape
        if shape is None:
            for it in list(f.body) + new_items:
                if isinstance(it, VBinding):
                    for n in it.expr.walk():
                        if isinstance(n, VRef) and n.name == name:
                            shape = n.shape
        arr = np.empty(shape or (), dtype=object)
        flat = arr.reshape(-1) if shape else None
        if shape:
            for i in range(arr.size):
                flat[i] = rng.randint(1, 7)
        else:
            arr[()] = rng.randint(1, 7)
        vals[name] = arr

    from .eval import _run_body

    ops = ops_for("rational")
    try:
        base = dict(vals)
        _run_body([orig], {}, base, {}, ops)
        new = dict(vals)
        _run_body(new_items, {}, new, {}, ops)
        for n in orig.names:
            eq = np.frompyfunc(ex.exact_eq, 2, 1)
            if not bool(np.all(eq(np.asarray(base[n], dtype=object),
                                  np.asarray(new[n], dtype=object)))):
                return False
    except Exception:
        return False
    return True


_hoist_counter = [0]


def _try_hoist_mul(item: VBinding, scope: dict):
    f = item.expr
    if len(f.params) != 1 or len(f.yields) != 1:
        return None
    yname = f.yields[0]
    ybind = None
    for it in f.body:
        if isinstance(it, VBinding) and yname in it.names:
            ybind = it
    if ybind is None or isinstance(ybind.expr, VFor):
        return None
    e = ybind.expr
    if not (isinstance(e, VBin) and e.op == "mul"):
        return None
    bound = _bound_names(f.body) | {p for p, _ in f.params} | {f.var}

    def invariant(x: VExpr) -> bool:
        if _is_lit(x):
            return True
        core, _ = _strip_adapters(x)
        return isinstance(core, VRef) and core.name not in bound

    if invariant(e.a):
        c, rest = e.a, e.b
    elif invariant(e.b):
        c, rest = e.b, e.a
    else:
        return None
    _hoist_counter[0] += 1
    tag = _hoist_counter[0]
    raw = f"{item.names[0]}_hoist{tag}"
    new_body = []
    for it in f.body:
        if it is ybind:
            new_body.append(VBinding(it.names, _shaped(rest, e.shape)))
        else:
            new_body.append(it)
    new_for = VBinding((raw,), replace(f, body=tuple(new_body)))
    final = VBinding((item.names[0],),
                     VBin("mul", c, VRef(raw, f.shapes[0]), f.shapes[0]))
    new_items = [new_for, final]
    if not _probe_loop(item, new_items, scope):
        _hoist_counter[0] -= 1
        return None
    return new_items, 1


RULE_HOIST_MUL = RewriteRule(
    "loop-invariant-mul-hoist", "fp-reassociating",
    lambda items, defs: _loop_rule(items, defs, _try_hoist_mul),
)


# ---------------------------------------------------------------------------
# Rule 2: telescoping divide/multiply across iterations

_telescope_counter = [0]


def _try_telescope(item: VBinding, scope: dict):
    f = item.expr
    names = item.names
    ybinds: dict[str, VBinding] = {}
    exprs: dict[str, VExpr] = {}
    for it in f.body:
        if isinstance(it, VBinding):
            for n in it.names:
                ybinds[n] = it
            if not isinstance(it.expr, VFor):
                exprs[it.names[0]] = it.expr
    for xi, (xparam, xinit) in enumerate(f.params):
        yname = f.yields[xi]
        yb = ybinds.get(yname)
        if yb is None or isinstance(yb.expr, VFor):
            continue
        e = yb.expr
        if not (isinstance(e, VBin) and e.op == "div"):
            continue
        den_core, den_rebuild = _strip_adapters(e.b, exprs)
        if not isinstance(den_core, VRef):
            continue
        # denominator must be this iteration's new value of another param
        yi = None
        for pi, (pname, _) in enumerate(f.params):
            if pi != xi and f.yields[pi] == den_core.name:
                yi = pi
        if yi is None:
            continue
        yparam, yinit = f.params[yi]
        # find the multiply by the param's previous value inside the numerator
        found = _find_param_mul(e.a, xparam, yparam, ybinds, exprs)
        if found is None:
            continue
        mul_binding = found
        # safety: the substitution u = x*y is transparent only when the x
        # param feeds the loop solely through that multiply, and the divided
        # value is observed solely through the yield
        x_uses = 0
        y_bind_uses = 0
        for it in f.body:
            if not isinstance(it, VBinding) or isinstance(it.expr, VFor):
                if isinstance(it, VStore) and it.value == yname:
                    y_bind_uses += 1
                continue
            for n in it.expr.walk():
                if isinstance(n, VRef) and n.name == xparam:
                    x_uses += 1
                if isinstance(n, VRef) and n.name == yname and it is not yb:
                    y_bind_uses += 1
        if x_uses != 1 or y_bind_uses != 0:
            continue
        # rewrite: drop the division, drop the multiply, divide after the loop
        new_body = []
        for it in f.body:
            if it is mul_binding:
                expr = it.expr
                keep = expr.a if _core_ref(expr.b, yparam, exprs) else expr.b
                new_body.append(VBinding(it.names, _shaped(keep, expr.shape)))
            elif it is yb:
                new_body.append(VBinding(it.names, _shaped(e.a, e.shape)))
            else:
                new_body.append(it)
        # loop entry: fold the initial denominator into the accumulator
        _telescope_counter[0] += 1
        tag = _telescope_counter[0]
        pre: list = []
        xinit_expr = scope.get(xinit)
        if xinit_expr is not None and _is_lit(xinit_expr, 0.0):
            new_xinit = xinit
        else:
            new_xinit = f"{xparam}_scaled{tag}"
            shape = f.shapes[xi]
            pre.append(VBinding(
                (new_xinit,),
                VBin("mul", VRef(xinit, shape),
                     den_rebuild(VRef(yinit, _param_shape(f, yi))), shape),
            ))
        raw = f"{names[xi]}_raw{tag}"
        new_params = tuple(
            (p, new_xinit if i == xi else init)
            for i, (p, init) in enumerate(f.params)
        )
        inner_names = tuple(raw if i == xi else n for i, n in enumerate(names))
        new_for = VBinding(inner_names, replace(f, params=new_params,
                                                body=tuple(new_body)))
        shape = f.shapes[xi]
        final = VBinding(
            (names[xi],),
            VBin("div", VRef(raw, shape),
                 den_rebuild(VRef(names[yi], _param_shape(f, yi))), shape),
        )
        return pre + [new_for, final], 1
    return None


def _param_shape(f: VFor, pi: int) -> tuple:
    return f.shapes[pi]


def _core_ref(e: VExpr, name: str, exprs: dict) -> bool:
    core, _ = _strip_adapters(e, exprs)
    return isinstance(core, VRef) and core.name == name


def _find_param_mul(e: VExpr, xparam: str, yparam: str, ybinds: dict, exprs: dict):
    """Locate the binding computing mul(x_param, adapters(y_param)) feeding e."""
    seen: set = set()

    def check(be: VExpr):
        if isinstance(be, VBin) and be.op == "mul":
            a_is_x = _core_ref(be.a, xparam, exprs)
            b_is_x = _core_ref(be.b, xparam, exprs)
            a_is_y = _core_ref(be.a, yparam, exprs)
            b_is_y = _core_ref(be.b, yparam, exprs)
            if (a_is_x and b_is_y) or (b_is_x and a_is_y):
                return True
        return False

    def walk(expr: VExpr):
        for n in expr.walk():
            if isinstance(n, VRef) and n.name in ybinds and n.name not in seen:
                seen.add(n.name)
                b = ybinds[n.name]
                if isinstance(b.expr, VFor):
                    continue
                if check(b.expr):
                    return b
                r = walk(b.expr)
                if r is not None:
                    return r
        return None

    return walk(e)


RULE_TELESCOPE = RewriteRule(
    "telescoping-rescale", "fp-reassociating",
    lambda items, defs: _loop_rule(items, defs, _try_telescope),
)


def default_rules() -> list[RewriteRule]:
    return [RULE_IDENTITIES, RULE_EXP2, RULE_HOIST_MUL, RULE_TELESCOPE]
