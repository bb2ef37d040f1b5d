"""Repair rules for reduction fusion.

A repair rule describes how a downstream accumulator must be rescaled when
the running value of an upstream reduction changes mid-stream. A rule covers
bridges of shape ``f(x, r) = phi(x) * psi(r)`` (multiplicatively separable in
the running value r); the repair factor is ``psi(r_new) / psi(r_old)`` and
must satisfy ``f(x, r_new) == f(x, r_old) * repair(r_old, r_new)`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from ..exprs import Access, Bin, Expr, Special, Un, Var
from .. import exact as ex


@dataclass(frozen=True)
class RepairRule:
    name: str
    outer_op: str  # combine op of the running upstream reduction (r)
    inner_op: str  # combine op of the downstream accumulator
    # Matches the r-dependent factor of the bridge. Receives the factor with
    # the access to r replaced by Var("$r") and the rest by Var("$x");
    # returns True when the factor has the registered shape.
    factor_shape: Callable[[Expr], bool]
    # Builds the repair expression from expressions for r_old and r_new.
    repair: Callable[[Expr, Expr], Expr]
    # Exact-arithmetic model of the factor and repair, for the law check.
    factor_value: Callable[[object, object], object]
    repair_value: Callable[[object, object], object]


def _is_exp_x_minus_r(e: Expr) -> bool:
    return (
        isinstance(e, Un)
        and e.op == "exp"
        and isinstance(e.x, Bin)
        and e.x.op == "sub"
        and e.x.b == Var("$r")
        and _mentions_only_x(e.x.a)
    )


def _is_exp2_x_minus_r(e: Expr) -> bool:
    return (
        isinstance(e, Un)
        and e.op == "exp2"
        and isinstance(e.x, Bin)
        and e.x.op == "sub"
        and e.x.b == Var("$r")
        and _mentions_only_x(e.x.a)
    )


def _mentions_only_x(e: Expr) -> bool:
    return all(not (isinstance(n, Var) and n.name == "$r") for n in e.walk())


def _exp_repair_expr(r_old: Expr, r_new: Expr) -> Expr:
    return Un("exp", Bin("sub", r_old, r_new))


def _exp2_repair_expr(r_old: Expr, r_new: Expr) -> Expr:
    return Un("exp2", Bin("sub", r_old, r_new))


RULE_MAX_EXP_SUM = RepairRule(
    name="max-exp-sum",
    outer_op="max",
    inner_op="sum",
    factor_shape=_is_exp_x_minus_r,
    repair=_exp_repair_expr,
    factor_value=lambda x, r: ex.exact_mul(ex.exact_exp(ex.exact_sub(x, r)), 1),
    repair_value=lambda r_old, r_new: ex.exact_exp(ex.exact_sub(r_old, r_new)),
)

RULE_MAX_EXP2_SUM = RepairRule(
    name="max-exp2-sum",
    outer_op="max",
    inner_op="sum",
    factor_shape=_is_exp2_x_minus_r,
    repair=_exp2_repair_expr,
    factor_value=lambda x, r: ex.exact_exp2(ex.exact_sub(x, r)),
    repair_value=lambda r_old, r_new: ex.exact_exp2(ex.exact_sub(r_old, r_new)),
)

BUILTIN_RULES: tuple[RepairRule, ...] = (RULE_MAX_EXP_SUM, RULE_MAX_EXP2_SUM)


class RepairRegistry:
    def __init__(self, rules=BUILTIN_RULES):
        self.rules = list(rules)

    def add(self, rule: RepairRule) -> None:
        ok, msg = check_repair_law(rule)
        if not ok:
            raise ValueError(f"repair rule {rule.name!r} fails the repair law: {msg}")
        self.rules.append(rule)

    def find(self, outer_op: str, inner_op: str, factor: Expr) -> Optional[RepairRule]:
        for rule in self.rules:
            if rule.outer_op == outer_op and rule.inner_op == inner_op:
                if rule.factor_shape(factor):
                    return rule
        return None


DEFAULT_REGISTRY = RepairRegistry()


def check_repair_law(rule: RepairRule, samples: int = 10_000, seed: int = 0):
    """f(x, r_new) == f(x, r_old) * repair(r_old, r_new), exactly."""
    import random

    rng = random.Random(seed)
    for i in range(samples):
        x = Fraction(rng.randint(-50, 50), rng.randint(1, 16))
        r_old = Fraction(rng.randint(-50, 50), rng.randint(1, 16))
        r_new = Fraction(rng.randint(-50, 50), rng.randint(1, 16))
        lhs = rule.factor_value(x, r_new)
        rhs = ex.exact_mul(rule.factor_value(x, r_old), rule.repair_value(r_old, r_new))
        if not ex.exact_eq(lhs, rhs):
            return False, f"sample {i}: x={x} r_old={r_old} r_new={r_new}"
    return True, ""
