"""Replay a schedule: the executable semantics of a transform trace."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from ..errors import CompilerError, StepFailed
from ..scalar.graph import classify_loops
from ..scalar.ir import ScalarModule, Scope
from . import transforms as tf
from .repair import DEFAULT_REGISTRY
from .steps import Schedule, Step, resolve_arg


def apply_schedule(module: ScalarModule, schedule: Schedule,
                   assignment: Optional[dict] = None,
                   registry=DEFAULT_REGISTRY) -> ScalarModule:
    """Apply every step in order; deterministic given (module, schedule,
    tunable assignment)."""
    assignment = assignment or {}
    mod = classify_loops(module)
    for index, step in enumerate(schedule.steps):
        try:
            mod = apply_step(mod, step, schedule, assignment, registry)
        except CompilerError as err:
            raise StepFailed(index, err) from err
        except (KeyError, ValueError, StopIteration) as err:
            raise StepFailed(index, CompilerError(repr(err))) from err
    return mod


def apply_step(mod: ScalarModule, step: Step, schedule: Schedule,
               assignment: dict, registry=DEFAULT_REGISTRY) -> ScalarModule:
    def arg(name, default=None):
        return resolve_arg(step.arg(name, default), schedule, assignment)

    if step.op == "BiLevelTile":
        raw = step.arg("factors") or ()
        factors = {k: int(resolve_arg(v, schedule, assignment)) for k, v in raw}
        return tf.bi_level_tile(mod, int(arg("stmt")), factors,
                                inner_cap=step.arg("inner_cap"))
    if step.op == "FuseClassic":
        return tf.fuse_classic(mod, int(arg("stmt")), int(arg("dest")),
                               int(arg("depth")))
    if step.op == "RollingUpdate":
        return tf.rolling_update(mod, int(arg("stmt")), str(arg("loop")),
                                 fold_division=bool(arg("fold_division", False)),
                                 registry=registry)
    if step.op == "CacheStage":
        return tf.cache_stage(mod, str(arg("buffer")), Scope(arg("scope")),
                              str(arg("loop")), str(arg("direction", "read")))
    if step.op == "Rematerialize":
        return tf.rematerialize(mod, str(arg("buffer")))
    if step.op == "SplitScanBuffer":
        return tf.split_scan_buffer(mod, str(arg("buffer")), str(arg("loop")))
    if step.op == "BindBlock":
        return tf.bind_block(mod, str(arg("loop")), str(arg("axis")))
    if step.op == "SetBackend":
        return replace(mod, backend=str(arg("backend")))
    if step.op == "SetParam":
        params = dict(mod.params)
        params[str(arg("name"))] = int(arg("value"))
        return replace(mod, params=tuple(sorted(params.items())))
    raise CompilerError(f"unknown step op {step.op!r}")
