"""End-to-end orchestration shared by the CLI, the tuner, and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .autosched.scheduler import SchedulerOptions, SeedState, run_autoscheduler
from .errors import CompilerError
from .frontend.ast import BoundProgram, TensorProgram, bind_dims
from .frontend.elaborate import elaborate
from .frontend.parser import ParseResult, parse_program
from .ma.cost import check_capacity, cost_model
from .ma.device import DEFAULT_DEVICE, VirtualDevice
from .ma.interp import CostReport, interpret_ma
from .ma.lower import lower_to_ma
from .ma.ir import MAModule
from .scalar.graph import classify_loops
from .scalar.ir import ScalarModule
from .schedule.replay import apply_schedule
from .schedule.steps import Schedule
from .vr.ir import VRModule
from .vr.lower import lower_to_vr
from .vr.rewrite import RewriteReport, rewrite


@dataclass
class LoweredSeed:
    schedule: Schedule
    scalar: ScalarModule
    vr: VRModule
    ma: MAModule
    rewrite_report: Optional[RewriteReport]
    static_cost: CostReport


def frontend(text: str, binding: dict) -> tuple[BoundProgram, ScalarModule]:
    result = parse_program(text)
    if not result.ok:
        msgs = "; ".join(str(d) for d in result.diagnostics)
        raise CompilerError(f"parse failed: {msgs}")
    bound = bind_dims(result.program, binding)
    return bound, classify_loops(elaborate(bound))


def lower_seed(base: ScalarModule, schedule: Schedule, device: VirtualDevice,
               assignment: Optional[dict] = None,
               do_rewrite: bool = True) -> LoweredSeed:
    scalar = apply_schedule(base, schedule, assignment)
    vr = lower_to_vr(scalar)
    report = None
    if do_rewrite:
        vr, report = rewrite(vr)
    ma = lower_to_ma(vr, device)
    return LoweredSeed(schedule, scalar, vr, ma, report, cost_model(ma, device))


def probe_binding(binding: dict, cap: int = 64) -> dict:
    return {k: min(v, cap) for k, v in binding.items()}


def run_pipeline(ma: MAModule, inputs: dict, device: VirtualDevice,
                 precision=None) -> tuple[dict, CostReport]:
    return interpret_ma(ma, inputs, device, precision)
