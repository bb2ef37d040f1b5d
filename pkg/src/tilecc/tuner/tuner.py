"""Parameter search over schedule seeds.

Small evolutionary loop: the initial population holds every seed at its
default assignment plus random fills; each generation mutates one tunable
per child and keeps the elite. A measurement is one replay plus one probe
interpretation; the budget counts measurements exactly. Scoring is the
analytic cost of the full-size module plus the interpreter step count at
probe extents as a lexicographic tie-breaker.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import BudgetTooSmall, CompilerError
from ..ma.cost import check_capacity, cost_model
from ..ma.device import VirtualDevice
from ..ma.interp import interpret_ma
from ..ma.lower import lower_to_ma
from ..scalar.ir import ScalarModule
from ..schedule.replay import apply_schedule
from ..schedule.steps import Schedule
from ..vr.lower import lower_to_vr
from ..vr.rewrite import rewrite


@dataclass(frozen=True)
class ParamSpace:
    entries: tuple[tuple[str, tuple], ...]  # (name, allowed values)
    defaults: tuple[tuple[str, object], ...]

    def names(self):
        return [n for n, _ in self.entries]


def extract_params(seed: Schedule) -> ParamSpace:
    entries = tuple((t.name, tuple(t.allowed)) for t in seed.tunables)
    defaults = tuple((t.name, t.default) for t in seed.tunables)
    for name, allowed in entries:
        if not allowed:
            raise CompilerError(f"tunable {name!r} has an empty allowed set")
    return ParamSpace(entries, defaults)


@dataclass
class Candidate:
    seed_index: int
    assignment: dict
    cost: float
    proxy: int
    measurement: int
    generation: int

    def key(self):
        return (self.cost, self.proxy, self.measurement)


@dataclass
class TunerConfig:
    budget: int = 256
    population: int = 16
    mutation_rate: float = 1.0  # genes mutated per child (expected)
    seed: int = 0
    top_k: int = 5

    def __post_init__(self):
        if self.budget < self.population:
            self.population = max(1, self.budget)
        if self.population < 1:
            raise ValueError("population must be >= 1")


@dataclass
class TuneResult:
    candidates: list  # all measured, ranked
    log_lines: list
    measurements: int

    def best(self) -> Candidate:
        return self.candidates[0]

    def report_json(self, top_k: int) -> str:
        data = {
            "measurements": self.measurements,
            "top": [
                {
                    "rank": i,
                    "seed": c.seed_index,
                    "assignment": {k: c.assignment[k] for k in sorted(c.assignment)},
                    "cost": _num(c.cost),
                    "proxy": c.proxy,
                }
                for i, c in enumerate(self.candidates[:top_k])
            ],
        }
        return json.dumps(data, indent=2, sort_keys=False) + "\n"


def _num(x: float):
    return x if math.isfinite(x) else "inf"


_probe_input_cache: dict = {}


def probe_inputs(module: ScalarModule) -> dict:
    """Fixed-seed Gaussian inputs, cached per input-shape signature."""
    sig = tuple((b.name, b.shape) for b in module.buffers if b.is_input)
    if sig not in _probe_input_cache:
        rng = np.random.default_rng(12345)
        _probe_input_cache[sig] = {
            name: rng.standard_normal(shape) for name, shape in sig
        }
    return _probe_input_cache[sig]


def score(base_full: ScalarModule, base_probe: ScalarModule, schedule: Schedule,
          assignment: dict, device: VirtualDevice) -> tuple[float, int]:
    """(modeled cost of the full-size module, probe step count).

    Raises CompilerError when the assignment cannot be replayed.
    """
    scalar_full = apply_schedule(base_full, schedule, assignment)
    vr_full, _ = rewrite(lower_to_vr(scalar_full))
    ma_full = lower_to_ma(vr_full, device)
    cost = cost_model(ma_full, device).modeled_cost
    if check_capacity(ma_full, device):
        cost = float("inf")

    scalar_p = apply_schedule(base_probe, schedule, assignment)
    vr_p, _ = rewrite(lower_to_vr(scalar_p))
    ma_p = lower_to_ma(vr_p, device)
    _, rep = interpret_ma(ma_p, probe_inputs(base_probe), device)
    return cost, rep.steps


def search(seeds: list[Schedule], base_full: ScalarModule,
           base_probe: ScalarModule, device: VirtualDevice,
           cfg: Optional[TunerConfig] = None) -> TuneResult:
    cfg = cfg or TunerConfig()
    if cfg.budget < len(seeds):
        raise BudgetTooSmall(
            f"budget {cfg.budget} cannot even score the {len(seeds)} seed defaults"
        )
    rng = random.Random(cfg.seed)
    spaces = [extract_params(s) for s in seeds]

    def random_assignment(si: int) -> dict:
        return {name: rng.choice(list(allowed))
                for name, allowed in spaces[si].entries}

    def mutate(si: int, assignment: dict) -> dict:
        if not spaces[si].entries:
            return dict(assignment)
        out = dict(assignment)
        name, allowed = spaces[si].entries[rng.randrange(len(spaces[si].entries))]
        out[name] = rng.choice(list(allowed))
        return out

    population: list[tuple[int, dict]] = []
    for si, sp in enumerate(spaces):
        population.append((si, dict(sp.defaults)))
    while len(population) < cfg.population:
        si = rng.randrange(len(seeds))
        population.append((si, random_assignment(si)))

    measured: list[Candidate] = []
    log_lines: list[str] = []
    generation = 0
    while len(measured) < cfg.budget:
        for si, assignment in population:
            if len(measured) >= cfg.budget:
                break
            try:
                cost, proxy = score(base_full, base_probe, seeds[si],
                                    assignment, device)
            except CompilerError:
                cost, proxy = float("inf"), 0
            cand = Candidate(si, assignment, cost, proxy, len(measured), generation)
            measured.append(cand)
            log_lines.append(json.dumps({
                "gen": generation,
                "seed": si,
                "assignment": {k: assignment[k] for k in sorted(assignment)},
                "cost": _num(cost),
                "proxy": proxy,
            }))
        if len(measured) >= cfg.budget:
            break
        ranked = sorted(measured, key=lambda c: c.key())
        elite = ranked[: max(1, cfg.population // 4)]
        population = []
        while len(population) < cfg.population:
            parent = elite[rng.randrange(len(elite))]
            population.append((parent.seed_index,
                               mutate(parent.seed_index, parent.assignment)))
        generation += 1

    ranked = sorted(measured, key=lambda c: c.key())
    return TuneResult(ranked, log_lines, len(measured))
