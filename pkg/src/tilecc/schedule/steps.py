"""Schedules as replayable traces of transform steps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

STEP_OPS = (
    "BiLevelTile",
    "FuseClassic",
    "RollingUpdate",
    "CacheStage",
    "Rematerialize",
    "SplitScanBuffer",
    "BindBlock",
    "SetBackend",
    "SetParam",
)

SERIAL_VERSION = 1


@dataclass(frozen=True)
class TunableDecl:
    name: str
    kind: str  # tile-size | pipeline-stages | warp-count | backend
    allowed: tuple = ()
    default: object = None


@dataclass(frozen=True)
class Step:
    op: str
    args: tuple[tuple[str, object], ...]

    @staticmethod
    def of(op: str, **kw) -> "Step":
        if op not in STEP_OPS:
            raise ValueError(f"unknown step op {op!r}")
        return Step(op, tuple(sorted(kw.items())))

    def arg(self, name: str, default=None):
        for k, v in self.args:
            if k == name:
                return v
        return default


@dataclass(frozen=True)
class Schedule:
    steps: tuple[Step, ...] = ()
    provenance: tuple[str, ...] = ()  # emitting pass, aligned with steps
    tunables: tuple[TunableDecl, ...] = ()

    def append(self, step: Step, provenance: str = "") -> "Schedule":
        return replace(
            self,
            steps=self.steps + (step,),
            provenance=self.provenance + (provenance,),
        )

    def declare(self, t: TunableDecl) -> "Schedule":
        if any(x.name == t.name for x in self.tunables):
            return self
        return replace(self, tunables=self.tunables + (t,))

    def tunable(self, name: str) -> Optional[TunableDecl]:
        for t in self.tunables:
            if t.name == name:
                return t
        return None

    def defaults(self) -> dict:
        return {t.name: t.default for t in self.tunables}

    def count(self, op: str) -> int:
        return sum(1 for s in self.steps if s.op == op)


def _json_value(v):
    if isinstance(v, tuple):
        return [_json_value(x) for x in v]
    return v


def serialize_schedule(s: Schedule) -> str:
    """JSON lines: one version header, then one step per line."""
    lines = [json.dumps({"version": SERIAL_VERSION, "kind": "schedule"})]
    for t in s.tunables:
        lines.append(
            json.dumps(
                {
                    "tunable": t.name,
                    "tkind": t.kind,
                    "allowed": _json_value(t.allowed),
                    "default": _json_value(t.default),
                }
            )
        )
    for step, prov in zip(s.steps, s.provenance):
        lines.append(
            json.dumps(
                {
                    "op": step.op,
                    "args": {k: _json_value(v) for k, v in step.args},
                    "provenance": prov,
                }
            )
        )
    return "\n".join(lines) + "\n"


def _unjson(v):
    if isinstance(v, list):
        return tuple(_unjson(x) for x in v)
    return v


def parse_schedule(text: str) -> Schedule:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return Schedule()
    head = json.loads(lines[0])
    if head.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported schedule version {head.get('version')}")
    steps: list[Step] = []
    prov: list[str] = []
    tunables: list[TunableDecl] = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        if "tunable" in obj:
            tunables.append(
                TunableDecl(
                    obj["tunable"],
                    obj["tkind"],
                    _unjson(obj.get("allowed", [])),
                    _unjson(obj.get("default")),
                )
            )
            continue
        steps.append(
            Step(obj["op"], tuple(sorted((k, _unjson(v)) for k, v in obj["args"].items())))
        )
        prov.append(obj.get("provenance", ""))
    return Schedule(tuple(steps), tuple(prov), tuple(tunables))


@dataclass(frozen=True)
class TunableRef:
    """Placeholder appearing in step args; resolved at replay time."""

    name: str


def resolve_arg(v, schedule: Schedule, assignment: dict):
    if isinstance(v, str) and v.startswith("$"):
        name = v[1:]
        if assignment and name in assignment:
            return assignment[name]
        t = schedule.tunable(name)
        if t is None:
            raise ValueError(f"step references undeclared tunable {name!r}")
        return t.default
    if isinstance(v, tuple):
        return tuple(resolve_arg(x, schedule, assignment) for x in v)
    return v
