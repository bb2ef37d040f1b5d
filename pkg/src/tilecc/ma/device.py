"""Virtual device: memory capacities and cost weights standing in for a GPU.

The default profile is a configuration choice (not a measurement): weights
are picked so that moving bytes inward (Global > Shared > Register) and
fusing kernels are profitable in the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import CompilerError


@dataclass(frozen=True)
class VirtualDevice:
    name: str = "virtual-h100"
    shared_bytes: int = 228 * 1024
    register_bytes: int = 256 * 1024
    cost_global: float = 100.0
    cost_shared: float = 10.0
    cost_register: float = 1.0
    cost_flop: float = 0.25
    launch_cost: float = 10000.0
    inner_cap: int = 128
    max_tile_elems: int = 8192  # fusion locality budget (elements)
    warp_choices: tuple[int, ...] = (2, 4, 8)
    warp_default: int = 4
    stage_min: int = 1
    stage_max: int = 4
    stage_default: int = 2
    stage_discount: float = 0.15  # global-weight divisor slope per extra stage
    # per-backend multipliers: backend -> (byte factor, flop factor)
    backend_factors: tuple[tuple[str, tuple[float, float]], ...] = (
        ("generic", (1.0, 1.0)),
        ("triton-like", (1.0, 0.95)),
        ("tilelang-like", (0.95, 1.0)),
    )

    def factors(self, backend: str) -> tuple[float, float]:
        for name, f in self.backend_factors:
            if name == backend:
                return f
        return (1.0, 1.0)

    def backends(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.backend_factors)


DEFAULT_DEVICE = VirtualDevice()

_INT_KEYS = {"shared_bytes", "register_bytes", "inner_cap", "max_tile_elems",
             "warp_default", "stage_min", "stage_max", "stage_default"}
_FLOAT_KEYS = {"cost_global", "cost_shared", "cost_register", "cost_flop",
               "launch_cost", "stage_discount"}


def parse_device(text: str, name: str = "custom") -> VirtualDevice:
    """`key = value` lines; '#' comments. Unknown keys are rejected."""
    dev = replace(DEFAULT_DEVICE, name=name)
    backend_factors = dict(dev.backend_factors)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CompilerError(f"device profile line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in _INT_KEYS:
            dev = replace(dev, **{key: int(val)})
        elif key in _FLOAT_KEYS:
            dev = replace(dev, **{key: float(val)})
        elif key == "warp_choices":
            dev = replace(dev, warp_choices=tuple(int(x) for x in val.split(",")))
        elif key == "name":
            dev = replace(dev, name=val)
        elif key.startswith("backend.") and key.endswith(".byte_factor"):
            b = key.split(".")[1]
            cur = backend_factors.get(b, (1.0, 1.0))
            backend_factors[b] = (float(val), cur[1])
        elif key.startswith("backend.") and key.endswith(".flop_factor"):
            b = key.split(".")[1]
            cur = backend_factors.get(b, (1.0, 1.0))
            backend_factors[b] = (cur[0], float(val))
        else:
            raise CompilerError(f"device profile line {lineno}: unknown key {key!r}")
    dev = replace(dev, backend_factors=tuple(sorted(backend_factors.items())))
    if dev.shared_bytes <= 0 or dev.register_bytes <= 0:
        raise CompilerError("device capacities must be positive")
    if not (dev.cost_global >= dev.cost_shared >= dev.cost_register):
        raise CompilerError("cost weights must satisfy Global >= Shared >= Register")
    return dev


def load_device(path) -> VirtualDevice:
    p = Path(path)
    return parse_device(p.read_text(), name=p.stem)


def device_to_text(dev: VirtualDevice) -> str:
    lines = [f"name = {dev.name}"]
    for key in sorted(_INT_KEYS):
        lines.append(f"{key} = {getattr(dev, key)}")
    for key in sorted(_FLOAT_KEYS):
        lines.append(f"{key} = {getattr(dev, key)}")
    lines.append("warp_choices = " + ",".join(str(w) for w in dev.warp_choices))
    for b, (bf, ff) in dev.backend_factors:
        lines.append(f"backend.{b}.byte_factor = {bf}")
        lines.append(f"backend.{b}.flop_factor = {ff}")
    return "\n".join(lines) + "\n"
