"""Command-line driver: compile, check, tune, dump, selftest.

Batch-only; every artifact lands under --out with a fixed name so runs can
be compared byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import exact as ex
from .autosched.scheduler import SchedulerOptions, run_autoscheduler
from .errors import CompilerError
from .frontend.oracle import oracle_eval
from .frontend.parser import parse_program
from .ma.device import DEFAULT_DEVICE, load_device
from .ma.emit import FLAVORS, emit_tile_text
from .ma.interp import interpret_ma
from .pipeline import frontend, lower_seed, probe_binding
from .scalar.graph import build_block_graph
from .scalar.printer import print_module
from .schedule.steps import serialize_schedule
from .tuner.tuner import TunerConfig, search
from .vr.printer import print_vr

EMIT_STAGES = ("blockgraph", "schedule", "scalar", "vr", "ma", "tile", "cost")

DEVICE_ENV = "NAUTILUSCC_DEVICE"


def build_argparser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tilecc",
        description="Desk-scale tensor compiler: auto-scheduling, tile IRs, "
                    "virtual-device cost model.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("program", help="input .te file")
        p.add_argument("--bind", action="append", default=[],
                       help="dimension binding, e.g. --bind N=256,M=256")
        p.add_argument("--device", default=None,
                       help=f"device profile path (or ${DEVICE_ENV})")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--precision", default=None,
                       choices=["fp32", "fp64", "rational"])
        p.add_argument("--seed", type=int, default=0, help="rng seed")
        p.add_argument("--explain", action="store_true",
                       help="include the auto-scheduler pass log")
        p.add_argument("--max-seeds", type=int, default=16)

    p = sub.add_parser("compile", help="run the full pipeline, write artifacts")
    common(p)
    p.add_argument("--emit", default="tile,cost",
                   help=f"comma list of {','.join(EMIT_STAGES)}")
    p.add_argument("--tune-budget", type=int, default=0,
                   help="tuner measurements (0: use defaults)")
    p.add_argument("--flavor", default="generic", choices=FLAVORS)

    p = sub.add_parser("check", help="differential gate against the oracle")
    common(p)
    p.add_argument("--trials", type=int, default=3,
                   help="random fp32-vs-fp64 trials per seed")

    p = sub.add_parser("tune", help="search tunable assignments")
    common(p)
    p.add_argument("--tune-budget", type=int, default=256)
    p.add_argument("--top-k", type=int, default=5)

    p = sub.add_parser("dump", help="print one pipeline stage")
    common(p)
    p.add_argument("stage", choices=EMIT_STAGES)

    p = sub.add_parser("selftest", help="run the built-in sanity battery")
    p.add_argument("--out", default="out")
    return ap


def _parse_bind(args) -> dict:
    binding: dict = {}
    for chunk in args.bind:
        for pair in chunk.split(","):
            if not pair.strip():
                continue
            if "=" not in pair:
                raise CompilerError(f"bad --bind entry {pair!r}; expected SYM=N")
            k, _, v = pair.partition("=")
            binding[k.strip()] = int(v)
    return binding


def _load_device(args):
    path = args.device or os.environ.get(DEVICE_ENV)
    return load_device(path) if path else DEFAULT_DEVICE


def _compile_context(args):
    text = Path(args.program).read_text()
    binding = _parse_bind(args)
    device = _load_device(args)
    bound, base = frontend(text, binding)
    opts = SchedulerOptions(max_seeds=args.max_seeds)
    seeds = run_autoscheduler(base, device, opts)
    if not seeds:
        raise CompilerError("auto-scheduler produced no viable seeds")
    return text, binding, device, bound, base, seeds


def cmd_compile(args) -> int:
    text, binding, device, bound, base, seeds = _compile_context(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stages = [s.strip() for s in args.emit.split(",") if s.strip()]
    for s in stages:
        if s not in EMIT_STAGES:
            print(f"error: unknown emit stage {s!r}", file=sys.stderr)
            return 1

    assignment = None
    best_idx = 0
    if args.tune_budget > 0:
        _, probe_base = frontend(text, probe_binding(binding))
        res = search([s.schedule for s in seeds], base, probe_base, device,
                     TunerConfig(budget=args.tune_budget, seed=args.seed))
        best = res.best()
        assignment = best.assignment
        best_idx = best.seed_index
        (out / "tuning.jsonl").write_text("\n".join(res.log_lines) + "\n")

    chosen = seeds[best_idx]
    lowered = lower_seed(base, chosen.schedule, device, assignment)

    if "blockgraph" in stages:
        (out / "blockgraph.json").write_text(build_block_graph(base).to_json())
    if "schedule" in stages:
        (out / "schedule.jsonl").write_text(serialize_schedule(chosen.schedule))
    if "scalar" in stages:
        (out / "scalar.txt").write_text(print_module(lowered.scalar))
    if "vr" in stages:
        (out / "vr.txt").write_text(print_vr(lowered.vr))
    if "ma" in stages:
        (out / "ma.txt").write_text(emit_tile_text(lowered.ma, "generic"))
    if "tile" in stages:
        (out / "tile.txt").write_text(emit_tile_text(lowered.ma, args.flavor))
    if "cost" in stages:
        (out / "cost.json").write_text(lowered.static_cost.to_json())
    if args.explain:
        (out / "explain.txt").write_text("\n".join(chosen.log) + "\n")
    print(f"compiled {args.program}: {len(seeds)} seeds, "
          f"emitted {', '.join(stages)} to {out}/")
    return 0


def _rms_row(diff: np.ndarray) -> tuple[float, float, float]:
    flat = np.abs(diff).ravel()
    rms = float(np.sqrt(np.mean(flat.astype(np.float64) ** 2)))
    return rms, float(np.percentile(flat, 90)), float(np.percentile(flat, 99))


def cmd_check(args) -> int:
    text, binding, device, bound, base, seeds = _compile_context(args)
    pbind = probe_binding(binding, cap=16)
    pbound, pbase = frontend(text, pbind)
    rng = np.random.default_rng(args.seed)
    rows = []
    ok = True
    eq = np.frompyfunc(ex.exact_eq, 2, 1)
    for idx, st in enumerate(seeds):
        lowered_p = lower_seed(pbase, st.schedule, device)
        # exact-rational equality at probe extents
        ints = {
            name: np.vectorize(int, otypes=[object])(
                np.random.default_rng(1000 + idx).integers(-3, 4, pbound.shapes[name])
            )
            for name in pbound.input_names()
        }
        exact_ref = oracle_eval(pbound, ints, "rational")
        got, _ = interpret_ma(lowered_p.ma, ints, device, "rational")
        exact_ok = bool(np.all(eq(exact_ref[pbound.output], got[pbound.output])))
        # fp32 vs fp64 error profile at probe extents
        diffs = []
        for t in range(args.trials):
            ins = {name: rng.standard_normal(pbound.shapes[name])
                   for name in pbound.input_names()}
            ref = oracle_eval(pbound, ins, "fp64")[pbound.output]
            o32, _ = interpret_ma(lowered_p.ma, ins, device, "fp32")
            diffs.append(np.asarray(o32[pbound.output], dtype=np.float64) - ref)
        rms, p90, p99 = _rms_row(np.stack(diffs))
        passed = exact_ok and rms <= 1e-5
        ok = ok and passed
        rows.append((idx, exact_ok, rms, p90, p99, passed))
    print(f"{'seed':>4}  {'exact':>5}  {'RMS':>10}  {'90th %':>10}  {'99th %':>10}  pass")
    for idx, e, rms, p90, p99, passed in rows:
        print(f"{idx:>4}  {str(e):>5}  {rms:10.3e}  {p90:10.3e}  {p99:10.3e}  "
              f"{'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_tune(args) -> int:
    text, binding, device, bound, base, seeds = _compile_context(args)
    _, probe_base = frontend(text, probe_binding(binding))
    res = search([s.schedule for s in seeds], base, probe_base, device,
                 TunerConfig(budget=args.tune_budget, seed=args.seed,
                             top_k=args.top_k))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tuning.jsonl").write_text("\n".join(res.log_lines) + "\n")
    (out / "tuning_report.json").write_text(res.report_json(args.top_k))
    best = res.best()
    print(f"{res.measurements} measurements; best seed {best.seed_index} "
          f"cost {best.cost:.1f} -> {out}/tuning_report.json")
    return 0


def cmd_dump(args) -> int:
    text, binding, device, bound, base, seeds = _compile_context(args)
    chosen = seeds[0]
    if args.stage == "blockgraph":
        sys.stdout.write(build_block_graph(base).to_json())
        return 0
    if args.stage == "schedule":
        sys.stdout.write(serialize_schedule(chosen.schedule))
        if args.explain:
            sys.stdout.write("\n".join(chosen.log) + "\n")
        return 0
    lowered = lower_seed(base, chosen.schedule, device)
    if args.stage == "scalar":
        sys.stdout.write(print_module(lowered.scalar))
    elif args.stage == "vr":
        sys.stdout.write(print_vr(lowered.vr))
    elif args.stage in ("ma", "tile"):
        sys.stdout.write(emit_tile_text(lowered.ma, "generic"))
    elif args.stage == "cost":
        sys.stdout.write(lowered.static_cost.to_json())
    if args.explain:
        sys.stdout.write("\n".join(chosen.log) + "\n")
    return 0


_SELFTEST_PROGRAMS = {
    "copy": """
tensor A[fp32](N)
B(i) = A(i)
output B
""",
    "matmul-bias": """
tensor A[fp32](N, K)
tensor B[fp32](K, M)
tensor C[fp32](M)
T(i, j) = sum(k, A(i, k) * B(k, j))
D(i, j) = T(i, j) + C(j)
output D
""",
    "softmax": """
tensor X[fp32](N, M)
m(i) = max(j, X(i, j))
E(i, j) = exp(X(i, j) - m(i))
s(i) = sum(j, E(i, j))
Y(i, j) = E(i, j) / s(i)
output Y
""",
}


def cmd_selftest(args) -> int:
    device = DEFAULT_DEVICE
    failures = 0
    for name, text in _SELFTEST_PROGRAMS.items():
        try:
            binding = {sym: 8 for sym in ("N", "M", "K")}
            bound, base = frontend(text, binding)
            seeds = run_autoscheduler(base, device,
                                      SchedulerOptions(backends=("generic",)))
            rng = np.random.default_rng(0)
            ins = {n: rng.standard_normal(bound.shapes[n])
                   for n in bound.input_names()}
            ref = oracle_eval(bound, ins, "fp64")[bound.output]
            worst = 0.0
            for st in seeds:
                lowered = lower_seed(base, st.schedule, device)
                got, _ = interpret_ma(lowered.ma, ins, device, "fp64")
                err = float(np.max(np.abs(got[bound.output] - ref)))
                worst = max(worst, err)
            status = "ok" if worst < 1e-9 else f"FAIL (err {worst:.2e})"
            if worst >= 1e-9:
                failures += 1
        except Exception as err:  # surfaced, not masked
            status = f"FAIL ({err})"
            failures += 1
        print(f"selftest {name:<12} {status}")
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_argparser().parse_args(argv)
    try:
        handler = {
            "compile": cmd_compile,
            "check": cmd_check,
            "tune": cmd_tune,
            "dump": cmd_dump,
            "selftest": cmd_selftest,
        }[args.command]
        return handler(args)
    except CompilerError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # invariant breach
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
