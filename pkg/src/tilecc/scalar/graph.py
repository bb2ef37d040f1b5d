"""Block graph: statement-level dependence graph plus loop-kind inference.

Nodes are compute statements; a directed edge (a, b) exists when b reads a
buffer that a writes and a precedes b in program order. Loop-carried
self-dependences (scans, rolled accumulators) are recorded as attributes of
the loop, never as graph cycles, so the graph stays a DAG and pre-order
traversal remains well-defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from ..errors import NoSuchNode
from ..exprs import Affine
from .ir import (
    ComputeStmt,
    LoopDef,
    LoopKind,
    ScalarModule,
    StmtKind,
)


@dataclass(frozen=True)
class BlockGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int, str], ...]  # (producer, consumer, buffer)
    loop_boxes: tuple[tuple[int, tuple[str, ...]], ...]  # sid -> loop chain

    def producers(self, sid: int) -> list[int]:
        self._check(sid)
        return sorted({a for a, b, _ in self.edges if b == sid})

    def consumers(self, sid: int) -> list[int]:
        self._check(sid)
        return sorted({b for a, b, _ in self.edges if a == sid})

    def predecessors(self, sid: int) -> list[int]:
        self._check(sid)
        seen: set = set()
        work = [sid]
        while work:
            cur = work.pop()
            for p in self.producers(cur):
                if p not in seen:
                    seen.add(p)
                    work.append(p)
        return sorted(seen)

    def successors(self, sid: int) -> list[int]:
        self._check(sid)
        seen: set = set()
        work = [sid]
        while work:
            cur = work.pop()
            for c in self.consumers(cur):
                if c not in seen:
                    seen.add(c)
                    work.append(c)
        return sorted(seen)

    def paths(self, src: int, dst: int, limit: int = 1000) -> list[tuple[int, ...]]:
        """All producer->consumer paths from src to dst, bounded by limit."""
        self._check(src)
        self._check(dst)
        out: list[tuple[int, ...]] = []

        def walk(cur: int, trail: tuple[int, ...]):
            if len(out) >= limit:
                return
            if cur == dst:
                out.append(trail)
                return
            for nxt in self.consumers(cur):
                walk(nxt, trail + (nxt,))

        walk(src, (src,))
        return out

    def _check(self, sid: int) -> None:
        if sid not in self.nodes:
            raise NoSuchNode(f"no statement {sid} in block graph")

    def to_json(self) -> str:
        data = {
            "nodes": list(self.nodes),
            "edges": [
                {"src": a, "dst": b, "buffer": buf} for a, b, buf in self.edges
            ],
            "loops": [
                {"stmt": sid, "chain": list(chain)} for sid, chain in self.loop_boxes
            ],
        }
        return json.dumps(data, indent=2, sort_keys=False) + "\n"


def build_block_graph(module: ScalarModule) -> BlockGraph:
    stmts = list(module.stmts)
    edges: list[tuple[int, int, str]] = []
    writes: dict[str, list[int]] = {}
    order = {s.sid: i for i, s in enumerate(stmts)}
    for s in stmts:
        writes.setdefault(s.target, []).append(s.sid)
    for s in stmts:
        read_bufs = {a.tensor for a, _ in s.realized_rhs_accesses()}
        for buf in sorted(read_bufs):
            for w in writes.get(buf, []):
                if order[w] < order[s.sid]:
                    edges.append((w, s.sid, buf))
    edges.sort(key=lambda e: (e[0], e[1], e[2]))
    return BlockGraph(
        nodes=tuple(s.sid for s in stmts),
        edges=tuple(edges),
        loop_boxes=tuple((s.sid, s.chain) for s in stmts),
    )


def graph_query(graph: BlockGraph, kind: str, *args, limit: int = 1000):
    if kind == "producers":
        return graph.producers(*args)
    if kind == "predecessors":
        return graph.predecessors(*args)
    if kind == "path":
        return graph.paths(*args, limit=limit)
    raise ValueError(f"unknown query {kind!r}")


# ---------------------------------------------------------------------------
# Loop-kind classification


def carried_description(module: ScalarModule, loop_var: str):
    """Classify the iteration-carried dependences of one loop.

    Returns (kind, detail). A statement under the loop carries a dependence
    when it can touch the same buffer element at two different values of the
    loop variable: either the write index does not advance with the loop
    (same-element read-modify-write) or an access offsets the loop variable
    (scan shape).
    """
    stmts = [s for s in module.stmts if loop_var in s.chain]
    kinds: set[str] = set()
    for s in stmts:
        widx = s.realized_index()
        w_moves = any(loop_var in a.coefs for a in widx)
        reads = s.realized_rhs_accesses()
        if not w_moves:
            # same element written every iteration
            reads_self = any(acc.tensor == s.target for acc, _ in reads)
            if s.reduce_op is not None and reads_self:
                kinds.add("reduce")
            elif reads_self:
                kinds.add("carried-update")
            else:
                kinds.add("overwrite")
        for acc, aff in reads:
            if acc.tensor != s.target:
                continue
            for pos, a in enumerate(aff):
                coef = a.coefs.get(loop_var, 0)
                if coef == 0:
                    continue
                wa = widx[pos] if pos < len(widx) else None
                if wa is None:
                    continue
                diff = a - wa
                if diff.is_const() and diff.const != 0:
                    kinds.add("scan")
    # cross-statement scans: one stmt reads at v-c what another writes at v
    by_buf: dict[str, list[ComputeStmt]] = {}
    for s in stmts:
        by_buf.setdefault(s.target, []).append(s)
    for s in stmts:
        for acc, aff in s.realized_rhs_accesses():
            for w in by_buf.get(acc.tensor, []):
                if w.sid == s.sid:
                    continue
                widx = w.realized_index()
                if len(widx) != len(aff):
                    continue
                for pos in range(len(aff)):
                    diff = aff[pos] - widx[pos]
                    if diff.is_const() and diff.const != 0 and (
                        loop_var in aff[pos].coefs or loop_var in widx[pos].coefs
                    ):
                        kinds.add("scan")
    if "scan" in kinds:
        return LoopKind.SCAN, kinds
    if "carried-update" in kinds or "overwrite" in kinds:
        return LoopKind.UNKNOWN, kinds
    if "reduce" in kinds:
        return LoopKind.REDUCE, kinds
    return LoopKind.MAP, kinds


def classify_loops(module: ScalarModule) -> ScalarModule:
    """Label every loop Map / Reduce / Scan (Unknown when ambiguous)."""
    new_loops = []
    for l in module.loops:
        kind, _ = carried_description(module, l.var)
        new_loops.append(replace(l, kind=kind))
    return replace_loops(module, new_loops)


def replace_loops(module: ScalarModule, loops) -> ScalarModule:
    from dataclasses import replace as dc_replace

    return dc_replace(module, loops=tuple(loops))
