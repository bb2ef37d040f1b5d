"""Python-like textual form of the scalar IR (golden-file format)."""

from __future__ import annotations

from ..exprs import format_expr, substitute
from .ir import ComputeStmt, LoopNode, ScalarModule, build_tree


def print_module(module: ScalarModule) -> str:
    lines: list[str] = []
    for b in module.buffers:
        tags = []
        if b.is_input:
            tags.append("input")
        if b.is_output:
            tags.append("output")
        tag = " ".join([""] + tags) if tags else ""
        shape = ", ".join(str(d) for d in b.shape)
        lines.append(f"buffer {b.name}[{b.precision.value}]({shape}) @{b.scope.value}{tag}")
    for ki in range(len(module.kernels)):
        lines.append(f"kernel k{ki}:")
        _emit(build_tree(module, ki), module, lines, 1)
    return "\n".join(lines) + "\n"


def _emit(body: list, module: ScalarModule, lines: list[str], depth: int) -> None:
    pad = "  " * depth
    for node in body:
        if isinstance(node, LoopNode):
            l = node.loop
            extra = f", \"{l.binding}\"" if l.binding else ""
            carried = (
                " carrying (" + ", ".join(l.carried) + ")" if l.carried else ""
            )
            lines.append(
                f"{pad}for {l.var} in range({l.extent}{extra}):"
                f"  # {l.kind.value}{carried}"
            )
            _emit(node.body, module, lines, depth + 1)
        else:
            lines.append(pad + format_stmt(node))


def format_stmt(s: ComputeStmt) -> str:
    smap = s.subst_map()
    idx = ", ".join(format_expr(substitute(i, smap)) for i in s.index)
    rhs = format_expr(substitute(s.rhs, smap))
    guard = ""
    if s.guards:
        conds = " and ".join(
            f"{format_expr(substitute(g.expr, smap))} < {g.bound}" for g in s.guards
        )
        guard = f"if {conds}: "
    lhs = f"{s.target}[{idx}]" if idx else s.target
    return f"{guard}{lhs} = {rhs}  # s{s.sid}"
