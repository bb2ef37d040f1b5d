"""Tensor-expression program AST, dimension binding, and shape inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..errors import ShapeMismatch, UnboundSymbol
from ..exprs import Access, Expr, Reduce, free_vars
from ..numerics import Precision

Dim = Union[str, int]


@dataclass(frozen=True)
class TensorDecl:
    name: str
    precision: Precision
    dims: tuple[Dim, ...]


@dataclass(frozen=True)
class ComputeDef:
    """One `T(axes) = expr` line.

    ``reduce`` holds the root-level reduction (combine op and its axes) when
    the body's outermost node was a reduction marker; nested reductions stay
    in the body as Reduce nodes and are split out during elaboration.
    """

    target: str
    axes: tuple[tuple[str, Optional[Dim]], ...]  # (var, optional declared extent)
    body: Expr
    reduce: Optional[tuple[str, tuple[str, ...]]] = None

    def axis_names(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.axes)


@dataclass(frozen=True)
class TensorProgram:
    decls: tuple[TensorDecl, ...]
    defs: tuple[ComputeDef, ...]
    output: str

    def decl_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.decls)

    def def_map(self) -> dict[str, ComputeDef]:
        return {d.target: d for d in self.defs}

    def dim_symbols(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for d in self.decls:
            for dim in d.dims:
                if isinstance(dim, str):
                    seen.setdefault(dim)
        for cd in self.defs:
            for _, ext in cd.axes:
                if isinstance(ext, str):
                    seen.setdefault(ext)
        return tuple(seen)

    def precision(self) -> Precision:
        order = [Precision.FP32, Precision.FP64, Precision.RATIONAL]
        best = Precision.FP32
        for d in self.decls:
            if order.index(d.precision) > order.index(best):
                best = d.precision
        return best


@dataclass(frozen=True)
class DimBinding:
    extents: tuple[tuple[str, int], ...]

    @staticmethod
    def of(**kw) -> "DimBinding":
        return DimBinding(tuple(sorted(kw.items())))

    @staticmethod
    def from_dict(d: dict) -> "DimBinding":
        return DimBinding(tuple(sorted((k, int(v)) for k, v in d.items())))

    def as_dict(self) -> dict[str, int]:
        return dict(self.extents)


@dataclass
class BoundProgram:
    """Program with all dimension symbols resolved to concrete extents."""

    program: TensorProgram
    binding: dict[str, int]
    shapes: dict[str, tuple[int, ...]]
    axis_extents: dict[str, dict[str, int]] = field(default_factory=dict)
    reduce_extents: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def output(self) -> str:
        return self.program.output

    def input_names(self) -> tuple[str, ...]:
        defined = {d.target for d in self.program.defs}
        return tuple(d.name for d in self.program.decls if d.name not in defined)


def _resolve_dim(dim: Dim, binding: dict[str, int]) -> int:
    if isinstance(dim, int):
        return dim
    if dim not in binding:
        raise UnboundSymbol(dim)
    return binding[dim]


def _collect_reduce_axes(e: Expr) -> dict[str, None]:
    out: dict[str, None] = {}
    for node in e.walk():
        if isinstance(node, Reduce):
            for a in node.axes:
                out.setdefault(a)
    return out


def bind_dims(program: TensorProgram, binding) -> BoundProgram:
    """Resolve every dimension symbol and run shape inference over the defs.

    Axis extents are inferred from tensor-access positions: an index variable
    used as the p-th index of tensor T gets T's p-th extent. Conflicting uses
    raise ShapeMismatch; axes with no plain use and no declared extent are
    rejected.
    """
    if isinstance(binding, DimBinding):
        binding = binding.as_dict()
    binding = {k: int(v) for k, v in binding.items()}
    for sym, v in binding.items():
        if v < 1:
            raise ShapeMismatch(f"extent for {sym!r} must be >= 1, got {v}")
    for sym in program.dim_symbols():
        if sym not in binding:
            raise UnboundSymbol(sym)

    shapes: dict[str, tuple[int, ...]] = {}
    for d in program.decls:
        shapes[d.name] = tuple(_resolve_dim(x, binding) for x in d.dims)

    axis_extents: dict[str, dict[str, int]] = {}
    reduce_extents: dict[str, dict[str, int]] = {}

    for cd in program.defs:
        inferred: dict[str, int] = {}
        declared: dict[str, int] = {}
        for var, ext in cd.axes:
            if ext is not None:
                declared[var] = _resolve_dim(ext, binding)
        red_axes = _collect_reduce_axes(cd.body)
        if cd.reduce:
            for a in cd.reduce[1]:
                red_axes.setdefault(a)

        def note(var: str, extent: int, where: str):
            prev = inferred.get(var)
            if prev is not None and prev != extent:
                raise ShapeMismatch(
                    f"def {cd.target!r}: axis {var!r} inferred as both "
                    f"{prev} and {extent} ({where})"
                )
            inferred[var] = extent

        for node in cd.body.walk():
            if not isinstance(node, Access):
                continue
            if node.tensor not in shapes:
                raise ShapeMismatch(
                    f"def {cd.target!r} references {node.tensor!r} before its shape is known"
                )
            shape = shapes[node.tensor]
            if len(node.index) != len(shape):
                raise ShapeMismatch(
                    f"def {cd.target!r}: {node.tensor!r} has rank {len(shape)}, "
                    f"indexed with {len(node.index)} subscripts"
                )
            for pos, idx in enumerate(node.index):
                from ..exprs import Var

                if isinstance(idx, Var):
                    note(idx.name, shape[pos], f"{node.tensor}[{pos}]")

        per_axis: dict[str, int] = {}
        for var, _ in cd.axes:
            if var in declared:
                ext = declared[var]
                if var in inferred and inferred[var] != ext:
                    raise ShapeMismatch(
                        f"def {cd.target!r}: axis {var!r} declared {ext} but used as {inferred[var]}"
                    )
            elif var in inferred:
                ext = inferred[var]
            else:
                raise ShapeMismatch(
                    f"def {cd.target!r}: extent of axis {var!r} cannot be inferred; "
                    f"declare it as `{var}: <dim>`"
                )
            per_axis[var] = ext
        axis_extents[cd.target] = per_axis

        per_red: dict[str, int] = {}
        for var in red_axes:
            if var not in inferred:
                raise ShapeMismatch(
                    f"def {cd.target!r}: reduction axis {var!r} never indexes a tensor; "
                    f"its extent cannot be inferred"
                )
            per_red[var] = inferred[var]
        reduce_extents[cd.target] = per_red

        shapes[cd.target] = tuple(per_axis[v] for v, _ in cd.axes)

    return BoundProgram(program, binding, shapes, axis_extents, reduce_extents)


def validate_program(program: TensorProgram) -> list[str]:
    """Structural checks: DAG def order, index-variable scoping, uniqueness."""
    problems: list[str] = []
    known = set()
    defined = set()
    for d in program.decls:
        if d.name in known:
            problems.append(f"tensor {d.name!r} declared twice")
        known.add(d.name)
    for cd in program.defs:
        if cd.target in defined:
            problems.append(f"tensor {cd.target!r} defined twice")
        axis_names = set(cd.axis_names())
        if len(axis_names) != len(cd.axes):
            problems.append(f"def {cd.target!r} repeats an axis variable")
        red_axes = set(_collect_reduce_axes(cd.body))
        if cd.reduce:
            red_axes |= set(cd.reduce[1])
        if red_axes & axis_names:
            problems.append(
                f"def {cd.target!r}: reduction axes {sorted(red_axes & axis_names)} "
                f"collide with target axes"
            )
        for node in cd.body.walk():
            if isinstance(node, Access):
                if node.tensor not in known:
                    problems.append(
                        f"def {cd.target!r} references undefined tensor {node.tensor!r}"
                    )
                if node.tensor == cd.target:
                    problems.append(f"def {cd.target!r} reads itself")
        fv = free_vars(cd.body)
        loose = fv - axis_names - (set(cd.reduce[1]) if cd.reduce else set())
        if loose:
            problems.append(
                f"def {cd.target!r} uses out-of-scope index vars {sorted(loose)}"
            )
        known.add(cd.target)
        defined.add(cd.target)
    if program.output not in known:
        problems.append(f"output tensor {program.output!r} is never declared or defined")
    elif program.output not in defined:
        problems.append(f"output tensor {program.output!r} is an input, not a def")
    return problems
