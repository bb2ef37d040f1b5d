"""Parser and printer for the `.te` tensor-expression language.

The grammar is line-oriented:

    # comment
    tensor Q[fp32](N, D)
    S(i, j) = sum(k, Q(i, k) * K(j, k))
    P(i, j) = exp(S(i, j) - m(i))
    B(i, j: M) = c(i)            # explicit extent for broadcast axes
    output O

``sum/max/min/prod(k, body)`` are reduction markers; ``max``/``min`` with two
in-scope arguments are the elementwise binary ops. Parsing is total: errors
come back as positioned diagnostics, never as exceptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..errors import Diagnostic
from ..exprs import (
    Access,
    Bin,
    Const,
    Expr,
    Reduce,
    Un,
    Var,
    format_expr,
    to_affine,
)
from ..numerics import Precision
from .ast import ComputeDef, TensorDecl, TensorProgram

_PRECISION_TOKENS = {
    "fp32": Precision.FP32,
    "fp64": Precision.FP64,
    "rational": Precision.RATIONAL,
    "exact": Precision.RATIONAL,
}

_REDUCE_WORDS = ("sum", "max", "min", "prod")
_FUNC_WORDS = ("exp", "exp2", "log2")


@dataclass
class ParseResult:
    program: Optional[TensorProgram]
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.program is not None and not any(
            d.kind == "error" for d in self.diagnostics
        )


@dataclass
class _Tok:
    kind: str  # name | number | sym | end
    text: str
    col: int


def _tokenize_line(line: str, lineno: int, diags: list[Diagnostic]) -> Optional[list[_Tok]]:
    toks: list[_Tok] = []
    i = 0
    n = len(line)
    while i < n:
        c = line[i]
        if c == "#":
            break
        if c.isspace():
            i += 1
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (line[j].isalnum() or line[j] == "_"):
                j += 1
            toks.append(_Tok("name", line[i:j], i + 1))
            i = j
            continue
        if c.isdigit() or (c == "." and i + 1 < n and line[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (line[j].isdigit() or (line[j] == "." and not seen_dot)):
                if line[j] == ".":
                    seen_dot = True
                j += 1
            if j < n and line[j] in "eE":
                k = j + 1
                if k < n and line[k] in "+-":
                    k += 1
                if k < n and line[k].isdigit():
                    while k < n and line[k].isdigit():
                        k += 1
                    j = k
            toks.append(_Tok("number", line[i:j], i + 1))
            i = j
            continue
        if c in "()[]=,:+-*/":
            toks.append(_Tok("sym", c, i + 1))
            i += 1
            continue
        diags.append(
            Diagnostic(f"unexpected character {c!r}", lineno, i + 1, expected=("token",))
        )
        return None
    toks.append(_Tok("end", "", n + 1))
    return toks


class _LineParser:
    def __init__(self, toks: list[_Tok], lineno: int, diags: list[Diagnostic]):
        self.toks = toks
        self.pos = 0
        self.lineno = lineno
        self.diags = diags

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def next(self) -> _Tok:
        t = self.toks[self.pos]
        if t.kind != "end":
            self.pos += 1
        return t

    def fail(self, msg: str, expected: tuple[str, ...] = ()) -> None:
        t = self.peek()
        self.diags.append(Diagnostic(msg, self.lineno, t.col, expected=expected))
        raise _Bail()

    def expect_sym(self, s: str) -> None:
        t = self.peek()
        if t.kind == "sym" and t.text == s:
            self.next()
            return
        self.fail(f"expected {s!r}, found {t.text or 'end of line'!r}", expected=(s,))

    def expect_name(self, what: str = "identifier") -> str:
        t = self.peek()
        if t.kind == "name":
            self.next()
            return t.text
        self.fail(f"expected {what}, found {t.text or 'end of line'!r}", expected=(what,))
        return ""  # unreachable

    def at_end(self) -> bool:
        return self.peek().kind == "end"


class _Bail(Exception):
    pass


class _ExprParser:
    """Expression grammar with reduction-marker disambiguation."""

    def __init__(self, lp: _LineParser, tensors: set, scope: set):
        self.lp = lp
        self.tensors = tensors
        self.scope = scope

    def parse(self) -> Expr:
        return self._additive()

    def _additive(self) -> Expr:
        e = self._mult()
        while True:
            t = self.lp.peek()
            if t.kind == "sym" and t.text in "+-":
                self.lp.next()
                rhs = self._mult()
                e = Bin("add" if t.text == "+" else "sub", e, rhs)
            else:
                return e

    def _mult(self) -> Expr:
        e = self._unary()
        while True:
            t = self.lp.peek()
            if t.kind == "sym" and t.text in "*/":
                self.lp.next()
                rhs = self._unary()
                e = Bin("mul" if t.text == "*" else "div", e, rhs)
            else:
                return e

    def _unary(self) -> Expr:
        t = self.lp.peek()
        if t.kind == "sym" and t.text == "-":
            self.lp.next()
            return Un("neg", self._unary())
        return self._atom()

    def _atom(self) -> Expr:
        t = self.lp.peek()
        if t.kind == "number":
            self.lp.next()
            return Const(float(t.text))
        if t.kind == "sym" and t.text == "(":
            self.lp.next()
            e = self.parse()
            self.lp.expect_sym(")")
            return e
        if t.kind == "name":
            name = self.lp.next().text
            if name == "inf":
                return Const(float("inf"))
            nxt = self.lp.peek()
            if not (nxt.kind == "sym" and nxt.text == "("):
                if name in self.scope:
                    return Var(name)
                if name in self.tensors:
                    self.lp.fail(f"tensor {name!r} used without subscripts")
                self.lp.fail(f"unknown identifier {name!r}")
            self.lp.next()  # "("
            if name in _FUNC_WORDS:
                arg = self.parse()
                self.lp.expect_sym(")")
                return Un(name, arg)
            if name in _REDUCE_WORDS:
                return self._reduce_or_binop(name)
            # tensor access
            args = [self.parse()]
            while self.lp.peek().kind == "sym" and self.lp.peek().text == ",":
                self.lp.next()
                args.append(self.parse())
            self.lp.expect_sym(")")
            for a in args:
                if to_affine(a) is None:
                    self.lp.fail(
                        f"non-affine index expression in access to {name!r}: "
                        f"{format_expr(a)}"
                    )
            if name not in self.tensors:
                self.lp.fail(f"unknown tensor {name!r}")
            return Access(name, tuple(args))
        self.lp.fail(f"expected expression, found {t.text or 'end of line'!r}",
                     expected=("expression",))
        return Const(0.0)  # unreachable

    def _reduce_or_binop(self, word: str) -> Expr:
        # Collect leading fresh identifiers as reduction axes. A name is
        # "fresh" when it is neither a tensor nor an in-scope index var.
        axes: list[str] = []
        while True:
            t = self.lp.peek()
            if (
                t.kind == "name"
                and t.text not in self.tensors
                and t.text not in self.scope
                and t.text not in _REDUCE_WORDS
                and t.text not in _FUNC_WORDS
                and t.text != "inf"
                and self.toks_after_name_is_comma()
            ):
                axes.append(self.lp.next().text)
                self.lp.expect_sym(",")
                continue
            break
        if axes:
            inner = _ExprParser(self.lp, self.tensors, self.scope | set(axes))
            body = inner.parse()
            self.lp.expect_sym(")")
            return Reduce(word, tuple(axes), body)
        if word in ("max", "min"):
            a = self.parse()
            self.lp.expect_sym(",")
            b = self.parse()
            self.lp.expect_sym(")")
            return Bin(word, a, b)
        self.lp.fail(
            f"{word}(...) needs a fresh reduction axis as its first argument"
        )
        return Const(0.0)  # unreachable

    def toks_after_name_is_comma(self) -> bool:
        nxt = self.lp.toks[self.lp.pos + 1]
        return nxt.kind == "sym" and nxt.text == ","


def parse_program(text: str) -> ParseResult:
    """Parse `.te` source. Never raises; returns diagnostics instead."""
    diags: list[Diagnostic] = []
    decls: list[TensorDecl] = []
    defs: list[ComputeDef] = []
    def_lines: dict[str, int] = {}
    output: Optional[str] = None
    tensors: set = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokenize_line(raw, lineno, diags)
        if toks is None or toks[0].kind == "end":
            continue
        lp = _LineParser(toks, lineno, diags)
        try:
            head = lp.peek()
            if head.kind == "name" and head.text == "tensor":
                lp.next()
                name = lp.expect_name("tensor name")
                lp.expect_sym("[")
                prec_tok = lp.expect_name("precision")
                if prec_tok not in _PRECISION_TOKENS:
                    lp.fail(
                        f"unknown precision {prec_tok!r}",
                        expected=tuple(sorted(set(_PRECISION_TOKENS) - {"exact"})),
                    )
                lp.expect_sym("]")
                lp.expect_sym("(")
                dims: list = []
                if not (lp.peek().kind == "sym" and lp.peek().text == ")"):
                    while True:
                        t = lp.peek()
                        if t.kind == "number":
                            lp.next()
                            dims.append(int(float(t.text)))
                        elif t.kind == "name":
                            dims.append(lp.next().text)
                        else:
                            lp.fail("expected dimension symbol or literal",
                                    expected=("dimension",))
                        t = lp.peek()
                        if t.kind == "sym" and t.text == ",":
                            lp.next()
                            continue
                        break
                lp.expect_sym(")")
                if not lp.at_end():
                    lp.fail("trailing tokens after declaration")
                if name in tensors:
                    diags.append(Diagnostic(f"tensor {name!r} declared twice",
                                            lineno, head.col))
                    continue
                decls.append(TensorDecl(name, _PRECISION_TOKENS[prec_tok], tuple(dims)))
                tensors.add(name)
                continue
            if head.kind == "name" and head.text == "output":
                lp.next()
                name = lp.expect_name("output tensor name")
                if not lp.at_end():
                    lp.fail("trailing tokens after output")
                if output is not None:
                    diags.append(Diagnostic("output specified twice", lineno, head.col))
                output = name
                continue
            # compute def: NAME ( axes ) = expr
            target = lp.expect_name("tensor or keyword")
            lp.expect_sym("(")
            axes: list[tuple[str, Optional[object]]] = []
            if not (lp.peek().kind == "sym" and lp.peek().text == ")"):
                while True:
                    var = lp.expect_name("axis variable")
                    ext = None
                    t = lp.peek()
                    if t.kind == "sym" and t.text == ":":
                        lp.next()
                        t = lp.peek()
                        if t.kind == "number":
                            lp.next()
                            ext = int(float(t.text))
                        else:
                            ext = lp.expect_name("dimension")
                    axes.append((var, ext))
                    t = lp.peek()
                    if t.kind == "sym" and t.text == ",":
                        lp.next()
                        continue
                    break
            lp.expect_sym(")")
            lp.expect_sym("=")
            scope = {v for v, _ in axes}
            body = _ExprParser(lp, tensors, scope).parse()
            if not lp.at_end():
                lp.fail("trailing tokens after definition")
            reduce_spec = None
            if isinstance(body, Reduce):
                reduce_spec = (body.op, body.axes)
                body = body.body
            if target in def_lines:
                diags.append(Diagnostic(f"tensor {target!r} defined twice",
                                        lineno, head.col))
                continue
            if target in tensors and target not in def_lines and any(
                d.name == target for d in decls
            ):
                diags.append(Diagnostic(
                    f"tensor {target!r} is declared as an input and cannot be defined",
                    lineno, head.col))
                continue
            defs.append(ComputeDef(target, tuple(axes), body, reduce_spec))
            def_lines[target] = lineno
            tensors.add(target)
        except _Bail:
            continue

    if output is None:
        if defs:
            output = defs[-1].target
        else:
            diags.append(Diagnostic("program has no defs and no output", 0, 0))
            return ParseResult(None, diags)

    program = TensorProgram(tuple(decls), tuple(defs), output)
    from .ast import validate_program

    for msg in validate_program(program):
        diags.append(Diagnostic(msg, def_lines.get(program.output, 0), 0))
    if any(d.kind == "error" for d in diags):
        return ParseResult(None, diags)
    return ParseResult(program, diags)


def print_program(program: TensorProgram) -> str:
    """Canonical `.te` text; parse(print_program(p)) reproduces p."""
    lines: list[str] = []
    prec_name = {Precision.FP32: "fp32", Precision.FP64: "fp64",
                 Precision.RATIONAL: "rational"}
    for d in program.decls:
        dims = ", ".join(str(x) for x in d.dims)
        lines.append(f"tensor {d.name}[{prec_name[d.precision]}]({dims})")
    for cd in program.defs:
        axes = ", ".join(v if ext is None else f"{v}: {ext}" for v, ext in cd.axes)
        body: Expr = cd.body
        if cd.reduce:
            body = Reduce(cd.reduce[0], cd.reduce[1], body)
        lines.append(f"{cd.target}({axes}) = {format_expr(body)}")
    lines.append(f"output {program.output}")
    return "\n".join(lines) + "\n"
