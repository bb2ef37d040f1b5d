"""Parser: grammar coverage, diagnostics, round-trip stability."""

import random

from conftest import ATTENTION_SRC, corpus, parse_ok

from tilecc.frontend.parser import parse_program, print_program


def test_attention_has_five_defs():
    program = parse_ok(ATTENTION_SRC)
    assert len(program.defs) == 5
    assert program.output == "O"
    assert [d.target for d in program.defs] == ["S", "m", "P", "l", "O"]
    assert program.defs[0].reduce == ("sum", ("k",))
    assert program.defs[1].reduce == ("max", ("j",))
    # O's reduction is nested under the division, so not a root reduce
    assert program.defs[4].reduce is None


def test_copy_def():
    program = parse_ok("tensor B[fp32](N)\nA(i) = B(i)\noutput A\n")
    assert len(program.defs) == 1
    assert program.defs[0].reduce is None


def test_round_trip_fixed_point():
    program = parse_ok(ATTENTION_SRC)
    text = print_program(program)
    again = parse_program(text)
    assert again.ok
    assert again.program == program
    assert print_program(again.program) == text


def test_round_trip_generated_corpus():
    # parse(print(parse(p))) == parse(p) over a generated corpus
    for src, _ in corpus(60, seed=3):
        p1 = parse_program(src).program
        assert p1 is not None, src
        p2 = parse_program(print_program(p1)).program
        assert p2 == p1, src


def test_syntax_error_has_position_and_expected():
    result = parse_program("tensor Q[fp32](N\nA(i) = Q(i)\noutput A\n")
    assert not result.ok
    d = result.diagnostics[0]
    assert d.line == 1
    assert d.col > 0
    assert d.expected


def test_parse_never_raises_on_junk():
    result = parse_program("??? ::: \n tensor \n x = = =\n")
    assert result.program is None
    assert result.diagnostics


def test_undefined_tensor_diagnostic():
    result = parse_program("A(i) = B(i)\noutput A\n")
    assert not result.ok
    assert any("B" in str(d) for d in result.diagnostics)


def test_duplicate_definition_diagnostic():
    src = "tensor X[fp32](N)\nA(i) = X(i)\nA(i) = X(i) + 1\noutput A\n"
    result = parse_program(src)
    assert any("twice" in str(d) for d in result.diagnostics)


def test_non_affine_index_rejected():
    result = parse_program("tensor B[fp32](N)\nA(i) = B(i * i)\noutput A\n")
    assert not result.ok
    assert any("non-affine" in str(d) for d in result.diagnostics)


def test_elementwise_max_vs_reduction_marker():
    src = ("tensor A[fp32](N)\ntensor B[fp32](N)\n"
           "C(i) = max(A(i), B(i))\n"
           "r(x: N) = max(j, A(j) + B(x))\n"
           "output r\n")
    program = parse_ok(src)
    from tilecc.exprs import Bin, Reduce

    assert isinstance(program.defs[0].body, Bin)
    assert program.defs[1].reduce == ("max", ("j",))


def test_self_read_rejected():
    result = parse_program("tensor B[fp32](N)\nA(i) = A(i) + B(i)\noutput A\n")
    assert not result.ok
