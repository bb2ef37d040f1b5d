"""Dimension binding, shape inference, elaboration, and the oracle."""

import io

import numpy as np
import pytest

from conftest import ATTENTION_SRC, build, gaussian_inputs, int_inputs, parse_ok, exact_equal

from tilecc.errors import ShapeMismatch, UnboundSymbol
from tilecc.frontend.ast import bind_dims
from tilecc.frontend.elaborate import elaborate
from tilecc.frontend.oracle import oracle_eval, read_tensors, write_tensors
from tilecc.numerics import DivisionByZero
from tilecc.scalar.graph import classify_loops
from tilecc.scalar.interp import interpret_scalar
from tilecc.scalar.ir import StmtKind, validate


def test_shape_inference_attention():
    bound, _ = build(ATTENTION_SRC, N=256, M=256, D=64)
    assert bound.shapes["S"] == (256, 256)
    assert bound.shapes["O"] == (256, 64)
    assert bound.shapes["m"] == (256,)


def test_all_dims_one():
    bound, _ = build(ATTENTION_SRC, N=1, M=1, D=1)
    assert all(all(x == 1 for x in s) for s in bound.shapes.values())


def test_missing_symbol():
    program = parse_ok(ATTENTION_SRC)
    with pytest.raises(UnboundSymbol) as err:
        bind_dims(program, dict(N=8, M=8))
    assert err.value.symbol == "D"


def test_shape_mismatch():
    src = ("tensor A[fp32](N, M)\ntensor B[fp32](M, N)\n"
           "C(i, j) = A(i, j) + B(i, j)\noutput C\n")
    with pytest.raises(ShapeMismatch):
        bind_dims(parse_ok(src), dict(N=4, M=8))


def test_uninferable_axis_needs_declaration():
    src = "tensor A[fp32](N)\nB(i, j) = A(i)\noutput B\n"
    with pytest.raises(ShapeMismatch):
        bind_dims(parse_ok(src), dict(N=4))
    ok = "tensor A[fp32](N)\nB(i, j: N) = A(i)\noutput B\n"
    bound = bind_dims(parse_ok(ok), dict(N=4))
    assert bound.shapes["B"] == (4, 4)


# -- elaboration -------------------------------------------------------------


def test_elaborate_matmul_rowmax_structure():
    src = ("tensor Q[fp32](N, K)\ntensor Kt[fp32](M, K)\n"
           "mm(i, j) = sum(k, Q(i, k) * Kt(j, k))\n"
           "xmax(i) = max(j, mm(i, j))\noutput xmax\n")
    bound, mod = build(src, N=4, M=4, K=2)
    kinds = [s.kind for s in mod.stmts]
    assert kinds == [StmtKind.INIT, StmtKind.REDUCTION,
                     StmtKind.INIT, StmtKind.REDUCTION]
    # init writes the reduction identity
    from tilecc.exprs import Const

    assert mod.stmts[2].rhs == Const(float("-inf"))
    # reduce axes innermost
    assert mod.stmts[1].chain[-1].startswith("k")
    assert validate(mod) == []


def test_elaborate_copy_single_nest():
    _, mod = build("tensor B[fp32](N)\nA(i) = B(i)\noutput A\n", N=5)
    assert len(mod.stmts) == 1
    assert mod.stmts[0].kind is StmtKind.ELEMENTWISE
    assert len(mod.stmts[0].chain) == 1


def test_elaborate_interpret_matches_oracle_bitwise():
    bound, mod = build(ATTENTION_SRC, N=6, M=6, D=3)
    ins = gaussian_inputs(bound, seed=1)
    ref = oracle_eval(bound, ins, "fp64")
    got = interpret_scalar(mod, ins, "fp64")
    for name in ("S", "m", "P", "l", "O"):
        assert np.array_equal(ref[name], got[name]), name


def test_elaborate_exact_equals_oracle(attention8):
    bound, mod = attention8
    ins = int_inputs(bound, seed=2)
    ref = oracle_eval(bound, ins, "rational")
    got = interpret_scalar(mod, ins, "rational")
    assert exact_equal(ref["O"], got["O"])


# -- oracle ------------------------------------------------------------------


def test_oracle_identity_bitwise():
    bound, _ = build("tensor B[fp64](N)\nA(i) = B(i)\noutput A\n", N=16)
    ins = gaussian_inputs(bound)
    out = oracle_eval(bound, ins, "fp64")
    assert np.array_equal(out["A"], ins["B"])


def test_oracle_sum_of_ones():
    bound, _ = build("tensor B[fp32](N)\ns() = sum(i, B(i))\noutput s\n", N=7)
    out = oracle_eval(bound, {"B": np.ones(7)}, "fp64")
    assert out["s"][()] == 7.0


def test_oracle_division_by_zero_reports_def():
    src = "tensor A[fp32](N)\ntensor B[fp32](N)\nC(i) = A(i) / B(i)\noutput C\n"
    bound, _ = build(src, N=3)
    with pytest.raises(DivisionByZero) as err:
        oracle_eval(bound, {"A": np.ones(3), "B": np.zeros(3)}, "fp64")
    assert "C" in str(err.value)


def test_oracle_matches_numpy_attention():
    bound, _ = build(ATTENTION_SRC, N=16, M=16, D=8)
    ins = gaussian_inputs(bound, seed=4)
    out = oracle_eval(bound, ins, "fp64")["O"]
    S = ins["Q"] @ ins["K"].T
    P = np.exp(S - S.max(1, keepdims=True))
    ref = (P @ ins["V"]) / P.sum(1, keepdims=True)
    assert np.allclose(out, ref, atol=1e-12)


def test_oracle_rational_bit_reproducible(attention8):
    bound, _ = attention8
    ins = int_inputs(bound, seed=5)
    a = oracle_eval(bound, ins, "rational")["O"]
    b = oracle_eval(bound, ins, "rational")["O"]
    assert exact_equal(a, b)


# -- binary container --------------------------------------------------------


def test_container_round_trip():
    tensors = {
        "a": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b": np.linspace(0, 1, 5, dtype=np.float64),
    }
    buf = io.BytesIO()
    write_tensors(buf, tensors)
    buf.seek(0)
    back = read_tensors(buf)
    assert set(back) == {"a", "b"}
    assert back["a"].dtype == np.dtype("float32")
    assert np.array_equal(back["a"], tensors["a"])
    assert np.array_equal(back["b"], tensors["b"])


def test_container_magic_check():
    import pytest
    from tilecc.errors import CompilerError

    with pytest.raises(CompilerError):
        read_tensors(io.BytesIO(b"WRONG"))
