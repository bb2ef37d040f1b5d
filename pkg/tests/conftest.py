"""Shared fixtures: the attention program, random program corpus, helpers."""

from __future__ import annotations

import random

import numpy as np
import pytest

from tilecc import exact as ex
from tilecc.frontend.ast import bind_dims
from tilecc.frontend.elaborate import elaborate
from tilecc.frontend.parser import parse_program
from tilecc.scalar.graph import classify_loops

ATTENTION_SRC = """\
tensor Q[fp32](N, D)
tensor K[fp32](M, D)
tensor V[fp32](M, D)
S(i, j) = sum(k, Q(i, k) * K(j, k))
m(i) = max(j, S(i, j))
P(i, j) = exp(S(i, j) - m(i))
l(i) = sum(j, P(i, j))
O(i, d) = sum(j, P(i, j) * V(j, d)) / l(i)
output O
"""

CAUSAL_SRC = """\
tensor Q[fp32](N, D)
tensor K[fp32](M, D)
tensor V[fp32](M, D)
tensor Mask[fp32](N, M)
S(i, j) = sum(k, Q(i, k) * K(j, k)) + Mask(i, j)
m(i) = max(j, S(i, j))
P(i, j) = exp(S(i, j) - m(i))
l(i) = sum(j, P(i, j))
O(i, d) = sum(j, P(i, j) * V(j, d)) / l(i)
output O
"""

GQA_SRC = """\
tensor Q[fp32](G, R, N, D)
tensor K[fp32](G, M, D)
tensor V[fp32](G, M, D)
S(g, r, i, j) = sum(k, Q(g, r, i, k) * K(g, j, k))
m(g, r, i) = max(j, S(g, r, i, j))
P(g, r, i, j) = exp(S(g, r, i, j) - m(g, r, i))
l(g, r, i) = sum(j, P(g, r, i, j))
O(g, r, i, d) = sum(j, P(g, r, i, j) * V(g, j, d)) / l(g, r, i)
output O
"""


def parse_ok(src):
    result = parse_program(src)
    assert result.ok, [str(d) for d in result.diagnostics]
    return result.program


def build(src, **binding):
    bound = bind_dims(parse_ok(src), binding)
    return bound, classify_loops(elaborate(bound))


def gaussian_inputs(bound, seed=0):
    rng = np.random.default_rng(seed)
    return {n: rng.standard_normal(bound.shapes[n]) for n in bound.input_names()}


def int_inputs(bound, seed=0, lo=-3, hi=3):
    rng = np.random.default_rng(seed)
    return {
        n: np.vectorize(int, otypes=[object])(
            rng.integers(lo, hi + 1, bound.shapes[n])
        )
        for n in bound.input_names()
    }


_exact_eq_ufunc = np.frompyfunc(ex.exact_eq, 2, 1)


def exact_equal(a, b) -> bool:
    return bool(np.all(_exact_eq_ufunc(np.asarray(a, dtype=object),
                                       np.asarray(b, dtype=object))))


def rel_close(got, ref, tol=1e-9) -> bool:
    got = np.asarray(got, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    return bool(np.all(np.abs(got - ref) <= tol * (np.abs(ref) + 1.0)))


@pytest.fixture
def attention8():
    return build(ATTENTION_SRC, N=8, M=8, D=4)


@pytest.fixture
def attention256():
    return build(ATTENTION_SRC, N=256, M=256, D=64)


# ---------------------------------------------------------------------------
# Random program corpus (element-wise chains, matmuls, reductions,
# softmax-like patterns, broadcast patterns with a spectator axis)


def gen_corpus_program(rng: random.Random) -> tuple[str, dict]:
    family = rng.choice(
        ["ew-chain", "matmul", "reduction", "softmax", "broadcast", "multi-use"]
    )
    dims = {"N": rng.choice([4, 6, 8]), "M": rng.choice([4, 6, 8]),
            "K": rng.choice([3, 4, 8]), "R": rng.choice([2, 3])}
    if family == "ew-chain":
        n = rng.randint(1, 3)
        lines = ["tensor A[fp32](N, M)", "tensor B[fp32](N, M)"]
        prev = "A"
        for i in range(n):
            op = rng.choice(["{p}(i, j) + B(i, j)",
                            "{p}(i, j) * B(i, j)",
                            "exp({p}(i, j) - B(i, j))",
                            "{p}(i, j) - 2 * B(i, j)",
                            "max({p}(i, j), B(i, j))"])
            lines.append(f"T{i}(i, j) = " + op.format(p=prev))
            prev = f"T{i}"
        lines.append(f"output {prev}")
    elif family == "matmul":
        lines = ["tensor A[fp32](N, K)", "tensor B[fp32](K, M)",
                 "tensor C[fp32](M)",
                 "T(i, j) = sum(k, A(i, k) * B(k, j))"]
        post = rng.choice([None, "U(i, j) = T(i, j) + C(j)",
                           "U(i, j) = exp(T(i, j)) * C(j)"])
        if post:
            lines.append(post)
            lines.append("output U")
        else:
            lines.append("output T")
    elif family == "reduction":
        op = rng.choice(["sum", "max", "min", "prod"])
        lines = ["tensor A[fp32](N, M)",
                 f"r(i) = {op}(j, A(i, j))"]
        if rng.random() < 0.5:
            lines.append("s(i) = r(i) * 2 + 1")
            lines.append("output s")
        else:
            lines.append("output r")
    elif family == "softmax":
        lines = ["tensor X[fp32](N, M)",
                 "m(i) = max(j, X(i, j))",
                 "E(i, j) = exp(X(i, j) - m(i))",
                 "s(i) = sum(j, E(i, j))"]
        if rng.random() < 0.5:
            lines.append("Y(i, j) = E(i, j) / s(i)")
            lines.append("output Y")
        else:
            lines.append("output s")
    elif family == "broadcast":
        lines = ["tensor A[fp32](N, K)", "tensor B[fp32](K, M)",
                 "T(r: R, i, j) = sum(k, A(i, k) * B(k, j))",
                 "U(r, i, j) = T(r, i, j) + T(r, i, j)",
                 "output U"]
    else:  # multi-use producer
        lines = ["tensor A[fp32](N, M)",
                 "E(i, j) = exp(A(i, j))",
                 "s(i) = sum(j, E(i, j))",
                 "t(i) = max(j, E(i, j))",
                 "U(i) = s(i) + t(i)",
                 "output U"]
    return "\n".join(lines) + "\n", dims


def corpus(count: int, seed: int = 7):
    rng = random.Random(seed)
    out = []
    while len(out) < count:
        src, dims = gen_corpus_program(rng)
        result = parse_program(src)
        if result.ok:
            out.append((src, dims))
    return out
