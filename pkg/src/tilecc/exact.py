"""Exact arithmetic for the rational evaluation mode.

Values live in the fraction field over the group ring Q[Q x Q]: finite sums
``sum_i c_i * e^{a_i} * 2^{b_i}`` with rational coefficients ``c_i`` and
rational exponents ``(a_i, b_i)``, plus formal quotients of two such sums.
In this structure ``exp`` and ``exp2`` of a rational are exact, products
combine exponents exactly, and the telescoping identities used by reduction
fusion (``e^{a-b} * e^{b-c} == e^{a-c}``) hold with zero rounding error.

Pure rationals are represented as plain ``int`` / ``Fraction`` so that the
common case (polynomial arithmetic on inputs) runs at native speed; values
are promoted to :class:`ERing` once an exponential enters and to
:class:`EFrac` once a division by a multi-term sum enters.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Union

__all__ = [
    "ERing",
    "EFrac",
    "NEG_INF",
    "POS_INF",
    "ExactError",
    "ExactDivisionByZero",
    "exact_add",
    "exact_sub",
    "exact_mul",
    "exact_div",
    "exact_neg",
    "exact_max",
    "exact_min",
    "exact_exp",
    "exact_exp2",
    "exact_log2",
    "exact_eq",
    "exact_lt",
    "from_number",
    "is_zero",
    "to_float",
]


class ExactError(Exception):
    """Raised when a value leaves the exactly-representable fragment."""


class ExactDivisionByZero(ExactError):
    pass


Rat = Union[int, Fraction]

# Exponent key: (a, b) meaning e^a * 2^b.
_ZERO_KEY = (0, 0)

# Rational bounds on ln(2), tight to ~48 digits; used only to order
# single-term values whose exponents mix the e and 2 bases.
_LN2_LO = Fraction(
    693147180559945309417232121458176568075500134360, 10**48
)
_LN2_HI = Fraction(
    693147180559945309417232121458176568075500134361, 10**48
)


class _NegInf:
    """Sentinel standing in for the -inf seed of max reductions."""

    __slots__ = ()

    def __repr__(self):
        return "-inf"

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __sub__(self, other):
        if other is NEG_INF:
            raise ExactError("(-inf) - (-inf) is undefined")
        return self

    def __neg__(self):
        return POS_INF

    def __lt__(self, other):
        return other is not NEG_INF

    def __le__(self, other):
        return True

    def __gt__(self, other):
        return False

    def __ge__(self, other):
        return other is NEG_INF

    def __eq__(self, other):
        return other is NEG_INF

    def __hash__(self):
        return hash("tilecc-neg-inf")


class _PosInf:
    __slots__ = ()

    def __repr__(self):
        return "+inf"

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __neg__(self):
        return NEG_INF

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is POS_INF

    def __gt__(self, other):
        return other is not POS_INF

    def __ge__(self, other):
        return True

    def __eq__(self, other):
        return other is POS_INF

    def __hash__(self):
        return hash("tilecc-pos-inf")


NEG_INF = _NegInf()
POS_INF = _PosInf()


def _as_ring_dict(v) -> dict:
    if isinstance(v, ERing):
        return v.terms
    if isinstance(v, (int, Fraction)):
        return {} if v == 0 else {_ZERO_KEY: v}
    raise ExactError(f"cannot promote {type(v).__name__} to ring value")


def _merge_into(dst: dict, src: dict, scale=1) -> None:
    for key, coef in src.items():
        c = coef * scale
        cur = dst.get(key)
        if cur is None:
            dst[key] = c
        else:
            cur = cur + c
            if cur == 0:
                del dst[key]
            else:
                dst[key] = cur


def _mul_dicts(a: dict, b: dict) -> dict:
    out: dict = {}
    for (ea, ba), ca in a.items():
        for (eb, bb), cb in b.items():
            key = (ea + eb, ba + bb)
            c = ca * cb
            cur = out.get(key)
            if cur is None:
                out[key] = c
            else:
                cur = cur + c
                if cur == 0:
                    del out[key]
                else:
                    out[key] = cur
    return out


class ERing:
    """A normalized element of the group ring: dict exponent-pair -> coef."""

    __slots__ = ("terms",)

    def __init__(self, terms: dict):
        self.terms = terms

    @staticmethod
    def single(coef, e_part=0, two_part=0) -> "ERing":
        if coef == 0:
            return ERing({})
        return ERing({(e_part, two_part): coef})

    def is_pure_rational(self):
        return not self.terms or (len(self.terms) == 1 and _ZERO_KEY in self.terms)

    def as_rational(self):
        if not self.terms:
            return 0
        return self.terms[_ZERO_KEY]

    def __add__(self, other):
        if other is NEG_INF or other is POS_INF:
            return other
        if isinstance(other, EFrac):
            return other.__radd__(self)
        out = dict(self.terms)
        _merge_into(out, _as_ring_dict(other))
        return _demote(ERing(out))

    __radd__ = __add__

    def __sub__(self, other):
        return self + exact_neg(other)

    def __rsub__(self, other):
        return exact_neg(self) + other

    def __mul__(self, other):
        if isinstance(other, EFrac):
            return other.__rmul__(self)
        return _demote(ERing(_mul_dicts(self.terms, _as_ring_dict(other))))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return exact_div(self, other)

    def __rtruediv__(self, other):
        return exact_div(other, self)

    def __neg__(self):
        return ERing({k: -c for k, c in self.terms.items()})

    def __eq__(self, other):
        return exact_eq(self, other)

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __lt__(self, other):
        return exact_lt(self, other)

    def __gt__(self, other):
        return exact_lt(other, self)

    def __le__(self, other):
        return not exact_lt(other, self)

    def __ge__(self, other):
        return not exact_lt(self, other)

    def __repr__(self):
        if not self.terms:
            return "ERing(0)"
        bits = [f"{c}*e^{a}*2^{b}" for (a, b), c in sorted(self.terms.items())]
        return "ERing(" + " + ".join(bits) + ")"


class EFrac:
    """Formal quotient of two ring elements (denominator nonzero)."""

    __slots__ = ("num", "den")

    def __init__(self, num: dict, den: dict):
        if not den:
            raise ExactDivisionByZero("zero denominator in exact value")
        self.num = num
        self.den = den

    def _parts(self, other):
        if isinstance(other, EFrac):
            return other.num, other.den
        return _as_ring_dict(other), {_ZERO_KEY: 1}

    def __add__(self, other):
        if other is NEG_INF or other is POS_INF:
            return other
        on, od = self._parts(other)
        if od == self.den:
            out = dict(self.num)
            _merge_into(out, on)
            return _demote_frac(out, dict(self.den))
        num = _mul_dicts(self.num, od)
        _merge_into(num, _mul_dicts(on, self.den))
        return _demote_frac(num, _mul_dicts(self.den, od))

    __radd__ = __add__

    def __sub__(self, other):
        return self + exact_neg(other)

    def __rsub__(self, other):
        return exact_neg(self) + other

    def __mul__(self, other):
        on, od = self._parts(other)
        return _demote_frac(_mul_dicts(self.num, on), _mul_dicts(self.den, od))

    __rmul__ = __mul__

    def __truediv__(self, other):
        on, od = self._parts(other)
        if not on:
            raise ExactDivisionByZero("division by exact zero")
        return _demote_frac(_mul_dicts(self.num, od), _mul_dicts(self.den, on))

    def __rtruediv__(self, other):
        on, od = self._parts(other)
        if not self.num:
            raise ExactDivisionByZero("division by exact zero")
        return _demote_frac(_mul_dicts(on, self.den), _mul_dicts(od, self.num))

    def __neg__(self):
        return EFrac({k: -c for k, c in self.num.items()}, self.den)

    def __eq__(self, other):
        return exact_eq(self, other)

    def __hash__(self):
        raise ExactError("EFrac is not hashable")

    def __lt__(self, other):
        return exact_lt(self, other)

    def __gt__(self, other):
        return exact_lt(other, self)

    def __le__(self, other):
        return not exact_lt(other, self)

    def __ge__(self, other):
        return not exact_lt(self, other)

    def __repr__(self):
        return f"EFrac({ERing(self.num)!r} / {ERing(self.den)!r})"


def _demote(r: ERing):
    """Collapse a ring value back to int/Fraction when it is pure rational."""
    if r.is_pure_rational():
        v = r.as_rational()
        if isinstance(v, Fraction) and v.denominator == 1:
            return v.numerator
        return v
    return r


def _demote_frac(num: dict, den: dict):
    if len(den) == 1 and _ZERO_KEY in den:
        q = den[_ZERO_KEY]
        return _demote(ERing({k: Fraction(c, 1) / q for k, c in num.items()}))
    return EFrac(num, den)


def from_number(x):
    """Exact conversion of a Python/numpy scalar into the exact domain."""
    if isinstance(x, (int, Fraction)) or isinstance(x, (ERing, EFrac)):
        return x
    if x is NEG_INF or x is POS_INF:
        return x
    f = float(x)
    if f == float("-inf"):
        return NEG_INF
    if f == float("inf"):
        return POS_INF
    fr = Fraction(f)  # floats are dyadic rationals: exact
    return fr.numerator if fr.denominator == 1 else fr


def is_zero(v) -> bool:
    if isinstance(v, (int, Fraction)):
        return v == 0
    if isinstance(v, ERing):
        return not v.terms
    if isinstance(v, EFrac):
        return not v.num
    return False


def exact_add(a, b):
    if a is NEG_INF or a is POS_INF:
        return a + b
    if b is NEG_INF or b is POS_INF:
        return b + a
    return a + b


def exact_sub(a, b):
    if b is NEG_INF or b is POS_INF or isinstance(b, (ERing, EFrac)):
        return exact_add(a, exact_neg(b))
    if a is NEG_INF or a is POS_INF:
        return a - b
    return a - b


def exact_neg(v):
    if v is NEG_INF:
        return POS_INF
    if v is POS_INF:
        return NEG_INF
    return -v


def exact_mul(a, b):
    return a * b


def exact_div(a, b):
    if isinstance(b, EFrac) or isinstance(a, EFrac):
        if isinstance(a, EFrac):
            return a / b
        return EFrac(_as_ring_dict(a), {_ZERO_KEY: 1}) / b
    if isinstance(b, ERing):
        if not b.terms:
            raise ExactDivisionByZero("division by exact zero")
        if b.is_pure_rational():
            return a * Fraction(1, 1) / b.as_rational()
        if len(b.terms) == 1:
            # single term: invert exactly
            (ea, eb), c = next(iter(b.terms.items()))
            inv = ERing.single(Fraction(1, 1) / c, -ea, -eb)
            return a * inv
        return _demote_frac(_as_ring_dict(a), dict(b.terms))
    if isinstance(b, (int, Fraction)):
        if b == 0:
            raise ExactDivisionByZero("division by exact zero")
        if isinstance(a, ERing):
            return a * Fraction(1, b)
        return Fraction(a, 1) / b
    raise ExactError(f"cannot divide by {type(b).__name__}")


def exact_max(a, b):
    return b if exact_lt(a, b) else a


def exact_min(a, b):
    return b if exact_lt(b, a) else a


def exact_exp(v):
    if v is NEG_INF:
        return 0
    if v is POS_INF:
        raise ExactError("exp(+inf) not representable")
    if isinstance(v, (int, Fraction)):
        return ERing.single(1, v, 0) if v != 0 else 1
    if isinstance(v, ERing) and v.is_pure_rational():
        return exact_exp(v.as_rational())
    raise ExactError("exp of a non-rational exact value is not representable")


def exact_exp2(v):
    if v is NEG_INF:
        return 0
    if isinstance(v, (int, Fraction)):
        if isinstance(v, int) or v.denominator == 1:
            return Fraction(2, 1) ** int(v) if v != 0 else 1
        return ERing.single(1, 0, v)
    if isinstance(v, ERing) and v.is_pure_rational():
        return exact_exp2(v.as_rational())
    raise ExactError("exp2 of a non-rational exact value is not representable")


def exact_log2(v):
    if isinstance(v, ERing) and v.is_pure_rational():
        v = v.as_rational()
    if isinstance(v, int):
        v = Fraction(v)
    if isinstance(v, Fraction):
        if v <= 0:
            raise ExactError("log2 of a non-positive value")
        num, den = v.numerator, v.denominator
        if num & (num - 1) == 0 and den & (den - 1) == 0:
            return num.bit_length() - 1 - (den.bit_length() - 1)
        raise ExactError("log2 of a non-dyadic rational is not representable")
    if isinstance(v, ERing) and len(v.terms) == 1:
        (ea, eb), c = next(iter(v.terms.items()))
        if c == 1 and ea == 0:
            return eb
    raise ExactError("log2 argument outside the exactly-representable fragment")


def _cross_eq(an, ad, bn, bd) -> bool:
    if ad == bd:
        return an == bn
    return _mul_dicts(an, bd) == _mul_dicts(bn, ad)


def exact_eq(a, b) -> bool:
    if a is NEG_INF or b is NEG_INF:
        return a is b
    if a is POS_INF or b is POS_INF:
        return a is b
    one = {_ZERO_KEY: 1}
    an, ad = (a.num, a.den) if isinstance(a, EFrac) else (_as_ring_dict(a), one)
    bn, bd = (b.num, b.den) if isinstance(b, EFrac) else (_as_ring_dict(b), one)
    return _cross_eq(an, ad, bn, bd)


def _single_term_sign_log(terms: dict):
    """Return (sign, coef, key) for a single-term value."""
    (key, coef) = next(iter(terms.items()))
    sign = 1 if coef > 0 else -1
    return sign, coef, key


def exact_lt(a, b) -> bool:
    """Total order on the comparable fragment: pure rationals, and
    single-term values whose magnitudes are decidable with ln(2) bounds."""
    if a is NEG_INF:
        return b is not NEG_INF
    if b is NEG_INF:
        return False
    if a is POS_INF:
        return False
    if b is POS_INF:
        return True
    if isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction)):
        return a < b
    ar = _as_ring_dict(a) if not isinstance(a, EFrac) else None
    br = _as_ring_dict(b) if not isinstance(b, EFrac) else None
    if ar is None or br is None:
        raise ExactError("ordering of formal quotients is not supported")
    if ar == br:
        return False
    if not ar:  # 0 < b?
        sign, _, _ = _single_term_sign_log(br) if len(br) == 1 else (None, 0, 0)
        if sign is not None:
            return sign > 0
        raise ExactError("ordering vs. multi-term exact value is not supported")
    if not br:
        sign, _, _ = _single_term_sign_log(ar) if len(ar) == 1 else (None, 0, 0)
        if sign is not None:
            return sign < 0
        raise ExactError("ordering vs. multi-term exact value is not supported")
    if len(ar) == 1 and len(br) == 1:
        sa, ca, (ea, ba) = _single_term_sign_log(ar)
        sb, cb, (eb, bb) = _single_term_sign_log(br)
        if sa != sb:
            return sa < sb
        if (ea, ba) == (eb, bb):
            return (ca < cb) if sa > 0 else (ca < cb)
        if ca == cb:
            # compare exponents: e-part + 2-part*ln2, decidable since ln2 bounds
            de = Fraction(ea) - Fraction(eb)
            db = Fraction(ba) - Fraction(bb)
            lo = de + db * (_LN2_LO if db > 0 else _LN2_HI)
            hi = de + db * (_LN2_HI if db > 0 else _LN2_LO)
            if hi < 0:
                return sa > 0
            if lo > 0:
                return sa < 0
            if lo == 0 and hi == 0:
                return False
            raise ExactError("exponent comparison too close for ln2 bounds")
    raise ExactError("ordering of multi-term exact values is not supported")


_LN2_F = 0.6931471805599453


def to_float(v) -> float:
    """Lossy float view, for diagnostics only."""
    import math

    if v is NEG_INF:
        return float("-inf")
    if v is POS_INF:
        return float("inf")
    if isinstance(v, (int, Fraction)):
        return float(v)
    if isinstance(v, ERing):
        return sum(float(c) * math.exp(float(a) + float(b) * _LN2_F) for (a, b), c in v.terms.items())
    if isinstance(v, EFrac):
        return to_float(ERing(v.num)) / to_float(ERing(v.den))
    return float(v)
