"""Exact big-integer arithmetic and directed-rounding fractional bit costs.

Everything that decides a capacity (does this code point fit in that universe?)
runs on exact integers; BitCost exists for audits and reports, where a bounded
fixed-point error with a known sign is what we want.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpz

UP = "up"
DOWN = "down"

_MEMO_CAP = 1 << 20


def binom(n, k: int):
    """Exact binomial coefficient C(n, k); zero when k > n."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if k > n:
        return mpz(0)
    return gmpy2.bincoef(mpz(n), k)


def ceil_div(a, b):
    return -((-a) // b)


def iroot_ceil(x, s: int):
    """Smallest integer r with r**s >= x (x >= 0)."""
    if x <= 0:
        return mpz(0)
    root, exact = gmpy2.iroot(mpz(x), s)
    return root if exact else root + 1


def iroot_floor(x, s: int):
    if x < 0:
        raise ValueError("negative radicand")
    root, _ = gmpy2.iroot(mpz(x), s)
    return root


def ceil_mul_exp2(c, e: Fraction):
    """Exact ceil(c * 2**e) for integer c >= 0 and rational e.

    With e = p/s in lowest terms, c*2**e = (c**s * 2**p)**(1/s), so the ceiling
    is an exact integer-root computation — no floating point anywhere.
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    if c == 0:
        return mpz(0)
    s = e.denominator
    p = e.numerator
    if s == 1:
        return mpz(c) << p if p >= 0 else ceil_div(mpz(c), mpz(1) << -p)
    if s > 64:
        raise ValueError("exponent denominator too large for exact rooting")
    t = mpz(c) ** s
    if p >= 0:
        return iroot_ceil(t << p, s)
    return iroot_ceil(ceil_div(t, mpz(1) << -p), s)


def floor_mul_exp2(c, e: Fraction):
    """Exact floor(c * 2**e), same conventions as ceil_mul_exp2."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if c == 0:
        return mpz(0)
    s = e.denominator
    p = e.numerator
    if s == 1:
        return mpz(c) << p if p >= 0 else mpz(c) >> -p
    if s > 64:
        raise ValueError("exponent denominator too large for exact rooting")
    t = mpz(c) ** s
    if p >= 0:
        return iroot_floor(t << p, s)
    return iroot_floor(t >> -p, s)


def le_mul_exp2(c1, e1: Fraction, c2, e2: Fraction) -> bool:
    """Exact test c1*2**e1 <= c2*2**e2 for integers ci >= 0, rational ei."""
    if c1 == 0:
        return True
    if c2 == 0:
        return False
    s = e1.denominator * e2.denominator // gmpy2.gcd(e1.denominator, e2.denominator)
    p1 = int(e1 * s)
    p2 = int(e2 * s)
    a = mpz(c1) ** s
    b = mpz(c2) ** s
    shift = min(p1, p2)
    return (a << (p1 - shift)) <= (b << (p2 - shift))


# ---------------------------------------------------------------------------
# BitCost: fixed-point fractional bits with an explicit rounding direction.
# ---------------------------------------------------------------------------


def _flip(rounding: str) -> str:
    return DOWN if rounding is UP or rounding == UP else UP


@dataclass(frozen=True, eq=False)
class BitCost:
    """value = num / 2**F bits; `rounding` records which side of the truth."""

    num: int
    F: int
    rounding: str

    @classmethod
    def zero(cls, F: int, rounding: str = UP) -> "BitCost":
        return cls(0, F, rounding)

    @classmethod
    def from_int(cls, bits: int, F: int, rounding: str = UP) -> "BitCost":
        return cls(bits << F, F, rounding)

    @classmethod
    def from_fraction(cls, fr: Fraction, F: int, rounding: str) -> "BitCost":
        scaled = fr * (1 << F)
        if rounding == UP:
            num = -((-scaled.numerator) // scaled.denominator)
        else:
            num = scaled.numerator // scaled.denominator
        return cls(int(num), F, rounding)

    # arithmetic keeps the declared direction sound
    def __add__(self, other: "BitCost") -> "BitCost":
        assert self.F == other.F and self.rounding == other.rounding
        return BitCost(self.num + other.num, self.F, self.rounding)

    def minus(self, other: "BitCost") -> "BitCost":
        """self − other; other must carry the opposite rounding direction."""
        assert self.F == other.F and other.rounding == _flip(self.rounding)
        return BitCost(self.num - other.num, self.F, self.rounding)

    def times(self, k: int) -> "BitCost":
        assert k >= 0
        return BitCost(self.num * k, self.F, self.rounding)

    def max_with(self, other: "BitCost") -> "BitCost":
        assert self.F == other.F and self.rounding == other.rounding
        return self if self.num >= other.num else other

    # comparisons act on the represented value, whatever its direction
    def __le__(self, other):
        return self.num <= _as_num(other, self.F)

    def __lt__(self, other):
        return self.num < _as_num(other, self.F)

    def __ge__(self, other):
        return self.num >= _as_num(other, self.F)

    def __gt__(self, other):
        return self.num > _as_num(other, self.F)

    def to_float(self) -> float:
        return self.num / (1 << self.F)

    def to_fraction(self) -> Fraction:
        return Fraction(self.num, 1 << self.F)

    def __repr__(self):
        return f"BitCost({self.to_float():.6f}, {self.rounding})"


def _as_num(other, F: int) -> int:
    if isinstance(other, BitCost):
        assert other.F == F
        return other.num
    if isinstance(other, int):
        return other << F
    if isinstance(other, Fraction):
        return int(other * (1 << F))  # test-side convenience only
    raise TypeError(type(other))


def log2_cost(x, F: int, rounding: str) -> BitCost:
    """Directed-rounding fixed-point log2 of a positive integer."""
    if x < 1:
        raise ValueError("log2_cost needs x >= 1")
    x = mpz(x)
    if x.bit_length() - 1 == gmpy2.bit_scan1(x):
        return BitCost((x.bit_length() - 1) << F, F, rounding)
    mode = gmpy2.RoundUp if rounding == UP else gmpy2.RoundDown
    old = gmpy2.get_context()
    try:
        gmpy2.set_context(gmpy2.context(precision=F + 80, round=mode))
        v = gmpy2.log2(gmpy2.mpfr(x))
        scaled = v * (mpz(1) << F)
        num = int(gmpy2.ceil(scaled)) if rounding == UP else int(gmpy2.floor(scaled))
    finally:
        gmpy2.set_context(old)
    return BitCost(num, F, rounding)


def log2_binom_cost(n, k: int, F: int, rounding: str) -> BitCost:
    c = binom(n, k)
    if c == 0:
        raise ValueError("log of zero binomial")
    return log2_cost(c, F, rounding)


def _pow2_directed(num: int, F: int, want_ceil: bool) -> int:
    """floor or ceil of 2**(num / 2**F), exact via interval tightening.

    With a nonzero fractional part the power is irrational, so directed
    MPFR evaluations at growing precision must eventually agree on the
    integer part; the dyadic-integer case is handled exactly up front.
    """
    i, rem = divmod(num, 1 << F)
    if rem == 0:
        if i >= 0:
            return int(mpz(1) << i)
        return 1 if want_ceil else 0
    if i < 0:  # value strictly between 0 and 1
        return 1 if want_ceil else 0
    pick = gmpy2.ceil if want_ceil else gmpy2.floor
    for prec in (96, 192, 512, 2048, 8192):
        old = gmpy2.get_context()
        try:
            gmpy2.set_context(gmpy2.context(precision=prec, round=gmpy2.RoundDown))
            frac_lo = gmpy2.exp2(gmpy2.mpfr(rem) / (mpz(1) << F))
            lo = pick(gmpy2.mul_2exp(frac_lo, i))
            gmpy2.set_context(gmpy2.context(precision=prec, round=gmpy2.RoundUp))
            frac_hi = gmpy2.exp2(gmpy2.mpfr(rem) / (mpz(1) << F))
            hi = pick(gmpy2.mul_2exp(frac_hi, i))
        finally:
            gmpy2.set_context(old)
        if lo == hi:
            return int(lo)
    raise ArithmeticError("pow2 interval failed to separate")


def pow2_floor(cost: "BitCost") -> int:
    """Exact floor(2**cost) for a fixed-point bit count."""
    return _pow2_directed(cost.num, cost.F, want_ceil=False)


def pow2_ceil(cost: "BitCost") -> int:
    """Exact ceil(2**cost) for a fixed-point bit count."""
    return _pow2_directed(cost.num, cost.F, want_ceil=True)


# ---------------------------------------------------------------------------
# Geometric rounding: minimal floor((1+eps)^t) >= x with eps = 1/nmax^3.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeomRounded:
    t: int
    value: int


@functools.lru_cache(maxsize=1 << 16)
def _geom_floor(t: int, nmax: int) -> int:
    """floor((1 + 1/nmax**3)^t), exact via interval tightening."""
    if t == 0:
        return 1
    den = nmax ** 3
    num = den + 1
    for prec in (96, 192, 512):
        old = gmpy2.get_context()
        try:
            gmpy2.set_context(gmpy2.context(precision=prec, round=gmpy2.RoundDown))
            lo = gmpy2.floor((gmpy2.mpfr(num) / den) ** t)
            gmpy2.set_context(gmpy2.context(precision=prec, round=gmpy2.RoundUp))
            hi = gmpy2.floor((gmpy2.mpfr(num) / den) ** t)
        finally:
            gmpy2.set_context(old)
        if lo == hi:
            return int(lo)
    return int(mpz(num) ** t // mpz(den) ** t)  # knife-edge fallback


def geom_value(t: int, nmax: int) -> int:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return _geom_floor(t, nmax)


@functools.lru_cache(maxsize=_MEMO_CAP)
def round_up_geometric(x, nmax: int) -> GeomRounded:
    """Minimal t (and its value) with floor((1+1/nmax^3)^t) >= x."""
    x = int(x)
    if x < 1:
        raise ValueError("x must be at least 1")
    if x == 1:
        return GeomRounded(0, 1)
    den = nmax ** 3
    # estimate t, then settle exactly by local scan (floor() plateaus below
    # x ~ nmax^3 make the sequence non-strictly increasing)
    old = gmpy2.get_context()
    try:
        gmpy2.set_context(gmpy2.context(precision=96))
        est = gmpy2.log(x) / gmpy2.log(gmpy2.mpfr(den + 1) / den)
        t = max(0, int(gmpy2.ceil(est)) - 2)
    finally:
        gmpy2.set_context(old)
    while _geom_floor(t, nmax) < x:
        t += 1
    while t > 0 and _geom_floor(t - 1, nmax) >= x:
        t -= 1
    return GeomRounded(t, _geom_floor(t, nmax))
