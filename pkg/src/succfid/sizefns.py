"""Stored-size schedule: word-plus-spill capacities for recursion nodes.

Every subproblem's footprint is wordized from an exact integer capacity C
and a fractional slack: M whole words plus a spill bound K such that
2^(w*M) * K >= C * 2^slack, with K held in [nmax^2, nmax^2 * 2^w] whenever
M > 0.  The same wordizer produces the class-constant targets the node
pipeline grows rank-coder output to before symbols from different pivot
classes share a spill.  All comparisons are integer-exact; slacks are
small-denominator rationals handled by root extraction, never floats.
"""

from __future__ import annotations

from fractions import Fraction
from math import lcm
from typing import Tuple

from .config import RunConfig
from .numeric import (
    DOWN,
    UP,
    BitCost,
    binom,
    ceil_mul_exp2,
    geom_value,
    le_mul_exp2,
    log2_cost,
)

# Headroom folded into every class-constant rank target beyond the worst
# joint child slack: it absorbs the entropy coder's (1+1/q)^2 factor and the
# spill-ceiling noise of the child capacities the Vandermonde sum ranges over.
TARGET_MARGIN = Fraction(1, 10)

_MEMO_CAP = 1 << 16


class SizeFns:
    """Capacity schedule for one configuration; memoized, no shared state."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.w = cfg.w
        self.nmax = cfg.nmax
        self._n2 = cfg.nmax * cfg.nmax
        self._n3 = cfg.nmax ** 3
        # wordizing extracts integer s-th roots of 2^slack, so the mixed
        # slack exponents must keep denominators the rooter accepts
        den = lcm(cfg.delta_slack.denominator, cfg.delta_mid.denominator,
                  cfg.delta_step.denominator, TARGET_MARGIN.denominator)
        if den > 64:
            raise ValueError("slack denominators too fine for exact wordizing")
        self._memo: dict = {}

    # -- slack ledger --------------------------------------------------------

    def slack(self, n: int) -> Fraction:
        """Fractional-bit headroom carried by a stored subproblem of n keys."""
        if n <= 0:
            return Fraction(0)
        return (n - 1) * self.cfg.delta_slack + self.cfg.delta_mid

    def child_slack_max(self, n: int) -> Fraction:
        """Worst joint slack of the two subtrees under an n-key node."""
        if n <= 1:
            return Fraction(0)
        return max(self.slack(r) + self.slack(n - 1 - r) for r in range(n))

    def rank_extra(self, n: int) -> Fraction:
        """Slack exponent of the class-constant rank target for n keys."""
        return self.child_slack_max(n) + TARGET_MARGIN + self.cfg.delta_step

    # -- the wordizer ---------------------------------------------------------

    def wordize(self, C: int, extra: Fraction) -> Tuple[int, int]:
        """Split capacity C * 2^extra into whole words M and spill bound K.

        M is the largest word count that still leaves 2*log2(nmax) bits in
        the spill (clamped at zero), and K = ceil(C * 2^(extra - w*M))
        exactly, so 2^(w*M) * K covers the capacity with less than one spill
        unit to spare.
        """
        if C < 1:
            raise ValueError("capacity must be a positive integer")
        C = int(C)
        w = self.w
        # bit-length guess, then settle by exact comparison
        M = max(0, (C.bit_length() - 1 + int(extra) - self._n2.bit_length()) // w)
        while le_mul_exp2(self._n2, Fraction(w * (M + 1)), C, extra):
            M += 1
        while M > 0 and not le_mul_exp2(self._n2, Fraction(w * M), C, extra):
            M -= 1
        K = int(ceil_mul_exp2(C, extra - w * M))
        return M, K

    def cap_int(self, M: int, K: int) -> int:
        """The exact integer capacity 2^(w*M) * K of a words/spill pair."""
        return K << (self.w * M)

    def space_cost(self, M: int, K: int, rounding: str = UP) -> BitCost:
        """w*M + log2(K) as a directed fixed-point bit count."""
        return (BitCost.from_int(self.w * M, self.cfg.F, rounding)
                + log2_cost(K, self.cfg.F, rounding))

    # -- stored footprints -----------------------------------------------------

    def stored_large(self, n: int, t: int) -> Tuple[int, int]:
        """Stored (M, K) of a wide node; t indexes its rounded valid count."""
        key = ("L", n, t)
        hit = self._memo.get(key)
        if hit is None:
            if n == 0:
                hit = (0, 1)
            else:
                V = geom_value(t, self.nmax)
                C = binom(V, n)
                if C == 0:
                    raise ValueError("rounded count too small for n keys")
                hit = self.wordize(C, self.slack(n))
            self._put(key, hit)
        return hit

    def stored_small(self, n: int, V: int) -> Tuple[int, int]:
        """Stored (M, K) of a narrow node holding n of its V valid keys."""
        key = ("S", n, V)
        hit = self._memo.get(key)
        if hit is None:
            if n == 0:
                hit = (0, 1)
            else:
                C = binom(V, n)
                if C == 0:
                    raise ValueError("narrow range holds fewer than n valid keys")
                hit = self.wordize(C, self.slack(n))
            self._put(key, hit)
        return hit

    # -- class-constant rank targets -------------------------------------------

    def count_ceiling(self, x: int) -> int:
        """Upper bound for a sum of two geometrically rounded counts whose
        exact total is at most x.  Below nmax^3 the rounding ladder is dense
        (identity); above, each side inflates by at most a 1/nmax^3 step."""
        if x <= self._n3:
            return x
        return (x * (self._n3 + 1)) // self._n3 + 3

    def rank_target(self, n: int, x: int) -> Tuple[int, int]:
        """Class-constant (M, K) the rank coder's output is grown to.

        x bounds the two children's total stored-valid count over the whole
        pivot class, so C(x, n-1) dominates every member's Vandermonde sum;
        rank_extra(n) pays for child slacks and coder noise on top.  A one-key
        node has a deterministic rank, so its target is the empty pair.
        """
        if n <= 1:
            return (0, 1)
        key = ("T", n, x)
        hit = self._memo.get(key)
        if hit is None:
            C = binom(x, n - 1)
            if C == 0:
                raise ValueError("rank class admits no members")
            hit = self.wordize(C, self.rank_extra(n))
            self._put(key, hit)
        return hit

    # -- diagnostic pivot-budget bound ------------------------------------------

    def pivot_budget(self, n: int, ell: int, t: int,
                     weight_prob: Fraction) -> BitCost:
        """Lower bound on the room left for one pivot class of a wide node.

        Stored space minus the children's worst slack allowance, the class's
        weight-symbol cost, and the log of the slot count, plus the small
        diagnostic allowance.  Reported for monitoring only: the pipeline
        enforces its capacities exactly and does not consume this number.
        """
        if not 0 < weight_prob <= 1:
            raise ValueError("weight_prob must be a probability")
        M, K = self.stored_large(n, t)
        F = self.cfg.F
        up = (self.space_cost(M, K, UP)
              + BitCost.from_fraction(self.cfg.delta_h, F, UP))
        down = BitCost.from_fraction(self.slack(n), F, DOWN)
        if ell > 1:
            down = down + log2_cost(ell, F, DOWN)
        # cost of naming the class: log2(1/p), rounded down as a whole
        sym = log2_cost(weight_prob.denominator, F, DOWN).minus(
            log2_cost(weight_prob.numerator, F, UP))
        return up.minus(down).minus(sym)

    def _put(self, key, val) -> None:
        if len(self._memo) >= _MEMO_CAP:
            self._memo.clear()
        self._memo[key] = val
