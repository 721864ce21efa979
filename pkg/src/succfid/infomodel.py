"""Information-model encoder: a key set becomes a sequence of (symbol,
distribution) emissions whose exact fractional-bit cost is auditable per
recursion node.

Each subproblem (n keys inside [a, b), weights capped at hmax) emits, for a
wide range, the pivot weight (a power-law pmf with remainder on an "empty"
symbol), the pivot's subchunk slot (uniform), and the pivot rank
(hypergeometric with geometrically rounded side counts); narrow ranges emit
the joint (pivot offset, rank) pair under the uniform-over-valid-sets
distribution.  Nothing here produces bits — it produces exact rationals the
storage layer is audited against.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .config import RunConfig
from .numeric import (
    DOWN,
    UP,
    BitCost,
    GeomRounded,
    binom,
    log2_cost,
    round_up_geometric,
)
from .reftreap import FailureDetected
from .weights import WeightFn

EMPTY = "empty"  # the never-emitted normalizing symbol of the weight pmf


@dataclass(frozen=True)
class SubproblemId:
    n: int
    a: int
    b: int
    hmax: int


@dataclass(frozen=True)
class Emission:
    symbol: object
    dist: tuple
    prob: Fraction
    cost: BitCost


@dataclass
class AuditRecord:
    """Per-node audit: subtree cost vs the ideal log2 C(V, n)."""

    sub: SubproblemId
    V: int
    N: int
    inv_prob: Fraction            # product of 1/D_i over the whole subtree
    cost_up: BitCost
    rank_penalty: tuple = None    # (td_prob, exact_prob) for the rank emission
    range_penalty: tuple = None   # (V_exact_range, V_rounded_range) for wide nodes


def cost_up_of(prob: Fraction, F: int) -> BitCost:
    return log2_cost(prob.denominator, F, UP).minus(
        log2_cost(prob.numerator, F, DOWN))


def _geom_or_zero(x: int, nmax: int) -> GeomRounded:
    return GeomRounded(-1, 0) if x == 0 else round_up_geometric(x, nmax)


class SmallDist:
    """Joint (pivot offset, rank) pmf for a narrow range, exact rationals.

    The normalizer equals the number of valid key sets: summing the
    Vandermonde identity per pivot gives sum_p C(V(a,b,h(p)-1), n-1),
    computable from class counts alone.
    """

    def __init__(self, wf: WeightFn, a: int, b: int, n: int, hmax: int):
        self.wf, self.a, self.b, self.n, self.hmax = wf, a, b, n, hmax
        cnt = wf.class_counts(a, b, hmax)
        below = 0
        norm = 0
        for v in range(hmax + 1):
            norm += cnt[v] * binom(below, n - 1)
            below += cnt[v]
        if norm == 0:
            raise ValueError("no valid pivot for this subproblem")
        self.norm = norm

    def sides(self, dp: int):
        p = self.a + dp
        h = self.wf.weight(p)
        if h > self.hmax:
            return None
        v_l = self.wf.count_valid(self.a, p, h - 1) if p > self.a else 0
        v_r = self.wf.count_valid(p + 1, self.b, h - 1) if p + 1 < self.b else 0
        return v_l, v_r

    def prob(self, dp: int, r: int) -> Fraction:
        if not (0 <= dp < self.b - self.a and 0 <= r < self.n):
            return Fraction(0)
        sides = self.sides(dp)
        if sides is None:
            return Fraction(0)
        v_l, v_r = sides
        return Fraction(binom(v_l, r) * binom(v_r, self.n - 1 - r), self.norm)

    def items(self):
        """Full support — quadratic in the range width; test-scale only."""
        for dp in range(self.b - self.a):
            sides = self.sides(dp)
            if sides is None:
                continue
            v_l, v_r = sides
            for r in range(0, self.n):
                num = binom(v_l, r) * binom(v_r, self.n - 1 - r)
                if num:
                    yield (dp, r), Fraction(num, self.norm)


class InfoModel:
    def __init__(self, cfg: RunConfig, wf: WeightFn = None, registry_cap: int = 1 << 20):
        self.cfg = cfg
        self.wf = wf if wf is not None else WeightFn(cfg)
        self.W = cfg.W
        self.F = cfg.F
        self.registry_cap = registry_cap
        self._registry: dict = {}

    # -- distributions --------------------------------------------------------

    def _memo(self, index, build):
        got = self._registry.get(index)
        if got is None:
            if len(self._registry) >= self.registry_cap:
                self._registry.clear()
            got = build()
            self._registry[index] = got
        return got

    def registry_size(self) -> int:
        return len(self._registry)

    def dist_weight_td(self, n: int, hmax: int) -> dict:
        """pmf(h) = n/(hmax+1) * (h/(hmax+1))^(n-1), remainder on EMPTY."""
        if n < 1 or hmax < 0:
            raise ValueError("need n >= 1 and hmax >= 0")
        index = ("WeightTd", n, hmax)

        def build():
            base = Fraction(1, hmax + 1)
            pmf = {}
            total = Fraction(0)
            for h in range(hmax + 1):
                p = n * base * (h * base) ** (n - 1)
                pmf[h] = p
                total += p
            pmf[EMPTY] = 1 - total
            assert pmf[EMPTY] >= 0 and sum(pmf.values()) == 1
            return pmf

        return self._memo(index, build)

    def dist_rank_td(self, n: int, vl: GeomRounded, vr: GeomRounded) -> list:
        """Hypergeometric pmf over r in [0, n-1] with rounded side counts."""
        if vl.value + vr.value < n - 1:
            raise ValueError("infeasible: rounded sides cannot host n-1 keys")
        index = ("RankTd", n, vl.t, vr.t)

        def build():
            denom = binom(vl.value + vr.value, n - 1)
            pmf = [Fraction(binom(vl.value, r) * binom(vr.value, n - 1 - r), denom)
                   for r in range(n)]
            assert sum(pmf) == 1
            return pmf

        return self._memo(index, build)

    def dist_small(self, a: int, b: int, n: int, hmax: int) -> tuple:
        """Returns (DistIndex, SmallDist); memoized per weight profile."""
        if not (0 < b - a < self.W ** 4):
            raise ValueError("small-range distribution needs 0 < b - a < W^4")
        hmax = min(hmax, self.W - 1)
        prof = self.wf.profile_of(a, b)
        index = ("Small", prof.i, prof.j, prof.a_off, prof.b_off, n, hmax)
        dist = self._memo(index, lambda: SmallDist(self.wf, a, b, n, hmax))
        return index, dist

    # -- encoding -------------------------------------------------------------

    def failure_reason(self, keys):
        """Why this set needs failure mode, or None if it encodes normally."""
        floor = self.cfg.t_fail_eff
        seen = {}
        for x in keys:
            v = self.wf.weight(x)
            if v < floor:
                return f"weight {v} of key {x} is below the floor {floor}"
            if v in seen:
                return f"keys {seen[v]} and {x} tie at weight {v}"
            seen[v] = x
        return None

    def encode_info(self, keys, sub: SubproblemId) -> list:
        keys = sorted(keys)
        reason = self.failure_reason(keys)
        if reason is not None:
            raise FailureDetected(reason)
        out = []
        self._encode(keys, sub, out)
        return out

    def _pivot(self, keys):
        weights = [self.wf.weight(x) for x in keys]
        top = max(weights)
        if weights.count(top) > 1:
            raise FailureDetected("tied maximum weight")
        i = weights.index(top)
        return i, keys[i], top

    def _encode(self, keys, sub: SubproblemId, out) -> None:
        n, a, b, hmax = sub.n, sub.a, sub.b, sub.hmax
        assert len(keys) == n and all(a <= x < b for x in keys)
        if n == 0:
            return
        if b - a >= self.W ** 4:
            self._encode_wide(keys, sub, out)
        else:
            self._encode_narrow(keys, sub, out)

    def _emit(self, out, symbol, dist, prob: Fraction) -> None:
        if prob <= 0:
            raise FailureDetected("symbol outside its distribution support")
        out.append(Emission(symbol, dist, prob, cost_up_of(prob, self.F)))

    def _encode_wide(self, keys, sub, out) -> None:
        W = self.W
        n, hmax = sub.n, sub.hmax
        a_r = (sub.a // W) * W
        b_r = ((sub.b + W - 1) // W) * W
        lo_slot, hi_slot = a_r // W, b_r // W
        r_idx, p, v = self._pivot(keys)

        wpmf = self.dist_weight_td(n, hmax)
        self._emit(out, v, ("WeightTd", n, hmax), wpmf[v])
        self._emit(out, p // W, ("UniformRange", lo_slot, hi_slot),
                   Fraction(1, hi_slot - lo_slot))
        vl = _geom_or_zero(self.wf.count_valid(a_r, p, v - 1) if p > a_r else 0,
                           self.cfg.nmax)
        vr = _geom_or_zero(
            self.wf.count_valid(p + 1, b_r, v - 1) if p + 1 < b_r else 0,
            self.cfg.nmax)
        rpmf = self.dist_rank_td(n, vl, vr)
        self._emit(out, r_idx, ("RankTd", n, vl.t, vr.t), rpmf[r_idx])

        if p > a_r:
            self._encode(keys[:r_idx], SubproblemId(r_idx, a_r, p, v - 1), out)
        if p + 1 < b_r:
            self._encode(keys[r_idx + 1:],
                         SubproblemId(n - 1 - r_idx, p + 1, b_r, v - 1), out)

    def _encode_narrow(self, keys, sub, out) -> None:
        n, a, b, hmax = sub.n, sub.a, sub.b, sub.hmax
        r_idx, p, v = self._pivot(keys)
        index, dist = self.dist_small(a, b, n, hmax)
        self._emit(out, (p - a, r_idx), index, dist.prob(p - a, r_idx))
        if p > a:
            self._encode(keys[:r_idx], SubproblemId(r_idx, a, p, v - 1), out)
        if p + 1 < b:
            self._encode(keys[r_idx + 1:],
                         SubproblemId(n - 1 - r_idx, p + 1, b, v - 1), out)

    # -- decoding / audit (replay) ---------------------------------------------

    def decode_info(self, emissions, sub: SubproblemId):
        stream = iter(emissions)
        keys = []
        self._replay(sub, stream, keys, None)
        leftover = next(stream, None)
        if leftover is not None:
            raise ValueError("trailing emissions beyond the subproblem")
        return tuple(keys)

    def audit_subproblem(self, sub: SubproblemId, emissions) -> list:
        records = []
        stream = iter(emissions)
        keys = []
        self._replay(sub, stream, keys, records)
        return records

    def _take(self, stream, want_dist) -> Emission:
        em = next(stream, None)
        if em is None or em.dist != want_dist:
            raise ValueError(f"emission stream does not match {want_dist}")
        return em

    def _replay(self, sub: SubproblemId, stream, keys, records):
        n, a, b, hmax = sub.n, sub.a, sub.b, sub.hmax
        rec = None
        if records is not None:
            V = self.wf.count_valid(a, b, hmax) if b > a else 0
            rec = AuditRecord(sub, V, binom(V, n), Fraction(1),
                              BitCost.zero(self.F, UP))
            records.append(rec)
        if n == 0:
            return
        if b - a >= self.W ** 4:
            self._replay_wide(sub, stream, keys, records, rec)
        else:
            self._replay_narrow(sub, stream, keys, records, rec)

    def _absorb(self, rec: AuditRecord, em: Emission) -> None:
        if rec is not None:
            rec.inv_prob /= em.prob
            rec.cost_up = rec.cost_up + em.cost

    def _child(self, rec, records, child_sub, stream, keys):
        if rec is None:
            self._replay(child_sub, stream, keys, records)
            return
        mark = len(records)
        self._replay(child_sub, stream, keys, records)
        child = records[mark]
        rec.inv_prob *= child.inv_prob
        rec.cost_up = rec.cost_up + child.cost_up

    def _replay_wide(self, sub, stream, keys, records, rec):
        W = self.W
        n, hmax = sub.n, sub.hmax
        a_r = (sub.a // W) * W
        b_r = ((sub.b + W - 1) // W) * W
        lo_slot, hi_slot = a_r // W, b_r // W

        wpmf = self.dist_weight_td(n, hmax)
        em_v = self._take(stream, ("WeightTd", n, hmax))
        v = em_v.symbol
        if v == EMPTY:
            raise ValueError("the empty weight symbol marks corrupted input")
        if not isinstance(v, int) or not 0 <= v <= hmax or wpmf[v] != em_v.prob:
            raise ValueError("weight emission probability mismatch")
        self._absorb(rec, em_v)

        em_slot = self._take(stream, ("UniformRange", lo_slot, hi_slot))
        slot = em_slot.symbol
        if not lo_slot <= slot < hi_slot:
            raise ValueError("pivot slot outside the range")
        self._absorb(rec, em_slot)
        p = slot * W + self.wf.recover_low(slot, v)
        if not sub.a <= p < sub.b or self.wf.weight(p) != v:
            raise ValueError("recovered pivot is invalid")

        vl = _geom_or_zero(self.wf.count_valid(a_r, p, v - 1) if p > a_r else 0,
                           self.cfg.nmax)
        vr = _geom_or_zero(
            self.wf.count_valid(p + 1, b_r, v - 1) if p + 1 < b_r else 0,
            self.cfg.nmax)
        rpmf = self.dist_rank_td(n, vl, vr)
        em_r = self._take(stream, ("RankTd", n, vl.t, vr.t))
        r_idx = em_r.symbol
        if not (0 <= r_idx < n and rpmf[r_idx] == em_r.prob):
            raise ValueError("rank emission mismatch")
        self._absorb(rec, em_r)
        if rec is not None:
            exact = self._dist_rank_exact(
                n,
                self.wf.count_valid(a_r, p, v - 1) if p > a_r else 0,
                self.wf.count_valid(p + 1, b_r, v - 1) if p + 1 < b_r else 0,
                r_idx)
            rec.rank_penalty = (em_r.prob, exact)
            rec.range_penalty = (self.wf.count_valid(sub.a, sub.b, hmax),
                                 self.wf.count_valid(a_r, b_r, hmax))

        if p > a_r:
            self._child(rec, records, SubproblemId(r_idx, a_r, p, v - 1),
                        stream, keys)
        keys.append(p)
        if p + 1 < b_r:
            self._child(rec, records,
                        SubproblemId(n - 1 - r_idx, p + 1, b_r, v - 1),
                        stream, keys)

    def _dist_rank_exact(self, n, v_l, v_r, r) -> Fraction:
        return Fraction(binom(v_l, r) * binom(v_r, n - 1 - r),
                        binom(v_l + v_r, n - 1))

    def _replay_narrow(self, sub, stream, keys, records, rec):
        n, a, b, hmax = sub.n, sub.a, sub.b, sub.hmax
        index, dist = self.dist_small(a, b, n, hmax)
        em = self._take(stream, index)
        dp, r_idx = em.symbol
        if dist.prob(dp, r_idx) != em.prob or em.prob <= 0:
            raise ValueError("joint emission mismatch")
        self._absorb(rec, em)
        p = a + dp
        v = self.wf.weight(p)
        if p > a:
            self._child(rec, records, SubproblemId(r_idx, a, p, v - 1),
                        stream, keys)
        keys.append(p)
        if p + 1 < b:
            self._child(rec, records,
                        SubproblemId(n - 1 - r_idx, p + 1, b, v - 1),
                        stream, keys)

    # -- conveniences -----------------------------------------------------------

    def total_cost_up(self, emissions) -> BitCost:
        total = BitCost.zero(self.F, UP)
        for em in emissions:
            total = total + em.cost
        return total

    def total_inv_prob(self, emissions) -> Fraction:
        inv = Fraction(1)
        for em in emissions:
            inv /= em.prob
        return inv

    def full_universe_sub(self, n: int) -> SubproblemId:
        return SubproblemId(n, 0, self.cfg.U, self.W - 1)
