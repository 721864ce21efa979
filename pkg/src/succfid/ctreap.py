"""Compressed treap: canonical succinct storage of one key set.

A node's stored image is assembled from its children's images by three moves
whose output sizes a reader can predict before reading anything: an
entropy-coded rank (family keyed by the pivot), a uniform fold of the pivot's
position inside its weight class (sizes fixed by a class-wide space bound),
and an entropy-coded pivot weight (family keyed by the node's range).  The
rank output is first grown to a class-constant target so that members of one
weight class present identical sizes to the uniform fold.  Every capacity
claim is re-checked exactly during encoding, so a schedule shortfall raises
instead of corrupting state, and the finished bits are a pure function of
the stored set.

Sets that cannot take the treap shape (weight ties, weights under the floor,
or more keys than normal mode admits) are stored verbatim: small sets as
fixed-width offsets, larger ones by their index in the lexicographic
enumeration of n-subsets of the range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .coder import (
    CapacityViolation,
    DecodeError,
    EncoderFamily,
    FamilyRegistry,
    Member,
    int_from_words,
    size_adjust,
    size_unadjust,
    uniform_caps,
    uniform_decode,
    uniform_encode,
    words_from_int,
)
from .config import RunConfig
from .infomodel import EMPTY, InfoModel, _geom_or_zero
from .numeric import UP, BitCost, binom, log2_cost, round_up_geometric
from .sizefns import SizeFns
from .vm import SpillPair, VirtualMemory, spill_merge, spill_unmerge
from .weights import WeightFn

# Sortable stand-in for the weight pmf's normalizing remainder symbol; it is
# registered for capacity but decoding it means the bits were corrupted.
EMPTY_SYMBOL = -1

NORMAL, FAILURE = 0, 1

# Narrow subproblems with at most this many valid keys are sized by their
# exact encoded capacity instead of the ceil(C * 2^slack) schedule: at tiny
# scales a single capacity ceiling can cost a whole bit, which no per-key
# slack budget absorbs, while above the cutoff the relative rounding loss
# is under log2(1 + 1/64) bits and the schedule's margins cover it.
EXACT_SIZE_CUTOFF = 64

_MEMO_CAP = 1 << 20


# -- verbatim subset coding (failure mode) -------------------------------------


def subset_rank(offsets, span: int) -> int:
    """Index of a strictly ascending offset tuple among all n-subsets of
    [0, span), in lexicographic order."""
    n = len(offsets)
    z = 0
    lo = 0
    for i, x in enumerate(offsets):
        if not lo <= x < span:
            raise ValueError("offsets must be ascending and in range")
        # sets starting below x: hockey-stick telescoping of the column sums
        z += binom(span - lo, n - i) - binom(span - x, n - i)
        lo = x + 1
    return int(z)


def subset_unrank(z: int, span: int, n: int):
    """Inverse of subset_rank; z must lie below C(span, n)."""
    total = binom(span, n)
    if not 0 <= z < total:
        raise DecodeError("subset index out of range")
    out = []
    lo = 0
    for i in range(n):
        head = binom(span - lo, n - i)
        # largest x with head - C(span - x, n - i) <= z
        a, b = lo, span - (n - i)
        while a < b:
            mid = (a + b + 1) // 2
            if head - binom(span - mid, n - i) <= z:
                a = mid
            else:
                b = mid - 1
        z -= int(head - binom(span - a, n - i))
        out.append(a)
        lo = a + 1
    assert z == 0
    return tuple(out)


# -- shared codec context -------------------------------------------------------


@dataclass
class CodecContext:
    """Weight tables, distributions, size schedule, and family cache shared
    by every tree over one configuration."""

    cfg: RunConfig
    wf: WeightFn
    im: InfoModel
    sf: SizeFns
    registry: FamilyRegistry
    stats: dict = field(default_factory=lambda: {
        "node_encodes": 0, "node_decodes": 0, "walk_opens": 0,
        "set_encodes": 0, "mode_flips": 0,
    })
    size_memo: dict = field(default_factory=dict)


def make_context(cfg: RunConfig, registry_cap: int = 1 << 20) -> CodecContext:
    wf = WeightFn(cfg)
    return CodecContext(cfg, wf, InfoModel(cfg, wf), SizeFns(cfg),
                        FamilyRegistry(registry_cap))


def _exact_or_q(key, q, members, w, c_spill, F):
    """Narrow families carry their exact capacity sum when it fits the
    transient spill cap, falling back to the quantized split otherwise."""
    try:
        return EncoderFamily(key, None, members, w, c_spill=c_spill, F=F)
    except CapacityViolation:
        return EncoderFamily(key, q, members, w, c_spill=c_spill, F=F)


# -- the tree -------------------------------------------------------------------


class CTreap:
    """One canonically stored set over [a, b) within a configuration.

    Updates decode the set, modify it, and re-encode from scratch; queries
    walk the stored image, opening one node per level.
    """

    def __init__(self, cfg: RunConfig, keys=(), a: int = 0, b=None,
                 ctx: CodecContext = None):
        self.cfg = cfg
        self.ctx = ctx if ctx is not None else make_context(cfg)
        if self.ctx.cfg is not cfg and self.ctx.cfg != cfg:
            raise ValueError("context built for a different configuration")
        self.a = a
        self.b = cfg.U if b is None else b
        if not 0 <= self.a < self.b <= cfg.U:
            raise ValueError("range must be a nonempty window of the universe")
        ks = sorted(set(keys))
        if ks and not (self.a <= ks[0] and ks[-1] < self.b):
            raise ValueError("keys outside the tree's range")
        self._keys = tuple(ks)
        self._store(self._keys)

    # -- public surface ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self):
        return iter(self._keys)

    def keys(self) -> tuple:
        return self._keys

    def __contains__(self, x: int) -> bool:
        if not self.a <= x < self.b:
            return False
        return self.rank(x + 1) - self.rank(x) == 1

    def insert(self, x: int) -> bool:
        if not self.a <= x < self.b:
            raise ValueError("key outside the tree's range")
        if x in set(self._keys):
            return False
        ks = tuple(sorted(self._keys + (x,)))
        self._store(ks)
        self._keys = ks
        return True

    def delete(self, x: int) -> bool:
        if x not in set(self._keys):
            return False
        ks = tuple(k for k in self._keys if k != x)
        self._store(ks)
        self._keys = ks
        return True

    def rank(self, x: int) -> int:
        """Number of stored keys strictly below x, read from the bits."""
        if self.mode == FAILURE:
            keys = self._decode_failure()
            return sum(1 for k in keys if k < x)
        return self._rank_walk(self._pair(), len(self._keys),
                               self.a, self.b, self.cfg.W - 1, x)

    def select(self, i: int) -> int:
        if not 0 <= i < len(self._keys):
            raise IndexError("selection index out of range")
        if self.mode == FAILURE:
            return self._decode_failure()[i]
        return self._select_walk(self._pair(), len(self._keys),
                                 self.a, self.b, self.cfg.W - 1, i)

    def depth(self) -> int:
        """Longest root-to-key path in the stored shape (failure mode: 1)."""
        if not self._keys:
            return 0
        if self.mode == FAILURE:
            return 1
        return self._depth_walk(self._pair(), len(self._keys),
                                self.a, self.b, self.cfg.W - 1)

    def decode_keys(self) -> tuple:
        """Re-derive the set from the stored bits (not the cached mirror)."""
        if self.mode == FAILURE:
            return self._decode_failure()
        out = []
        self._decode_node(self._pair(), len(self._keys),
                          self.a, self.b, self.cfg.W - 1, out)
        return tuple(out)

    # -- storage lifecycle -------------------------------------------------------

    def _store(self, ks: tuple) -> None:
        mode = self._mode_for(ks)
        if getattr(self, "mode", mode) != mode:
            self.ctx.stats["mode_flips"] += 1
        self.mode = mode
        if mode == FAILURE:
            words, k, K = self._encode_failure(ks)
        elif ks:
            pair = self._encode_node(list(ks), len(ks), self.a, self.b,
                                     self.cfg.W - 1)
            words, k, K = pair.vm.words_tuple(), pair.k, pair.K
        else:
            words, k, K = (), 0, 1
        self._words, self._k, self._K = tuple(words), k, K
        self.ctx.stats["set_encodes"] += 1

    def _mode_for(self, ks) -> int:
        cfg = self.cfg
        if len(ks) > min(cfg.nmax, cfg.W):
            return FAILURE
        return NORMAL if self.ctx.im.failure_reason(ks) is None else FAILURE

    def _pair(self) -> SpillPair:
        return SpillPair(VirtualMemory(self.cfg.w, self._words),
                         self._k, self._K)

    def _trivial(self) -> SpillPair:
        return SpillPair(VirtualMemory(self.cfg.w), 0, 1)

    # -- size schedule ------------------------------------------------------------

    def _wide(self, a: int, b: int) -> bool:
        return b - a >= self.cfg.superchunk

    def _aligned(self, a: int, b: int):
        W = self.cfg.W
        a_r = (a // W) * W
        b_r = ((b + W - 1) // W) * W
        return a_r, b_r, a_r // W, b_r // W

    def _stored(self, n: int, a: int, b: int, hmax: int):
        """Declared (M, K) of a subproblem, as its parent and readers see it."""
        if n == 0:
            return 0, 1
        memo = self.ctx.size_memo
        key = ("SD", n, a, b, hmax)
        got = memo.get(key)
        if got is None:
            got = self._stored_fresh(n, a, b, hmax)
            if len(memo) > _MEMO_CAP:
                memo.clear()
            memo[key] = got
        if got == ():
            raise ValueError("stored class admits no members")
        return got

    def _stored_fresh(self, n: int, a: int, b: int, hmax: int):
        sf, wf = self.ctx.sf, self.ctx.wf
        if self._wide(a, b):
            a_r, b_r, _, _ = self._aligned(a, b)
            t = round_up_geometric(wf.count_valid(a_r, b_r, hmax),
                                   self.cfg.nmax).t
            return sf.stored_large(n, t)
        V = wf.count_valid(a, b, hmax)
        if V > EXACT_SIZE_CUTOFF:
            return sf.stored_small(n, V)
        z = self._narrow_capacity(n, a, b, hmax)
        if z == 0:
            return ()  # remembered as "no tie-free member exists"
        # settle into the word grid (same floor rule as the schedule)
        w, n2 = self.cfg.w, self.cfg.nmax * self.cfg.nmax
        M = 0
        while n2 << (w * (M + 1)) <= z:
            M += 1
        return M, -(-z >> (w * M)) if M else z

    def _narrow_capacity(self, n: int, a: int, b: int, hmax: int) -> int:
        """Exact total capacity a narrow node emits: the weight family's
        capacity sum, with every per-weight branch at its uniform-fold size."""
        wf = self.ctx.wf
        prof = wf.profile_of(a, b)
        key = ("NC", prof.i, prof.j, prof.a_off, prof.b_off, n, hmax)
        memo = self.ctx.size_memo
        if key not in memo:
            cnt = wf.class_counts(a, b, hmax)
            below = 0
            z = 0
            for v in range(len(cnt)):
                ways = cnt[v] * binom(below, n - 1)
                if ways:
                    m_t, k_t = self._narrow_target(n, a, b, hmax, v, below)
                    if k_t:
                        mm, km = uniform_caps(self._class_bound(m_t, k_t),
                                              self.cfg.w)
                        z += cnt[v] * (km << (self.cfg.w * mm))
                below += cnt[v]
            if len(memo) > _MEMO_CAP:
                memo.clear()
            memo[key] = z
        return memo[key]

    def _narrow_rank_cap(self, n: int, a: int, b: int, v: int) -> int:
        """Largest exact rank-family capacity over the pivots of one weight
        class; the class-constant rank move lands every pivot inside it."""
        wf, w = self.ctx.wf, self.cfg.w
        prof = wf.profile_of(a, b)
        key = ("NR", prof.i, prof.j, prof.a_off, prof.b_off, n, v)
        memo = self.ctx.size_memo
        if key not in memo:
            best = 0
            for p in wf.class_members(a, b, v):
                vl = wf.count_valid(a, p, v - 1) if p > a else 0
                vr = wf.count_valid(p + 1, b, v - 1) if p + 1 < b else 0
                z = 0
                for r in range(n):
                    if binom(vl, r) * binom(vr, n - 1 - r) == 0:
                        continue
                    left = self._stored_if_realizable(r, a, p, v - 1)
                    right = self._stored_if_realizable(n - 1 - r, p + 1, b,
                                                       v - 1)
                    if left is None or right is None:
                        continue
                    z += (left[1] << (w * left[0])) * (right[1] << (w * right[0]))
                best = max(best, z)
            if len(memo) > _MEMO_CAP:
                memo.clear()
            memo[key] = best
        return memo[key]

    def _stored_if_realizable(self, n, a, b, hmax):
        """Stored sizes, or None when no tie-free set inhabits the class
        (every candidate arrangement repeats a weight somewhere)."""
        try:
            return self._stored(n, a, b, hmax)
        except ValueError:
            return None

    def _target(self, n: int, x: int):
        return (0, 1) if n <= 1 else self.ctx.sf.rank_target(n, x)

    def _narrow_target(self, n, a, b, hmax, v, x_v):
        """Rank-move landing class for a narrow node, keyed by weight only;
        (0, 0) signals a weight class no tie-free set realizes."""
        if n <= 1:
            return 0, 1
        if self.ctx.wf.count_valid(a, b, hmax) <= EXACT_SIZE_CUTOFF:
            return 0, self._narrow_rank_cap(n, a, b, v)
        return self.ctx.sf.rank_target(n, x_v)

    def _class_bound(self, m_t: int, k_t: int) -> BitCost:
        return self.ctx.sf.space_cost(m_t, k_t, UP)

    # -- families -------------------------------------------------------------------

    def _rank_family_wide(self, n, a_r, b_r, p, v):
        ctx = self.ctx
        key = ("R", n, a_r, b_r, p)

        def build():
            nmax = self.cfg.nmax
            vl = _geom_or_zero(
                ctx.wf.count_valid(a_r, p, v - 1) if p > a_r else 0, nmax)
            vr = _geom_or_zero(
                ctx.wf.count_valid(p + 1, b_r, v - 1) if p + 1 < b_r else 0,
                nmax)
            rpmf = ctx.im.dist_rank_td(n, vl, vr)
            members = []
            for r, d in enumerate(rpmf):
                if d <= 0:
                    continue
                ml, kl = self._stored(r, a_r, p, v - 1)
                mr, kr = self._stored(n - 1 - r, p + 1, b_r, v - 1)
                members.append(Member(r, ml + mr, kl * kr, d))
            return EncoderFamily(key, self.cfg.q, members, self.cfg.w,
                                 c_spill=self.cfg.c_spill, F=self.cfg.F)

        return ctx.registry.get(key, build)

    def _rank_family_narrow(self, n, a, b, p):
        ctx = self.ctx
        prof = ctx.wf.profile_of(a, b)
        key = ("RX", prof.i, prof.j, prof.a_off, prof.b_off, n, p - a)

        def build():
            v = ctx.wf.weight(p)
            v_l = ctx.wf.count_valid(a, p, v - 1) if p > a else 0
            v_r = ctx.wf.count_valid(p + 1, b, v - 1) if p + 1 < b else 0
            # hypergeometric over the splits that some tie-free set realizes
            parts = []
            for r in range(n):
                num = binom(v_l, r) * binom(v_r, n - 1 - r)
                if num == 0:
                    continue
                left = self._stored_if_realizable(r, a, p, v - 1)
                right = self._stored_if_realizable(n - 1 - r, p + 1, b, v - 1)
                if left is None or right is None:
                    continue
                parts.append((r, left[0] + right[0], left[1] * right[1], num))
            denom = sum(num for *_, num in parts)
            members = [Member(r, m, k, Fraction(num, denom))
                       for r, m, k, num in parts]
            return _exact_or_q(key, self.cfg.q, members, self.cfg.w,
                               self.cfg.c_spill, self.cfg.F)

        return ctx.registry.get(key, build)

    def _weight_family_wide(self, n, a_r, b_r, ell, hmax):
        ctx = self.ctx
        key = ("W", n, a_r, b_r, hmax)

        def build():
            wpmf = ctx.im.dist_weight_td(n, hmax)
            members = []
            for v in range(hmax + 1):
                d = wpmf[v]
                if d <= 0:
                    continue
                mm, km = self._uniform_sizes(n, ctx.sf.count_ceiling((ell + 1) * v))
                members.append(Member(v, mm, km * ell, d))
            d_rem = wpmf[EMPTY]
            if d_rem > 0:
                # capacity stand-in only: borrow the smallest member's sizes
                # so the family's word floor is unaffected
                lean = min(members, key=lambda m: (m.M_in, m.K_in))
                members.append(Member(EMPTY_SYMBOL, lean.M_in, lean.K_in, d_rem))
            return EncoderFamily(key, self.cfg.q, members, self.cfg.w,
                                 c_spill=self.cfg.c_spill, F=self.cfg.F)

        return ctx.registry.get(key, build)

    def _weight_family_narrow(self, n, a, b, hmax, cnt):
        ctx = self.ctx
        prof = ctx.wf.profile_of(a, b)
        key = ("SW", prof.i, prof.j, prof.a_off, prof.b_off, n, hmax)

        def build():
            below = 0
            parts = []
            for v in range(len(cnt)):
                ways = cnt[v] * binom(below, n - 1)
                if ways:
                    m_t, k_t = self._narrow_target(n, a, b, hmax, v, below)
                    if k_t:  # weight classes no tie-free set realizes drop out
                        parts.append((v, m_t, k_t, ways))
                below += cnt[v]
            norm = sum(ways for *_, ways in parts)
            members = []
            for v, m_t, k_t, ways in parts:
                mm, km = uniform_caps(self._class_bound(m_t, k_t), self.cfg.w)
                members.append(Member(v, mm, km * cnt[v], Fraction(ways, norm)))
            return _exact_or_q(key, self.cfg.q, members, self.cfg.w,
                               self.cfg.c_spill, self.cfg.F)

        return ctx.registry.get(key, build)

    def _uniform_sizes(self, n, x):
        """Output sizes of the uniform fold for one wide weight class (before
        the slot factor): a function of the class's rank target alone."""
        m_t, k_t = self._target(n, x)
        return uniform_caps(self._class_bound(m_t, k_t), self.cfg.w)

    # -- node encode ------------------------------------------------------------------

    def _encode_node(self, keys, n, a, b, hmax) -> SpillPair:
        if n == 0:
            return self._trivial()
        self.ctx.stats["node_encodes"] += 1
        wf = self.ctx.wf
        weights = [wf.weight(x) for x in keys]
        v = max(weights)
        r_idx = weights.index(v)
        p = keys[r_idx]

        if self._wide(a, b):
            a0, b0, lo, hi = self._aligned(a, b)
            span_lo, span_hi, idx = lo, hi, p // self.cfg.W
            m_t, k_t = self._target(n, self.ctx.sf.count_ceiling((hi - lo + 1) * v))
        else:
            a0, b0 = a, b
            cnt = wf.class_counts(a, b, hmax)
            span_lo, span_hi = 0, cnt[v]
            idx = wf.class_rank(a, b, p)
            m_t, k_t = self._narrow_target(n, a, b, hmax, v,
                                           wf.count_valid(a, b, v - 1))

        pl = self._encode_node(keys[:r_idx], r_idx, a0, p, v - 1)
        pr = self._encode_node(keys[r_idx + 1:], n - 1 - r_idx, p + 1, b0, v - 1)
        k_cat, K_cat = spill_merge(pl.k, pl.K, pr.k, pr.K)
        pair = SpillPair(
            VirtualMemory(self.cfg.w, pl.vm.words_tuple() + pr.vm.words_tuple()),
            k_cat, K_cat)

        if n >= 2:
            fam = (self._rank_family_wide(n, a0, b0, p, v) if self._wide(a, b)
                   else self._rank_family_narrow(n, a0, b0, p))
            pair = fam.encode(r_idx, pair)
            pair = size_adjust(pair, m_t, k_t)

        pair = uniform_encode(pair, span_lo, span_hi, idx,
                              self._class_bound(m_t, k_t))
        wfam = (self._weight_family_wide(n, a0, b0, hi - lo, hmax)
                if self._wide(a, b)
                else self._weight_family_narrow(n, a0, b0, hmax, cnt))
        pair = wfam.encode(v, pair)
        return size_adjust(pair, *self._stored(n, a, b, hmax))

    # -- node decode --------------------------------------------------------------------

    def _open_node(self, pair, n, a, b, hmax):
        """Undo one node's three moves; returns the pivot and, for n >= 2,
        the children's stored pairs and subproblems."""
        self.ctx.stats["walk_opens"] += 1
        wf, cfg = self.ctx.wf, self.cfg
        if (pair.vm.M, pair.K) != self._stored(n, a, b, hmax):
            raise DecodeError("pair does not match the node's declared sizes")

        wide = self._wide(a, b)
        if wide:
            a0, b0, lo, hi = self._aligned(a, b)
            wfam = self._weight_family_wide(n, a0, b0, hi - lo, hmax)
        else:
            a0, b0 = a, b
            cnt = wf.class_counts(a, b, hmax)
            wfam = self._weight_family_narrow(n, a0, b0, hmax, cnt)

        pw = size_unadjust(pair, wfam.M_out, wfam.K_out)
        v, pu = wfam.decode(pw)
        if not isinstance(v, int) or v < 0:
            raise DecodeError("weight remainder symbol marks corrupted bits")

        if wide:
            span_lo, span_hi = lo, hi
            m_t, k_t = self._target(n, self.ctx.sf.count_ceiling((hi - lo + 1) * v))
        else:
            span_lo, span_hi = 0, cnt[v]
            m_t, k_t = self._narrow_target(n, a, b, hmax, v,
                                           wf.count_valid(a, b, v - 1))
        idx, pt = uniform_decode(pu, span_lo, span_hi,
                                 self._class_bound(m_t, k_t), m_t, k_t)

        if wide:
            p = idx * cfg.W + wf.recover_low(idx, v)
        else:
            p = wf.class_select(a, b, v, idx)
        if not (a <= p < b and wf.weight(p) == v):
            raise DecodeError("recovered pivot is invalid")

        if n == 1:
            return v, p, 0, None, None, None, None

        fam = (self._rank_family_wide(n, a0, b0, p, v) if wide
               else self._rank_family_narrow(n, a0, b0, p))
        pr_ = size_unadjust(pt, fam.M_out, fam.K_out)
        r_idx, pcat = fam.decode(pr_)

        ml, kl = self._stored(r_idx, a0, p, v - 1)
        mr, kr = self._stored(n - 1 - r_idx, p + 1, b0, v - 1)
        if pcat.vm.M != ml + mr or pcat.K != kl * kr:
            raise DecodeError("concatenation does not match the children")
        words = pcat.vm.words_tuple()
        k_l, k_r = spill_unmerge(pcat.k, kl, kr)
        left = SpillPair(VirtualMemory(cfg.w, words[:ml]), k_l, kl)
        right = SpillPair(VirtualMemory(cfg.w, words[ml:]), k_r, kr)
        return (v, p, r_idx,
                (r_idx, a0, p, v - 1), left,
                (n - 1 - r_idx, p + 1, b0, v - 1), right)

    def _decode_node(self, pair, n, a, b, hmax, out) -> None:
        if n == 0:
            if pair.vm.M or pair.k or pair.K != 1:
                raise DecodeError("an empty subproblem must store nothing")
            return
        self.ctx.stats["node_decodes"] += 1
        v, p, r_idx, lspec, pl, rspec, pr = self._open_node(pair, n, a, b, hmax)
        if n == 1:
            out.append(p)
            return
        self._decode_node(pl, *lspec, out)
        out.append(p)
        self._decode_node(pr, *rspec, out)

    # -- query walks -----------------------------------------------------------------------

    def _rank_walk(self, pair, n, a, b, hmax, x) -> int:
        if n == 0 or x <= a:
            return 0
        if x >= b:
            return n
        v, p, r_idx, lspec, pl, rspec, pr = self._open_node(pair, n, a, b, hmax)
        if n == 1:
            return 1 if p < x else 0
        if x <= p:
            return self._rank_walk(pl, *lspec, x)
        return r_idx + 1 + self._rank_walk(pr, *rspec, x)

    def _select_walk(self, pair, n, a, b, hmax, i) -> int:
        v, p, r_idx, lspec, pl, rspec, pr = self._open_node(pair, n, a, b, hmax)
        if i == r_idx:
            return p
        if i < r_idx:
            return self._select_walk(pl, *lspec, i)
        return self._select_walk(pr, *rspec, i - r_idx - 1)

    def _depth_walk(self, pair, n, a, b, hmax) -> int:
        if n == 0:
            return 0
        v, p, r_idx, lspec, pl, rspec, pr = self._open_node(pair, n, a, b, hmax)
        if n == 1:
            return 1
        return 1 + max(self._depth_walk(pl, *lspec),
                       self._depth_walk(pr, *rspec))

    # -- failure mode ----------------------------------------------------------------------

    def _failure_combinatorial(self, n: int) -> bool:
        """Enumerative coding wins whenever it is strictly smaller; both
        sides of the wire can evaluate this from (n, range) alone."""
        span = self.b - self.a
        comb = (int(binom(span, n)) - 1).bit_length()
        return comb < n * (span - 1).bit_length()

    def _failure_bits(self, n: int) -> int:
        span = self.b - self.a
        if self._failure_combinatorial(n):
            return (int(binom(span, n)) - 1).bit_length()
        return n * (span - 1).bit_length()

    def _encode_failure(self, ks):
        w = self.cfg.w
        n = len(ks)
        span = self.b - self.a
        if self._failure_combinatorial(n):
            z = subset_rank([x - self.a for x in ks], span)
        else:
            kb = (span - 1).bit_length()
            z = 0
            for i, x in enumerate(ks):
                z |= (x - self.a) << (i * kb)
        bits = self._failure_bits(n)
        m_f = bits // w
        words = words_from_int(z & ((1 << (w * m_f)) - 1), m_f, w)
        return words, z >> (w * m_f), 1 << (bits % w)

    def _decode_failure(self) -> tuple:
        w = self.cfg.w
        n = len(self._keys)
        span = self.b - self.a
        z = int_from_words(list(self._words), w) | (self._k << (w * len(self._words)))
        if self._failure_combinatorial(n):
            offs = subset_unrank(z, span, n)
        else:
            kb = (span - 1).bit_length()
            mask = (1 << kb) - 1
            offs = tuple((z >> (i * kb)) & mask for i in range(n))
            if any(o >= span for o in offs) or \
                    any(x >= y for x, y in zip(offs, offs[1:])):
                raise DecodeError("verbatim offsets must ascend within range")
        return tuple(self.a + o for o in offs)

    # -- space accounting ---------------------------------------------------------------------

    def stored_image(self) -> tuple:
        """Physical truth of this set: (payload words, spill value, spill universe)."""
        return self._words, self._k, self._K

    def payload_bits(self) -> int:
        return self.cfg.w * len(self._words) + (self._K - 1).bit_length()

    def total_bits(self) -> int:
        return 4 * self.cfg.w + self.payload_bits()

    def space_report(self) -> dict:
        n = len(self._keys)
        span = self.b - self.a
        ideal = (log2_cost(binom(span, n), self.cfg.F, UP).to_float()
                 if 0 < n <= span else 0.0)
        pay = self.payload_bits()
        return {
            "n": n,
            "mode": "failure" if self.mode == FAILURE else "normal",
            "words": len(self._words),
            "spill_bits": (self._K - 1).bit_length(),
            "payload_bits": pay,
            "header_bits": 4 * self.cfg.w,
            "ideal_bits": ideal,
            "slack_per_key": (pay - ideal) / n if n else 0.0,
            "registry_families": len(self.ctx.registry),
        }

    # -- serialization -----------------------------------------------------------------------

    def to_bytes(self) -> bytes:
        w = self.cfg.w
        if w % 8:
            raise ValueError("serialization needs a byte-aligned word size")
        wb = w // 8
        mask = (1 << w) - 1
        u1 = self.cfg.U - 1
        head = [len(self._keys), self.mode, u1 & mask, u1 >> w]
        out = bytearray()
        for word in head + list(self._words):
            out += word.to_bytes(wb, "little")
        sb = self._spill_bytes(self._K)
        out += self._k.to_bytes(sb, "big")
        return bytes(out)

    @staticmethod
    def _spill_bytes(K: int) -> int:
        return ((K - 1).bit_length() + 7) // 8 if K > 1 else 0

    @classmethod
    def from_bytes(cls, cfg: RunConfig, data: bytes, a: int = 0, b=None,
                   ctx: CodecContext = None) -> "CTreap":
        if cfg.w % 8:
            raise ValueError("serialization needs a byte-aligned word size")
        wb = cfg.w // 8
        if len(data) < 4 * wb:
            raise DecodeError("truncated header")
        head = [int.from_bytes(data[i * wb:(i + 1) * wb], "little")
                for i in range(4)]
        n, mode, u_lo, u_hi = head
        if (u_hi << cfg.w) | u_lo != cfg.U - 1:
            raise DecodeError("universe size does not match the configuration")
        if mode not in (NORMAL, FAILURE):
            raise DecodeError("unknown storage mode")

        tree = cls.__new__(cls)
        tree.cfg = cfg
        tree.ctx = ctx if ctx is not None else make_context(cfg)
        tree.a, tree.b = a, cfg.U if b is None else b
        if not 0 <= tree.a < tree.b <= cfg.U:
            raise DecodeError("range must be a nonempty window of the universe")
        if n > tree.b - tree.a:
            raise DecodeError("set larger than its range")
        tree.mode = mode
        tree._keys = (None,) * n  # length is needed by the decoders below

        if mode == NORMAL:
            if n > min(cfg.nmax, cfg.W):
                raise DecodeError("normal mode cannot hold this many keys")
            try:
                M, K = (tree._stored(n, tree.a, tree.b, cfg.W - 1)
                        if n else (0, 1))
            except ValueError:
                raise DecodeError("set larger than its class admits") from None
        else:
            bits = tree._failure_bits(n)
            M, K = bits // cfg.w, 1 << (bits % cfg.w)
        sb = cls._spill_bytes(K)
        if len(data) != (4 + M) * wb + sb:
            raise DecodeError("payload length does not match the declared sizes")
        tree._words = tuple(
            int.from_bytes(data[(4 + i) * wb:(5 + i) * wb], "little")
            for i in range(M))
        tree._k = int.from_bytes(data[(4 + M) * wb:], "big")
        tree._K = K
        if not tree._k < K:
            raise DecodeError("spill value outside its universe")

        keys = tree.decode_keys()
        tree._keys = keys
        if len(keys) != n or tree._mode_for(keys) != mode:
            raise DecodeError("stored bits are not the canonical encoding")
        image = tree._words, tree._k, tree._K
        tree._store(keys)
        if (tree._words, tree._k, tree._K) != image:
            raise DecodeError("stored bits are not the canonical encoding")
        return tree
