"""Tabulation weight function: h(x) = A_{f(xhigh)}[xmid*W + xlow].

Each aligned run of W keys (a subchunk) gets a seeded permutation of [W] as its
weights, so weights inside a subchunk are pairwise distinct and every weight
class has exactly one member per subchunk.  The auxiliary arrays A_i are never
materialized: the permutation for (array index, subchunk slot) is generated
lazily from the master seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import gmpy2

from .config import RunConfig

_PERM_MEMO_CAP = 1 << 18


@dataclass(frozen=True)
class KeyParts:
    xhigh: int
    xmid: int
    xlow: int
    W: int

    @property
    def xhighmid(self) -> int:
        return self.xhigh * self.W ** 3 + self.xmid

    @property
    def xmidlow(self) -> int:
        return self.xmid * self.W + self.xlow

    def recompose(self) -> int:
        return self.xhigh * self.W ** 4 + self.xmid * self.W + self.xlow


@dataclass(frozen=True)
class ProfileTuple:
    i: int
    j: int
    a_off: int
    b_off: int


class WeightFn:
    """Deterministic weight oracle for one (seed, W, A_count, U) choice."""

    def __init__(self, cfg: RunConfig):
        self.W = cfg.W
        self.A_count = cfg.a_count
        self.seed = cfg.seed
        self.Umax = cfg.U
        self.domain_top = cfg.domain_top
        n_super = max(2, cfg.domain_top // cfg.superchunk + 1)
        self.P = int(gmpy2.next_prime(max(n_super, self.A_count, 1 << 16)))
        rng = random.Random(f"wf-{self.seed}-{self.W}-{self.A_count}")
        self.alpha = rng.randrange(1, self.P)
        self.beta = rng.randrange(self.P)
        self._perms: dict = {}
        self._f_memo: dict = {}
        self._w_memo: dict = {}
        self._cv_memo: dict = {}
        self._cc_memo: dict = {}

    # -- key pieces ---------------------------------------------------------

    def decompose(self, x: int) -> KeyParts:
        if not 0 <= x < self.domain_top:
            raise ValueError(f"key {x} outside weight domain [0, {self.domain_top})")
        W = self.W
        xlow = x % W
        xmid = (x // W) % W ** 3
        xhigh = x // W ** 4
        return KeyParts(xhigh, xmid, xlow, W)

    def f(self, xhigh: int) -> int:
        got = self._f_memo.get(xhigh)
        if got is None:
            got = ((self.alpha * xhigh + self.beta) % self.P) % self.A_count
            if len(self._f_memo) > _PERM_MEMO_CAP:
                self._f_memo.clear()
            self._f_memo[xhigh] = got
        return got

    def _perm(self, idx: int, slot: int):
        """Permutation (and inverse) of [W] for array idx, subchunk slot."""
        key = (idx, slot)
        got = self._perms.get(key)
        if got is None:
            rng = random.Random(f"perm-{self.seed}-{idx}-{slot}")
            p = list(range(self.W))
            rng.shuffle(p)
            inv = [0] * self.W
            for pos, val in enumerate(p):
                inv[val] = pos
            got = (tuple(p), tuple(inv))
            if len(self._perms) > _PERM_MEMO_CAP:
                self._perms.clear()
            self._perms[key] = got
        return got

    def weight(self, x: int) -> int:
        got = self._w_memo.get(x)
        if got is None:
            if not 0 <= x < self.domain_top:
                raise ValueError(
                    f"key {x} outside weight domain [0, {self.domain_top})")
            W = self.W
            perm, _ = self._perm(self.f(x // W ** 4), (x // W) % W ** 3)
            got = perm[x % W]
            if len(self._w_memo) > _PERM_MEMO_CAP:
                self._w_memo.clear()
            self._w_memo[x] = got
        return got

    def recover_low(self, xhighmid: int, hval: int) -> int:
        """The unique xlow with weight(xhighmid*W + xlow) = hval."""
        W3 = self.W ** 3
        _, inv = self._perm(self.f(xhighmid // W3), xhighmid % W3)
        return inv[hval]

    # -- range statistics (all O(W) via the permutation structure) ----------

    def _scan_count(self, a: int, b: int, hmax: int) -> int:
        return sum(1 for x in range(a, b) if self.weight(x) <= hmax)

    def count_valid(self, a: int, b: int, hmax: int) -> int:
        """#{x in [a,b) : h(x) <= hmax}, exact."""
        if a > b:
            raise ValueError("empty range reversed")
        if a == b:
            return 0
        if hmax >= self.W - 1:
            return b - a
        if hmax < 0:
            return 0
        got = self._cv_memo.get((a, b, hmax))
        if got is None:
            W = self.W
            head_end = min(b, ((a + W - 1) // W) * W)
            tail_start = max(head_end, (b // W) * W)
            full = (tail_start - head_end) // W
            got = (full * (hmax + 1)
                   + self._scan_count(a, head_end, hmax)
                   + self._scan_count(tail_start, b, hmax))
            if len(self._cv_memo) > _PERM_MEMO_CAP:
                self._cv_memo.clear()
            self._cv_memo[(a, b, hmax)] = got
        return got

    def class_counts(self, a: int, b: int, hmax: int):
        """cnt[v] = #{x in [a,b): h(x) = v} for v in [0, hmax]."""
        hmax = min(hmax, self.W - 1)
        got = self._cc_memo.get((a, b, hmax))
        if got is None:
            W = self.W
            cnt = [0] * (hmax + 1)
            head_end = min(b, ((a + W - 1) // W) * W)
            tail_start = max(head_end, (b // W) * W)
            full = (tail_start - head_end) // W
            for v in range(hmax + 1):
                cnt[v] = full
            for x in range(a, head_end):
                v = self.weight(x)
                if v <= hmax:
                    cnt[v] += 1
            for x in range(tail_start, b):
                v = self.weight(x)
                if v <= hmax:
                    cnt[v] += 1
            got = tuple(cnt)
            if len(self._cc_memo) > _PERM_MEMO_CAP:
                self._cc_memo.clear()
            self._cc_memo[(a, b, hmax)] = got
        return got

    def class_members(self, a: int, b: int, v: int) -> list:
        """Every key in [a,b) with weight exactly v, ascending."""
        if not 0 <= v < self.W:
            return []
        W = self.W
        head_end = min(b, ((a + W - 1) // W) * W)
        tail_start = max(head_end, (b // W) * W)
        out = [x for x in range(a, head_end) if self.weight(x) == v]
        for s in range(head_end // W, tail_start // W):
            inv = self._perm(self.f((s * W) // W ** 4), s % W ** 3)[1]
            out.append(s * W + inv[v])
        out.extend(x for x in range(tail_start, b) if self.weight(x) == v)
        return out

    def class_select(self, a: int, b: int, v: int, j: int) -> int:
        """The j-th smallest key in [a,b) with weight exactly v."""
        W = self.W
        head_end = min(b, ((a + W - 1) // W) * W)
        tail_start = max(head_end, (b // W) * W)
        for x in range(a, head_end):
            if self.weight(x) == v:
                if j == 0:
                    return x
                j -= 1
        n_full = (tail_start - head_end) // W
        if j < n_full:
            s = head_end // W + j
            kp_high = (s * W) // W ** 4
            return s * W + self._perm(self.f(kp_high), s % self.W ** 3)[1][v]
        j -= n_full
        for x in range(tail_start, b):
            if self.weight(x) == v:
                if j == 0:
                    return x
                j -= 1
        raise IndexError("class member index out of range")

    def class_rank(self, a: int, b: int, p: int) -> int:
        """Rank of key p among keys of its own weight class within [a,b)."""
        v = self.weight(p)
        W = self.W
        head_end = min(b, ((a + W - 1) // W) * W)
        tail_start = max(head_end, (b // W) * W)
        if p < head_end or p >= tail_start:
            # count directly: members below p in head (plus fulls/tail if needed)
            r = sum(1 for x in range(a, min(p, head_end)) if self.weight(x) == v)
            if p >= tail_start:
                r += (tail_start - head_end) // W
                r += sum(1 for x in range(tail_start, p) if self.weight(x) == v)
            return r
        r = sum(1 for x in range(a, head_end) if self.weight(x) == v)
        return r + (p // W - head_end // W)

    # -- small-universe profile ---------------------------------------------

    def profile_of(self, a: int, b: int) -> ProfileTuple:
        SC = self.W ** 4
        if not b - a < SC:
            raise ValueError("profile ranges must span less than one superchunk")
        if a >= b:
            raise ValueError("empty range")
        base = a // SC
        return ProfileTuple(self.f(base), self.f(base + 1), a % SC, a % SC + (b - a))

    def array_entry(self, idx: int, t: int) -> int:
        """A_idx[t] for t in [0, W^4) — test/debug accessor."""
        return self._perm(idx, t // self.W)[0][t % self.W]
