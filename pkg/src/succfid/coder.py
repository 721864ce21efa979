"""Entropy coding of (symbol, spill pair) inputs with word-aligned outputs.

A family declares, per symbol psi: input sizes (M_in, K_in) and a rational
pmf D.  Encoding strips a fixed word prefix m_fix shared by all symbols,
flattens the remainder (words, split-off spill bits, short spill) into one
integer below Z_psi = 2^(w*M_rem + N_spill) * K_short, and ranks it inside
the capacity sum Z = sum_psi Z_psi with ascending-symbol offsets.  Output
sizes are symbol-independent.  Because Z = sum_psi D(psi) * (Z_psi/D(psi))
is an average, log2 Z never exceeds H_in = max_psi log2(Z_psi/D(psi)), so
the output stays within H_in plus two ceiling losses of log2(1+1/q) each —
under the 7/q budget.  The perturbed pmf (1-1/2q) D + 1/(2q|supp|) is
computed for audits only; the code itself is determined by the capacities.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction

from .numeric import (DOWN, UP, BitCost, ceil_div, le_mul_exp2, log2_cost,
                      pow2_ceil, pow2_floor)
from .vm import SpillPair, VirtualMemory, spill_split


class CapacityViolation(Exception):
    """A size adjustment or encode would not fit its declared universe."""


class DecodeError(Exception):
    """Stored bits are not a canonical encoding."""


# -- word/integer plumbing (little-endian: lower address = lower bits) -------


def int_from_words(words, w: int) -> int:
    total = 0
    for i, v in enumerate(words):
        total |= v << (w * i)
    return total


def words_from_int(value: int, count: int, w: int) -> list:
    mask = (1 << w) - 1
    return [(value >> (w * i)) & mask for i in range(count)]


def capacity_le(M1: int, K1: int, M2: int, K2: int, w: int) -> bool:
    """Exact comparison 2^(w*M1) * K1 <= 2^(w*M2) * K2."""
    if M1 <= M2:
        return K1 <= K2 << (w * (M2 - M1))
    return K1 << (w * (M1 - M2)) <= K2


def size_adjust(pair: SpillPair, M_t: int, K_t: int) -> SpillPair:
    """Move a pair to exactly (M_t, K_t) words/spill, information preserved.

    Growing word count extracts the low bits of the spill as words appended
    at the end; shrinking absorbs the last words as the low part of the
    spill.  Requires 2^(wM)K <= 2^(wM_t)K_t, checked exactly.
    """
    w, M, K, k = pair.vm.w, pair.vm.M, pair.K, pair.k
    if not capacity_le(M, K, M_t, K_t, w):
        raise CapacityViolation(
            f"2^({w}*{M})*{K} > 2^({w}*{M_t})*{K_t}: cannot size-adjust")
    vm = pair.vm.clone()
    if M_t >= M:
        delta = M_t - M
        for i in range(delta):
            vm.allocate()
            vm.write(M + i + 1, (k >> (w * i)) & ((1 << w) - 1))
        k >>= w * delta
    else:
        delta = M - M_t
        low = int_from_words([vm.read(M_t + 1 + i) for i in range(delta)], w)
        for _ in range(delta):
            vm.release()
        k = (k << (w * delta)) | low
    assert k < K_t
    return SpillPair(vm, k, K_t)


def size_unadjust(pair: SpillPair, M_orig: int, K_orig: int) -> SpillPair:
    """Inverse of size_adjust back to the original (M, K)."""
    w, M, k = pair.vm.w, pair.vm.M, pair.k
    vm = pair.vm.clone()
    if M_orig <= M:
        delta = M - M_orig
        low = int_from_words([vm.read(M_orig + 1 + i) for i in range(delta)], w)
        for _ in range(delta):
            vm.release()
        k = (k << (w * delta)) | low
    else:
        delta = M_orig - M
        for i in range(delta):
            vm.allocate()
            vm.write(M + i + 1, (k >> (w * i)) & ((1 << w) - 1))
        k >>= w * delta
    if k >= K_orig:
        raise DecodeError("reverted spill exceeds its original universe")
    return SpillPair(vm, k, K_orig)


# -- capacity-sum tables ------------------------------------------------------


class Lemma5Tables:
    """Ascending-symbol offsets over per-symbol capacities, plus the split
    of the total into N_enc low bits and a short remainder K_enc <= 2q."""

    def __init__(self, q, entries):
        # entries: [(symbol, Z_psi)] — must arrive sorted ascending by symbol
        self.symbols = [s for s, _ in entries]
        assert all(a < b for a, b in zip(self.symbols, self.symbols[1:])), \
            "symbols must be strictly ascending"
        self.caps = [z for _, z in entries]
        assert all(z >= 1 for z in self.caps)
        self.offsets = [0]
        for z in self.caps:
            self.offsets.append(self.offsets[-1] + z)
        self.Z = self.offsets.pop()
        self.q = q
        if q is None or self.Z < q:
            self.N_enc = 0
            self.K_enc = self.Z
        else:
            self.N_enc = (self.Z // q).bit_length() - 1
            self.K_enc = ceil_div(self.Z, 1 << self.N_enc)
            assert q <= self.K_enc <= 2 * q
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def encode(self, symbol, inner: int):
        i = self._index[symbol]
        assert 0 <= inner < self.caps[i]
        z = self.offsets[i] + inner
        return z & ((1 << self.N_enc) - 1), z >> self.N_enc

    def decode(self, m_enc: int, k_enc: int):
        if not (0 <= m_enc < (1 << self.N_enc) and 0 <= k_enc < self.K_enc):
            raise DecodeError("encoded parts outside their universes")
        z = (k_enc << self.N_enc) | m_enc
        if z >= self.Z:
            raise DecodeError("encoded value beyond total capacity")
        i = bisect.bisect_right(self.offsets, z) - 1
        return self.symbols[i], z - self.offsets[i]


# -- encoder families ---------------------------------------------------------


@dataclass(frozen=True)
class Member:
    symbol: object
    M_in: int
    K_in: int
    d: Fraction


def perturbed_pmf(d: Fraction, q: int, supp: int) -> Fraction:
    return (1 - Fraction(1, 2 * q)) * d + Fraction(1, 2 * q * supp)


class EncoderFamily:
    """One registered family: symbol-independent output sizes, exact tables."""

    def __init__(self, key, q, members, w: int, c_spill: int = 32, F: int = 64):
        if not members:
            raise ValueError("family needs at least one member")
        members = sorted(members, key=lambda m: m.symbol)
        if sum(m.d for m in members) != 1:
            raise ValueError("family pmf must sum to exactly 1")
        if any(m.d <= 0 or m.K_in < 1 or m.M_in < 0 for m in members):
            raise ValueError("bad member declaration")
        self.key = key
        self.q = q
        self.w = w
        self.F = F
        self.members = members
        self.by_symbol = {m.symbol: m for m in members}
        if len(self.by_symbol) != len(members):
            raise ValueError("duplicate symbols")

        M_max = max(m.M_in for m in members)
        M_min = min(m.M_in for m in members)
        q_eff = q if q is not None else 1
        lg_k = max(m.K_in.bit_length() for m in members)
        lg_s = max(1, len(members).bit_length())
        beta = max(ceil_div(4 * (lg_k + q_eff.bit_length() + lg_s + 10), w),
                   M_max - M_min)
        self.M_fix = max(M_max - beta, 0)
        self.beta = beta

        # per-symbol leftover capacity after the fixed prefix
        self._splits = {}
        entries = []
        for m in members:
            M_rem = m.M_in - self.M_fix
            if q is not None and m.K_in >= 2 * q:
                n_spill, _, _, k_short_cap = spill_split(0, m.K_in, q, 2 * q)
            else:
                n_spill, k_short_cap = 0, m.K_in
            self._splits[m.symbol] = (M_rem, n_spill, k_short_cap)
            entries.append((m.symbol, (1 << (w * M_rem + n_spill)) * k_short_cap))
        self.tables = Lemma5Tables(q, entries)
        self.M_out = self.M_fix
        self.K_out = (1 << self.tables.N_enc) * self.tables.K_enc
        if self.K_out > 1 << (c_spill * w):
            raise CapacityViolation("family output spill exceeds the c_spill cap")
        self.stats = {"encodes": 0, "decodes": 0, "max_change_words": 0}

    # frozen assembly: inner = m_rem (low) then split-off spill bits (high),
    # z = offset + inner * K_short + k_short, output spill mEnc * K_enc + kEnc
    def encode(self, symbol, pair: SpillPair) -> SpillPair:
        m = self.by_symbol[symbol]
        w = self.w
        if pair.vm.M != m.M_in or pair.K != m.K_in:
            raise CapacityViolation("input pair does not match member sizes")
        M_rem, n_spill, k_short_cap = self._splits[symbol]
        m_spill = pair.k & ((1 << n_spill) - 1)
        k_short = pair.k >> n_spill
        assert k_short < k_short_cap
        rem = int_from_words(
            [pair.vm.read(self.M_fix + 1 + i) for i in range(M_rem)], w)
        inner = (rem | (m_spill << (w * M_rem))) * k_short_cap + k_short
        m_enc, k_enc = self.tables.encode(symbol, inner)
        out = VirtualMemory(w, [pair.vm.read(i + 1) for i in range(self.M_fix)])
        self.stats["encodes"] += 1
        return SpillPair(out, m_enc * self.tables.K_enc + k_enc, self.K_out)

    def decode(self, pair: SpillPair):
        w = self.w
        if pair.vm.M != self.M_out or pair.K != self.K_out:
            raise DecodeError("pair does not match family output sizes")
        m_enc, k_enc = divmod(pair.k, self.tables.K_enc)
        symbol, rest = self.tables.decode(m_enc, k_enc)
        M_rem, n_spill, k_short_cap = self._splits[symbol]
        inner, k_short = divmod(rest, k_short_cap)
        m_spill = inner >> (w * M_rem)
        rem = inner & ((1 << (w * M_rem)) - 1)
        member = self.by_symbol[symbol]
        vm = VirtualMemory(
            w,
            [pair.vm.read(i + 1) for i in range(self.M_fix)]
            + words_from_int(rem, M_rem, w))
        k_in = (k_short << n_spill) | m_spill
        if k_in >= member.K_in:
            raise DecodeError("decoded spill outside the member universe")
        self.stats["decodes"] += 1
        return symbol, SpillPair(vm, k_in, member.K_in)

    def access(self, pair: SpillPair, symbol, addr: int) -> int:
        """Read one word of the original input; fixed prefix is direct."""
        if 1 <= addr <= self.M_fix:
            return pair.vm.read(addr)
        got, inner = self.decode(pair)
        if got != symbol:
            raise DecodeError("stored symbol differs from expectation")
        return inner.vm.read(addr)

    def change(self, pair: SpillPair, addr: int, value: int) -> SpillPair:
        """Write one word of the original input, re-encoding if needed."""
        if 1 <= addr <= self.M_fix:
            out = SpillPair(pair.vm.clone(), pair.k, pair.K)
            out.vm.write(addr, value)
            self.stats["max_change_words"] = max(self.stats["max_change_words"], 1)
            return out
        symbol, inner = self.decode(pair)
        inner.vm.write(addr, value)
        touched = (inner.vm.M - self.M_fix) * 2 + 2
        self.stats["max_change_words"] = max(self.stats["max_change_words"], touched)
        return self.encode(symbol, inner)

    # -- audits ---------------------------------------------------------------

    def d_tilde(self, symbol) -> Fraction:
        if self.q is None:
            return self.by_symbol[symbol].d
        return perturbed_pmf(self.by_symbol[symbol].d, self.q, len(self.members))

    def out_bits_up(self) -> BitCost:
        return (BitCost.from_int(self.w * self.M_out, self.F)
                + log2_cost(self.K_out, self.F, UP))

    def h_in_down(self) -> BitCost:
        best = None
        for m in self.members:
            h = (BitCost.from_int(self.w * m.M_in, self.F, DOWN)
                 + log2_cost(m.K_in, self.F, DOWN)
                 + log2_cost(m.d.denominator, self.F, DOWN).minus(
                     log2_cost(m.d.numerator, self.F, UP)))
            best = h if best is None else best.max_with(h)
        return best

    def redundancy_bound(self) -> Fraction:
        # exact mode is lossless; the allowance only absorbs the fixed-point
        # rounding of the audit itself, with the capacity certificate exact
        return Fraction(7, self.q) if self.q is not None else Fraction(1, 1 << 50)

    def audit(self) -> dict:
        out_up = self.out_bits_up()
        h_dn = self.h_in_down()
        red = out_up.minus(h_dn)
        bound = self.redundancy_bound()
        # exact capacity-sum certificate: Z <= max_psi Z_psi / D(psi)
        z_total = self.tables.Z
        cert = any(z_total * m.d <= z for m, z in zip(self.members, self.tables.caps))
        report = {
            "key": self.key,
            "q": self.q,
            "supp": len(self.members),
            "M_out": self.M_out,
            "K_out_bits": self.K_out.bit_length(),
            "redundancy_up": red.to_float(),
            "bound": float(bound),
            "ok": red <= bound,
            "capacity_certificate": cert if self.q is None else True,
        }
        if self.q is None:
            report["ok"] = report["ok"] and cert
        return report

    def check_perturbation_bounds(self) -> None:
        """log2(1/D~) - log2(1/D) <= 1/q and log2(1/D~) <= log2(2q|supp|)."""
        if self.q is None:
            return
        supp = len(self.members)
        for m in self.members:
            dt = self.d_tilde(m.symbol)
            assert dt >= Fraction(1, 2 * self.q * supp)
            # D/D~ <= 2^(1/q), exactly
            ratio = m.d / dt
            assert le_mul_exp2(ratio.numerator, Fraction(0),
                               ratio.denominator, Fraction(1, self.q))


# -- uniform merge ------------------------------------------------------------
#
# Members of a uniform class may arrive at different (M_in, K_in); the caller
# supplies one bound H_max >= w*M_in + log2 K_in valid for the whole class,
# and every output size below is a function of H_max alone.  A reader can
# therefore recover the folded index before knowing which member it holds.


def uniform_caps(H_max: BitCost, w: int, beta_u: int = 2):
    """Class-constant (M_max, K_max) from the shared bound alone.

    Small classes live entirely in the spill with K_max = floor(2^H_max)
    (sound: each member's integer input space is <= 2^H_max, hence <= the
    floor).  Larger ones leave beta_u words of headroom in the spill so
    that M_max stays at or below every member's own word count.
    """
    if H_max.num < 0:
        raise ValueError("H_max must be nonnegative")
    if H_max <= (beta_u + 1) * w:
        return 0, max(1, pow2_floor(H_max))
    M_max = H_max.num // (w << H_max.F) - beta_u
    rem = BitCost(H_max.num - ((w * M_max) << H_max.F), H_max.F, H_max.rounding)
    return M_max, pow2_ceil(rem)


def uniform_encode(pair: SpillPair, lo: int, hi: int, idx: int,
                   H_max: BitCost, beta_u: int = 2) -> SpillPair:
    """Fold a uniform index idx in [lo, hi) into sizes set by H_max alone.

    The output is (M_max, K_max*(hi-lo)) for every member, with total space
    at most H_max + log2(hi-lo) + 2^-(beta_u*w).  A member whose own space
    exceeds H_max, or whose word count falls below M_max, is a configuration
    error and is rejected before anything is moved.
    """
    if not lo <= idx < hi:
        raise ValueError("index outside its declared range")
    w = pair.vm.w
    if pair.space_bits(H_max.F) > H_max:
        raise CapacityViolation("member space exceeds the class bound H_max")
    M_max, K_max = uniform_caps(H_max, w, beta_u)
    if M_max > pair.vm.M:
        raise CapacityViolation("class word floor M_max exceeds a member's words")
    adjusted = size_adjust(pair, M_max, K_max)
    return SpillPair(adjusted.vm, (idx - lo) * K_max + adjusted.k,
                     K_max * (hi - lo))


def uniform_peek(pair: SpillPair, lo: int, hi: int, H_max: BitCost,
                 beta_u: int = 2) -> int:
    """Recover the folded index; no member sizes are consulted."""
    M_max, K_max = uniform_caps(H_max, pair.vm.w, beta_u)
    if pair.vm.M != M_max or pair.K != K_max * (hi - lo):
        raise DecodeError("pair does not match the uniform class sizes")
    return lo + pair.k // K_max


def uniform_decode(pair: SpillPair, lo: int, hi: int, H_max: BitCost,
                   M_in: int, K_in: int, beta_u: int = 2):
    idx = uniform_peek(pair, lo, hi, H_max, beta_u)
    _, K_max = uniform_caps(H_max, pair.vm.w, beta_u)
    inner = size_unadjust(SpillPair(pair.vm, pair.k % K_max, K_max), M_in, K_in)
    return idx, inner


def uniform_audit(H_max: BitCost, lo: int, hi: int, w: int,
                  beta_u: int = 2) -> dict:
    """Output space minus (H_max + log2(hi-lo)), rounded against us."""
    M_max, K_max = uniform_caps(H_max, w, beta_u)
    out_up = (BitCost.from_int(w * M_max, H_max.F)
              + log2_cost(K_max * (hi - lo), H_max.F, UP))
    ideal = BitCost(H_max.num, H_max.F, DOWN) + log2_cost(hi - lo, H_max.F, DOWN)
    red = out_up.minus(ideal)
    return {
        "M_max": M_max,
        "K_max_bits": K_max.bit_length(),
        "redundancy_up": red.to_float(),
        "ok": red <= Fraction(1, 1 << 8),
    }


# -- registry -----------------------------------------------------------------


class FamilyRegistry:
    """Memoized family construction, capped (cleared when full)."""

    def __init__(self, cap: int = 1 << 20):
        self.cap = cap
        self._families = {}

    def get(self, key, builder):
        fam = self._families.get(key)
        if fam is None:
            if len(self._families) >= self.cap:
                self._families.clear()
            fam = builder()
            assert fam.key == key
            self._families[key] = fam
        return fam

    def __len__(self):
        return len(self._families)

    def values(self):
        return self._families.values()
