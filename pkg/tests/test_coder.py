"""Entropy coder tests: capacity-sum tables, families, uniform merge."""

import math
import random
from fractions import Fraction

import pytest

from succfid.coder import (
    CapacityViolation,
    DecodeError,
    EncoderFamily,
    FamilyRegistry,
    Lemma5Tables,
    Member,
    capacity_le,
    int_from_words,
    perturbed_pmf,
    size_adjust,
    size_unadjust,
    uniform_audit,
    uniform_caps,
    uniform_decode,
    uniform_encode,
    uniform_peek,
    words_from_int,
)
from succfid.numeric import UP, BitCost
from succfid.vm import SpillPair, VirtualMemory


def test_word_int_helpers():
    assert int_from_words([0xA, 0xB, 0x5], 4) == 0x5BA
    assert words_from_int(0x5BA, 3, 4) == [0xA, 0xB, 0x5]
    assert words_from_int(0, 0, 4) == []


def test_capacity_le_exact():
    assert capacity_le(2, 64, 3, 4, w=4)       # 16*64 == 16*16*4
    assert not capacity_le(2, 64, 3, 3, w=4)
    assert capacity_le(0, 1, 5, 1, w=8)
    assert not capacity_le(5, 2, 0, 1 << 40, w=8)


def test_size_adjust_grow_bit_convention():
    pair = SpillPair(VirtualMemory(4, [0xA, 0xB]), 53, 64)
    out = size_adjust(pair, 3, 4)
    # low w bits of the spill become the appended word
    assert out.vm.words_tuple() == (0xA, 0xB, 0x5)
    assert out.k == 3 and out.K == 4
    back = size_unadjust(out, 2, 64)
    assert back.vm.words_tuple() == (0xA, 0xB) and back.k == 53


def test_size_adjust_shrink_bit_convention():
    pair = SpillPair(VirtualMemory(4, [0xA, 0xB]), 53, 64)
    out = size_adjust(pair, 1, 1024)
    # the last word is absorbed as the LOW part of the spill
    assert out.vm.words_tuple() == (0xA,)
    assert out.k == 53 * 16 + 0xB and out.K == 1024
    back = size_unadjust(out, 2, 64)
    assert back.vm.words_tuple() == (0xA, 0xB) and back.k == 53


def test_size_adjust_rejects_capacity_loss():
    pair = SpillPair(VirtualMemory(4, [0xA, 0xB]), 53, 64)
    with pytest.raises(CapacityViolation):
        size_adjust(pair, 1, 1023)
    size_adjust(pair, 1, 1024)  # boundary is exact


def test_size_adjust_roundtrip_fuzz():
    rng = random.Random(0)
    for _ in range(300):
        w = rng.choice((4, 8))
        M = rng.randrange(0, 4)
        K = rng.randrange(1, 1 << 12)
        words = [rng.randrange(1 << w) for _ in range(M)]
        pair = SpillPair(VirtualMemory(w, words), rng.randrange(K), K)
        M_t = rng.randrange(0, 6)
        if M_t >= M:
            K_t = -(-K >> (w * (M_t - M)))  # ceil
        else:
            K_t = K << (w * (M - M_t))
        out = size_adjust(pair, M_t, K_t)
        back = size_unadjust(out, M, K)
        assert back.vm.words_tuple() == pair.vm.words_tuple()
        assert back.k == pair.k and back.K == pair.K


def test_lemma5_tables_worked_example():
    # one symbol of capacity 1000 at q=10: N = 6 low bits, short cap 16
    t = Lemma5Tables(10, [(0, 1000)])
    assert t.N_enc == 6 and t.K_enc == 16
    overhead = t.N_enc + math.log2(t.K_enc) - math.log2(t.Z)
    assert abs(overhead - 0.0342) < 1e-3
    assert overhead <= math.log2(1 + 1 / 10)
    for z in range(1000):
        m_enc, k_enc = t.encode(0, z)
        assert m_enc == z % 64 and k_enc == z // 64
        assert t.decode(m_enc, k_enc) == (0, z)


def test_lemma5_split_rule_matches_definition():
    rng = random.Random(1)
    for _ in range(500):
        q = rng.choice((2, 10, 16, 256))
        z = rng.randrange(1, 1 << rng.randrange(1, 40))
        t = Lemma5Tables(q, [(0, z)])
        if z < q:
            assert t.N_enc == 0 and t.K_enc == z
        else:
            want = max(0, math.floor(math.log2(z / q)))
            assert t.N_enc == want
            assert t.K_enc == -(-z // (1 << want))
            assert q <= t.K_enc <= 2 * q


def test_lemma5_multi_symbol_offsets_ascending():
    t = Lemma5Tables(None, [("a", 3), ("b", 5), ("c", 2)])
    assert t.offsets == [0, 3, 8] and t.Z == 10
    assert t.N_enc == 0 and t.K_enc == 10
    seen = set()
    for sym, cap in zip(t.symbols, t.caps):
        for inner in range(cap):
            seen.add(t.decode(*t.encode(sym, inner)))
    assert len(seen) == 10
    with pytest.raises(DecodeError):
        t.decode(0, 11)
    with pytest.raises(AssertionError):
        Lemma5Tables(None, [("b", 1), ("a", 1)])


TINY_MEMBERS = [
    Member(0, 0, 3, Fraction(1, 2)),
    Member(1, 1, 2, Fraction(1, 3)),
    Member(2, 1, 5, Fraction(1, 6)),
]


def _all_inputs(fam):
    for m in fam.members:
        for wordvec in range(1 << (fam.w * m.M_in)):
            words = words_from_int(wordvec, m.M_in, fam.w)
            for k in range(m.K_in):
                yield m.symbol, words, k


def test_family_exhaustive_roundtrip_and_injectivity():
    fam = EncoderFamily("tiny", 4, TINY_MEMBERS, w=4, c_spill=8)
    assert fam.M_fix == 0 and fam.M_out == 0
    outputs = set()
    count = 0
    for sym, words, k in _all_inputs(fam):
        pair = SpillPair(VirtualMemory(4, words), k, fam.by_symbol[sym].K_in)
        out = fam.encode(sym, pair)
        assert out.vm.M == fam.M_out and out.K == fam.K_out
        got_sym, got = fam.decode(out)
        assert got_sym == sym
        assert got.vm.words_tuple() == tuple(words) and got.k == k
        outputs.add((out.vm.words_tuple(), out.k))
        count += 1
    assert len(outputs) == count == fam.tables.Z == 115


def test_family_exact_mode_is_lossless():
    fam = EncoderFamily("tiny-exact", None, TINY_MEMBERS, w=4, c_spill=8)
    assert fam.tables.N_enc == 0 and fam.K_out == fam.tables.Z
    rep = fam.audit()
    assert rep["ok"] and rep["capacity_certificate"]
    pair = SpillPair(VirtualMemory(4, [7]), 1, 2)
    sym, back = fam.decode(fam.encode(1, pair))
    assert sym == 1 and back.k == 1 and back.vm.words_tuple() == (7,)


def test_family_fixed_prefix_direct_access():
    members = [Member(s, 10, 4 + s, Fraction(1, 3)) for s in range(3)]
    fam = EncoderFamily("fixed", 16, members, w=32)
    assert fam.M_fix > 0
    words = list(range(100, 110))
    pair = SpillPair(VirtualMemory(32, words), 2, 4)
    out = fam.encode(0, pair)
    assert out.vm.words_tuple() == tuple(words[:fam.M_fix])
    for addr in range(1, fam.M_fix + 1):
        before = fam.stats["decodes"]
        assert fam.access(out, 0, addr) == words[addr - 1]
        assert fam.stats["decodes"] == before  # no decode for the prefix
    assert fam.access(out, 0, 10) == 109  # past the prefix: full decode


def test_family_change_words():
    fam = EncoderFamily("tiny", 4, TINY_MEMBERS, w=4, c_spill=8)
    pair = SpillPair(VirtualMemory(4, [9]), 3, 5)
    out = fam.encode(2, pair)
    out2 = fam.change(out, 1, 12)
    sym, inner = fam.decode(out2)
    assert sym == 2 and inner.vm.words_tuple() == (12,) and inner.k == 3
    assert out2.vm.M == out.vm.M and out2.K == out.K  # sizes never drift


def _random_family(rng, q, n_sym, w=8):
    weights = [rng.randrange(1, 50) for _ in range(n_sym)]
    total = sum(weights)
    members = [
        Member(s, rng.randrange(0, 3), rng.randrange(1, 1 << 10),
               Fraction(wt, total))
        for s, wt in enumerate(weights)
    ]
    return EncoderFamily(("rand", q, n_sym), q, members, w=w)


@pytest.mark.parametrize("q", [16, 256])
def test_family_redundancy_bound(q):
    rng = random.Random(q)
    for _ in range(60):
        fam = _random_family(rng, q, rng.randrange(1, 9))
        rep = fam.audit()
        assert rep["ok"], rep
        assert rep["redundancy_up"] <= 7 / q + 1e-15
        fam.check_perturbation_bounds()


def test_family_single_symbol_space():
    # |supp| = 1: output space within input space + 7/q, roundtrip exact
    fam = EncoderFamily("single", 16, [Member(0, 2, 300, Fraction(1))], w=8)
    pair = SpillPair(VirtualMemory(8, [5, 6]), 123, 300)
    sym, back = fam.decode(fam.encode(0, pair))
    assert sym == 0 and back.k == 123 and back.vm.words_tuple() == (5, 6)
    out_bits = fam.w * fam.M_out + math.log2(fam.K_out)
    in_bits = 16 + math.log2(300)
    assert out_bits <= in_bits + 7 / 16


def test_perturbed_pmf_properties():
    for q in (2, 16, 256):
        for supp in (1, 2, 7, 100):
            for d in (Fraction(1), Fraction(1, 2), Fraction(1, 10 ** 9)):
                dt = perturbed_pmf(d, q, supp)
                assert dt >= Fraction(1, 2 * q * supp)
                assert dt <= d * (1 - Fraction(1, 2 * q)) + Fraction(1, 2 * q)
                # mixing keeps a proper pmf: sum over a uniform family stays 1
    q, supp = 16, 5
    ds = [Fraction(i + 1, 15) for i in range(5)]
    assert sum(perturbed_pmf(d, q, supp) for d in ds) == 1


def _h(bits, F=64):
    return BitCost.from_fraction(Fraction(bits), F, UP)


def test_uniform_caps_two_cases():
    # at or below (beta_u+1)*w everything lives in the spill
    assert uniform_caps(_h(48), w=16) == (0, 1 << 48)
    assert uniform_caps(_h(Fraction(21, 2)), w=16) == (0, 1448)   # floor(2^10.5)
    # above the threshold: floor(H/w) - beta_u words, remainder ceiled
    assert uniform_caps(_h(80), w=16) == (3, 1 << 32)
    assert uniform_caps(_h(Fraction(141, 4)), w=8) == (2, 623488)  # ceil(2^19.25)
    with pytest.raises(ValueError):
        uniform_caps(BitCost(-1, 64, UP), w=16)


def test_uniform_sizes_depend_only_on_class_bound():
    w = 8
    h_max = _h(21)
    members = [(2, 17), (2, 32), (1, 250), (0, 1), (2, 1)]
    outs = []
    for M_in, K_in in members:
        words = [3] * M_in
        pair = SpillPair(VirtualMemory(w, words), K_in - 1, K_in)
        out = uniform_encode(pair, 5, 9, 7, h_max)
        outs.append((out.vm.M, out.K))
        assert uniform_peek(out, 5, 9, h_max) == 7
        idx, back = uniform_decode(out, 5, 9, h_max, M_in, K_in)
        assert idx == 7
        assert back.vm.words_tuple() == tuple(words) and back.k == K_in - 1
    assert len(set(outs)) == 1  # class-constant output sizes


def test_uniform_exhaustive_roundtrip_wide_range():
    # sixteen slots, members of varying word counts under one bound
    w = 4
    h_max = _h(9)
    for M_in, K_in in ((2, 2), (1, 30), (0, 500), (2, 1)):
        for idx in range(16):
            for k in range(0, K_in, max(1, K_in // 5)):
                words = [idx % 16] * M_in
                pair = SpillPair(VirtualMemory(w, words), k, K_in)
                out = uniform_encode(pair, 0, 16, idx, h_max)
                assert out.K == uniform_caps(h_max, w)[1] * 16
                got, back = uniform_decode(out, 0, 16, h_max, M_in, K_in)
                assert got == idx and back.k == k
                assert back.vm.words_tuple() == tuple(words)


def test_uniform_big_case_frozen():
    pair = SpillPair(VirtualMemory(16, [1, 2, 3, 4, 5]), 0, 1)
    out = uniform_encode(pair, 10, 14, 12, _h(80))
    assert out.vm.words_tuple() == (1, 2, 3)
    k_max = 1 << 32
    assert out.K == 4 * k_max
    assert out.k == 2 * k_max + (4 | (5 << 16))
    assert uniform_peek(out, 10, 14, _h(80)) == 12
    idx, back = uniform_decode(out, 10, 14, _h(80), 5, 1)
    assert idx == 12 and back.vm.words_tuple() == (1, 2, 3, 4, 5)


def test_uniform_singleton_range():
    # hi - lo == 1 degenerates to a size adjustment towards the class caps
    pair = SpillPair(VirtualMemory(8, [9]), 4, 7)
    out = uniform_encode(pair, 3, 4, 3, _h(11))
    assert (out.vm.M, out.K) == (0, 2048)
    assert out.k == (4 << 8) | 9
    idx, back = uniform_decode(out, 3, 4, _h(11), 1, 7)
    assert idx == 3 and back.k == 4


def test_uniform_rejects_configuration_errors():
    w = 8
    # member space above the class bound
    fat = SpillPair(VirtualMemory(w, [1, 2, 3]), 0, 2)
    with pytest.raises(CapacityViolation):
        uniform_encode(fat, 0, 2, 0, _h(24))
    # M_max exceeding a member's own word count (condition 4)
    thin = SpillPair(VirtualMemory(w, [7]), 0, 1)
    with pytest.raises(CapacityViolation):
        uniform_encode(thin, 0, 2, 0, _h(64))
    with pytest.raises(ValueError):
        uniform_encode(thin, 0, 2, 5, _h(10))
    # decode guards: wrong sizes, corrupted member spill
    ok = uniform_encode(thin, 0, 2, 1, _h(10))
    with pytest.raises(DecodeError):
        uniform_peek(ok, 0, 3, _h(10))
    bad = SpillPair(ok.vm, ok.K - 1, ok.K)  # inner index beyond K_in = 1
    with pytest.raises(DecodeError):
        uniform_decode(bad, 0, 2, _h(10), 1, 1)


def test_uniform_overhead_within_budget():
    # output space never exceeds H_max + log2(hi-lo) by more than 2^-8
    for w in (8, 16, 32):
        for num in (3, 21, 64, 257, 1000):
            h_max = BitCost.from_fraction(Fraction(num, 4), 64, UP)
            for span in (1, 3, 16):
                rep = uniform_audit(h_max, 0, span, w)
                assert rep["ok"], rep
                if rep["M_max"] == 0:
                    # floors only shrink; an ulp of audit rounding may remain
                    assert rep["redundancy_up"] <= 2 ** -60


def test_registry_memoizes_and_caps():
    reg = FamilyRegistry(cap=2)
    calls = []

    def builder(key):
        def build():
            calls.append(key)
            return EncoderFamily(key, None, TINY_MEMBERS, w=4, c_spill=8)
        return build

    a = reg.get("a", builder("a"))
    assert reg.get("a", builder("a")) is a
    assert calls == ["a"]
    reg.get("b", builder("b"))
    reg.get("c", builder("c"))  # cap hit: cleared, then rebuilt
    assert len(reg) == 1 and calls == ["a", "b", "c"]
