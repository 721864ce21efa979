"""Virtual memories, spillover pairs, the two-input adapter, and the chunked
physical concatenation of many VMs.

A spillover pair (m, k) with k < K occupies w*|m| + log2(K) fractional bits.
Spill split/merge conventions are frozen here because every decoder depends on
them: merge is k1*K2 + k2, split extracts the LOW N bits of k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .numeric import UP, BitCost, ceil_div, log2_cost

# newly allocated words get a recognizable garbage pattern: callers must
# overwrite before relying on content, and tests make sure they do
_FILL = 0xA5A5A5A5A5A5A5A5A5A5A5A5A5A5A5A5


class VirtualMemory:
    """Resizable array of w-bit words, addresses 1..M."""

    __slots__ = ("w", "mask", "_words")

    def __init__(self, w: int, words=()):
        self.w = w
        self.mask = (1 << w) - 1
        self._words = [v & self.mask for v in words]

    @property
    def M(self) -> int:
        return len(self._words)

    def read(self, addr: int) -> int:
        if not 1 <= addr <= len(self._words):
            raise IndexError(f"VM address {addr} not in 1..{len(self._words)}")
        return self._words[addr - 1]

    def write(self, addr: int, value: int) -> None:
        if not 1 <= addr <= len(self._words):
            raise IndexError(f"VM address {addr} not in 1..{len(self._words)}")
        if value < 0 or value > self.mask:
            raise ValueError(f"word value {value} does not fit in {self.w} bits")
        self._words[addr - 1] = value

    def allocate(self) -> int:
        self._words.append(_FILL & self.mask)
        return len(self._words)

    def release(self) -> None:
        if not self._words:
            raise IndexError("release on empty VM")
        self._words.pop()

    def words_tuple(self) -> tuple:
        return tuple(self._words)

    def clone(self) -> "VirtualMemory":
        return VirtualMemory(self.w, self._words)

    def debug_dump(self) -> str:
        body = ",".join(f"{v:x}" for v in self._words)
        return f"w={self.w:x} M={self.M:x} [{body}]"


@dataclass
class SpillPair:
    """A VM plus an arbitrary-precision spill k < K."""

    vm: VirtualMemory
    k: int
    K: int

    def __post_init__(self):
        self.k = int(self.k)
        self.K = int(self.K)
        if not (self.K >= 1 and 0 <= self.k < self.K):
            raise ValueError(f"spill {self.k} outside universe [0, {self.K})")

    def check_cap(self, c_spill: int) -> None:
        if self.K > 1 << (c_spill * self.vm.w):
            raise ValueError("spill universe exceeds the c_spill cap")

    def space_bits(self, F: int) -> BitCost:
        return BitCost.from_int(self.vm.w * self.vm.M, F) + log2_cost(self.K, F, UP)

    def debug_dump(self) -> str:
        return f"{self.vm.debug_dump()} K={self.K:x} k={self.k:x}"


# -- spill plumbing ----------------------------------------------------------


def spill_merge(k1: int, K1: int, k2: int, K2: int):
    """One spill out of two; universe K1*K2, fixed convention k1*K2 + k2."""
    assert 0 <= k1 < K1 and 0 <= k2 < K2
    return k1 * K2 + k2, K1 * K2


def spill_unmerge(k: int, K1: int, K2: int):
    assert 0 <= k < K1 * K2
    k1, k2 = divmod(k, K2)
    return k1, k2


def spill_split(k: int, K: int, lo: int, hi: int):
    """Extract bits so the leftover universe lands in [lo, hi).

    Returns (N, bits, k', K'): bits = low N bits of k, k' = k >> N,
    K' = ceil(K / 2^N).  N is the smallest viable choice, which both matches
    the worked example in the contract and keeps the overhead within
    log2(1 + 1/lo).
    """
    if not (K >= 1 and 0 <= k < K):
        raise ValueError("spill outside universe")
    if hi < 2 * lo or lo < 1:
        raise ValueError("target range must satisfy hi >= 2*lo")
    if K < lo:
        raise ValueError(f"universe {K} below target range [{lo}, {hi})")
    N = 0
    while ceil_div(K, 1 << N) >= hi:
        N += 1
    K2 = ceil_div(K, 1 << N)
    assert lo <= K2 < hi
    return N, k & ((1 << N) - 1), k >> N, K2


def spill_unsplit(bits: int, N: int, k2: int) -> int:
    assert 0 <= bits < (1 << N)
    return (k2 << N) | bits


# -- adapter -----------------------------------------------------------------


class Adapter:
    """Two resizable inputs inside one output VM.

    Input 1 occupies the front with the identity translation.  Input 2 fills
    the back zone in address order (its top word at the global end, so it
    grows and shrinks from the back) with a rotation offset: front resizes
    displace exactly one back word (rotation drifts by one), and back resizes
    first normalize the rotation — a cost amortized against the front resizes
    that created the drift.  A fresh adapter (rotation 0) lays the inputs out
    as the plain concatenation input1 then input2, which is what the
    canonical encoding stores.
    """

    def __init__(self, out: VirtualMemory, L1: int = 0, L2: int = 0, rot: int = 0):
        if out.M != L1 + L2:
            raise ValueError("output size must equal L1 + L2")
        self.out = out
        self.L1 = L1
        self.L2 = L2
        self.rot = rot % L2 if L2 else 0
        self.moves_total = 0
        self.resizes = 0
        self.moves_last = 0

    @classmethod
    def from_inputs(cls, vm1: VirtualMemory, vm2: VirtualMemory) -> "Adapter":
        out = VirtualMemory(vm1.w)
        for src in (vm1, vm2):
            for i in range(1, src.M + 1):
                out.allocate()
                out.write(out.M, src.read(i))
        return cls(out, vm1.M, vm2.M)

    # translation: input1 addr i -> out i; input2 addr j -> zone cell
    # (j - 1 + rot) mod L2, zone starting right after input 1
    def translate(self, which: int, addr: int) -> int:
        if which == 1:
            if not 1 <= addr <= self.L1:
                raise IndexError("input 1 address out of range")
            return addr
        if which == 2:
            if not 1 <= addr <= self.L2:
                raise IndexError("input 2 address out of range")
            return self.L1 + 1 + (addr - 1 + self.rot) % self.L2
        raise ValueError("which must be 1 or 2")

    def read(self, which: int, addr: int) -> int:
        return self.out.read(self.translate(which, addr))

    def write(self, which: int, addr: int, value: int) -> None:
        self.out.write(self.translate(which, addr), value)

    def _move(self, src: int, dst: int) -> None:
        self.out.write(dst, self.out.read(src))
        self.moves_total += 1
        self.moves_last += 1

    def _normalize(self) -> None:
        """Physically rotate the back zone so rot becomes 0."""
        r, L2 = self.rot, self.L2
        if r == 0 or L2 == 0:
            return
        lo = self.L1 + 1
        cells = [self.out.read(lo + c) for c in range(L2)]
        for c in range(L2):
            self.out.write(lo + (c - r) % L2, cells[c])
        self.moves_total += L2
        self.moves_last += L2
        self.rot = 0

    def resize(self, which: int, grow: bool) -> None:
        self.resizes += 1
        self.moves_last = 0
        L = self.L1 + self.L2
        if which == 1:
            if grow:
                self.out.allocate()
                if self.L2:
                    self._move(self.L1 + 1, L + 1)
                    self.rot = (self.rot - 1) % self.L2
                self.L1 += 1
            else:
                if self.L1 == 0:
                    raise IndexError("release on empty input 1")
                if self.L2:
                    self._move(L, self.L1)
                    self.rot = (self.rot + 1) % self.L2
                self.out.release()
                self.L1 -= 1
        elif which == 2:
            self._normalize()
            if grow:
                self.out.allocate()
                self.L2 += 1
            else:
                if self.L2 == 0:
                    raise IndexError("release on empty input 2")
                self.out.release()
                self.L2 -= 1
        else:
            raise ValueError("which must be 1 or 2")


# -- chunked concatenation of many VMs ---------------------------------------


def choose_chunk_words(w: int, L_words: int, K: int) -> int:
    """Power-of-two chunk size (in words) minimizing the footprint bound."""
    L_bits = max(w, L_words * w)
    lg = max(1.0, math.log2(L_bits))
    best_q, best_cost = w, None
    q = w
    while q <= max(w, L_bits):
        cost = 2 * K * q + (L_bits / q + 3 * K) * lg
        if best_cost is None or cost < best_cost:
            best_q, best_cost = q, cost
        q *= 2
    return best_q // w


class ChunkAllocator:
    """Many virtual VMs packed into one physical buffer, chunk by chunk.

    Allocated chunks always form a prefix of physical memory; freeing a chunk
    swaps the last physical chunk into the hole.  A VM owns at most one
    partially-filled and one empty chunk (2Q hysteresis on release).
    """

    def __init__(self, w: int, L_words: int, K: int):
        self.w = w
        self.L_words = L_words
        self.Qw = choose_chunk_words(w, L_words, K)
        self.K = K
        self.buf: list = []
        self.lengths: list = []
        self.chunks_of: list = []   # vm_id -> [physical chunk indices]
        self.owner: list = []       # physical chunk index -> (vm_id, ordinal)
        self.total_words = 0

    def attach(self) -> int:
        if len(self.lengths) >= self.K:
            raise ValueError("allocator capacity (K VMs) exceeded")
        self.lengths.append(0)
        self.chunks_of.append([])
        return len(self.lengths) - 1

    def length(self, vm_id: int) -> int:
        return self.lengths[vm_id]

    def _phys(self, vm_id: int, addr: int) -> int:
        if not 1 <= addr <= self.lengths[vm_id]:
            raise IndexError(f"address {addr} out of range for VM {vm_id}")
        ordinal, off = divmod(addr - 1, self.Qw)
        return self.chunks_of[vm_id][ordinal] * self.Qw + off

    def read(self, vm_id: int, addr: int) -> int:
        return self.buf[self._phys(vm_id, addr)]

    def write(self, vm_id: int, addr: int, value: int) -> None:
        self.buf[self._phys(vm_id, addr)] = value & ((1 << self.w) - 1)

    def resize(self, vm_id: int, grow: bool) -> None:
        if grow:
            if self.total_words + 1 > self.L_words:
                raise ValueError("declared total capacity exceeded")
            self.lengths[vm_id] += 1
            self.total_words += 1
            if self.lengths[vm_id] > len(self.chunks_of[vm_id]) * self.Qw:
                self._add_chunk(vm_id)
        else:
            if self.lengths[vm_id] == 0:
                raise IndexError("release on empty VM")
            self.lengths[vm_id] -= 1
            self.total_words -= 1
            if len(self.chunks_of[vm_id]) * self.Qw - self.lengths[vm_id] >= 2 * self.Qw:
                self._drop_chunk(vm_id)

    def _add_chunk(self, vm_id: int) -> None:
        idx = len(self.owner)
        self.owner.append((vm_id, len(self.chunks_of[vm_id])))
        self.chunks_of[vm_id].append(idx)
        self.buf.extend([_FILL & ((1 << self.w) - 1)] * self.Qw)

    def _drop_chunk(self, vm_id: int) -> None:
        hole = self.chunks_of[vm_id].pop()
        last = len(self.owner) - 1
        if hole != last:
            # swap the last physical chunk into the hole
            base_src, base_dst = last * self.Qw, hole * self.Qw
            self.buf[base_dst:base_dst + self.Qw] = self.buf[base_src:base_src + self.Qw]
            mv_vm, mv_ord = self.owner[last]
            self.chunks_of[mv_vm][mv_ord] = hole
            self.owner[hole] = (mv_vm, mv_ord)
        self.owner.pop()
        del self.buf[-self.Qw:]

    # -- accounting ----------------------------------------------------------

    def footprint_bits(self) -> int:
        lg = max(1, (max(2, self.L_words * self.w) - 1).bit_length())
        meta = len(self.lengths) * lg + 2 * len(self.owner) * lg + 4 * lg
        return len(self.buf) * self.w + meta

    def footprint_bound_bits(self) -> int:
        L_bits = max(self.w, self.L_words * self.w)
        lg = max(1.0, math.log2(L_bits))
        extra = 4 * (math.sqrt(L_bits * self.K * lg) + self.K * lg)
        return sum(self.lengths) * self.w + math.ceil(extra)

    def check_invariants(self) -> None:
        assert len(self.buf) == len(self.owner) * self.Qw
        assert sum(self.lengths) == self.total_words
        for vm_id, chunks in enumerate(self.chunks_of):
            need = ceil_div(self.lengths[vm_id], self.Qw)
            assert need <= len(chunks) <= need + 1, "chunk ownership window"
            assert len(chunks) * self.Qw - self.lengths[vm_id] < 2 * self.Qw
            for ordinal, idx in enumerate(chunks):
                assert self.owner[idx] == (vm_id, ordinal)
