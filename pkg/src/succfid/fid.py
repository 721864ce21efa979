"""Blocked dynamic rank/select dictionary over [0, U).

The universe is cut at stored keys into blocks of B..4B keys, each block a
canonically stored treap over its own window, all block payloads packed into
one chunked arena.  A sorted boundary array routes point queries and a Fenwick
tree over block counts turns rank/select into one block-local question.
Blocks split on reaching 4B+1 keys and merge with a neighbor on dropping to
B-1; the whole structure re-partitions itself when n drifts a factor of two
from the size B was chosen for.

Every block's bits stay a pure function of (window, key set); the Python-side
key tuples and treap objects are cache, and the arena plus the boundary and
count arrays are the accountable state.
"""

from __future__ import annotations

from bisect import bisect_right
from itertools import chain
import math

from .coder import DecodeError, words_from_int
from .config import RunConfig, default_block_size
from .ctreap import CodecContext, CTreap, FAILURE, make_context
from .numeric import UP, binom, log2_cost
from .vm import ChunkAllocator

_MAGIC = b"SFID\x01"


class _Fenwick:
    """Prefix sums over block counts with O(log m) update and descend."""

    def __init__(self, counts):
        self.n = len(counts)
        self.t = [0] * (self.n + 1)
        for i, c in enumerate(counts, 1):
            self.t[i] += c
            j = i + (i & -i)
            if j <= self.n:
                self.t[j] += self.t[i]

    def add(self, i: int, delta: int) -> None:
        i += 1
        while i <= self.n:
            self.t[i] += delta
            i += i & -i

    def prefix(self, i: int) -> int:
        s = 0
        while i:
            s += self.t[i]
            i &= i - 1
        return s

    def descend(self, k: int):
        """Block holding the k-th smallest key, plus k's offset inside it."""
        idx = 0
        bit = 1 << self.n.bit_length()
        while bit:
            nxt = idx + bit
            if nxt <= self.n and self.t[nxt] <= k:
                idx = nxt
                k -= self.t[nxt]
            bit >>= 1
        return idx, k


class Fid:
    """Dynamic fully indexable dictionary: rank/select/insert/delete."""

    def __init__(self, cfg: RunConfig, keys=(), ctx: CodecContext = None):
        self.cfg = cfg
        self.ctx = ctx if ctx is not None else make_context(cfg)
        ks = sorted(set(keys))
        if ks and not (0 <= ks[0] and ks[-1] < cfg.U):
            raise ValueError("keys outside the universe")
        self.stats = {"splits": 0, "merges": 0, "rebuilds": 0}
        self._build(ks)

    # -- construction -----------------------------------------------------------

    def _build(self, ks: list) -> None:
        self.n = len(ks)
        self.n0 = max(self.n, 1)
        self.B = (self.cfg.B if self.cfg.B is not None
                  else default_block_size(self.n, self.cfg.w))
        step = 2 * self.B
        groups = [ks[i:i + step] for i in range(0, len(ks), step)] or [[]]
        if len(groups) > 1 and len(groups[-1]) < self.B:
            tail = groups.pop()
            groups[-1] = groups[-1] + tail
        self._bounds = [0] + [g[0] for g in groups[1:]]
        self._blocks = []
        for i, g in enumerate(groups):
            lo = self._bounds[i]
            hi = self._bounds[i + 1] if i + 1 < len(groups) else self.cfg.U
            self._blocks.append(CTreap(self.cfg, g, a=lo, b=hi, ctx=self.ctx))
        self._fen = _Fenwick([len(b) for b in self._blocks])
        self._fresh_arena()

    def _fresh_arena(self) -> None:
        K = 2 * self.n0 // self.B + 6
        per_key = max(1, (self.cfg.U - 1).bit_length()) + 1
        L = -(-2 * self.n0 * per_key // self.cfg.w) + 2 * K + 32
        self._alloc = ChunkAllocator(self.cfg.w, L, K)
        self._free_ids = []
        self._vm_ids = [self._vm_new() for _ in self._blocks]
        for i in range(len(self._blocks)):
            self._sync(i)

    def _vm_new(self) -> int:
        return self._free_ids.pop() if self._free_ids else self._alloc.attach()

    def _vm_drop(self, vid: int) -> None:
        while self._alloc.length(vid):
            self._alloc.resize(vid, False)
        self._free_ids.append(vid)

    def _spill_words(self, K: int) -> int:
        return ((K - 1).bit_length() + self.cfg.w - 1) // self.cfg.w

    def _sync(self, i: int) -> None:
        """Mirror block i's canonical words + spill into its arena VM."""
        words, k, K = self._blocks[i].stored_image()
        image = list(words) + words_from_int(k, self._spill_words(K), self.cfg.w)
        vid = self._vm_ids[i]
        while self._alloc.length(vid) > len(image):
            self._alloc.resize(vid, False)
        while self._alloc.length(vid) < len(image):
            self._alloc.resize(vid, True)
        for j, value in enumerate(image, 1):
            self._alloc.write(vid, j, value)

    # -- routing ------------------------------------------------------------------

    def _window(self, i: int):
        hi = self._bounds[i + 1] if i + 1 < len(self._bounds) else self.cfg.U
        return self._bounds[i], hi

    def _locate(self, x: int) -> int:
        return bisect_right(self._bounds, x) - 1

    # -- queries --------------------------------------------------------------------

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return chain.from_iterable(b.keys() for b in self._blocks)

    def keys(self) -> tuple:
        return tuple(self)

    def __contains__(self, x: int) -> bool:
        if not 0 <= x < self.cfg.U:
            return False
        return x in self._blocks[self._locate(x)]

    def rank(self, x: int) -> int:
        """Number of stored keys strictly below x."""
        if x <= 0:
            return 0
        if x >= self.cfg.U:
            return self.n
        i = self._locate(x)
        return self._fen.prefix(i) + self._blocks[i].rank(x)

    def select(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError("selection index out of range")
        b, rem = self._fen.descend(i)
        return self._blocks[b].select(rem)

    # -- updates ----------------------------------------------------------------------

    def insert(self, x: int) -> bool:
        if not 0 <= x < self.cfg.U:
            raise ValueError("key outside the universe")
        i = self._locate(x)
        if not self._blocks[i].insert(x):
            return False
        self.n += 1
        self._fen.add(i, 1)
        if self._drifted():
            self._rebuild()
        elif len(self._blocks[i]) > 4 * self.B:
            self._split(i)
        else:
            self._sync(i)
        return True

    def delete(self, x: int) -> bool:
        if not 0 <= x < self.cfg.U:
            return False
        i = self._locate(x)
        if not self._blocks[i].delete(x):
            return False
        self.n -= 1
        self._fen.add(i, -1)
        if self._drifted():
            self._rebuild()
        elif len(self._blocks[i]) < self.B and len(self._blocks) > 1:
            self._merge(i)
        else:
            self._sync(i)
        return True

    def _drifted(self) -> bool:
        return self.n > 2 * self.n0 or 2 * self.n < self.n0

    def _rebuild(self) -> None:
        self.stats["rebuilds"] += 1
        self._build(list(self))

    def _split(self, i: int) -> None:
        self.stats["splits"] += 1
        ks = self._blocks[i].keys()
        mid = (len(ks) + 1) // 2
        boundary = ks[mid]
        lo, hi = self._window(i)
        left = CTreap(self.cfg, ks[:mid], a=lo, b=boundary, ctx=self.ctx)
        right = CTreap(self.cfg, ks[mid:], a=boundary, b=hi, ctx=self.ctx)
        self._blocks[i:i + 1] = [left, right]
        self._bounds.insert(i + 1, boundary)
        self._vm_ids.insert(i + 1, self._vm_new())
        self._fen = _Fenwick([len(b) for b in self._blocks])
        self._sync(i)
        self._sync(i + 1)

    def _merge(self, i: int) -> None:
        self.stats["merges"] += 1
        j = i + 1 if i + 1 < len(self._blocks) else i - 1
        a = min(i, j)
        lo = self._bounds[a]
        hi = self._window(a + 1)[1]
        ks = self._blocks[a].keys() + self._blocks[a + 1].keys()
        if len(ks) > 4 * self.B:
            # the merged run would overflow, so cut it back into halves
            mid = (len(ks) + 1) // 2
            boundary = ks[mid]
            self._blocks[a] = CTreap(self.cfg, ks[:mid], a=lo, b=boundary,
                                     ctx=self.ctx)
            self._blocks[a + 1] = CTreap(self.cfg, ks[mid:], a=boundary, b=hi,
                                         ctx=self.ctx)
            self._bounds[a + 1] = boundary
            self._sync(a)
            self._sync(a + 1)
        else:
            self._blocks[a] = CTreap(self.cfg, ks, a=lo, b=hi, ctx=self.ctx)
            del self._blocks[a + 1]
            del self._bounds[a + 1]
            self._vm_drop(self._vm_ids.pop(a + 1))
            self._sync(a)
        self._fen = _Fenwick([len(b) for b in self._blocks])

    # -- health ------------------------------------------------------------------------

    def check_invariants(self, deep: bool = False) -> None:
        m = len(self._blocks)
        assert self._bounds[0] == 0 and len(self._bounds) == m
        assert all(x < y for x, y in zip(self._bounds, self._bounds[1:]))
        assert self._bounds[-1] < self.cfg.U
        counts = [len(b) for b in self._blocks]
        assert sum(counts) == self.n == self._fen.prefix(m)
        if m > 1:
            assert all(self.B <= c <= 4 * self.B for c in counts)
        else:
            assert counts[0] <= 4 * self.B
        for i, blk in enumerate(self._blocks):
            lo, hi = self._window(i)
            assert (blk.a, blk.b) == (lo, hi)
            ks = blk.keys()
            assert all(lo <= k < hi for k in ks)
            words, k, K = blk.stored_image()
            vid = self._vm_ids[i]
            image = list(words) + words_from_int(k, self._spill_words(K),
                                                 self.cfg.w)
            assert self._alloc.length(vid) == len(image), \
                f"block {i}: arena region length mismatch"
            assert [self._alloc.read(vid, j + 1)
                    for j in range(len(image))] == image, \
                f"block {i}: arena words differ from the block image"
            if deep:
                assert blk.decode_keys() == ks, \
                    f"block {i}: stored bits decode to different keys"
                fresh = CTreap(self.cfg, ks, a=lo, b=hi, ctx=self.ctx)
                assert fresh.stored_image() == (words, k, K), \
                    f"block {i}: stored bits are not canonical for its keys"
        self._alloc.check_invariants()
        ids = sorted(self._vm_ids + self._free_ids)
        assert ids == list(range(len(ids)))

    # -- space accounting -----------------------------------------------------------------

    def space_report(self) -> dict:
        w = self.cfg.w
        m = len(self._blocks)
        pay_bits = 0
        pay_exact = 0.0
        block_ideal = 0.0
        failing = 0
        for blk in self._blocks:
            words, _, K = blk.stored_image()
            pay_bits += w * len(words) + (K - 1).bit_length()
            pay_exact += w * len(words) + math.log2(K)
            if len(blk):
                block_ideal += log2_cost(binom(blk.b - blk.a, len(blk)),
                                         self.cfg.F, UP).to_float()
            failing += blk.mode == FAILURE
        ideal = (log2_cost(binom(self.cfg.U, self.n), self.cfg.F, UP).to_float()
                 if self.n else 0.0)
        directory_bits = m * ((self.cfg.U - 1).bit_length()
                              + max(1, self.n.bit_length()))
        header_bits = m * w
        alloc_bits = self._alloc.footprint_bits()
        fixed_floor = 8 * w
        total = alloc_bits + header_bits + directory_bits + fixed_floor
        return {
            "n": self.n,
            "B": self.B,
            "blocks": m,
            "normal_blocks": m - failing,
            "failure_blocks": failing,
            "payload_bits": pay_bits,
            "payload_bits_exact": pay_exact,
            "header_bits": header_bits,
            "directory_bits": directory_bits,
            "allocator_bits": alloc_bits,
            "allocator_bound_bits": self._alloc.footprint_bound_bits(),
            "fixed_floor_bits": fixed_floor,
            "total_bits": total,
            "ideal_bits": ideal,
            "block_ideal_bits": block_ideal,
            "superadditivity_margin": ideal - block_ideal,
            "shared_table_families": len(self.ctx.registry),
            "stats": dict(self.stats),
        }

    # -- snapshots ---------------------------------------------------------------------------

    def to_snapshot(self) -> bytes:
        out = bytearray(_MAGIC)
        out += self.cfg.config_hash().encode()
        for value in (self.n, self.B, self.n0, len(self._blocks)):
            out += value.to_bytes(16, "little")
        for b in self._bounds:
            out += b.to_bytes(16, "little")
        for blk in self._blocks:
            blob = blk.to_bytes()
            out += len(blob).to_bytes(8, "little")
            out += blob
        return bytes(out)

    @classmethod
    def from_snapshot(cls, cfg: RunConfig, data: bytes,
                      ctx: CodecContext = None) -> "Fid":
        pos = len(_MAGIC)
        if data[:pos] != _MAGIC:
            raise DecodeError("not a snapshot")
        want = cfg.config_hash().encode()
        if data[pos:pos + 12] != want:
            raise DecodeError("snapshot built under a different configuration")
        pos += 12

        def take(nbytes):
            nonlocal pos
            if pos + nbytes > len(data):
                raise DecodeError("truncated snapshot")
            piece = data[pos:pos + nbytes]
            pos += nbytes
            return piece

        n, B, n0, m = (int.from_bytes(take(16), "little") for _ in range(4))
        if m < 1 or B < 1 or n0 < 1:
            raise DecodeError("snapshot header out of range")
        if cfg.B is not None and B != cfg.B:
            raise DecodeError("snapshot block parameter disagrees with config")
        bounds = [int.from_bytes(take(16), "little") for _ in range(m)]
        if bounds[0] != 0 or bounds[-1] >= cfg.U or \
                any(x >= y for x, y in zip(bounds, bounds[1:])):
            raise DecodeError("snapshot boundaries do not partition the universe")

        fid = cls.__new__(cls)
        fid.cfg = cfg
        fid.ctx = ctx if ctx is not None else make_context(cfg)
        fid.stats = {"splits": 0, "merges": 0, "rebuilds": 0}
        fid.B, fid.n0 = B, n0
        fid._bounds = bounds
        fid._blocks = []
        for i in range(m):
            length = int.from_bytes(take(8), "little")
            blob = take(length)
            lo = bounds[i]
            hi = bounds[i + 1] if i + 1 < m else cfg.U
            fid._blocks.append(CTreap.from_bytes(cfg, blob, a=lo, b=hi,
                                                 ctx=fid.ctx))
        if pos != len(data):
            raise DecodeError("trailing bytes after the snapshot")
        counts = [len(b) for b in fid._blocks]
        if sum(counts) != n:
            raise DecodeError("snapshot key count disagrees with its blocks")
        if m > 1 and not all(B <= c <= 4 * B for c in counts):
            raise DecodeError("snapshot block sizes violate the B window")
        if m == 1 and counts[0] > 4 * B:
            raise DecodeError("snapshot block sizes violate the B window")
        fid.n = n
        fid._fen = _Fenwick(counts)
        fid._fresh_arena()
        return fid


# -- bulk key streams --------------------------------------------------------------


def keys_from_text(data) -> list:
    """Whitespace-separated decimal keys."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode()
    return [int(tok) for tok in data.split()]


def keys_from_binary(data: bytes) -> list:
    """8-byte little-endian keys, densely packed."""
    if len(data) % 8:
        raise ValueError("binary key stream must be a multiple of 8 bytes")
    return [int.from_bytes(data[i:i + 8], "little")
            for i in range(0, len(data), 8)]
