"""Run configuration shared by every layer of the structure."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Optional


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class RunConfig:
    """Validated knobs for one structure instance.

    Universe size and weight range are the only mandatory fields; everything
    else defaults to the recommended desk-scale values.  Fractional-bit slack
    knobs are exact rationals so capacity checks stay integer-exact.
    """

    U: int
    nmax: int = 8
    W: int = 16
    w: int = 32                      # VM word size in bits
    A_count: Optional[int] = None    # number of weight tables, default W^2
    q: int = 256                     # entropy-encoder redundancy parameter
    delta_slack: Fraction = Fraction(1, 2)   # per-key slack budget, bits
    delta_mid: Fraction = Fraction(1, 10)    # per-node midpoint slack, bits
    delta_h: Fraction = Fraction(1, 20)      # pivot-budget diagnostic slack, bits
    delta_step: Fraction = Fraction(1, 5)    # per-encoder-step slack, bits
    t_fail: Optional[int] = None     # weight floor, default max(1, W/(16*nmax))
    B: Optional[int] = None          # FID block parameter, default by size rule
    seed: int = 0
    F: int = 64                      # fixed-point fractional bits for audits
    c_spill: int = 32                # transient spill cap, in words

    def __post_init__(self):
        for name in ("delta_slack", "delta_mid", "delta_h", "delta_step"):
            v = getattr(self, name)
            if not isinstance(v, Fraction):
                object.__setattr__(self, name, Fraction(str(v)))
        if self.U < 1:
            raise ValueError("U must be at least 1")
        if not _is_pow2(self.W) or self.W < 2:
            raise ValueError("W must be a power of two >= 2")
        if self.nmax < 1:
            raise ValueError("nmax must be positive")
        if self.w < 16:
            raise ValueError("word size w must be at least 16")
        if self.U > 1 << (2 * self.w):
            raise ValueError("U must fit in two machine words")
        if self.q < 2:
            raise ValueError("q must be at least 2")
        if self.F < 32:
            raise ValueError("F must be at least 32")
        if self.c_spill < 4:
            raise ValueError("c_spill must be at least 4")
        if self.A_count is not None and self.A_count < 2:
            raise ValueError("A_count must be at least 2")
        if self.B is not None and self.B < 1:
            raise ValueError("B must be positive")
        if self.t_fail is not None and self.t_fail < 1:
            raise ValueError("t_fail must be at least 1")
        if not (0 < self.delta_mid <= self.delta_slack):
            raise ValueError("need 0 < delta_mid <= delta_slack")
        if self.delta_step <= 0 or self.delta_h <= 0:
            raise ValueError("slack knobs must be positive")
        # The per-node capacity budget: one encoder step plus coder losses must
        # fit inside the per-key slack (see sizefns for where each term lands).
        if self.delta_step + self.delta_mid + Fraction(6, self.q) > self.delta_slack:
            raise ValueError("delta_step + delta_mid + 6/q must not exceed delta_slack")

    # -- derived values ----------------------------------------------------

    @property
    def a_count(self) -> int:
        return self.A_count if self.A_count is not None else self.W * self.W

    @property
    def t_fail_eff(self) -> int:
        if self.t_fail is not None:
            return self.t_fail
        return max(1, self.W // (16 * self.nmax))

    @property
    def superchunk(self) -> int:
        return self.W ** 4

    @property
    def domain_top(self) -> int:
        sc = self.superchunk
        return -(-self.U // sc) * sc

    def config_hash(self) -> str:
        """Stable 12-hex digest over every field, for report headers."""
        parts = []
        for f in fields(self):
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        blob = ";".join(parts).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **kw) -> "RunConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return RunConfig(**vals)


def default_block_size(n: int, w: int) -> int:
    """Block parameter B for a FID holding about n keys on w-bit words."""
    if n < 2:
        return 8
    ratio = math.log2(max(2, n)) / math.log2(max(2, w))
    b = 1 << math.ceil(ratio ** (1 / 3))
    return min(4096, max(8, b))


_CONFIG_KEYS = None


def parse_config_text(text: str) -> dict:
    """Parse key=value lines (comments with #) into RunConfig kwargs."""
    global _CONFIG_KEYS
    if _CONFIG_KEYS is None:
        _CONFIG_KEYS = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, val)
    return out


def _coerce(key: str, val: str):
    if key.startswith("delta_"):
        return Fraction(val)
    if val.lower() in ("none", ""):
        return None
    return int(val, 0)
