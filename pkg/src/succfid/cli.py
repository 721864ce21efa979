"""Operator commands: audit space against the information bound, fuzz the
structure against a sorted-list oracle, benchmark op mixes, and move key sets
in and out of the snapshot format.

Configuration is uniform across commands: an optional key=value config file
(--config) merged with one override flag per config field, flags winning.
Every random choice derives from the seed captured in the config, so a run is
reproducible from the (config_hash, seed) pair printed at the head of its
report.  Reports are line oriented (`name = value`); --json appends the same
facts as a single machine-readable line.  Exit status 0 means every check the
command ran came back clean.
"""

from __future__ import annotations

import json
import math
import random
import sys
import time
from collections import Counter
from dataclasses import fields
from fractions import Fraction
from importlib import metadata
from itertools import combinations
from pathlib import Path

import click

from .coder import DecodeError
from .config import RunConfig, _coerce, parse_config_text
from .ctreap import CTreap, FAILURE, make_context, subset_rank, subset_unrank
from .fid import Fid, keys_from_binary, keys_from_text
from .numeric import binom

try:
    _VERSION = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from an uninstalled source tree
    _VERSION = "0+untracked"


# -- report plumbing ------------------------------------------------------------


class Report:
    """Ordered `name = value` lines plus an optional JSON tail."""

    def __init__(self, command: str, cfg: RunConfig = None):
        self.pairs = []
        self.add("command", command)
        self.add("version", _VERSION)
        if cfg is not None:
            self.add("config_hash", cfg.config_hash())
            self.add("seed", cfg.seed)

    def add(self, name: str, value) -> None:
        self.pairs.append((name, value))

    def emit(self, as_json: bool = False, err: bool = False) -> None:
        for name, value in self.pairs:
            click.echo(f"{name} = {value}", err=err)
        if as_json:
            blob = {n: (v if isinstance(v, (int, float, bool)) else str(v))
                    for n, v in self.pairs}
            click.echo("json: " + json.dumps(blob), err=err)


def _finish(rep: Report, ok: bool, as_json: bool, err: bool = False):
    rep.add("result", "PASS" if ok else "FAIL")
    rep.emit(as_json, err=err)
    sys.exit(0 if ok else 1)


# -- configuration plumbing ------------------------------------------------------


def _config_flags(fn):
    """One override flag per config field: --U, --nmax, --delta-slack, ..."""
    for f in reversed(fields(RunConfig)):
        flag = "--" + f.name.replace("_", "-")
        fn = click.option(flag, f.name, default=None, metavar="VAL",
                          help=f"override config field {f.name}")(fn)
    return fn


def _common(fn):
    fn = click.option("--json", "as_json", is_flag=True,
                      help="append one machine-readable JSON line")(fn)
    fn = _config_flags(fn)
    fn = click.option("--config", "config_path",
                      type=click.Path(exists=True, dir_okay=False),
                      help="key=value config file")(fn)
    return fn


def _load_config(config_path, overrides: dict) -> RunConfig:
    kwargs = {}
    if config_path:
        try:
            kwargs.update(parse_config_text(Path(config_path).read_text()))
        except ValueError as exc:
            raise click.UsageError(f"{config_path}: {exc}") from exc
    for name, raw in overrides.items():
        if raw is None:
            continue
        try:
            kwargs[name] = _coerce(name, raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise click.UsageError(
                f"--{name.replace('_', '-')}: cannot parse {raw!r}") from exc
    if kwargs.get("U") is None:
        raise click.UsageError(
            "universe size is required: pass --U or a config file with U=")
    try:
        return RunConfig(**kwargs)
    except ValueError as exc:
        raise click.UsageError(f"bad configuration: {exc}") from exc


def _read_keys(path: str, binary: bool) -> list:
    data = Path(path).read_bytes()
    try:
        return keys_from_binary(data) if binary else keys_from_text(data)
    except ValueError as exc:
        raise click.UsageError(f"{path}: {exc}") from exc


# -- shared measurement helpers --------------------------------------------------


def _flog2(x) -> float:
    """log2 for huge ints and Fractions without overflowing float."""
    if isinstance(x, Fraction):
        return _flog2(x.numerator) - _flog2(x.denominator)
    x = int(x)
    shift = max(0, x.bit_length() - 53)
    return math.log2(x >> shift) + shift


def _measured_bits(tree: CTreap) -> float:
    words, _, spill_top = tree.stored_image()
    return tree.cfg.w * len(words) + math.log2(spill_top)


def _gen_op(rng: random.Random, shadow: list, U: int, cap):
    """One random op; deletes prefer live keys so sets actually shrink."""
    full = cap is not None and len(shadow) >= cap
    r = rng.random()
    if r < 0.42 and not full:
        return "i", rng.randrange(U)
    if r < 0.70:
        if shadow and rng.random() < 0.8:
            return "d", shadow[rng.randrange(len(shadow))]
        return "d", rng.randrange(U)
    if r < 0.86 or not shadow:
        return "r", rng.randrange(U)
    return "s", rng.randrange(len(shadow))


def _apply_op(struct, shadow: list, op: str, x: int):
    """Mirror one op on the structure and the oracle; describe any divergence."""
    from bisect import bisect_left, insort
    if op == "i":
        j = bisect_left(shadow, x)
        expect = j == len(shadow) or shadow[j] != x
        got = struct.insert(x)
        if expect:
            insort(shadow, x)
        if got != expect:
            return f"insert({x}) returned {got}, oracle says {expect}"
    elif op == "d":
        j = bisect_left(shadow, x)
        expect = j < len(shadow) and shadow[j] == x
        got = struct.delete(x)
        if expect:
            shadow.pop(j)
        if got != expect:
            return f"delete({x}) returned {got}, oracle says {expect}"
    elif op == "r":
        want = bisect_left(shadow, x)
        got = struct.rank(x)
        if got != want:
            return f"rank({x}) = {got}, oracle says {want}"
    elif x < len(shadow):  # shrinking may strand a select past the end; skip it
        want = shadow[x]
        got = struct.select(x)
        if got != want:
            return f"select({x}) = {got}, oracle says {want}"
    return None


def _deep_check(struct, shadow: list, cfg: RunConfig, ctx):
    """Full audit: oracle agreement plus canonicity of the stored bits."""
    if isinstance(struct, Fid):
        struct.check_invariants(deep=True)
        if list(struct) != shadow:
            return "stored keys diverged from oracle"
    else:
        if list(struct.decode_keys()) != shadow:
            return "decoded keys diverged from oracle"
        fresh = CTreap(cfg, shadow, ctx=ctx)
        if fresh.stored_image() != struct.stored_image():
            return "stored bits are not canonical for the current set"
    return None


# -- the command group -----------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(_VERSION, prog_name="succfid")
def main():
    """Succinct dynamic rank/select dictionary: audit, fuzz, bench, snapshots."""


# -- audit -----------------------------------------------------------------------


@main.command()
@_common
@click.option("--trials", default=200, show_default=True,
              type=click.IntRange(min=1), help="number of random sets to audit")
@click.option("--set-size", type=int, default=None,
              help="keys per random set (default: mixed over 0..min(nmax, W))")
@click.option("--keys-file", type=click.Path(exists=True, dir_okay=False),
              help="audit exactly the set in this file instead of random sets")
@click.option("--binary", "binary_keys", is_flag=True,
              help="treat --keys-file as 8-byte little-endian records")
@click.option("--per-set", "per_set", is_flag=True,
              help="print one line per audited set")
def audit(config_path, trials, set_size, keys_file, binary_keys, per_set,
          as_json, **overrides):
    """Measure stored bits against the information bound on sample sets.

    Normal-mode sets must fit within log2 C(U, n) plus n times the per-key
    slack budget; failure-mode sets get an extra two-word allowance for the
    word-granular fallback coder.  Also reports the failure-predicate fraction
    and a histogram of per-node, per-key slack from the information model.
    """
    cfg = _load_config(config_path, overrides)
    ctx = make_context(cfg)
    rng = random.Random(cfg.seed)
    if keys_file:
        sets = [sorted(set(_read_keys(keys_file, binary_keys)))]
    else:
        cap = min(cfg.nmax, cfg.W, cfg.U)
        sets = []
        for _ in range(trials):
            k = set_size if set_size is not None else rng.randint(0, cap)
            sets.append(sorted(rng.sample(range(cfg.U), min(k, cfg.U))))

    slack = float(cfg.delta_slack)
    rep = Report("audit", cfg)
    over = 0
    failures = 0
    worst = 0.0
    hist = Counter()
    for i, ks in enumerate(sets):
        tree = CTreap(cfg, ks, ctx=ctx)
        bits = _measured_bits(tree)
        ideal = _flog2(binom(cfg.U, len(ks)))
        failed = tree.mode == FAILURE
        allowance = len(ks) * slack + (2 * cfg.w if failed else 0)
        ok = bits <= ideal + allowance + 1e-9
        over += not ok
        failures += failed
        if ks:
            worst = max(worst, (bits - ideal) / len(ks))
        if ks and not failed:
            sub = ctx.im.full_universe_sub(len(ks))
            for rec in ctx.im.audit_subproblem(sub, ctx.im.encode_info(tuple(ks), sub)):
                if rec.sub.n and rec.N:  # N is the admissible-set count C(V, n)
                    s = (_flog2(rec.inv_prob) - _flog2(rec.N)) / rec.sub.n
                    hist[math.floor(s / 0.05)] += 1
        if per_set:
            rep.add(f"set[{i}]",
                    f"n={len(ks)} mode={'failure' if failed else 'normal'} "
                    f"bits={bits:.3f} ideal={ideal:.3f} {'ok' if ok else 'OVER'}")
    rep.add("sets", len(sets))
    rep.add("failure_sets", failures)
    rep.add("failure_fraction", f"{failures / len(sets):.4f}")
    rep.add("slack_budget_bits_per_key", f"{slack:.4f}")
    rep.add("failure_allowance_bits", 2 * cfg.w)
    rep.add("worst_bits_per_key_over_ideal", f"{worst:.4f}")
    rep.add("sets_over_budget", over)
    for b in sorted(hist):
        rep.add(f"node_slack_hist[{b * 0.05:.2f}..{(b + 1) * 0.05:.2f})", hist[b])
    _finish(rep, over == 0, as_json)


# -- fuzz ------------------------------------------------------------------------


def _corrupt(struct) -> str:
    """Flip one stored bit, bypassing the update path, to exercise the audits."""
    tree = struct._blocks[0] if isinstance(struct, Fid) else struct
    words, spill, spill_top = tree.stored_image()
    if words:
        bent = list(words)
        bent[0] ^= 1
        tree._words = tuple(bent)
        return "flipped bit 0 of the first payload word"
    if spill_top > 1:
        tree._k = spill ^ 1
        return "flipped the spill value"
    return "nothing stored yet; no corruption applied"


def _replay(make, cfg, ctx, trace, check_every):
    """Run a trace from empty; return (step, message) of the first failure."""
    struct = make()
    shadow = []
    err = None
    for step, (op, x) in enumerate(trace):
        try:
            err = _apply_op(struct, shadow, op, x)
            if err is None and (step + 1) % check_every == 0:
                err = _deep_check(struct, shadow, cfg, ctx)
        except Exception as exc:  # a crash is a finding, not a tool failure
            err = f"{type(exc).__name__}: {exc}"
        if err:
            return step, err
    try:
        err = _deep_check(struct, shadow, cfg, ctx)
    except Exception as exc:
        err = f"{type(exc).__name__}: {exc}"
    return (len(trace) - 1, err) if err else None


def _shrink(trace, fails, budget: int = 250):
    """Greedy delta debugging: drop chunks while the failure still reproduces."""
    chunk = max(1, len(trace) // 2)
    spent = 0
    while chunk:
        i = 0
        while i < len(trace):
            cand = trace[:i] + trace[i + chunk:]
            spent += 1
            if spent > budget:
                return trace
            if cand != trace and fails(cand):
                trace = cand
            else:
                i += chunk
        chunk //= 2
    return trace


@main.command()
@_common
@click.option("--ops", default=5000, show_default=True,
              type=click.IntRange(min=1), help="operations to run")
@click.option("--check-every", default=500, show_default=True,
              type=click.IntRange(min=1),
              help="ops between full canonicity + oracle audits")
@click.option("--target", type=click.Choice(["fid", "treap"]), default="fid",
              show_default=True, help="structure under test")
@click.option("--inject-fault", type=click.IntRange(min=0), default=None,
              metavar="OP", help="corrupt one stored bit after op OP "
              "(detector demo; the run should FAIL)")
def fuzz(config_path, ops, check_every, target, inject_fault, as_json,
         **overrides):
    """Drive random ops against a sorted-list oracle with canonicity audits.

    On divergence the failing trace is shrunk by delta debugging and printed
    one op per line, ready to paste into a regression test.
    """
    cfg = _load_config(config_path, overrides)
    ctx = make_context(cfg)
    rng = random.Random(cfg.seed)
    # A lone treap re-encodes the whole set per update, so cap its size.
    cap = 4 * min(cfg.nmax, cfg.W) if target == "treap" else None
    if target == "fid":
        def make():
            return Fid(cfg, (), ctx=ctx)
    else:
        def make():
            return CTreap(cfg, (), ctx=ctx)

    struct = make()
    shadow = []
    trace = []
    checks = 0
    injected = None
    failure = None
    for step in range(ops):
        op = _gen_op(rng, shadow, cfg.U, cap)
        trace.append(op)
        try:
            err = _apply_op(struct, shadow, *op)
            if err is None and step == inject_fault:
                injected = _corrupt(struct)
                checks += 1
                err = _deep_check(struct, shadow, cfg, ctx)
            elif err is None and (step + 1) % check_every == 0:
                checks += 1
                err = _deep_check(struct, shadow, cfg, ctx)
        except Exception as exc:
            err = f"{type(exc).__name__}: {exc}"
        if err:
            failure = (step, err)
            break
    if failure is None:
        try:
            checks += 1
            err = _deep_check(struct, shadow, cfg, ctx)
        except Exception as exc:
            err = f"{type(exc).__name__}: {exc}"
        if err:
            failure = (len(trace) - 1, err)

    rep = Report("fuzz", cfg)
    rep.add("target", target)
    rep.add("ops_run", failure[0] + 1 if failure else ops)
    rep.add("oracle_checks", checks)
    if injected:
        rep.add("fault_injected", injected)
    if failure is None:
        _finish(rep, True, as_json)
    step, message = failure
    rep.add("failed_at_op", step)
    rep.add("failure", message)
    if injected is None:
        def fails(cand):
            return _replay(make, cfg, ctx, cand, check_every) is not None
        small = _shrink(trace[:step + 1], fails)
        rep.add("minimized_ops", len(small))
        for j, (op, x) in enumerate(small):
            rep.add(f"trace[{j}]", f"{op} {x}")
    else:
        rep.add("minimized_ops", "skipped: failure was injected, not trace-induced")
    _finish(rep, False, as_json)


# -- bench -----------------------------------------------------------------------


def _fid_touched_words(f: Fid, x: int) -> int:
    """Words one op touches: the image of the block the key lands in, its
    header, and the directory search path (boundary bisect + prefix counts)."""
    i = f._locate(min(max(x, 0), f.cfg.U - 1))
    words, _, spill_top = f._blocks[i].stored_image()
    path = max(1, len(f._blocks).bit_length())
    return 1 + len(words) + f._spill_words(spill_top) + 2 * path


def _percentile(data, q: float):
    if not data:
        return 0
    data = sorted(data)
    return data[min(len(data) - 1, round(q * (len(data) - 1)))]


def _bench_once(cfg: RunConfig, n: int, ops: int) -> dict:
    ctx = make_context(cfg)
    rng = random.Random(cfg.seed ^ n)
    n = min(n, cfg.U // 2)
    keys = rng.sample(range(cfg.U), n)
    t0 = time.perf_counter()
    f = Fid(cfg, keys, ctx=ctx)
    build_s = time.perf_counter() - t0
    shadow = sorted(keys)
    q_touched = []
    u_touched = []
    encodes = []
    op_times = []
    t_run = time.perf_counter()
    for _ in range(ops):
        op, x = _gen_op(rng, shadow, cfg.U, None)
        e0 = ctx.stats["node_encodes"]
        t1 = time.perf_counter()
        _apply_op(f, shadow, op, x)
        op_times.append((time.perf_counter() - t1) * 1e6)
        if op == "r":
            q_touched.append(_fid_touched_words(f, x))
        elif op == "s":
            if x < len(shadow):
                q_touched.append(_fid_touched_words(f, shadow[x]))
        else:
            u_touched.append(_fid_touched_words(f, x))
            encodes.append(ctx.stats["node_encodes"] - e0)
    total_s = time.perf_counter() - t_run
    return {
        "n": n,
        "blocks": len(f._blocks),
        "build_ms": build_s * 1e3,
        "ops_per_sec": ops / total_s if total_s else float("inf"),
        "query_words_p50": _percentile(q_touched, 0.5),
        "query_words_p90": _percentile(q_touched, 0.9),
        "query_words_p99": _percentile(q_touched, 0.99),
        "update_words_p50": _percentile(u_touched, 0.5),
        "update_words_p99": _percentile(u_touched, 0.99),
        "node_encodes_mean": sum(encodes) / len(encodes) if encodes else 0.0,
        "op_us_p50": _percentile(op_times, 0.5),
        "op_us_p99": _percentile(op_times, 0.99),
    }


@main.command()
@_common
@click.option("--size", "n_target", default=1024, show_default=True,
              type=click.IntRange(min=1), help="resident keys at the top step")
@click.option("--ops", default=2048, show_default=True,
              type=click.IntRange(min=1), help="operations per step")
@click.option("--sweep/--no-sweep", default=True, show_default=True,
              help="double n from 64 up to --size, one row per step")
def bench(config_path, n_target, ops, sweep, as_json, **overrides):
    """Time a mixed op stream and count words touched per operation.

    The *_words_* columns are deterministic for a given config and seed;
    *_ms / *_us / ops_per_sec are wall-clock and vary by machine.
    """
    cfg = _load_config(config_path, overrides)
    rep = Report("bench", cfg)
    rep.add("ops_per_step", ops)
    sizes = []
    if sweep:
        n = 64
        while n < n_target:
            sizes.append(n)
            n *= 2
    sizes.append(n_target)
    rows = [_bench_once(cfg, n, ops) for n in sizes]
    for row in rows:
        cells = []
        for key, val in row.items():
            if key == "n" or (key == "node_encodes_mean" and not val):
                continue
            cells.append(f"{key}={val:.1f}" if isinstance(val, float) else f"{key}={val}")
        rep.add(f"row[n={row['n']}]", " ".join(cells))
    if len(rows) > 1:
        growth = ",".join(f"{b['query_words_p50'] / max(1, a['query_words_p50']):.2f}"
                          for a, b in zip(rows, rows[1:]))
        rep.add("query_words_growth_per_doubling", growth)
    _finish(rep, True, as_json)


# -- encode / decode -------------------------------------------------------------


@main.command()
@_common
@click.argument("keys_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--binary", "binary_keys", is_flag=True,
              help="keys file holds 8-byte little-endian records")
@click.option("--out", "out_path", default="keys.sfid", show_default=True,
              type=click.Path(dir_okay=False, writable=True),
              help="snapshot file to write")
def encode(config_path, keys_path, binary_keys, out_path, as_json, **overrides):
    """Build the structure from a key file and write a verified snapshot."""
    cfg = _load_config(config_path, overrides)
    keys = _read_keys(keys_path, binary_keys)
    try:
        f = Fid(cfg, keys)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    f.check_invariants(deep=True)
    blob = f.to_snapshot()
    Path(out_path).write_bytes(blob)
    sr = f.space_report()
    rep = Report("encode", cfg)
    rep.add("keys", len(f))
    rep.add("blocks", sr["blocks"])
    rep.add("stored_bits", sr["total_bits"])
    rep.add("ideal_bits", f"{float(sr['ideal_bits']):.1f}")
    rep.add("snapshot_bytes", len(blob))
    rep.add("out", out_path)
    _finish(rep, True, as_json)


@main.command()
@_common
@click.argument("snapshot_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default="-", show_default=True,
              help="key file to write, or - for stdout")
@click.option("--binary", "binary_keys", is_flag=True,
              help="write 8-byte little-endian records")
def decode(config_path, snapshot_path, out_path, binary_keys, as_json,
           **overrides):
    """Load a snapshot, verifying canonicity, and emit its keys."""
    cfg = _load_config(config_path, overrides)
    rep = Report("decode", cfg)
    data = Path(snapshot_path).read_bytes()
    try:
        f = Fid.from_snapshot(cfg, data)
    except DecodeError as exc:
        rep.add("error", str(exc))
        _finish(rep, False, as_json)
    ks = f.keys()
    if binary_keys:
        payload = b"".join(x.to_bytes(8, "little") for x in ks)
    else:
        payload = ("\n".join(map(str, ks)) + ("\n" if ks else "")).encode()
    to_stdout = out_path == "-"
    if to_stdout:
        sys.stdout.buffer.write(payload)
        sys.stdout.buffer.flush()
    else:
        Path(out_path).write_bytes(payload)
    rep.add("keys", len(ks))
    rep.add("blocks", len(f._blocks))
    rep.add("canonical", "verified")
    _finish(rep, True, as_json, err=to_stdout)


# -- selftest --------------------------------------------------------------------


def _st_config(seed):
    cfg = RunConfig(U=1 << 20)
    assert cfg.replace(q=128).q == 128
    assert cfg.config_hash() != cfg.replace(q=128).config_hash()
    assert parse_config_text("U = 4096\nq=64 # tight\n") == {"U": 4096, "q": 64}


def _st_subset_coder(seed):
    span = 8
    for n in range(span + 1):
        seen = set()
        for c in combinations(range(span), n):
            z = subset_rank(c, span)
            assert subset_unrank(z, span, n) == c
            seen.add(z)
        assert seen == set(range(len(seen))) and len(seen) == math.comb(span, n)


def _st_treap_roundtrip(seed):
    cfg = RunConfig(U=1 << 20, seed=seed)
    ctx = make_context(cfg)
    rng = random.Random(seed)
    for _ in range(30):
        ks = sorted(rng.sample(range(cfg.U), rng.randint(0, 8)))
        t = CTreap(cfg, ks, ctx=ctx)
        assert list(t.decode_keys()) == ks
        back = CTreap.from_bytes(cfg, t.to_bytes(), ctx=ctx)
        assert back.stored_image() == t.stored_image()


def _st_fid_churn(seed):
    cfg = RunConfig(U=4096, B=2, q=64, seed=seed)
    ctx = make_context(cfg)
    f = Fid(cfg, (), ctx=ctx)
    shadow = []
    rng = random.Random(seed)
    for step in range(300):
        err = _apply_op(f, shadow, *_gen_op(rng, shadow, cfg.U, None))
        assert err is None, err
        if (step + 1) % 75 == 0:
            err = _deep_check(f, shadow, cfg, ctx)
            assert err is None, err


def _st_snapshot(seed):
    cfg = RunConfig(U=1 << 20, seed=seed)
    ks = sorted(random.Random(seed).sample(range(cfg.U), 40))
    f = Fid(cfg, ks)
    blob = f.to_snapshot()
    assert Fid.from_snapshot(cfg, blob).keys() == tuple(ks)
    try:
        Fid.from_snapshot(cfg, b"XXXX" + blob[4:])
    except DecodeError:
        pass
    else:
        raise AssertionError("corrupt magic went undetected")


_SELFTESTS = [
    ("config", _st_config),
    ("subset_coder", _st_subset_coder),
    ("treap_roundtrip", _st_treap_roundtrip),
    ("fid_churn", _st_fid_churn),
    ("snapshot", _st_snapshot),
]


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True,
              help="append one machine-readable JSON line")
def selftest(seed, as_json):
    """Quick built-in battery over fixed desk-scale configurations."""
    rep = Report("selftest", RunConfig(U=1 << 20, seed=seed))
    ok = True
    for name, fn in _SELFTESTS:
        t0 = time.perf_counter()
        try:
            fn(seed)
            rep.add(f"step.{name}", f"ok ({time.perf_counter() - t0:.2f}s)")
        except Exception as exc:  # report the step, keep the battery going
            rep.add(f"step.{name}", f"FAIL: {type(exc).__name__}: {exc}")
            ok = False
    _finish(rep, ok, as_json)


if __name__ == "__main__":
    main()
