"""Uncompressed tabulation-weighted treap with rebuild-based updates.

Doubles as the structural oracle for the compressed encoding: the tree shape is
a pure function of (set, seeds), and updates rebuild the smallest subtree that
the paper's analysis says they must, so rebuild-size statistics are meaningful.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterator, Optional

from .weights import WeightFn


class FailureDetected(Exception):
    """A weight tie (or floor violation) makes the treap undefined."""


def failure_predicate(wf: WeightFn, keys, t_fail: int) -> bool:
    """True when the set must fall back to failure mode."""
    seen = set()
    for x in keys:
        h = wf.weight(x)
        if h < t_fail or h in seen:
            return True
        seen.add(h)
    return False


@dataclass
class TreapNode:
    key: int
    left: Optional["TreapNode"] = None
    right: Optional["TreapNode"] = None
    size: int = 1

    @property
    def r(self) -> int:
        """Rank of the pivot inside its subproblem (left subtree size)."""
        return self.left.size if self.left else 0


def _size(node) -> int:
    return node.size if node else 0


def _build(keys, wf: WeightFn) -> Optional[TreapNode]:
    """Canonical treap over sorted distinct keys (weights assumed tie-free)."""
    if not keys:
        return None
    best = 0
    best_w = wf.weight(keys[0])
    for i in range(1, len(keys)):
        hw = wf.weight(keys[i])
        if hw > best_w:
            best, best_w = i, hw
    node = TreapNode(keys[best])
    node.left = _build(keys[:best], wf)
    node.right = _build(keys[best + 1:], wf)
    node.size = 1 + _size(node.left) + _size(node.right)
    return node


class ReferenceTreap:
    def __init__(self, wf: WeightFn, keys=()):
        self.wf = wf
        self._keys = sorted(keys)
        if len(set(self._keys)) != len(self._keys):
            raise ValueError("duplicate keys")
        if self._has_tie():
            raise FailureDetected("weight tie in initial set")
        self.root = _build(self._keys, wf)
        self.inserts = 0
        self.total_rebuilt = 0
        self.last_rebuild_size = 0

    def _has_tie(self) -> bool:
        ws = [self.wf.weight(x) for x in self._keys]
        return len(set(ws)) != len(ws)

    # -- queries -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, x: int) -> bool:
        node = self.root
        while node:
            if x == node.key:
                return True
            node = node.left if x < node.key else node.right
        return False

    def __iter__(self) -> Iterator[int]:
        return iter(self._keys)

    def rank(self, x: int) -> int:
        node, acc = self.root, 0
        while node:
            if x <= node.key:
                node = node.left
            else:
                acc += _size(node.left) + 1
                node = node.right
        return acc

    def select(self, i: int) -> int:
        if not 0 <= i < len(self):
            raise IndexError("select index out of range")
        node = self.root
        while True:
            ls = _size(node.left)
            if i < ls:
                node = node.left
            elif i == ls:
                return node.key
            else:
                i -= ls + 1
                node = node.right

    def depth(self) -> int:
        def go(node):
            return 0 if node is None else 1 + max(go(node.left), go(node.right))
        return go(self.root)

    # -- updates (rebuild based) ----------------------------------------------

    def locate_rebuild_root(self, x: int) -> Optional[TreapNode]:
        """First node on the root path whose weight loses to h(x); None = leaf."""
        hx = self.wf.weight(x)
        node = self.root
        while node:
            if self.wf.weight(node.key) < hx:
                return node
            node = node.left if x < node.key else node.right
        return None

    def insert(self, x: int) -> None:
        if x in self:
            raise ValueError(f"{x} already present")
        hx = self.wf.weight(x)
        if any(self.wf.weight(y) == hx for y in self._keys):
            raise FailureDetected(f"insert({x}) creates a weight tie")
        target = self.locate_rebuild_root(x)
        self._rebuild_at(target, add=x)
        bisect.insort(self._keys, x)
        self.inserts += 1
        self.total_rebuilt += self.last_rebuild_size

    def delete(self, x: int) -> None:
        if x not in self:
            raise ValueError(f"{x} not present")
        node, parent = self.root, None
        while node.key != x:
            parent = node
            node = node.left if x < node.key else node.right
        self._rebuild_subtree(node, parent, remove=x)
        self._keys.remove(x)

    def _subtree_keys(self, node) -> list:
        out = []
        stack = [node]
        while stack:
            cur = stack.pop()
            if cur:
                out.append(cur.key)
                stack.extend((cur.left, cur.right))
        out.sort()
        return out

    def _rebuild_at(self, target, add: int) -> None:
        """Rebuild the subtree rooted at `target` with `add` included."""
        if target is None:
            # leaf insertion: weights on the whole path dominate h(add)
            self.last_rebuild_size = 1
            leaf = TreapNode(add)
            if self.root is None:
                self.root = leaf
                return
            node = self.root
            while True:
                node.size += 1
                nxt = node.left if add < node.key else node.right
                if nxt is None:
                    if add < node.key:
                        node.left = leaf
                    else:
                        node.right = leaf
                    return
                node = nxt
        else:
            keys = self._subtree_keys(target)
            bisect.insort(keys, add)
            self.last_rebuild_size = len(keys)
            self._replace(target, _build(keys, self.wf), grow=1)

    def _rebuild_subtree(self, node, parent, remove: int) -> None:
        keys = self._subtree_keys(node)
        keys.remove(remove)
        self.last_rebuild_size = len(keys) + 1
        fresh = _build(keys, self.wf)
        if parent is None:
            self.root = fresh
        else:
            if parent.left is node:
                parent.left = fresh
            else:
                parent.right = fresh
            self._fix_sizes_to(parent, delta=-1)

    def _replace(self, target, fresh, grow: int) -> None:
        if target is self.root:
            self.root = fresh
            return
        node = self.root
        while True:
            node.size += grow
            nxt = node.left if fresh.key < node.key else node.right
            # descend by key order of the rebuilt pivot; target sat on this path
            if nxt is target:
                if nxt is node.left:
                    node.left = fresh
                else:
                    node.right = fresh
                return
            node = nxt

    def _fix_sizes_to(self, stop_parent, delta: int) -> None:
        # recompute sizes on the path root -> stop_parent (inclusive)
        node = self.root
        key = stop_parent.key
        while node is not None:
            node.size += delta
            if node is stop_parent:
                break
            node = node.left if key < node.key else node.right


def same_tree(a: Optional[TreapNode], b: Optional[TreapNode]) -> bool:
    if a is None or b is None:
        return a is b is None
    return (a.key == b.key and a.size == b.size
            and same_tree(a.left, b.left) and same_tree(a.right, b.right))
