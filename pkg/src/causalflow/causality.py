"""happens-before as the transitive closure of refs.

The graph stores edges exactly as events declare them (``backward``: event ->
its refs) plus the reversed view (``forward``: cause -> effects). Reachability
is computed on demand and memoised; under append-only growth with no forward
references an event's ancestor set never changes, so the memo only has to be
dropped when a node that was already referenced shows up late (corrupted logs).
"""

from __future__ import annotations

from collections import defaultdict
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Mapping

from .errors import BrokenChain, CyclicInput, UnknownEvent


class CausalGraph:
    def __init__(self) -> None:
        self.backward: dict[str, frozenset[str]] = {}
        self.forward: dict[str, set[str]] = defaultdict(set)
        self._ancestors: dict[str, frozenset[str]] = {}

    @classmethod
    def from_edges(cls, refs: Mapping[str, Iterable[str]]) -> "CausalGraph":
        g = cls()
        for node, parents in refs.items():
            g.add(node, parents)
        return g

    def add(self, node: str, refs: Iterable[str] = ()) -> None:
        refs = frozenset(refs)
        if node in self.forward or node in self.backward:
            # late arrival of something already referenced: cached closures are stale
            self._ancestors.clear()
        self.backward[node] = refs
        self.forward.setdefault(node, set())
        for r in refs:
            self.forward[r].add(node)

    def __contains__(self, node: str) -> bool:
        return node in self.backward

    def __len__(self) -> int:
        return len(self.backward)

    def nodes(self) -> list[str]:
        return list(self.backward)

    def edges(self) -> set[tuple[str, str]]:
        """(cause, effect) pairs, i.e. ``cause in refs(effect)``."""
        return {(r, n) for n, refs in self.backward.items() for r in refs}

    def ancestors(self, node: str) -> frozenset[str]:
        """All e' with hb(e', node). Dangling refs are included as opaque ids."""
        if node not in self.backward:
            raise UnknownEvent(node)
        cached = self._ancestors.get(node)
        if cached is not None:
            return cached
        seen: set[str] = set()
        stack = list(self.backward[node])
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            memo = self._ancestors.get(cur)
            if memo is not None:
                seen |= memo
                continue
            stack.extend(self.backward.get(cur, ()))
        result = frozenset(seen)
        self._ancestors[node] = result
        return result

    def hb(self, a: str, b: str) -> bool:
        if a not in self.backward:
            raise UnknownEvent(a)
        return a in self.ancestors(b)

    def causal_cone(self, node: str) -> frozenset[str]:
        return self.ancestors(node) - {node}

    def maxima(self, ids: Iterable[str]) -> set[str]:
        """Members of ``ids`` that do not happen-before any other member."""
        ids = set(ids)
        dominated: set[str] = set()
        for e in ids:
            dominated |= self.ancestors(e) & ids
        return ids - dominated

    def minima(self, ids: Iterable[str]) -> set[str]:
        ids = set(ids)
        return {e for e in ids if not (self.ancestors(e) & ids)}

    def is_chain(self, ids: Iterable[str]) -> bool:
        ids = list(dict.fromkeys(ids))
        for i, a in enumerate(ids):
            anc_a = self.ancestors(a)
            for b in ids[i + 1:]:
                if b not in anc_a and a not in self.ancestors(b):
                    return False
        return True

    def find_cycle(self) -> list[str] | None:
        ts = TopologicalSorter({n: set(r) & self.backward.keys() for n, r in self.backward.items()})
        try:
            ts.prepare()
        except CycleError as exc:
            return list(exc.args[1])
        return None

    def check_acyclic(self) -> bool:
        return self.find_cycle() is None

    def topological_order(self, nodes: Iterable[str] | None = None) -> list[str]:
        """Causes before effects; ties keep the order in which nodes were added."""
        keep = set(self.backward) if nodes is None else set(nodes)
        ts = TopologicalSorter()
        for n in self.backward:
            if n in keep:
                ts.add(n, *[r for r in sorted(self.backward[n]) if r in keep])
        try:
            return list(ts.static_order())
        except CycleError as exc:
            raise CyclicInput(f"cycle through {exc.args[1]}") from None

    def transitive_reduction(self) -> "CausalGraph":
        """Smallest edge set with the same closure. Never applied to stored refs."""
        cycle = self.find_cycle()
        if cycle is not None:
            raise CyclicInput(f"cycle through {cycle}")
        reduced = CausalGraph()
        for node, refs in self.backward.items():
            keep = set(refs)
            for r in refs:
                if r not in self.backward:
                    continue
                # r is redundant if another direct cause already sees it
                if any(r in self.ancestors(o) for o in refs if o != r and o in self.backward):
                    keep.discard(r)
            reduced.add(node, keep)
        return reduced

    def closure(self) -> set[tuple[str, str]]:
        return {(a, n) for n in self.backward for a in self.ancestors(n)}


def cell_maxima(history, actor: str, key) -> set[str]:
    return history.graph.maxima(e.id for e in history.events_for(actor, key))


def cell_maximum(history, actor: str, key) -> str | None:
    """The unique causally-last event of an (actor, key) cell, or None if empty."""
    top = cell_maxima(history, actor, key)
    if not top:
        return None
    if len(top) > 1:
        raise BrokenChain(actor, key, top)
    return next(iter(top))
