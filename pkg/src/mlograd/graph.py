"""The two-edge-type dependency graph and its path compiler.

Edges come in two kinds: upper-to-lower (a problem's nonoptimal parameters
feed a lower problem's optimum) and lower-to-upper (one optimum feeds
another). A valid differentiation path starts with exactly one
upper-to-lower edge and continues only along lower-to-upper edges; the
compiler enumerates every simple path of that form with a depth-first
search and returns them grouped by (origin, destination).
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import GraphCycleError, HierarchyError

__all__ = ["DependencyGraph", "compile_paths"]

EdgeMap = dict[str, tuple[str, ...]]


def _normalize(raw: Mapping[str, Sequence[str]] | None, names: Sequence[str], kind: str) -> EdgeMap:
    known = set(names)
    out: EdgeMap = {}
    for src, dsts in (raw or {}).items():
        if src not in known:
            raise KeyError(f"{kind} edge source {src!r} is not a registered problem")
        seen: list[str] = []
        for d in dsts:
            if d not in known:
                raise KeyError(f"{kind} edge target {d!r} is not a registered problem")
            if d == src:
                raise ValueError(f"{kind} self-edge on {src!r}")
            if d not in seen:
                seen.append(d)
        out[src] = tuple(sorted(seen))
    return out


class DependencyGraph:
    """Validated u2l/l2u adjacency over a fixed set of problem names."""

    def __init__(
        self,
        names: Sequence[str],
        u2l: Mapping[str, Sequence[str]] | None = None,
        l2u: Mapping[str, Sequence[str]] | None = None,
    ) -> None:
        self.names = tuple(names)
        if len(set(self.names)) != len(self.names):
            raise ValueError("problem names must be unique")
        self.u2l = _normalize(u2l, self.names, "u2l")
        self.l2u = _normalize(l2u, self.names, "l2u")
        self._check_l2u_acyclic()
        self._check_hierarchy()

    @classmethod
    def from_spec(cls, names: Sequence[str], spec: Mapping[str, Mapping[str, Sequence[str]]]):
        unknown = set(spec) - {"u2l", "l2u"}
        if unknown:
            raise ValueError(f"dependency spec has unknown sections {sorted(unknown)}")
        return cls(names, spec.get("u2l"), spec.get("l2u"))

    def u2l_targets(self, name: str) -> tuple[str, ...]:
        return self.u2l.get(name, ())

    def l2u_targets(self, name: str) -> tuple[str, ...]:
        return self.l2u.get(name, ())

    def u2l_sources(self, name: str) -> tuple[str, ...]:
        return tuple(sorted(s for s, ds in self.u2l.items() if name in ds))

    def l2u_sources(self, name: str) -> tuple[str, ...]:
        return tuple(sorted(s for s, ds in self.l2u.items() if name in ds))

    def has_l2u_edge(self, src: str, dst: str) -> bool:
        return dst in self.l2u.get(src, ())

    def _check_l2u_acyclic(self) -> None:
        indeg = {n: 0 for n in self.names}
        for src, dsts in self.l2u.items():
            for d in dsts:
                indeg[d] += 1
        queue = sorted(n for n, d in indeg.items() if d == 0)
        removed = 0
        while queue:
            n = queue.pop(0)
            removed += 1
            for d in self.l2u.get(n, ()):
                indeg[d] -= 1
                if indeg[d] == 0:
                    queue.append(d)
            queue.sort()
        if removed != len(self.names):
            cycle = self._find_l2u_cycle()
            raise GraphCycleError(f"lower-to-upper graph has a cycle: {' -> '.join(cycle)}")

    def _find_l2u_cycle(self) -> list[str]:
        color: dict[str, int] = {}
        trail: list[str] = []

        def visit(n: str) -> list[str] | None:
            color[n] = 1
            trail.append(n)
            for d in self.l2u.get(n, ()):
                if color.get(d) == 1:
                    return trail[trail.index(d) :] + [d]
                if color.get(d, 0) == 0:
                    found = visit(d)
                    if found:
                        return found
            color[n] = 2
            trail.pop()
            return None

        for n in self.names:
            if color.get(n, 0) == 0:
                found = visit(n)
                if found:
                    return found
        return []

    def _l2u_reachable(self, src: str) -> set[str]:
        seen: set[str] = set()
        stack = [src]
        while stack:
            n = stack.pop()
            for d in self.l2u.get(n, ()):
                if d not in seen:
                    seen.add(d)
                    stack.append(d)
        return seen

    def _check_hierarchy(self) -> None:
        # a u2l edge i -> j makes j the lower problem; j may then never be
        # downstream of i in the l2u order
        for src, dsts in self.u2l.items():
            reach = self._l2u_reachable(src)
            for d in dsts:
                if d in reach:
                    raise HierarchyError(
                        f"u2l edge {src!r} -> {d!r} contradicts the lower-to-upper "
                        f"ordering ({d!r} is l2u-downstream of {src!r})"
                    )


def compile_paths(graph: DependencyGraph) -> dict[tuple[str, str], list[tuple[str, ...]]]:
    """Enumerate every valid simple path, keyed by (origin, destination).

    Each path is the tuple of problem names from the differentiating problem
    through the chain of optima it reaches. Results are deterministically
    ordered (lexicographic by name sequence).
    """
    compiled: dict[tuple[str, str], list[tuple[str, ...]]] = {}
    for k in sorted(graph.names):
        for first in graph.u2l_targets(k):
            stack: list[tuple[str, ...]] = [(k, first)]
            while stack:
                path = stack.pop()
                end = path[-1]
                compiled.setdefault((k, end), []).append(path)
                for nxt in graph.l2u_targets(end):
                    if nxt not in path:
                        stack.append(path + (nxt,))
    for paths in compiled.values():
        paths.sort()
    return compiled
