"""Independent path enumeration used to cross-check the engine's compiler.

Works breadth-first over explicit frontier lists (a deliberately different
formulation from the engine's depth-first search): start from every
upper-to-lower edge and repeatedly extend each frontier path by one
lower-to-upper edge, keeping only simple paths.
"""

from __future__ import annotations

import numpy as np

from ..graph import DependencyGraph

__all__ = ["brute_force_paths", "random_dag", "BUILT_IN_GRAPHS"]


def brute_force_paths(graph: DependencyGraph) -> dict[tuple[str, str], list[tuple[str, ...]]]:
    out: dict[tuple[str, str], list[tuple[str, ...]]] = {}
    for k in graph.names:
        frontier = [(k, j) for j in graph.u2l_targets(k)]
        while frontier:
            next_frontier: list[tuple[str, ...]] = []
            for path in frontier:
                out.setdefault((k, path[-1]), []).append(path)
                for nxt in graph.l2u_targets(path[-1]):
                    if nxt not in path:
                        next_frontier.append(path + (nxt,))
            frontier = next_frontier
    for paths in out.values():
        paths.sort()
    return {key: out[key] for key in sorted(out)}


def random_dag(rng: np.random.Generator, max_size: int = 8) -> DependencyGraph:
    """A random valid two-edge-type graph with 2..max_size problems.

    l2u edges only go forward along a random order (guaranteeing
    acyclicity); u2l candidates are kept only when they do not contradict
    that order.
    """
    n = int(rng.integers(2, max_size + 1))
    names = [f"p{i}" for i in range(n)]
    order = list(rng.permutation(n))
    l2u: dict[str, list[str]] = {}
    for i_pos in range(n):
        for j_pos in range(i_pos + 1, n):
            if rng.random() < 0.35:
                src, dst = names[order[i_pos]], names[order[j_pos]]
                l2u.setdefault(src, []).append(dst)

    graph = DependencyGraph(names, {}, l2u)
    u2l: dict[str, list[str]] = {}
    for _ in range(int(rng.integers(0, 2 * n))):
        i, j = rng.integers(0, n, size=2)
        src, dst = names[i], names[j]
        if src == dst or dst in graph._l2u_reachable(src):
            continue
        if dst not in u2l.setdefault(src, []):
            u2l[src].append(dst)
    return DependencyGraph(names, u2l, l2u)


BUILT_IN_GRAPHS = {
    # the four-problem example: two routes from p4 to p3's optimum
    "fig2": {
        "names": ["p1", "p2", "p3", "p4"],
        "u2l": {"p4": ["p3", "p1"]},
        "l2u": {"p1": ["p3"], "p3": ["p4"]},
    },
    "bilevel": {
        "names": ["inner", "outer"],
        "u2l": {"outer": ["inner"]},
        "l2u": {"inner": ["outer"]},
    },
    "trilevel": {
        "names": ["pretrain", "finetune", "reweight"],
        "u2l": {"reweight": ["pretrain"]},
        "l2u": {"pretrain": ["finetune"], "finetune": ["reweight"]},
    },
}
