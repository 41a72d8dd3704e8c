"""Execution engine: graph compilation, scheduling, and full gradients.

The engine validates the two-edge-type dependency graph, enumerates the
differentiation paths once, injects constraining sets into every problem,
and then drives the run loop: lowermost problems step repeatedly, and a
completed unroll calls upward so each upper problem steps exactly when all
of its callers have reported. Gradient evaluation walks each compiled path
right to left, so only parameter-sized vectors are ever materialized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConsistencyError, InvalidStateError, UnusedDependencyWarning
from .graph import DependencyGraph, compile_paths
from .jacobian import BestResponseVjpRequest, best_response_vjp
from .problem import Problem

__all__ = ["Engine", "EngineReport"]


@dataclass
class EngineReport:
    """What a run produced: per-problem cost traces and scheduling counts."""

    problem_losses: dict[str, list[float]] = field(default_factory=dict)
    step_counts: dict[str, int] = field(default_factory=dict)
    notifications_received: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class _ProblemView(Mapping):
    """Read-only name -> Problem lookup handed to cost callbacks."""

    def __init__(self, problems: dict[str, Problem]):
        self._problems = problems

    def __getitem__(self, name: str) -> Problem:
        try:
            return self._problems[name]
        except KeyError:
            raise KeyError(
                f"unknown problem {name!r}; registered: {sorted(self._problems)}"
            ) from None

    def __iter__(self):
        return iter(self._problems)

    def __len__(self):
        return len(self._problems)


class Engine:
    """Owns the problems, their dependency graph, and the run loop."""

    def __init__(
        self,
        problems: Sequence[Problem],
        dependencies: Mapping[str, Mapping[str, Sequence[str]]],
    ) -> None:
        names = [p.name for p in problems]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate problem names: {dupes}")
        self.problems: dict[str, Problem] = {p.name: p for p in problems}
        self._registration_order = list(names)
        self.graph = DependencyGraph.from_spec(names, dependencies)
        self.warnings: list[str] = []
        self.last_hypergradient: dict[str, list[np.ndarray]] = {}
        self._view = _ProblemView(self.problems)
        self._losses: dict[str, list[float]] = {n: [] for n in names}
        self._notifications: dict[str, int] = {n: 0 for n in names}

        self.compiled = self.compile_paths()
        self._owner_paths: dict[str, list[tuple[str, tuple[str, ...]]]] = {
            n: [] for n in names
        }
        for name in names:
            prob = self.problems[name]
            reachable = sorted(l for (k, l) in self.compiled if k == name)
            used = []
            for l in reachable:
                if l in prob.collaborators:
                    used.append(l)
                    for path in self.compiled[(name, l)]:
                        self._owner_paths[name].append((l, path))
                else:
                    msg = (
                        f"problem {name!r} can reach {l!r} through the graph but its cost "
                        f"never reads {l!r}; those paths contribute zero and were pruned"
                    )
                    warnings.warn(msg, UnusedDependencyWarning, stacklevel=2)
                    self.warnings.append(msg)
            self._owner_paths[name].sort()
            prob.inject_dependencies(
                uppers=self.graph.u2l_sources(name),
                lowers=used,
                callers=self.graph.l2u_sources(name),
            )

        # how many distinct problems consume each iterative lower's unroll trace
        self._trace_consumers: dict[str, int] = {}
        for owner, pairs in self._owner_paths.items():
            seen_lower: set[str] = set()
            for _, path in pairs:
                for i in range(1, len(path)):
                    lower = path[i]
                    if self.problems[lower].is_iterative and lower not in seen_lower:
                        seen_lower.add(lower)
                        self._trace_consumers[lower] = self._trace_consumers.get(lower, 0) + 1

        self._lowermost = [
            n for n in self._registration_order if not self.graph.l2u_sources(n)
        ]

    def compile_paths(self) -> dict[tuple[str, str], list[tuple[str, ...]]]:
        return compile_paths(self.graph)

    def collaborators(self, problem: Problem) -> Mapping[str, Problem]:
        return self._view

    # ------------------------------------------------------------------
    # gradient evaluation

    def _all_params(self) -> list[Tensor]:
        return [p for prob in self.problems.values() for p in prob.params]

    def gradient(self, problem: Problem, cost: Tensor) -> list[Tensor]:
        """Direct gradient plus every compiled path contribution.

        Each path is evaluated right to left: the direct gradient of the
        cost with respect to the path's final optimum is pushed through one
        best-response contraction per edge until it is shaped like this
        problem's parameters. All direct gradients are partials: flow stops
        at every problem's current parameters, so cross-problem dependence
        enters only through the best-response factors.
        """
        keep_graph = problem.is_iterative
        stop_all = self._all_params()
        direct = ad.grad(cost, problem.params, create_graph=keep_graph, stop_at=stop_all)
        pairs = self._owner_paths.get(problem.name, ())
        if problem.config.first_order or not pairs:
            self._remember_hypergradient(problem.name, direct)
            return direct

        rightmost: dict[str, list[Tensor]] = {}
        consumed_traces: list[Problem] = []
        if keep_graph:
            total = list(direct)
        else:
            buffers = [d.data.copy() for d in direct]
        for l_name, path in pairs:
            lower_final = self.problems[l_name]
            if lower_final.local_step == 0:
                raise InvalidStateError(
                    f"problem {problem.name!r} needs an approximation of {l_name!r}, "
                    "which has never stepped"
                )
            if l_name not in rightmost:
                rightmost[l_name] = ad.grad(cost, lower_final.params, stop_at=stop_all)
            v = rightmost[l_name]
            for i in range(len(path) - 1, 0, -1):
                lower = self.problems[path[i]]
                wrt = self.problems[path[i - 1]].params
                if lower.is_iterative and lower not in consumed_traces:
                    consumed_traces.append(lower)
                request = BestResponseVjpRequest(
                    lower=lower,
                    wrt=wrt,
                    v=v,
                    problems=self._view,
                    warning_sink=self.warnings,
                )
                v = best_response_vjp(request)
            if keep_graph:
                total = [ad.add(t, c) for t, c in zip(total, v)]
            else:
                for buf, c in zip(buffers, v):
                    buf += c.data

        for lower in consumed_traces:
            lower.pending_trace_consumers -= 1
            if not lower.config.retain_graph or lower.pending_trace_consumers <= 0:
                lower.release_unroll()

        result = total if keep_graph else [ad.constant(b) for b in buffers]
        self._remember_hypergradient(problem.name, result)
        return result

    def _remember_hypergradient(self, name: str, grads: list[Tensor]) -> None:
        self.last_hypergradient[name] = [g.data.copy() for g in grads]

    # ------------------------------------------------------------------
    # scheduling

    def notify(self, from_name: str, to_name: str) -> None:
        """Record a completed-unroll call along a lower-to-upper edge."""
        if not self.graph.has_l2u_edge(from_name, to_name):
            raise ConsistencyError(f"no l2u edge {from_name!r} -> {to_name!r}")
        to_prob = self.problems[to_name]
        self._notifications[to_name] += 1
        counters = to_prob.child_call_counters
        counters[from_name] += 1
        if all(c > 0 for c in counters.values()):
            for key in counters:
                counters[key] -= 1
            self._step_and_cascade(to_prob)

    def _step_and_cascade(self, problem: Problem) -> None:
        loss = problem.step(self)
        self._losses[problem.name].append(loss)
        if problem.local_step % problem.config.unroll_steps == 0:
            if problem.is_iterative:
                problem.pending_trace_consumers = self._trace_consumers.get(problem.name, 0)
            for target in self.graph.l2u_targets(problem.name):
                self.notify(problem.name, target)

    def run(self, global_iterations: int) -> EngineReport:
        """Step every lowermost problem ``global_iterations`` times, cascading upward."""
        if global_iterations < 1:
            raise ValueError("global_iterations must be >= 1")
        if not self._lowermost:
            raise InvalidStateError("no lowermost problems to drive")
        for _ in range(global_iterations):
            for name in self._lowermost:
                self._step_and_cascade(self.problems[name])
        return EngineReport(
            problem_losses={n: list(v) for n, v in self._losses.items()},
            step_counts={n: p.local_step for n, p in self.problems.items()},
            notifications_received=dict(self._notifications),
            warnings=list(self.warnings),
        )
