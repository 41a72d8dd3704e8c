"""One optimization level: parameters, cost, data, optimizer, and config.

A ``Problem`` refuses to step until the engine has injected its constraining
sets. Its ``step`` runs the four sub-steps (load a batch, evaluate the cost,
ask the engine for the full gradient, update parameters) and leaves
scheduling and upper notifications to the engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import optim
from .autodiff import Tensor
from .errors import InvalidStateError, NumericalError

__all__ = ["ProblemConfig", "Batch", "ArrayDataStream", "constant_stream", "Problem"]

JACOBIAN_ALGOS = ("itd_rmad", "aid_neumann", "aid_cg", "aid_fd")


@dataclass
class ProblemConfig:
    """Per-problem optimization settings.

    ``jacobian_algo`` selects how gradients are pushed through this
    problem's approximated optimum when an upper problem differentiates
    through it. Algorithm-specific fields are validated only when their
    algorithm is selected.
    """

    jacobian_algo: str = "aid_cg"
    unroll_steps: int = 1
    neumann_iterations: int = 3
    neumann_alpha: float | None = None  # defaults to lr when unset
    cg_iterations: int = 32
    cg_tolerance: float = 1e-10
    fd_epsilon: float = 0.01
    first_order: bool = False
    retain_graph: bool = False
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.jacobian_algo not in JACOBIAN_ALGOS:
            raise ValueError(
                f"unknown jacobian_algo {self.jacobian_algo!r}; expected one of {JACOBIAN_ALGOS}"
            )
        if self.unroll_steps < 1:
            raise ValueError("unroll_steps must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.jacobian_algo == "aid_neumann":
            if self.neumann_iterations < 1:
                raise ValueError("neumann_iterations must be >= 1")
            if self.neumann_alpha is not None and self.neumann_alpha <= 0:
                raise ValueError("neumann_alpha must be positive")
        if self.jacobian_algo == "aid_cg":
            if self.cg_iterations < 1:
                raise ValueError("cg_iterations must be >= 1")
            if self.cg_tolerance <= 0:
                raise ValueError("cg_tolerance must be positive")
        if self.jacobian_algo == "aid_fd" and self.fd_epsilon <= 0:
            raise ValueError("fd_epsilon must be positive")
        if self.jacobian_algo == "itd_rmad" and self.optimizer != "sgd":
            raise ValueError("itd_rmad differentiates through the update and requires sgd")

    def replace_from(self, overrides: Mapping[str, object], where: str = "config") -> "ProblemConfig":
        """Strictly apply a dict of overrides, rejecting unknown keys."""
        known = {f.name for f in fields(self)}
        cfg = ProblemConfig(**vars(self))
        for key, value in overrides.items():
            if key not in known:
                raise ValueError(f"{where}: unknown key {key!r}")
            setattr(cfg, key, value)
        cfg.validate()
        return cfg


@dataclass
class Batch:
    """One slice of a data stream; ``sample_indices`` index the source arrays."""

    inputs: Tensor
    targets: Tensor
    sample_indices: np.ndarray

    def __post_init__(self) -> None:
        n = self.inputs.shape[0] if self.inputs.ndim > 0 else 1
        t = self.targets.shape[0] if self.targets.ndim > 0 else 1
        if n != t or n != len(self.sample_indices):
            raise ValueError(
                f"batch leading dimensions disagree: inputs {n}, targets {t}, "
                f"indices {len(self.sample_indices)}"
            )


class ArrayDataStream:
    """Infinite seeded batch iterator over in-memory arrays.

    Cycles forever with a fresh shuffle each epoch; the batch sequence is a
    pure function of (seed, step index).
    """

    def __init__(
        self,
        inputs: np.ndarray,
        targets: np.ndarray,
        batch_size: int,
        seed: int | Sequence[int] = 0,
        shuffle: bool = True,
    ) -> None:
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError("inputs and targets must have the same number of rows")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.inputs = inputs
        self.targets = targets
        self.batch_size = min(batch_size, inputs.shape[0])
        self.seed = (seed,) if isinstance(seed, int) else tuple(seed)
        self.shuffle = shuffle

    def __iter__(self) -> Iterator[Batch]:
        n = self.inputs.shape[0]
        epoch = 0
        while True:
            if self.shuffle:
                order = np.random.default_rng([*self.seed, epoch]).permutation(n)
            else:
                order = np.arange(n)
            for start in range(0, n - self.batch_size + 1, self.batch_size):
                idx = order[start : start + self.batch_size]
                yield Batch(
                    ad.constant(self.inputs[idx]),
                    ad.constant(self.targets[idx]),
                    idx.copy(),
                )
            epoch += 1


def constant_stream(inputs: np.ndarray, targets: np.ndarray) -> ArrayDataStream:
    """Full-batch stream that yields the same batch forever."""
    inputs = np.asarray(inputs, dtype=np.float64)
    return ArrayDataStream(inputs, targets, batch_size=inputs.shape[0], shuffle=False)


CostFn = Callable[[list[Tensor], Mapping[str, "Problem"], Batch], Tensor]


class Problem:
    """A single optimization level inside a multilevel program.

    ``collaborators`` declares which other problems' parameters the cost
    callback reads; the engine uses the declaration to keep only the
    dependency paths that can contribute a nonzero gradient.
    """

    def __init__(
        self,
        name: str,
        params: Sequence[Tensor],
        data_stream,
        cost_fn: CostFn,
        config: ProblemConfig | None = None,
        collaborators: Sequence[str] = (),
    ) -> None:
        if not name:
            raise ValueError("problem name must be nonempty")
        params = list(params)
        if not params:
            raise ValueError(f"problem {name!r} needs at least one parameter tensor")
        for p in params:
            if not isinstance(p, Tensor) or p.node is None:
                raise ValueError(f"problem {name!r}: parameters must be recorded leaf tensors")
        config = config or ProblemConfig()
        config.validate()
        self.name = name
        self.params = params
        self.cost_fn = cost_fn
        self.config = config
        self.collaborators = tuple(collaborators)
        self.data_stream = data_stream
        self._batches = iter(data_stream)

        self.uppers: frozenset[str] | None = None
        self.lowers: frozenset[str] | None = None
        self.child_call_counters: dict[str, int] = {}
        self.local_step = 0
        self.last_batch: Batch | None = None
        self.itd_trace: list[list[Tensor]] | None = None
        self.pending_trace_consumers = 0
        self._momentum: optim.MomentumState | None = None
        self._opt_state = (
            None if self.is_iterative else optim.init_optimizer_state(config.optimizer, params)
        )

    @property
    def is_iterative(self) -> bool:
        return self.config.jacobian_algo == "itd_rmad"

    def inject_dependencies(
        self,
        uppers: Sequence[str],
        lowers: Sequence[str],
        callers: Sequence[str] | None = None,
    ) -> None:
        """Fix the constraining sets; called exactly once by the engine.

        ``callers`` are the problems whose completed unrolls schedule this
        one (the lower-to-upper in-edges); they default to ``lowers``.
        """
        if self.uppers is not None:
            raise InvalidStateError(f"problem {self.name!r}: dependencies already injected")
        uppers = frozenset(uppers)
        lowers = frozenset(lowers)
        if self.name in uppers or self.name in lowers:
            raise ValueError(f"problem {self.name!r} cannot constrain itself")
        self.uppers = uppers
        self.lowers = lowers
        callers = lowers if callers is None else callers
        self.child_call_counters = {c: 0 for c in sorted(callers)}

    def cost(self, batch: Batch, problems: Mapping[str, "Problem"]) -> Tensor:
        out = self.cost_fn(self.params, problems, batch)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ValueError(f"problem {self.name!r}: cost must be a scalar tensor")
        if not np.isfinite(out.data).all():
            raise NumericalError(f"problem {self.name!r}: non-finite cost {out.data!r}")
        return out

    def step(self, engine) -> float:
        """Run the four sub-steps and return the cost value."""
        if self.uppers is None:
            raise InvalidStateError(
                f"problem {self.name!r} cannot step before dependency injection"
            )
        if self.is_iterative and self.local_step % self.config.unroll_steps == 0:
            self._begin_unroll()
        batch = next(self._batches)
        cost = self.cost(batch, engine.collaborators(self))
        self.last_batch = batch
        grads = engine.gradient(self, cost)
        cfg = self.config
        if self.is_iterative:
            new_params, self._momentum = optim.sgd_step_functional(
                self.params, grads, lr=cfg.lr, momentum=cfg.momentum, state=self._momentum
            )
            self.params = new_params
            self.itd_trace.append(list(new_params))
        else:
            optim.optimizer_apply(
                cfg.optimizer,
                self.params,
                grads,
                self._opt_state,
                lr=cfg.lr,
                momentum=cfg.momentum,
                beta1=cfg.adam_beta1,
                beta2=cfg.adam_beta2,
                eps=cfg.adam_eps,
            )
        self.local_step += 1
        return float(cost.data)

    def _begin_unroll(self) -> None:
        """Start a fresh differentiation epoch: parameters become leaves."""
        self.release_unroll()
        self.itd_trace = []

    def release_unroll(self) -> None:
        """Drop the recorded optimization path of the current unroll."""
        self.itd_trace = None
        self.pending_trace_consumers = 0
        if any(p.node is not None and p.node.edges for p in self.params):
            self.params = [ad.leaf(p.data.copy()) for p in self.params]
        if self._momentum is not None:
            self._momentum = self._momentum.detached()

    def snapshot_params(self) -> list[Tensor]:
        """Deep copies of the parameters, detached from the tape."""
        return [Tensor(p.data.copy()) for p in self.params]

    def __repr__(self) -> str:
        return f"Problem({self.name!r}, steps={self.local_step})"
