"""Parameter updates in two flavors.

``sgd_step_functional`` builds new recorded tensors so that gradients flow
through the update (the substrate for differentiating through an unrolled
optimization path). ``optimizer_apply`` mutates parameter data in place and
never touches the tape; it exists for problems whose updates are treated as
opaque (SGD or Adam).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidStateError

__all__ = [
    "MomentumState",
    "sgd_step_functional",
    "OptimizerState",
    "init_optimizer_state",
    "optimizer_apply",
]


@dataclass
class MomentumState:
    """Velocity tensors matching a parameter list element-wise."""

    velocities: list[Tensor]

    def detached(self) -> "MomentumState":
        return MomentumState([v.detach() for v in self.velocities])


def _check_shapes(params, grads, what: str) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{what}: {len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"{what}: gradient shape {g.shape} does not match {p.shape}")


def sgd_step_functional(
    params: list[Tensor],
    grads: list[Tensor],
    lr: float,
    momentum: float = 0.0,
    state: MomentumState | None = None,
) -> tuple[list[Tensor], MomentumState]:
    """One SGD(+momentum) step as new recorded tensors.

    v' = momentum * v + g ; theta' = theta - lr * v'. Inputs are never
    mutated, and the returned tensors stay connected to everything the
    gradients depend on.
    """
    _check_shapes(params, grads, "sgd_step_functional")
    if state is not None:
        _check_shapes(params, state.velocities, "sgd_step_functional momentum state")
    new_params: list[Tensor] = []
    new_velocities: list[Tensor] = []
    lr_c = ad.constant(float(lr))
    for i, (p, g) in enumerate(zip(params, grads)):
        if momentum != 0.0 and state is not None:
            v = ad.add(ad.mul(ad.constant(float(momentum)), state.velocities[i]), g)
        else:
            v = g
        new_velocities.append(v)
        new_params.append(ad.sub(p, ad.mul(lr_c, v)))
    return new_params, MomentumState(new_velocities)


@dataclass
class OptimizerState:
    """Mutable per-parameter buffers for the in-place optimizers."""

    kind: str
    velocities: list[np.ndarray] = field(default_factory=list)
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def init_optimizer_state(kind: str, params: list[Tensor]) -> OptimizerState:
    if kind == "sgd":
        return OptimizerState("sgd", velocities=[np.zeros(p.shape) for p in params])
    if kind == "adam":
        return OptimizerState(
            "adam",
            m=[np.zeros(p.shape) for p in params],
            v=[np.zeros(p.shape) for p in params],
        )
    raise ValueError(f"unknown optimizer kind {kind!r}")


def optimizer_apply(
    kind: str,
    params: list[Tensor],
    grads: list[Tensor],
    state: OptimizerState,
    *,
    lr: float,
    momentum: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Update parameter data in place; appends nothing to the tape."""
    _check_shapes(params, grads, "optimizer_apply")
    if state is None or state.kind != kind:
        raise InvalidStateError(f"optimizer state not initialized for kind {kind!r}")
    if kind == "sgd":
        if len(state.velocities) != len(params):
            raise InvalidStateError("sgd state does not match the parameter list")
        for p, g, vel in zip(params, grads, state.velocities):
            np.multiply(vel, momentum, out=vel)
            np.add(vel, g.data, out=vel)
            p.data -= lr * vel
    elif kind == "adam":
        if len(state.m) != len(params):
            raise InvalidStateError("adam state does not match the parameter list")
        state.step += 1
        t = state.step
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m *= beta1
            m += (1.0 - beta1) * g.data
            v *= beta2
            v += (1.0 - beta2) * g.data * g.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    else:
        raise ValueError(f"unknown optimizer kind {kind!r}")
