"""Finite-difference verification of every differentiable operation.

Each registered case builds a random scalar composition around one op; its
reverse-mode gradient is compared against central differences of the
forward evaluation only, so the check is independent of the backward rules
it validates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = ["GRADCHECK_CASES", "fd_gradient", "check_case", "run_gradcheck"]

Builder = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray]]]


@dataclass
class GradCase:
    name: str
    build: Builder


def fd_gradient(f: Callable[..., float], arrays: list[np.ndarray], step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of a scalar function of numpy arrays."""
    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = f(*arrays)
            flat[j] = orig - step
            down = f(*arrays)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def _rand(rng, *shape, low=-1.0, high=1.0):
    return rng.uniform(low, high, size=shape)


def _case_elementwise(op: str, positive: bool = False, away_from_zero: bool = False) -> Builder:
    def build(rng):
        x = _rand(rng, 2, 3)
        if positive:
            x = np.abs(x) + 0.5
        if away_from_zero:
            x = np.where(np.abs(x) < 0.1, x + 0.25 * np.sign(x + 1e-12), x)
        r = rng.standard_normal((2, 3))

        def f(xs: Tensor) -> Tensor:
            return ad.dot(ad.elementwise(op, xs), ad.constant(r))

        return f, [x]

    return build


def _case_binary(op: str) -> Builder:
    def build(rng):
        a = _rand(rng, 3, 2)
        b = _rand(rng, 3, 2)
        r = rng.standard_normal((3, 2))

        def f(ta: Tensor, tb: Tensor) -> Tensor:
            return ad.dot(ad.elementwise(op, ta, tb), ad.constant(r))

        return f, [a, b]

    return build


def _case_matmul(rng):
    a = _rand(rng, 3, 4)
    b = _rand(rng, 4, 2)
    r = rng.standard_normal((3, 2))

    def f(ta, tb):
        return ad.dot(ad.matmul(ta, tb), ad.constant(r))

    return f, [a, b]


def _case_sum(rng):
    x = _rand(rng, 4)

    def f(t):
        return ad.reduce("sum", ad.elementwise("mul", t, t))

    return f, [x]


def _case_mean(rng):
    x = _rand(rng, 5)

    def f(t):
        return ad.reduce("mean", ad.elementwise("exp", t))

    return f, [x]


def _case_dot(rng):
    u = _rand(rng, 4)
    v = _rand(rng, 4)

    def f(tu, tv):
        return ad.dot(tu, tv)

    return f, [u, v]


def _case_sqnorm(rng):
    u = _rand(rng, 6)

    def f(t):
        return ad.sqnorm(t)

    return f, [u]


def _case_mse(rng):
    p = _rand(rng, 4, 2)
    t = _rand(rng, 4, 2)

    def f(tp, tt):
        return ad.mse(tp, tt)

    return f, [p, t]


def _case_softmax_ce(rng):
    logits = _rand(rng, 4, 3, low=-2.0, high=2.0)
    labels = rng.integers(0, 3, size=4).astype(np.float64)

    def f(tl):
        return ad.softmax_cross_entropy(tl, ad.constant(labels))

    return f, [logits]


def _case_weighted_ce(rng):
    logits = _rand(rng, 4, 3, low=-2.0, high=2.0)
    labels = rng.integers(0, 3, size=4).astype(np.float64)
    weights = np.abs(rng.standard_normal((4, 1))) + 0.2

    def f(tl, tw):
        return ad.weighted_softmax_cross_entropy(tl, ad.constant(labels), tw)

    return f, [logits, weights]


def _case_sgd_step(rng):
    from ..optim import sgd_step_functional

    theta = _rand(rng, 3)
    upper = _rand(rng, 3)
    r = rng.standard_normal(3)

    def f(t_theta, t_upper):
        # one differentiable update on a quadratic coupled to an upper parameter
        cost = ad.mul(ad.constant(0.5), ad.sqnorm(ad.sub(t_theta, t_upper)))
        g = ad.grad(cost, [t_theta], create_graph=True)
        new_params, _ = sgd_step_functional([t_theta], g, lr=0.1, momentum=0.0)
        return ad.dot(new_params[0], ad.constant(r))

    return f, [theta, upper]


def _case_composite(rng):
    x = _rand(rng, 3, 3)
    w = _rand(rng, 3, 2)

    def f(tx, tw):
        h = ad.tanh(ad.matmul(tx, tw))
        return ad.reduce("mean", ad.elementwise("mul", h, h))

    return f, [x, w]


GRADCHECK_CASES: list[GradCase] = [
    GradCase("add", _case_binary("add")),
    GradCase("sub", _case_binary("sub")),
    GradCase("mul", _case_binary("mul")),
    GradCase("neg", _case_elementwise("neg")),
    GradCase("relu", _case_elementwise("relu", away_from_zero=True)),
    GradCase("tanh", _case_elementwise("tanh")),
    GradCase("sigmoid", _case_elementwise("sigmoid")),
    GradCase("exp", _case_elementwise("exp")),
    GradCase("log", _case_elementwise("log", positive=True)),
    GradCase("matmul", _case_matmul),
    GradCase("sum", _case_sum),
    GradCase("mean", _case_mean),
    GradCase("dot", _case_dot),
    GradCase("sqnorm", _case_sqnorm),
    GradCase("mse", _case_mse),
    GradCase("softmax_cross_entropy", _case_softmax_ce),
    GradCase("weighted_softmax_cross_entropy", _case_weighted_ce),
    GradCase("sgd_step_functional", _case_sgd_step),
    GradCase("composite", _case_composite),
]


def _rel_err(approx: np.ndarray, reference: np.ndarray) -> float:
    denom = max(1.0, float(np.max(np.abs(reference))))
    return float(np.max(np.abs(approx - reference))) / denom


def check_case(case: GradCase, rng: np.random.Generator, step: float = 1e-5) -> float:
    """Max relative error of reverse-mode vs central differences for one draw."""
    f, arrays = case.build(rng)
    inputs = [ad.leaf(a.copy()) for a in arrays]
    out = f(*inputs)
    analytic = [g.data for g in ad.grad(out, inputs)]

    def value(*arrs: np.ndarray) -> float:
        with ad.recording_paused():
            return float(f(*[ad.constant(a) for a in arrs]).data)

    # the sgd-step case differentiates internally and needs recording on
    if case.name == "sgd_step_functional":
        def value(*arrs: np.ndarray) -> float:  # noqa: F811
            return float(f(*[ad.leaf(a.copy()) for a in arrs]).data)

    numeric = fd_gradient(value, arrays, step=step)
    return max(_rel_err(n, a) for n, a in zip(numeric, analytic))


def run_gradcheck(
    seed: int = 0,
    cases_per_op: int = 100,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    corrupt_op: str | None = None,
) -> tuple[dict[str, float], bool]:
    """Run the whole suite; returns (max rel err per op, all passed).

    ``corrupt_op`` is a self-test hook: it perturbs the reported analytic
    gradient for that one op so the harness must flag it.
    """
    errors: dict[str, float] = {}
    for case in GRADCHECK_CASES:
        rng = np.random.default_rng([seed, hash(case.name) % (2**31)])
        worst = 0.0
        for _ in range(cases_per_op):
            err = check_case(case, rng, step=step)
            if case.name == corrupt_op:
                err += 1.0  # simulate a broken backward rule
            worst = max(worst, err)
        errors[case.name] = worst
    return errors, all(e < tolerance for e in errors.values())
