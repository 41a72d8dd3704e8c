"""Analytic quadratic programs with closed-form hypergradients.

These drive the correctness checks: the engine's gradient for the
uppermost problem is compared against (a) hand-differentiated closed forms
and (b) central finite differences of the entire pipeline, where every
inner solve is re-run in plain numpy at perturbed upper parameters.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..engine import Engine
from ..problem import ArrayDataStream, Problem, ProblemConfig, constant_stream

__all__ = [
    "QUAD_A",
    "QUAD_LAMBDA0",
    "QUAD_TARGET",
    "quadratic_bilevel_engine",
    "bilevel_closed_form",
    "bilevel_fd_pipeline",
    "one_step_unrolled_reference",
    "TRI_H1",
    "TRI_M1",
    "TRI_H2",
    "TRI_M2",
    "TRI_T",
    "TRI_RHO",
    "TRI_THETA0",
    "trilevel_engine",
    "trilevel_closed_form",
    "trilevel_fd_pipeline",
    "identity_bilevel_engine",
]

# inner cost 0.5 w'Aw - lambda'w, outer cost 0.5 ||w - target||^2
QUAD_A = np.diag([2.0, 4.0])
QUAD_LAMBDA0 = np.array([4.0, 8.0])
QUAD_TARGET = np.array([1.0, 1.0])


def _dummy_stream() -> ArrayDataStream:
    return constant_stream(np.zeros((1, 1)), np.zeros(1))


def quadratic_bilevel_engine(
    inner_config: ProblemConfig,
    outer_config: ProblemConfig | None = None,
    lambda0: np.ndarray = QUAD_LAMBDA0,
    w0: np.ndarray | None = None,
) -> Engine:
    """The diagonal quadratic bilevel program wired through the engine."""
    A = ad.constant(QUAD_A)
    target = ad.constant(QUAD_TARGET.reshape(2, 1))
    w_init = np.zeros((2, 1)) if w0 is None else w0.reshape(2, 1)
    w = ad.leaf(w_init)
    lam = ad.leaf(lambda0.reshape(2, 1))

    def inner_cost(params, problems, batch):
        wt = params[0]
        quad = ad.mul(ad.constant(0.5), ad.dot(wt, ad.matmul(A, wt)))
        return ad.sub(quad, ad.dot(problems["outer"].params[0], wt))

    def outer_cost(params, problems, batch):
        diff = ad.sub(problems["inner"].params[0], target)
        return ad.mul(ad.constant(0.5), ad.sqnorm(diff))

    inner = Problem("inner", [w], _dummy_stream(), inner_cost, inner_config, collaborators=("outer",))
    outer = Problem(
        "outer",
        [lam],
        _dummy_stream(),
        outer_cost,
        outer_config or ProblemConfig(lr=0.05),
        collaborators=("inner",),
    )
    return Engine(
        [inner, outer],
        {"u2l": {"outer": ["inner"]}, "l2u": {"inner": ["outer"]}},
    )


def bilevel_closed_form(lambda0: np.ndarray = QUAD_LAMBDA0) -> np.ndarray:
    """d/dlambda of 0.5||A^-1 lambda - t||^2 = A^-T (w* - t)."""
    w_star = np.linalg.solve(QUAD_A, lambda0)
    return np.linalg.solve(QUAD_A.T, w_star - QUAD_TARGET)


def bilevel_fd_pipeline(
    lambda0: np.ndarray = QUAD_LAMBDA0, eps: float = 1e-6, solve_steps: int = 500, lr: float = 0.2
) -> np.ndarray:
    """Whole-pipeline central differences, inner solve re-run in numpy."""

    def outer_value(lam: np.ndarray) -> float:
        w = np.zeros(2)
        for _ in range(solve_steps):
            w = w - lr * (QUAD_A @ w - lam)
        return 0.5 * float(np.sum((w - QUAD_TARGET) ** 2))

    g = np.zeros_like(lambda0)
    for i in range(lambda0.size):
        e = np.zeros_like(lambda0)
        e[i] = eps
        g[i] = (outer_value(lambda0 + e) - outer_value(lambda0 - e)) / (2 * eps)
    return g


def one_step_unrolled_reference(w_hat: np.ndarray, lr: float) -> np.ndarray:
    """What the finite-difference variant approximates on this program.

    With v = dC_outer/dw at the unrolled weights and cross curvature -I,
    the one-step-unrolled contraction is lr * v.
    """
    v = w_hat - QUAD_TARGET
    return lr * v


def identity_bilevel_engine(inner_config: ProblemConfig, lambda0: float = 3.0) -> Engine:
    """Inner 0.5 (w - lambda)^2, outer 0.5 w^2: best response is the identity."""
    w = ad.leaf(np.zeros(1))
    lam = ad.leaf(np.array([lambda0]))

    def inner_cost(params, problems, batch):
        d = ad.sub(params[0], problems["outer"].params[0])
        return ad.mul(ad.constant(0.5), ad.sqnorm(d))

    def outer_cost(params, problems, batch):
        return ad.mul(ad.constant(0.5), ad.sqnorm(problems["inner"].params[0]))

    inner = Problem("inner", [w], _dummy_stream(), inner_cost, inner_config, collaborators=("outer",))
    outer = Problem(
        "outer", [lam], _dummy_stream(), outer_cost, ProblemConfig(lr=0.05), collaborators=("inner",)
    )
    return Engine([inner, outer], {"u2l": {"outer": ["inner"]}, "l2u": {"inner": ["outer"]}})


# ---------------------------------------------------------------------------
# trilevel analytic program:
#   pretrain  w: 0.5 w'H1 w - (M1' theta)' w          -> w*(theta) = H1^-1 M1' theta
#   finetune  v: 0.5 v'H2 v - (M2 w)' v               -> v*(w)     = H2^-1 M2 w
#   reweight  theta: 0.5 ||v - t||^2 + rho/2 ||theta||^2

TRI_H1 = np.diag([2.0, 4.0])
TRI_M1 = np.array([[1.0, 0.5], [-0.3, 2.0]])
TRI_H2 = np.diag([1.0, 3.0])
TRI_M2 = np.array([[0.8, -0.4], [0.6, 1.2]])
TRI_T = np.array([1.0, -1.0])
TRI_RHO = 0.1
TRI_THETA0 = np.array([1.5, -0.5])


def trilevel_engine(
    pretrain_config: ProblemConfig,
    finetune_config: ProblemConfig,
    reweight_config: ProblemConfig | None = None,
    theta0: np.ndarray = TRI_THETA0,
) -> Engine:
    H1, M1, H2, M2 = map(ad.constant, (TRI_H1, TRI_M1, TRI_H2, TRI_M2))
    t = ad.constant(TRI_T.reshape(2, 1))
    w = ad.leaf(np.zeros((2, 1)))
    v = ad.leaf(np.zeros((2, 1)))
    theta = ad.leaf(theta0.reshape(2, 1))

    def pretrain_cost(params, problems, batch):
        wt = params[0]
        quad = ad.mul(ad.constant(0.5), ad.dot(wt, ad.matmul(H1, wt)))
        drive = ad.dot(ad.matmul(ad.transpose(M1), problems["reweight"].params[0]), wt)
        return ad.sub(quad, drive)

    def finetune_cost(params, problems, batch):
        vt = params[0]
        quad = ad.mul(ad.constant(0.5), ad.dot(vt, ad.matmul(H2, vt)))
        drive = ad.dot(ad.matmul(M2, problems["pretrain"].params[0]), vt)
        return ad.sub(quad, drive)

    def reweight_cost(params, problems, batch):
        diff = ad.sub(problems["finetune"].params[0], t)
        fit = ad.mul(ad.constant(0.5), ad.sqnorm(diff))
        reg = ad.mul(ad.constant(0.5 * TRI_RHO), ad.sqnorm(params[0]))
        return ad.add(fit, reg)

    pretrain = Problem(
        "pretrain", [w], _dummy_stream(), pretrain_cost, pretrain_config, collaborators=("reweight",)
    )
    finetune = Problem(
        "finetune", [v], _dummy_stream(), finetune_cost, finetune_config, collaborators=("pretrain",)
    )
    reweight = Problem(
        "reweight",
        [theta],
        _dummy_stream(),
        reweight_cost,
        reweight_config or ProblemConfig(lr=0.05),
        collaborators=("finetune",),
    )
    return Engine(
        [pretrain, finetune, reweight],
        {
            "u2l": {"reweight": ["pretrain"]},
            "l2u": {"pretrain": ["finetune"], "finetune": ["reweight"]},
        },
    )


def trilevel_closed_form(theta0: np.ndarray = TRI_THETA0) -> np.ndarray:
    w_star = np.linalg.solve(TRI_H1, TRI_M1.T @ theta0)
    v_star = np.linalg.solve(TRI_H2, TRI_M2 @ w_star)
    # rho theta + M1 H1^-1 M2' H2^-1 (v* - t)
    return TRI_RHO * theta0 + TRI_M1 @ np.linalg.solve(
        TRI_H1, TRI_M2.T @ np.linalg.solve(TRI_H2, v_star - TRI_T)
    )


def trilevel_fd_pipeline(
    theta0: np.ndarray = TRI_THETA0, eps: float = 1e-6, solve_steps: int = 500
) -> np.ndarray:
    """Central differences of the full program, inner solves re-run in numpy."""

    def value(theta: np.ndarray) -> float:
        w = np.zeros(2)
        for _ in range(solve_steps):
            w = w - 0.2 * (TRI_H1 @ w - TRI_M1.T @ theta)
        v = np.zeros(2)
        for _ in range(solve_steps):
            v = v - 0.25 * (TRI_H2 @ v - TRI_M2 @ w)
        return 0.5 * float(np.sum((v - TRI_T) ** 2)) + 0.5 * TRI_RHO * float(np.sum(theta**2))

    g = np.zeros_like(theta0)
    for i in range(theta0.size):
        e = np.zeros_like(theta0)
        e[i] = eps
        g[i] = (value(theta0 + e) - value(theta0 - e)) / (2 * eps)
    return g
