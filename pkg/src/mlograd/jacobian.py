"""Best-response Jacobian vector products, four interchangeable ways.

All four algorithms answer the same question: given a lower problem whose
latest unroll produced an approximate optimum, contract a cotangent ``v``
(shaped like the lower parameters) with the Jacobian of that optimum with
respect to some constraining parameters. The iterative variant replays the
recorded optimization path; the three implicit variants only ever look at
the approximated solution, rebuilding the lower cost on the batch of the
final unroll step so repeated calls are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidStateError, NumericalError
from .problem import Problem, ProblemConfig

__all__ = [
    "BestResponseVjpRequest",
    "best_response_vjp",
    "vjp_itd_rmad",
    "vjp_aid_neumann",
    "vjp_aid_cg",
    "vjp_aid_fd",
]


@dataclass
class BestResponseVjpRequest:
    """Inputs for one Jacobian-vector contraction.

    ``wrt`` are the constraining parameters to differentiate toward; ``v``
    matches the lower problem's parameters. ``config`` defaults to the lower
    problem's own config, which is what selects the algorithm.
    """

    lower: Problem
    wrt: Sequence[Tensor]
    v: Sequence[Tensor]
    problems: Mapping[str, Problem]
    config: ProblemConfig | None = None
    warning_sink: list[str] | None = None

    def resolved_config(self) -> ProblemConfig:
        return self.config if self.config is not None else self.lower.config

    def validate(self) -> None:
        if self.lower.local_step == 0:
            raise InvalidStateError(
                f"lower problem {self.lower.name!r} has never stepped; no approximation exists"
            )
        if len(self.v) != len(self.lower.params):
            raise ValueError("v must match the lower parameter list")
        for p, v in zip(self.lower.params, self.v):
            if p.shape != v.shape:
                raise ValueError(f"v shape {v.shape} does not match parameter shape {p.shape}")

    def warn(self, message: str) -> None:
        if self.warning_sink is not None:
            self.warning_sink.append(message)

    def stop_params(self, through: str | None = None) -> list[Tensor]:
        """Cut points for partial derivatives: every problem's current
        parameters except the problem being differentiated through."""
        return [
            p
            for name, prob in self.problems.items()
            if name != through
            for p in prob.params
        ]


def best_response_vjp(request: BestResponseVjpRequest) -> list[Tensor]:
    algo = request.resolved_config().jacobian_algo
    return _DISPATCH[algo](request)


def _v_is_zero(request: BestResponseVjpRequest) -> bool:
    return all(not np.any(v.data) for v in request.v)


def _zeros_wrt(request: BestResponseVjpRequest) -> list[Tensor]:
    return [ad.zeros_like(p) for p in request.wrt]


def _lower_cost_and_grad(request: BestResponseVjpRequest) -> tuple[Tensor, list[Tensor]]:
    """Re-evaluate the lower cost at the approximate optimum, grad recorded."""
    lower = request.lower
    if lower.last_batch is None:
        raise InvalidStateError(f"lower problem {lower.name!r} has no recorded batch")
    cost = lower.cost(lower.last_batch, request.problems)
    g = ad.grad(cost, lower.params, create_graph=True, stop_at=request.stop_params())
    return cost, g


def _hvp_operator(g: list[Tensor], params: list[Tensor], stop: list[Tensor]):
    """Matrix-free Hessian application on flat vectors, built from a recorded gradient."""

    def apply(x_flat: np.ndarray) -> np.ndarray:
        xs = ad.unflatten_array(x_flat, params)
        s = None
        for gi, xi in zip(g, xs):
            term = ad.dot(gi, ad.constant(xi))
            s = term if s is None else ad.add(s, term)
        if s.node is None:
            return np.zeros_like(x_flat)
        hs = ad.grad(s, params, stop_at=stop)
        return ad.flatten_tensors(hs)

    return apply


def _cross_term(
    g: list[Tensor], wrt: Sequence[Tensor], u_flat: np.ndarray, params, stop: list[Tensor]
) -> list[Tensor]:
    """-(u^T d2C/dw dlambda) given the recorded lower gradient g."""
    us = ad.unflatten_array(u_flat, params)
    s = None
    for gi, ui in zip(g, us):
        term = ad.dot(gi, ad.constant(ui))
        s = term if s is None else ad.add(s, term)
    if s.node is None:
        return [ad.zeros_like(p) for p in wrt]
    out = ad.grad(s, list(wrt), stop_at=stop)
    return [ad.neg(o) for o in out]


def vjp_itd_rmad(request: BestResponseVjpRequest) -> list[Tensor]:
    """Backpropagate v through the recorded unroll of the lower problem."""
    request.validate()
    lower = request.lower
    if lower.itd_trace is None or not lower.itd_trace:
        raise InvalidStateError(
            f"lower problem {lower.name!r} holds no unroll trace; "
            "it is not configured for iterative differentiation"
        )
    if _v_is_zero(request):
        return _zeros_wrt(request)
    final = lower.itd_trace[-1]
    s = None
    for w, v in zip(final, request.v):
        term = ad.dot(w, ad.constant(v.data))
        s = term if s is None else ad.add(s, term)
    if s.node is None:
        return _zeros_wrt(request)
    return ad.grad(s, list(request.wrt), stop_at=request.stop_params(through=lower.name))


def vjp_aid_neumann(request: BestResponseVjpRequest) -> list[Tensor]:
    """Truncated Neumann series for the inverse-Hessian-vector product.

    u = alpha * sum_{j=0..K} (I - alpha H)^j v, iterated as
    p <- p - alpha * H p. Divergence (alpha too large for the curvature)
    surfaces as a NumericalError naming the iteration.
    """
    request.validate()
    if _v_is_zero(request):
        return _zeros_wrt(request)
    cfg = request.resolved_config()
    alpha = cfg.neumann_alpha if cfg.neumann_alpha is not None else cfg.lr
    stop = request.stop_params()
    _, g = _lower_cost_and_grad(request)
    apply_h = _hvp_operator(g, request.lower.params, stop)
    p = ad.flatten_tensors(list(request.v))
    acc = p.copy()
    for j in range(cfg.neumann_iterations):
        p = p - alpha * apply_h(p)
        if not np.all(np.isfinite(p)):
            raise NumericalError(
                f"neumann iterate diverged at iteration {j + 1} (alpha={alpha} too large?)"
            )
        acc += p
    u = alpha * acc
    return _cross_term(g, request.wrt, u, request.lower.params, stop)


def vjp_aid_cg(request: BestResponseVjpRequest) -> list[Tensor]:
    """Conjugate-gradient solve of H u = v with the Hessian as an operator.

    Stops at ``cg_iterations`` or when the residual drops below
    ``cg_tolerance * ||v||``. Detected non-positive curvature returns the
    current iterate and flags a warning rather than aborting.
    """
    request.validate()
    if _v_is_zero(request):
        return _zeros_wrt(request)
    cfg = request.resolved_config()
    stop = request.stop_params()
    _, g = _lower_cost_and_grad(request)
    apply_h = _hvp_operator(g, request.lower.params, stop)
    b = ad.flatten_tensors(list(request.v))
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rs = float(r @ r)
    tol2 = (cfg.cg_tolerance * np.linalg.norm(b)) ** 2
    for i in range(cfg.cg_iterations):
        if rs <= tol2:
            break
        hp = apply_h(p)
        curvature = float(p @ hp)
        if not np.isfinite(curvature) or not np.all(np.isfinite(hp)):
            raise NumericalError(f"cg produced a non-finite iterate at iteration {i + 1}")
        if curvature <= 0.0:
            request.warn(
                f"cg: non-positive curvature at iteration {i + 1} in problem "
                f"{request.lower.name!r}; returning current iterate"
            )
            break
        step = rs / curvature
        x += step * p
        r -= step * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return _cross_term(g, request.wrt, x, request.lower.params, stop)


def vjp_aid_fd(request: BestResponseVjpRequest) -> list[Tensor]:
    """One-step-unrolled approximation via central differences.

    Perturbs the unrolled weights along v, differences the constraining
    gradient of the lower cost, and scales by the lower learning rate. This
    approximates the one-step-unrolled Jacobian contraction
    ``-lr * v^T d2C/dw dlambda``, not the implicit-function answer.
    """
    request.validate()
    if _v_is_zero(request):
        return _zeros_wrt(request)
    cfg = request.resolved_config()
    lower = request.lower
    if lower.last_batch is None:
        raise InvalidStateError(f"lower problem {lower.name!r} has no recorded batch")
    v_flat = ad.flatten_tensors(list(request.v))
    v_norm = float(np.linalg.norm(v_flat))
    eps = cfg.fd_epsilon / v_norm
    if not np.isfinite(eps) or eps == 0.0:
        raise NumericalError(f"finite-difference step underflow (||v|| = {v_norm})")

    saved = [p.data.copy() for p in lower.params]
    wrt = list(request.wrt)
    stop = request.stop_params()

    def grad_wrt_at(sign: float) -> np.ndarray:
        for p, base, v in zip(lower.params, saved, request.v):
            p.data = base + sign * eps * v.data
        cost = lower.cost(lower.last_batch, request.problems)
        return ad.flatten_tensors(ad.grad(cost, wrt, stop_at=stop))

    try:
        g_plus = grad_wrt_at(+1.0)
        g_minus = grad_wrt_at(-1.0)
    finally:
        for p, base in zip(lower.params, saved):
            p.data = base
    out_flat = -cfg.lr * (g_plus - g_minus) / (2.0 * eps)
    return [ad.constant(a) for a in ad.unflatten_array(out_flat, wrt)]


_DISPATCH = {
    "itd_rmad": vjp_itd_rmad,
    "aid_neumann": vjp_aid_neumann,
    "aid_cg": vjp_aid_cg,
    "aid_fd": vjp_aid_fd,
}
