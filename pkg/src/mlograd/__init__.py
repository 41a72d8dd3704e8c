"""Gradient-based multilevel optimization with interchangeable
best-response Jacobian algorithms and a self-contained float64 autodiff tape.
"""

from .autodiff import (
    Tensor,
    Tape,
    create,
    leaf,
    constant,
    elementwise,
    matmul,
    reduce,
    dot,
    sqnorm,
    loss,
    mse,
    softmax_cross_entropy,
    softmax_cross_entropy_per_sample,
    weighted_softmax_cross_entropy,
    grad,
    hvp,
    cross_vjp,
    recording_paused,
    alloc_stats,
    reset_peak_alloc,
)
from .optim import MomentumState, sgd_step_functional, optimizer_apply, init_optimizer_state
from .problem import ProblemConfig, Problem, Batch, ArrayDataStream, constant_stream
from .graph import DependencyGraph, compile_paths
from .jacobian import (
    BestResponseVjpRequest,
    best_response_vjp,
    vjp_itd_rmad,
    vjp_aid_neumann,
    vjp_aid_cg,
    vjp_aid_fd,
)
from .engine import Engine, EngineReport

__version__ = "0.1.0"
