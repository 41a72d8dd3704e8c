"""Small MLPs expressed directly on the autodiff tape."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = ["init_mlp", "mlp_forward", "affine", "accuracy", "balanced_accuracy"]


def init_mlp(rng: np.random.Generator, sizes: list[int]) -> list[Tensor]:
    """Recorded leaf parameters [W1, b1, W2, b2, ...] with scaled-normal init."""
    params: list[Tensor] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        params.append(ad.leaf(rng.standard_normal((fan_in, fan_out)) * scale))
        params.append(ad.leaf(np.zeros((1, fan_out))))
    return params


def affine(X: Tensor, W: Tensor, b: Tensor) -> Tensor:
    # bias rows replicated through a ones-column matmul (no row broadcasting)
    ones = ad.constant(np.ones((X.shape[0], 1)))
    return ad.add(ad.matmul(X, W), ad.matmul(ones, b))


def mlp_forward(params: list[Tensor], X: Tensor, activation: str = "tanh") -> Tensor:
    act = {"tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid}[activation]
    h = X
    n_layers = len(params) // 2
    for layer in range(n_layers):
        h = affine(h, params[2 * layer], params[2 * layer + 1])
        if layer < n_layers - 1:
            h = act(h)
    return h


def _predictions(params: list[Tensor], X: np.ndarray, activation: str) -> np.ndarray:
    with ad.recording_paused():
        logits = mlp_forward(params, ad.constant(X), activation)
    return logits.data.argmax(axis=1)


def accuracy(params: list[Tensor], X: np.ndarray, y: np.ndarray, activation: str = "tanh") -> float:
    pred = _predictions(params, X, activation)
    return float((pred == y.astype(np.int64)).mean())


def balanced_accuracy(
    params: list[Tensor], X: np.ndarray, y: np.ndarray, activation: str = "tanh"
) -> float:
    """Mean per-class recall."""
    pred = _predictions(params, X, activation)
    labels = y.astype(np.int64)
    recalls = []
    for c in np.unique(labels):
        mask = labels == c
        recalls.append(float((pred[mask] == c).mean()))
    return float(np.mean(recalls))
