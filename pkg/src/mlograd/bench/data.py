"""Synthetic datasets for the desk-scale benchmarks.

Everything is a pure function of an explicit numpy Generator, so runs are
reproducible from (config, seed) alone.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "gaussian_classes",
    "long_tailed_classes",
    "shifted_source",
    "mixture_regression",
    "FeatureMaps",
]


def _class_means(dim: int, classes: int, separation: float) -> np.ndarray:
    """Deterministic, well-separated class means on +/- axes."""
    means = np.zeros((classes, dim))
    for c in range(classes):
        axis = c % dim
        sign = 1.0 if (c // dim) % 2 == 0 else -1.0
        means[c, axis] = sign * separation / 2.0
        means[c] -= separation / (2.0 * classes)
    return means


def gaussian_classes(
    rng: np.random.Generator,
    counts: list[int],
    dim: int,
    separation: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance Gaussian blobs, one per class, ``counts[c]`` samples each."""
    means = _class_means(dim, len(counts), separation)
    xs, ys = [], []
    for c, n in enumerate(counts):
        xs.append(rng.standard_normal((n, dim)) + means[c])
        ys.append(np.full(n, c, dtype=np.float64))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return X[order], y[order]


def long_tailed_classes(
    rng: np.random.Generator,
    n_majority: int,
    imbalance_factor: float,
    classes: int,
    dim: int,
    separation: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Class sizes interpolate geometrically from majority to majority/IF."""
    counts = [
        max(2, int(round(n_majority * imbalance_factor ** (-c / max(1, classes - 1)))))
        for c in range(classes)
    ]
    return gaussian_classes(rng, counts, dim, separation)


def shifted_source(
    rng: np.random.Generator,
    n: int,
    corrupted_fraction: float,
    shift_magnitude: float,
    classes: int,
    dim: int,
    separation: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source-domain data where a fraction of samples drifted toward wrong clusters.

    A corrupted sample of class c is drawn around
    ``mu_c + shift * (mu_other - mu_c)``: at shift 0 it matches the clean
    cluster, at shift 1 it sits on another class's cluster while keeping
    label c. Returns (X, y, corrupted_mask).
    """
    means = _class_means(dim, classes, separation)
    per_class = n // classes
    xs, ys, flags = [], [], []
    for c in range(classes):
        n_bad = int(round(per_class * corrupted_fraction))
        n_good = per_class - n_bad
        xs.append(rng.standard_normal((n_good, dim)) + means[c])
        ys.append(np.full(n_good, c, dtype=np.float64))
        flags.append(np.zeros(n_good, dtype=bool))
        if n_bad:
            other = (c + 1) % classes
            bad_mean = means[c] + shift_magnitude * (means[other] - means[c])
            xs.append(rng.standard_normal((n_bad, dim)) + bad_mean)
            ys.append(np.full(n_bad, c, dtype=np.float64))
            flags.append(np.ones(n_bad, dtype=bool))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    mask = np.concatenate(flags)
    order = rng.permutation(len(y))
    return X[order], y[order], mask[order]


class FeatureMaps:
    """A family of fixed random tanh feature maps sharing one input space."""

    def __init__(self, rng: np.random.Generator, count: int, dim: int, width: int):
        self.weights = [rng.standard_normal((dim, width)) * 1.5 for _ in range(count)]
        self.biases = [rng.standard_normal(width) * 0.5 for _ in range(count)]

    @property
    def count(self) -> int:
        return len(self.weights)

    @property
    def width(self) -> int:
        return self.weights[0].shape[1]

    def apply(self, k: int, X: np.ndarray) -> np.ndarray:
        return np.tanh(X @ self.weights[k] + self.biases[k])


def mixture_regression(
    rng: np.random.Generator,
    maps: FeatureMaps,
    true_map: int,
    n: int,
    dim: int,
    noise: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Targets generated by a linear readout of one designated feature map."""
    X = rng.standard_normal((n, dim))
    beta = rng.standard_normal((maps.width, 1))
    y = maps.apply(true_map, X) @ beta + noise * rng.standard_normal((n, 1))
    return X, y, beta
