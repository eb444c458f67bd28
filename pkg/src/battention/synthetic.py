"""Labelled synthetic feature sets: unit-sphere class centroids plus Gaussian noise."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .graph import FeatureMatrix, LabelVector


def gen_synthetic(classes: int, samples: int, dim: int = 32, noise: float = 0.5,
                  seed: int = 0) -> tuple[FeatureMatrix, LabelVector]:
    """``classes * samples`` points, class-major order.

    Each point is its class centroid plus isotropic Gaussian noise with
    per-coordinate std ``noise / sqrt(dim)``, so ``noise`` is roughly the
    norm of the perturbation relative to the unit-norm centroid.
    """
    if classes < 1 or samples < 1 or dim < 1:
        raise ParameterError("classes, samples and dim must be >= 1")
    if noise < 0:
        raise ParameterError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((classes, dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), samples)
    x = centroids[labels] + (noise / np.sqrt(dim)) * rng.standard_normal((labels.size, dim))
    return FeatureMatrix(x), LabelVector(labels)
