"""Shared data generators for the test suite."""

from __future__ import annotations

import numpy as np

from corth import dataset_from_arrays


def example1(n, seed, theta1=2.0, theta2=-1.0, a12=1.5):
    """Two-covariate linear SEM: X1 -> X2, both direct causes of Y."""
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x2 = a12 * x1 + rng.standard_normal(n)
    y = theta1 * x1 + theta2 * x2 + rng.standard_normal(n)
    return dataset_from_arrays(np.column_stack([x1, x2]), y)


def noise_data(n, d, seed):
    rng = np.random.default_rng(seed)
    return dataset_from_arrays(rng.standard_normal((n, d)), rng.standard_normal(n))
