"""Weight initialization helpers."""

import numpy as np

from .autodiff import Tensor


def xavier_uniform(rng, shape):
    """Uniform in +/- sqrt(6 / (fan_in + fan_out)) for a 2-D weight."""
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)
