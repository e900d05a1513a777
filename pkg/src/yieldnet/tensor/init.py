"""Parameter initialization."""

import math

import numpy as np


def xavier_bound(fan_in: int, fan_out: int) -> float:
    """Half-width of the uniform initialization interval, sqrt(6/(fan_in+fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fans must be positive, got ({fan_in}, {fan_out})")
    return math.sqrt(6.0 / (fan_in + fan_out))


def xavier_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. U(-a, a) with a = sqrt(6/(fan_in+fan_out)) as float64."""
    a = xavier_bound(fan_in, fan_out)
    return rng.uniform(-a, a, size=shape)


def xavier_init(fan_in: int, fan_out: int, shape, rng_seed: int) -> np.ndarray:
    """Seeded convenience wrapper around xavier_uniform."""
    return xavier_uniform(shape, fan_in, fan_out, np.random.default_rng(rng_seed))
