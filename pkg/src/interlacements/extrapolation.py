"""Richardson-type extrapolation of sequences with known error exponents."""

import numpy as np


def richardson(h, values, powers):
    """Extrapolate ``values(h)`` to ``h -> 0``.

    Fits ``values = limit + sum_j c_j h**powers[j]`` through the last
    ``len(powers) + 1`` samples and returns ``limit``.

    Parameters
    ----------
    h : array_like
        Step parameters (e.g. ``1/N`` or ``1/log N``), any order.
    values : array_like
        Sequence values at those steps.
    powers : sequence of float
        Error exponents to eliminate, leading first.
    """
    h = np.asarray(h, dtype=float)
    values = np.asarray(values, dtype=float)
    m = len(powers) + 1
    if len(h) < m:
        raise ValueError(f"need at least {m} samples to eliminate {len(powers)} terms")
    h, values = h[-m:], values[-m:]
    A = np.column_stack([np.ones(m)] + [h**p for p in powers])
    return float(np.linalg.solve(A, values)[0])


def richardson_sequence(h, values, powers):
    """Extrapolated limits using growing prefixes; useful to see them settle."""
    m = len(powers) + 1
    return np.array(
        [richardson(h[: k + 1], values[: k + 1], powers) for k in range(m - 1, len(h))]
    )
