"""Geometric tail estimates for truncated series."""

import numpy as np

TAIL_WINDOW = 10


def geometric_tail(norms, last_index):
    """Estimate the sum of the norms beyond ``last_index``.

    A model ``c * rho**k`` is fitted by least squares to the log of the last
    ``TAIL_WINDOW`` norms (which are taken to sit at indices
    ``last_index - len(norms) + 1 ... last_index``), and the bound
    ``c * rho**(last_index + 1) / (1 - rho)`` is returned.

    Exact zeros are dropped from the fit. If every norm in the window is zero
    the tail is taken to be zero; if fewer than two nonzero points remain, or
    the fitted ratio is not below one, the result is ``inf``.
    """
    norms = np.asarray(norms, dtype=float)[-TAIL_WINDOW:]
    ks = np.arange(last_index - len(norms) + 1, last_index + 1, dtype=float)
    keep = norms > 0
    if not keep.any():
        return 0.0
    if keep.sum() < 2:
        return np.inf
    slope, intercept = np.polyfit(ks[keep], np.log(norms[keep]), 1)
    if slope >= 0:
        return np.inf
    rho = np.exp(slope)
    return float(np.exp(intercept + slope * (last_index + 1)) / (1.0 - rho))
