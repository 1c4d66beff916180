"""Pure-Python thinning loop (fallback when the compiled kernel is absent).

Must stay in lockstep with _thinning.pyx: both consume the generator as
alternating scalar standard-exponential / uniform draws, so the two paths
produce bit-identical arrival streams from the same bit generator state.
"""
import numpy as np


def sample_thinned(rng, ratios, lam_max, t_end):
    """Accepted arrival times of an inhomogeneous Poisson process on (0, t_end].

    :param rng: numpy Generator (consumed sequentially)
    :param ratios: per-hour acceptance probabilities lambda(hour)/lam_max
    :param lam_max: majorizing constant rate per minute, > 0
    :param t_end: horizon in minutes
    :return: float64 array of accepted times, strictly increasing
    """
    last = len(ratios) - 1
    out = []
    t = 0.0
    while True:
        t += rng.standard_exponential() / lam_max
        if t > t_end:
            break
        idx = int(t / 60.0)
        if idx > last:
            idx = last
        if rng.random() <= ratios[idx]:
            out.append(t)
    return np.asarray(out, dtype=np.float64)
