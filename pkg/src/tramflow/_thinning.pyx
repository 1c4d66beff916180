# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled thinning loop; bit-compatible with _thinning_py.sample_thinned.

Draws go straight through the numpy bit-generator C interface, in the same
alternating order as the pure path's scalar Generator calls, so a given seed
yields the same stream on either path.
"""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_exponential,
    random_standard_uniform,
)

cnp.import_array()


def sample_thinned(object rng, double[::1] ratios, double lam_max, double t_end):
    """See _thinning_py.sample_thinned; identical contract and stream."""
    cdef bitgen_t *bitgen
    cdef Py_ssize_t last = ratios.shape[0] - 1
    cdef Py_ssize_t n = 0, cap = 256, idx
    cdef double t = 0.0
    cdef cnp.ndarray buf = np.empty(cap, dtype=np.float64)
    cdef double[::1] view = buf

    capsule = rng.bit_generator.capsule
    bitgen = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")
    with rng.bit_generator.lock:
        while True:
            t += random_standard_exponential(bitgen) / lam_max
            if t > t_end:
                break
            idx = <Py_ssize_t>(t / 60.0)
            if idx > last:
                idx = last
            if random_standard_uniform(bitgen) <= ratios[idx]:
                if n == cap:
                    cap *= 2
                    buf = np.resize(buf, cap)
                    view = buf
                view[n] = t
                n += 1
    return buf[:n].copy()
