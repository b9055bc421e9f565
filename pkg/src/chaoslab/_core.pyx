# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pair sums.

The kernel table is the periodic force extended over [-2L, 2L] (2n+1 nodes),
so a difference of two positions in [-L, L) needs no wrap before the lookup.
Each target's sum over sources runs in a fixed order (four interleaved
partial sums, combined the same way every time), so the result does not
depend on the number of threads.
"""

import numpy as np
from cython.parallel cimport prange

cimport openmp


cdef double _row(const double* tab, const double* s, Py_ssize_t ns, double xi) noexcept nogil:
    # tab holds (value, slope) pairs; xi and s are in units of h
    cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0, u0, u1, u2, u3
    cdef Py_ssize_t j, m0, m1, m2, m3, nq = ns - ns % 4
    for j in range(0, nq, 4):
        u0 = xi - s[j]
        u1 = xi - s[j + 1]
        u2 = xi - s[j + 2]
        u3 = xi - s[j + 3]
        m0 = <Py_ssize_t> u0
        m1 = <Py_ssize_t> u1
        m2 = <Py_ssize_t> u2
        m3 = <Py_ssize_t> u3
        a0 += tab[2 * m0] + (u0 - m0) * tab[2 * m0 + 1]
        a1 += tab[2 * m1] + (u1 - m1) * tab[2 * m1 + 1]
        a2 += tab[2 * m2] + (u2 - m2) * tab[2 * m2 + 1]
        a3 += tab[2 * m3] + (u3 - m3) * tab[2 * m3 + 1]
    for j in range(nq, ns):
        u0 = xi - s[j]
        m0 = <Py_ssize_t> u0
        a0 += tab[2 * m0] + (u0 - m0) * tab[2 * m0 + 1]
    return (a0 + a1) + (a2 + a3)


def pairwise_mean(const double[::1] targets, const double[::1] sources, const double[::1] table,
                  double L, double h, int threads=1):
    cdef Py_ssize_t nt = targets.shape[0], ns = sources.shape[0], i
    cdef double inv_h = 1.0 / h
    out = np.zeros(nt, dtype=np.float64)
    if ns == 0 or nt == 0:
        return out
    cdef double[::1] res = out
    # one extra flat pair absorbs u == 2n from rounding at the far edge
    packed = np.zeros(2 * table.shape[0] + 2, dtype=np.float64)
    packed[0:-2:2] = table
    packed[1:-4:2] = np.diff(table)
    packed[-2] = table[table.shape[0] - 1]
    cdef double[::1] tabv = packed
    cdef const double* tab = &tabv[0]
    cdef double[::1] sv = np.asarray(sources) * inv_h
    cdef const double* s = &sv[0]
    cdef double shift = 2.0 * L * inv_h
    for i in prange(nt, nogil=True, schedule="static", num_threads=max(threads, 1)):
        res[i] = _row(tab, s, ns, targets[i] * inv_h + shift) / ns
    return out


def max_threads():
    return openmp.omp_get_max_threads()
