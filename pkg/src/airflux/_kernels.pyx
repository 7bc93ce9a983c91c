# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Must agree with ``_fallback`` (see tests/test_kernels.py)."""

from cython cimport floating
from libc.math cimport exp, log1p, fabs
from libc.stdint cimport int64_t, uint64_t

cdef uint64_t FNV_OFFSET = 0xcbf29ce484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001b3ULL


def fnv1a_64(const unsigned char[::1] data):
    cdef uint64_t h = FNV_OFFSET
    cdef Py_ssize_t i
    with nogil:
        for i in range(data.shape[0]):
            h = (h ^ data[i]) * FNV_PRIME
    return h


cdef inline double _softplus(double z) noexcept nogil:
    if z > 0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


def sgns_grad(
    const floating[:, ::1] emb,
    const int64_t[::1] centers,
    const int64_t[::1] contexts,
    const floating[::1] labels,
    const int64_t[::1] c_slot,
    const int64_t[::1] o_slot,
    floating[:, ::1] out,
):
    """Accumulate the mean skip-gram logistic-loss gradient into ``out``.

    ``contexts`` are already offset into the output-embedding half of ``emb``.
    Returns the summed (not averaged) loss in double precision.
    """
    cdef Py_ssize_t n = centers.shape[0]
    cdef Py_ssize_t d = emb.shape[1]
    cdef Py_ssize_t p, j
    cdef int64_t c, o, cs, os
    cdef floating z, coef, inv_b
    cdef double zd, sig, loss = 0.0
    inv_b = <floating>(1.0 / n)
    with nogil:
        for p in range(n):
            c = centers[p]
            o = contexts[p]
            z = 0
            for j in range(d):
                z = z + emb[c, j] * emb[o, j]
            zd = <double>z
            if zd >= 0:
                sig = 1.0 / (1.0 + exp(-zd))
            else:
                sig = exp(zd) / (1.0 + exp(zd))
            loss += _softplus(zd) - labels[p] * zd
            coef = <floating>((sig - labels[p]) * (1.0 / n))
            cs = c_slot[p]
            os = o_slot[p]
            for j in range(d):
                out[cs, j] = out[cs, j] + coef * emb[o, j]
                out[os, j] = out[os, j] + coef * emb[c, j]
    return loss


def apply_rows(
    floating[:, ::1] theta,
    const int64_t[::1] rows,
    const floating[:, ::1] values,
    floating alpha,
):
    """In place: ``theta[rows[k]] -= alpha * values[k]`` for each k."""
    cdef Py_ssize_t k, j, r
    cdef Py_ssize_t w = theta.shape[1]
    cdef floating step
    with nogil:
        for k in range(rows.shape[0]):
            r = rows[k]
            for j in range(w):
                step = alpha * values[k, j]
                theta[r, j] = theta[r, j] - step
