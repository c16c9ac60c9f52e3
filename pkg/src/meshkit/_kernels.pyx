# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels over flat row-major float buffers.

Mirrors `_kernels_py` exactly (same loop and accumulation order) so the two
backends produce bit-identical results.
"""

from cpython cimport array
import array

BACKEND_NAME = "cython"

cdef array.array _DOUBLE_TEMPLATE = array.array("d", [])


cdef array.array _zeros(Py_ssize_t n):
    cdef array.array out = array.clone(_DOUBLE_TEMPLATE, n, zero=True)
    return out


def matmul(double[::1] a, double[::1] b, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef array.array out = _zeros(m * n)
    cdef double[::1] o = out
    cdef Py_ssize_t i, t, j, ai, oi, bt
    cdef double x
    for i in range(m):
        ai = i * k
        oi = i * n
        for t in range(k):
            x = a[ai + t]
            bt = t * n
            for j in range(n):
                o[oi + j] += x * b[bt + j]
    return out


def add(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef array.array out = _zeros(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = a[i] + b[i]
    return out


def relu(double[::1] a):
    cdef Py_ssize_t n = a.shape[0]
    cdef array.array out = _zeros(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = 0.0 if a[i] < 0.0 else a[i]
    return out


def reduce_sum(double[::1] a, Py_ssize_t outer, Py_ssize_t n_ax, Py_ssize_t inner):
    cdef array.array out = _zeros(outer * inner)
    cdef double[::1] o = out
    cdef Py_ssize_t oo, t, i, base, ob, row
    for oo in range(outer):
        base = oo * n_ax * inner
        ob = oo * inner
        for t in range(n_ax):
            row = base + t * inner
            for i in range(inner):
                o[ob + i] += a[row + i]
    return out


def maximum(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef array.array out = _zeros(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = b[i] if b[i] > a[i] else a[i]
    return out


def scale(double[::1] a, double alpha):
    cdef Py_ssize_t n = a.shape[0]
    cdef array.array out = _zeros(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = a[i] * alpha
    return out
