# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path-functional kernels.

Draws come from the caller's numpy Generator through the bit-generator
capsule, step-major: at each time step the block consumes what
``Generator.standard_normal((n_paths, ..., dim))`` would, so results match
the NumPy fallback bit for bit.

Integrand modes, evaluated at ``r = scale * |x|``:
  0: min(1 / r^2, clip), flagged when the cap bites
  1: linear interpolation of ``table`` on the uniform grid [0, r_max],
     continued as ``table[-1] * (r_max / r)^2`` beyond r_max
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport sqrt
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

cnp.import_array()

BACKEND = "cython"


cdef bitgen_t* _bitgen(object generator) except NULL:
    capsule = generator.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid bit generator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef struct Integrand:
    int mode
    double clip
    double scale2
    const double* table
    Py_ssize_t ntab
    double dr
    double r_max


cdef inline double _value(Integrand* f, double r2, int* flag) noexcept nogil:
    cdef double v, r, pos, w
    cdef Py_ssize_t i
    r2 = r2 * f.scale2
    if f.mode == 0:
        if r2 * f.clip <= 1.0:
            flag[0] = 1
            return f.clip
        return 1.0 / r2
    r = sqrt(r2)
    if r >= f.r_max:
        return f.table[f.ntab - 1] * (f.r_max * f.r_max) / r2
    pos = r / f.dr
    i = <Py_ssize_t> pos
    w = pos - i
    return (1.0 - w) * f.table[i] + w * f.table[i + 1]


cdef Integrand _make(int mode, double clip, double scale, double[::1] table, double r_max):
    cdef Integrand f
    f.mode = mode
    f.clip = clip
    f.scale2 = scale * scale
    f.ntab = table.shape[0]
    f.table = &table[0]
    f.r_max = r_max
    f.dr = r_max / (f.ntab - 1) if f.ntab > 1 else 1.0
    return f


def bridge_block(generator, double[:, ::1] starts, double[:, ::1] ends, double t,
                 Py_ssize_t m, int mode=0, double clip=1e4, double scale=1.0,
                 double[::1] table=None, double r_max=1.0):
    """Trapezoidal ``int_0^t f(X_s) ds`` along one bridge per row of ``starts``/``ends``.

    Draws are consumed step-major: for each time step, all paths, all coordinates.
    """
    cdef bitgen_t* rng = _bitgen(generator)
    cdef Py_ssize_t n = starts.shape[0], d = starts.shape[1]
    cdef Py_ssize_t p, k, j
    cdef double h = t / m, tau, frac, sd, r2, z
    if table is None:
        table = np.zeros(2)
    cdef Integrand f = _make(mode, clip, scale, table, r_max)
    acc_a = np.empty(n)
    flag_a = np.zeros(n, dtype=np.intc)
    cdef double[::1] acc = acc_a
    cdef int[::1] flag = flag_a
    cdef double[:, ::1] x = np.array(starts, dtype=float, copy=True)
    with nogil:
        for p in range(n):
            r2 = 0.0
            for j in range(d):
                r2 = r2 + x[p, j] * x[p, j]
            acc[p] = 0.5 * _value(&f, r2, &flag[p])
        for k in range(1, m):
            tau = t - (k - 1) * h
            frac = h / tau
            sd = sqrt(h * (tau - h) / tau)
            for p in range(n):
                r2 = 0.0
                for j in range(d):
                    z = random_standard_normal(rng)
                    x[p, j] = x[p, j] + (ends[p, j] - x[p, j]) * frac + sd * z
                    r2 = r2 + x[p, j] * x[p, j]
                acc[p] = acc[p] + _value(&f, r2, &flag[p])
        for p in range(n):
            r2 = 0.0
            for j in range(d):
                r2 = r2 + ends[p, j] * ends[p, j]
            acc[p] = acc[p] + 0.5 * _value(&f, r2, &flag[p])
            acc[p] = acc[p] * h
    return acc_a, flag_a.astype(np.uint8)


def brownian_block(generator, double[::1] start, double t, Py_ssize_t m, Py_ssize_t n,
                   int mode=0, double clip=1e4, double scale=1.0,
                   double[::1] table=None, double r_max=1.0):
    """Functional of free Brownian paths from ``start``; also returns the final radius."""
    cdef bitgen_t* rng = _bitgen(generator)
    cdef Py_ssize_t d = start.shape[0]
    cdef Py_ssize_t p, k, j
    cdef double h = t / m, sh = sqrt(t / m), r2, z
    if table is None:
        table = np.zeros(2)
    cdef Integrand f = _make(mode, clip, scale, table, r_max)
    acc_a = np.empty(n)
    rad_a = np.empty(n)
    flag_a = np.zeros(n, dtype=np.intc)
    cdef double[::1] acc = acc_a
    cdef double[::1] rad = rad_a
    cdef int[::1] flag = flag_a
    cdef double[:, ::1] x = np.empty((n, d))
    with nogil:
        for p in range(n):
            r2 = 0.0
            for j in range(d):
                x[p, j] = start[j]
                r2 = r2 + x[p, j] * x[p, j]
            acc[p] = 0.5 * _value(&f, r2, &flag[p])
        for k in range(1, m + 1):
            for p in range(n):
                r2 = 0.0
                for j in range(d):
                    z = random_standard_normal(rng)
                    x[p, j] = x[p, j] + sh * z
                    r2 = r2 + x[p, j] * x[p, j]
                if k < m:
                    acc[p] = acc[p] + _value(&f, r2, &flag[p])
                else:
                    acc[p] = acc[p] + 0.5 * _value(&f, r2, &flag[p])
                    acc[p] = acc[p] * h
                    rad[p] = sqrt(r2)
    return acc_a, rad_a, flag_a.astype(np.uint8)


def pair_block(generator, double[:, ::1] starts, double[:, ::1] ends, double t,
               Py_ssize_t m, Py_ssize_t n, int mode=0, double clip=1e4, double scale=1.0,
               double[::1] table=None, double r_max=1.0):
    """Sum over pairs ``j < k`` of the functional of ``X^j - X^k`` for independent bridges."""
    cdef bitgen_t* rng = _bitgen(generator)
    cdef Py_ssize_t nb = starts.shape[0], d = starts.shape[1]
    cdef Py_ssize_t p, k, i, l, j
    cdef double h = t / m, tau, frac, sd, r2, z, diff, w
    if table is None:
        table = np.zeros(2)
    cdef Integrand f = _make(mode, clip, scale, table, r_max)
    acc_a = np.zeros(n)
    flag_a = np.zeros(n, dtype=np.intc)
    cdef double[::1] acc = acc_a
    cdef int[::1] flag = flag_a
    cdef double[:, :, ::1] x = np.empty((n, nb, d))
    with nogil:
        for p in range(n):
            for i in range(nb):
                for j in range(d):
                    x[p, i, j] = starts[i, j]
        for k in range(0, m + 1):
            if k > 0 and k < m:
                tau = t - (k - 1) * h
                frac = h / tau
                sd = sqrt(h * (tau - h) / tau)
            w = 0.5 if (k == 0 or k == m) else 1.0
            for p in range(n):
                if k == m:
                    for i in range(nb):
                        for j in range(d):
                            x[p, i, j] = ends[i, j]
                elif k > 0:
                    for i in range(nb):
                        for j in range(d):
                            z = random_standard_normal(rng)
                            x[p, i, j] = x[p, i, j] + (ends[i, j] - x[p, i, j]) * frac + sd * z
                for i in range(nb):
                    for l in range(i + 1, nb):
                        r2 = 0.0
                        for j in range(d):
                            diff = x[p, i, j] - x[p, l, j]
                            r2 = r2 + diff * diff
                        acc[p] = acc[p] + w * _value(&f, r2, &flag[p])
        for p in range(n):
            acc[p] = acc[p] * h
    return acc_a, flag_a.astype(np.uint8)
