# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 transport kernel; see ``_kernel_py`` for the conventions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp

cnp.import_array()

FIELD_PLANE = 0
FIELD_NECK = 1
SEG_LINE = 0
SEG_ARC = 1
SEG_LOG = 2

ctypedef double complex cplx


cdef inline cplx cexp_(cplx w) nogil:
    cdef double m = exp(w.real)
    return m * cos(w.imag) + 1j * (m * sin(w.imag))


cdef inline void point(int kind, cplx a, cplx b, double r, double x,
                       cplx* z, cplx* dz) nogil:
    cdef cplx d, e
    cdef double th0, th1, th
    if kind == 0:
        d = b - a
        z[0] = a + d * x
        dz[0] = d
    elif kind == 1:
        th0 = b.real
        th1 = b.imag
        th = th0 + (th1 - th0) * x
        e = r * cos(th) + 1j * (r * sin(th))
        z[0] = a + e
        dz[0] = 1j * e * (th1 - th0)
    else:
        d = b - a
        e = cexp_(a + d * x)
        z[0] = e
        dz[0] = e * d


cdef inline void field(int fkind, const cplx* par, int nn, cplx z, bint dev,
                       cplx* a11, cplx* a12, cplx* a21) nogil:
    cdef cplx u, v, f, g0, w0, dg, dw, inv, om, g
    cdef int l
    if fkind == 1:
        u = par[2] * z - par[1]
        v = z - 1
        f = par[0] / (2 * z * z)
        a11[0] = f * u * v
        a12[0] = -f * u * u
        a21[0] = f * v * v
        return
    g0 = par[0]
    w0 = par[1]
    dg = 0
    dw = 0
    for l in range(nn):
        inv = 1 / (z - par[2 + l])
        dg = dg + par[2 + nn + l] * inv
        dw = dw + par[2 + 2 * nn + l] * inv
    om = w0 + dw
    if dev:
        a11[0] = g0 * dw + dg * om
        a12[0] = -(g0 * g0 * dw + (2 * g0 * dg + dg * dg) * om)
        a21[0] = dw
    else:
        g = g0 + dg
        a11[0] = g * om
        a12[0] = -g * g * om
        a21[0] = om


cdef inline void rhs(int fkind, const cplx* par, int nn, int kind, cplx a, cplx b,
                     double r, double x, const cplx* Y, bint dev, cplx z0,
                     cplx c11, cplx c12, cplx c21, cplx* out) nogil:
    cdef cplx z, dz, a11, a12, a21, hz, b11, b12, b21, b22, f11, f12, f21
    point(kind, a, b, r, x, &z, &dz)
    field(fkind, par, nn, z, dev, &a11, &a12, &a21)
    a11 = a11 * dz
    a12 = a12 * dz
    a21 = a21 * dz
    if dev:
        # E' = A E + (A - A0) B
        f11 = a11 + c11 * dz
        f12 = a12 + c12 * dz
        f21 = a21 + c21 * dz
    else:
        f11 = a11
        f12 = a12
        f21 = a21
    out[0] = f11 * Y[0] + f12 * Y[2]
    out[1] = f11 * Y[1] + f12 * Y[3]
    out[2] = f21 * Y[0] - f11 * Y[2]
    out[3] = f21 * Y[1] - f11 * Y[3]
    if dev:
        hz = z - z0
        b11 = 1 + hz * c11
        b12 = hz * c12
        b21 = hz * c21
        b22 = 1 - hz * c11
        out[0] = out[0] + a11 * b11 + a12 * b21
        out[1] = out[1] + a11 * b12 + a12 * b22
        out[2] = out[2] + a21 * b11 - a11 * b21
        out[3] = out[3] + a21 * b12 - a11 * b22


cdef void integrate(int fkind, const cplx* par, int nn, int kind, cplx a, cplx b,
                    double r, long n, bint dev, cplx* Y) nogil:
    cdef cplx k1[4]
    cdef cplx k2[4]
    cdef cplx k3[4]
    cdef cplx k4[4]
    cdef cplx T[4]
    cdef cplx z0, dz0, c11 = 0, c12 = 0, c21 = 0
    cdef double h = 1.0 / n, x
    cdef long k
    cdef int q
    point(kind, a, b, r, 0.0, &z0, &dz0)
    if fkind == 0:
        c11 = par[0] * par[1]
        c12 = -par[0] * par[0] * par[1]
        c21 = par[1]
    if dev:
        for q in range(4):
            Y[q] = 0
    else:
        Y[0] = 1
        Y[1] = 0
        Y[2] = 0
        Y[3] = 1
    for k in range(n):
        x = k * h
        rhs(fkind, par, nn, kind, a, b, r, x, Y, dev, z0, c11, c12, c21, k1)
        for q in range(4):
            T[q] = Y[q] + 0.5 * h * k1[q]
        rhs(fkind, par, nn, kind, a, b, r, x + 0.5 * h, T, dev, z0, c11, c12, c21, k2)
        for q in range(4):
            T[q] = Y[q] + 0.5 * h * k2[q]
        rhs(fkind, par, nn, kind, a, b, r, x + 0.5 * h, T, dev, z0, c11, c12, c21, k3)
        for q in range(4):
            T[q] = Y[q] + h * k3[q]
        rhs(fkind, par, nn, kind, a, b, r, x + h, T, dev, z0, c11, c12, c21, k4)
        for q in range(4):
            Y[q] = Y[q] + h / 6.0 * (k1[q] + 2 * k2[q] + 2 * k3[q] + k4[q])


def rk4_segment(int fkind, par, int nn, int kind, a, b, double r, long n, bint dev):
    cdef cnp.ndarray[cplx, ndim=1] p = np.ascontiguousarray(par, dtype=np.complex128)
    cdef cplx Y[4]
    cdef cplx ca = a, cb = b
    with nogil:
        integrate(fkind, &p[0], nn, kind, ca, cb, r, n, dev, Y)
    return np.array([[Y[0], Y[1]], [Y[2], Y[3]]], dtype=np.complex128)


def rk4_batch(int fkind, par, int nn, kinds, sa, sb, sr, ns, bint dev):
    cdef cnp.ndarray[cplx, ndim=1] p = np.ascontiguousarray(par, dtype=np.complex128)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kk = np.ascontiguousarray(kinds, dtype=np.int64)
    cdef cnp.ndarray[cplx, ndim=1] aa = np.ascontiguousarray(sa, dtype=np.complex128)
    cdef cnp.ndarray[cplx, ndim=1] bb = np.ascontiguousarray(sb, dtype=np.complex128)
    cdef cnp.ndarray[double, ndim=1] rr = np.ascontiguousarray(sr, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] nv = np.ascontiguousarray(ns, dtype=np.int64)
    cdef Py_ssize_t M = kk.shape[0], m
    cdef cnp.ndarray[cplx, ndim=3] out = np.empty((M, 2, 2), dtype=np.complex128)
    cdef cplx Y[4]
    cdef const cplx* pp = &p[0] if p.shape[0] > 0 else NULL
    with nogil:
        for m in range(M):
            integrate(fkind, pp, nn, <int>kk[m], aa[m], bb[m], rr[m], nv[m], dev, Y)
            out[m, 0, 0] = Y[0]
            out[m, 0, 1] = Y[1]
            out[m, 1, 0] = Y[2]
            out[m, 1, 1] = Y[3]
    return out
