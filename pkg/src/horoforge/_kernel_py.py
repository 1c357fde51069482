"""Pure-Python RK4 transport kernel.

Same interface as the compiled ``_kernel`` module.  A field is a flat complex
parameter array:

* PLANE: ``[g0, w0, p_1..p_k, g_1..g_k, w_1..w_k]`` with
  ``G = g0 + sum g_l/(z - p_l)`` and ``Omega = w0 + sum w_l/(z - p_l)``;
* NECK: ``[a, ci, cj]`` with ``A = a/(2 z^2) [[u v, -u^2], [v^2, -u v]]``,
  ``u = cj z - ci`` and ``v = z - 1``.

The connection is ``A = [[G, -G^2], [1, -G]] Omega``.  A segment is
``(kind, a, b, r)``: LINE from a to b, ARC centred at a with radius r and
angles ``b.real -> b.imag``, LOG ``z = exp(a + (b - a) x)``.

In deviation mode the kernel integrates ``E = Y - B`` with
``B(z) = I + (z - z_start) A0`` the exact transport of the constant part
``A0`` of a PLANE field; this keeps small monodromies at full relative
precision.
"""

import cmath

import numpy as np

FIELD_PLANE = 0
FIELD_NECK = 1
SEG_LINE = 0
SEG_ARC = 1
SEG_LOG = 2


def _point(kind, a, b, r, x):
    if kind == SEG_LINE:
        d = b - a
        return a + d * x, d
    if kind == SEG_ARC:
        th0, th1 = b.real, b.imag
        e = r * cmath.exp(1j * (th0 + (th1 - th0) * x))
        return a + e, 1j * e * (th1 - th0)
    d = b - a
    z = cmath.exp(a + d * x)
    return z, z * d


def _field(fkind, par, nn, z, dev):
    """Return (a11, a12, a21) of A (or of A - A0 when ``dev``); a22 = -a11."""
    if fkind == FIELD_NECK:
        a, ci, cj = par[0], par[1], par[2]
        u = cj * z - ci
        v = z - 1
        f = a / (2 * z * z)
        return f * u * v, -f * u * u, f * v * v
    g0, w0 = par[0], par[1]
    dg = 0j
    dw = 0j
    for l in range(nn):
        inv = 1 / (z - par[2 + l])
        dg += par[2 + nn + l] * inv
        dw += par[2 + 2 * nn + l] * inv
    om = w0 + dw
    if dev:
        return (g0 * dw + dg * om,
                -(g0 * g0 * dw + (2 * g0 * dg + dg * dg) * om),
                dw)
    g = g0 + dg
    return g * om, -g * g * om, om


def _base(fkind, par):
    if fkind == FIELD_NECK:
        return 0j, 0j, 0j
    g0, w0 = par[0], par[1]
    return g0 * w0, -g0 * g0 * w0, w0


def _rhs(fkind, par, nn, kind, a, b, r, x, Y, dev, z0, b0):
    z, dz = _point(kind, a, b, r, x)
    a11, a12, a21 = _field(fkind, par, nn, z, dev)
    a11 *= dz
    a12 *= dz
    a21 *= dz
    y11, y12, y21, y22 = Y
    if dev:
        # E' = A E + (A - A0) B(z) with B = I + (z - z0) A0
        c11, c12, c21 = b0
        f11, f12, f21 = a11 + c11 * dz, a12 + c12 * dz, a21 + c21 * dz
    else:
        f11, f12, f21 = a11, a12, a21
    o11 = f11 * y11 + f12 * y21
    o12 = f11 * y12 + f12 * y22
    o21 = f21 * y11 - f11 * y21
    o22 = f21 * y12 - f11 * y22
    if dev:
        h = z - z0
        b11 = 1 + h * c11
        b12 = h * c12
        b21 = h * c21
        b22 = 1 - h * c11
        o11 += a11 * b11 + a12 * b21
        o12 += a11 * b12 + a12 * b22
        o21 += a21 * b11 - a11 * b21
        o22 += a21 * b12 - a11 * b22
    return o11, o12, o21, o22


def rk4_segment(fkind, par, nn, kind, a, b, r, n, dev):
    """Transport along one segment from the identity (or from E = 0 in deviation mode)."""
    par = [complex(v) for v in par]
    a = complex(a)
    b = complex(b)
    r = float(r)
    Y = (0j, 0j, 0j, 0j) if dev else (1 + 0j, 0j, 0j, 1 + 0j)
    z0 = _point(kind, a, b, r, 0.0)[0]
    b0 = _base(fkind, par)
    h = 1.0 / n
    for k in range(n):
        x = k * h
        k1 = _rhs(fkind, par, nn, kind, a, b, r, x, Y, dev, z0, b0)
        Y2 = tuple(Y[q] + 0.5 * h * k1[q] for q in range(4))
        k2 = _rhs(fkind, par, nn, kind, a, b, r, x + 0.5 * h, Y2, dev, z0, b0)
        Y3 = tuple(Y[q] + 0.5 * h * k2[q] for q in range(4))
        k3 = _rhs(fkind, par, nn, kind, a, b, r, x + 0.5 * h, Y3, dev, z0, b0)
        Y4 = tuple(Y[q] + h * k3[q] for q in range(4))
        k4 = _rhs(fkind, par, nn, kind, a, b, r, x + h, Y4, dev, z0, b0)
        Y = tuple(Y[q] + h / 6 * (k1[q] + 2 * k2[q] + 2 * k3[q] + k4[q]) for q in range(4))
    return np.array([[Y[0], Y[1]], [Y[2], Y[3]]], dtype=complex)


def rk4_batch(fkind, par, nn, kinds, sa, sb, sr, ns, dev):
    """Transport many segments independently; returns an array ``(M, 2, 2)``.

    Vectorised over segments sharing a step count.
    """
    kinds = np.asarray(kinds, dtype=np.int64)
    sa = np.asarray(sa, dtype=complex)
    sb = np.asarray(sb, dtype=complex)
    sr = np.asarray(sr, dtype=float)
    ns = np.asarray(ns, dtype=np.int64)
    par = np.asarray(par, dtype=complex)
    out = np.empty((len(kinds), 2, 2), dtype=complex)
    for n in np.unique(ns):
        idx = np.flatnonzero(ns == n)
        out[idx] = _rk4_vec(fkind, par, nn, kinds[idx], sa[idx], sb[idx], sr[idx], int(n), dev)
    return out


def _point_vec(kinds, a, b, r, x):
    z = np.empty_like(a)
    dz = np.empty_like(a)
    m = kinds == SEG_LINE
    d = b[m] - a[m]
    z[m] = a[m] + d * x
    dz[m] = d
    m = kinds == SEG_ARC
    th0, th1 = b[m].real, b[m].imag
    e = r[m] * np.exp(1j * (th0 + (th1 - th0) * x))
    z[m] = a[m] + e
    dz[m] = 1j * e * (th1 - th0)
    m = kinds == SEG_LOG
    d = b[m] - a[m]
    zz = np.exp(a[m] + d * x)
    z[m] = zz
    dz[m] = zz * d
    return z, dz


def _field_vec(fkind, par, nn, z, dev):
    if fkind == FIELD_NECK:
        a, ci, cj = par[0], par[1], par[2]
        u = cj * z - ci
        v = z - 1
        f = a / (2 * z * z)
        return f * u * v, -f * u * u, f * v * v
    g0, w0 = par[0], par[1]
    dg = np.zeros_like(z)
    dw = np.zeros_like(z)
    for l in range(nn):
        inv = 1 / (z - par[2 + l])
        dg = dg + par[2 + nn + l] * inv
        dw = dw + par[2 + 2 * nn + l] * inv
    om = w0 + dw
    if dev:
        return (g0 * dw + dg * om, -(g0 * g0 * dw + (2 * g0 * dg + dg * dg) * om), dw)
    g = g0 + dg
    return g * om, -g * g * om, om


def _rhs_vec(fkind, par, nn, kinds, a, b, r, x, Y, dev, z0, b0):
    z, dz = _point_vec(kinds, a, b, r, x)
    a11, a12, a21 = _field_vec(fkind, par, nn, z, dev)
    a11 = a11 * dz
    a12 = a12 * dz
    a21 = a21 * dz
    c11, c12, c21 = b0
    if dev:
        f11, f12, f21 = a11 + c11 * dz, a12 + c12 * dz, a21 + c21 * dz
    else:
        f11, f12, f21 = a11, a12, a21
    out = np.empty_like(Y)
    out[:, 0, 0] = f11 * Y[:, 0, 0] + f12 * Y[:, 1, 0]
    out[:, 0, 1] = f11 * Y[:, 0, 1] + f12 * Y[:, 1, 1]
    out[:, 1, 0] = f21 * Y[:, 0, 0] - f11 * Y[:, 1, 0]
    out[:, 1, 1] = f21 * Y[:, 0, 1] - f11 * Y[:, 1, 1]
    if dev:
        hz = z - z0
        b11 = 1 + hz * c11
        b12 = hz * c12
        b21 = hz * c21
        b22 = 1 - hz * c11
        out[:, 0, 0] += a11 * b11 + a12 * b21
        out[:, 0, 1] += a11 * b12 + a12 * b22
        out[:, 1, 0] += a21 * b11 - a11 * b21
        out[:, 1, 1] += a21 * b12 - a11 * b22
    return out


def _rk4_vec(fkind, par, nn, kinds, a, b, r, n, dev):
    M = len(kinds)
    Y = np.zeros((M, 2, 2), dtype=complex)
    if not dev:
        Y[:, 0, 0] = 1
        Y[:, 1, 1] = 1
    z0 = _point_vec(kinds, a, b, r, 0.0)[0]
    b0 = _base(fkind, par)
    h = 1.0 / n
    for k in range(n):
        x = k * h
        k1 = _rhs_vec(fkind, par, nn, kinds, a, b, r, x, Y, dev, z0, b0)
        k2 = _rhs_vec(fkind, par, nn, kinds, a, b, r, x + 0.5 * h, Y + 0.5 * h * k1, dev, z0, b0)
        k3 = _rhs_vec(fkind, par, nn, kinds, a, b, r, x + 0.5 * h, Y + 0.5 * h * k2, dev, z0, b0)
        k4 = _rhs_vec(fkind, par, nn, kinds, a, b, r, x + h, Y + h * k3, dev, z0, b0)
        Y = Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y
