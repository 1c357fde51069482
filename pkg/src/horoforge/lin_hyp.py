"""2x2 complex linear algebra and the hyperbolic-space model layer.

Matrices are plain ``numpy`` arrays of shape ``(2, 2)`` and dtype complex.
Points of H^3 live either in the Minkowski model (``HermitianPoint``) or in
the upper half-space model (``HalfSpacePoint``).  The ideal boundary is the
Riemann sphere; its point at infinity is the singleton ``INF``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError, NumericalError

TOL_DET = 1e-9
TOL = 1e-8

I2 = np.eye(2, dtype=complex)
DIAG = np.array([[1, 0], [0, -1]], dtype=complex)


class _Infinity:
    """The point at infinity of the Riemann sphere."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INF"

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()


def is_inf(z) -> bool:
    return z is INF


@dataclass(frozen=True)
class HermitianPoint:
    x0: float
    x1: float
    x2: float
    x3: float

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.x0 + self.x3, self.x1 + 1j * self.x2],
             [self.x1 - 1j * self.x2, self.x0 - self.x3]],
            dtype=complex,
        )

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "HermitianPoint":
        x0 = 0.5 * (X[0, 0] + X[1, 1]).real
        x3 = 0.5 * (X[0, 0] - X[1, 1]).real
        off = 0.5 * (X[0, 1] + np.conj(X[1, 0]))
        return cls(x0, off.real, off.imag, x3)

    def minkowski_norm(self) -> float:
        return -self.x0**2 + self.x1**2 + self.x2**2 + self.x3**2


@dataclass(frozen=True)
class HalfSpacePoint:
    x1: float
    x2: float
    x3: float

    def __post_init__(self):
        if not self.x3 > 0:
            raise DomainError(f"half-space point needs x3 > 0, got {self.x3}")

    @property
    def horizontal(self) -> complex:
        return complex(self.x1, self.x2)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3])


# ---------------------------------------------------------------------------
# matrix functions


def _sinhc(d2):
    """sinh(d)/d as a function of d**2 (even, so the branch of d is irrelevant)."""
    if abs(d2) < 1e-4:
        return 1 + d2 / 6 + d2 * d2 / 120 + d2**3 / 5040
    d = cmath.sqrt(d2)
    return cmath.sinh(d) / d


def _atanhc(x2):
    """atanh(x)/x as a function of x**2."""
    if abs(x2) < 1e-4:
        return 1 + x2 / 3 + x2 * x2 / 5 + x2**3 / 7
    x = cmath.sqrt(x2)
    return cmath.atanh(x) / x


def exp_mat(M) -> np.ndarray:
    """Matrix exponential in closed form.

    With ``M = m I + N`` and ``N`` traceless, ``N^2 = d^2 I`` where
    ``d^2 = -det N``; hence ``exp M = e^m (cosh d I + sinh(d)/d N)``.
    Exact for the nilpotent case (``d = 0``).
    """
    M = np.asarray(M, dtype=complex)
    m = 0.5 * (M[0, 0] + M[1, 1])
    N = M - m * I2
    d2 = -(N[0, 0] * N[1, 1] - N[0, 1] * N[1, 0])
    d = cmath.sqrt(d2)
    return cmath.exp(m) * (cmath.cosh(d) * I2 + _sinhc(d2) * N)


def log_near_identity(X) -> np.ndarray:
    """Principal logarithm of ``I + X`` computed from the deviation ``X``.

    Avoids forming ``I + X`` so that tiny deviations keep full relative
    precision.
    """
    X = np.asarray(X, dtype=complex)
    h = 0.5 * (X[0, 0] + X[1, 1])
    N = X - h * I2
    d2 = -(N[0, 0] * N[1, 1] - N[0, 1] * N[1, 0])
    # eigenvalues of I + X are m +- d with m = 1 + h
    m = 1 + h
    u = 2 * h + h * h - d2  # det(I + X) - 1
    half_logdet = 0.5 * _log1p(u)
    return half_logdet * I2 + (_atanhc(d2 / (m * m)) / m) * N


def _log1p(u):
    if abs(u) < 1e-3:
        return u - u * u / 2 + u**3 / 3 - u**4 / 4 + u**5 / 5 - u**6 / 6
    return cmath.log(1 + u)


def log_mat(M) -> np.ndarray:
    """Principal matrix logarithm on the neighbourhood ``||M - I|| < 1``."""
    M = np.asarray(M, dtype=complex)
    X = M - I2
    if np.linalg.norm(X, 2) >= 1:
        raise DomainError("log_mat: matrix outside the principal-branch neighbourhood")
    return log_near_identity(X)


def mat_pow(M, lam) -> np.ndarray:
    return exp_mat(lam * log_mat(M))


def sl2_inv(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]], dtype=complex)


def det2(M) -> complex:
    return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]


def normalize_sl2(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    return M / cmath.sqrt(det2(M))


def xi(s: float) -> np.ndarray:
    """Unit-speed lift of the positive vertical axis: diag(e^{s/2}, e^{-s/2})."""
    return np.array([[math.exp(s / 2), 0], [0, math.exp(-s / 2)]], dtype=complex)


# ---------------------------------------------------------------------------
# models of H^3


def minkowski_to_half_space(x: HermitianPoint) -> HalfSpacePoint:
    den = x.x0 - x.x3
    if den <= TOL:
        raise DegenerateError("point is ideal (x0 - x3 <= tol)")
    return HalfSpacePoint(x.x1 / den, x.x2 / den, 1 / den)


def half_space_to_minkowski(p: HalfSpacePoint) -> HermitianPoint:
    """Inverse of ``minkowski_to_half_space`` on the hyperboloid."""
    r2 = p.x1**2 + p.x2**2
    x3sq = p.x3**2
    x0 = (1 + r2 + x3sq) / (2 * p.x3)
    x3 = (r2 + x3sq - 1) / (2 * p.x3)
    return HermitianPoint(x0, p.x1 / p.x3, p.x2 / p.x3, x3)


def immerse(F) -> HalfSpacePoint:
    """Half-space image of ``F F^*`` via the explicit row formula."""
    F = np.asarray(F, dtype=complex)
    den = abs(F[1, 0]) ** 2 + abs(F[1, 1]) ** 2
    if den < TOL:
        raise NumericalError("immerse: |F21|^2 + |F22|^2 below tolerance")
    w = (F[0, 0] * np.conj(F[1, 0]) + F[0, 1] * np.conj(F[1, 1])) / den
    return HalfSpacePoint(float(w.real), float(w.imag), float(1 / den))


def immerse_many(F: np.ndarray) -> np.ndarray:
    """Vectorised ``immerse`` for an array of shape ``(..., 2, 2)``; returns ``(..., 3)``."""
    den = np.abs(F[..., 1, 0]) ** 2 + np.abs(F[..., 1, 1]) ** 2
    w = (F[..., 0, 0] * np.conj(F[..., 1, 0]) + F[..., 0, 1] * np.conj(F[..., 1, 1])) / den
    return np.stack([w.real, w.imag, 1 / den], axis=-1)


def act_isometry(H, x: HermitianPoint) -> HermitianPoint:
    H = np.asarray(H, dtype=complex)
    return HermitianPoint.from_matrix(H @ x.as_matrix() @ H.conj().T)


def act_boundary(H, z):
    """Homography ``z -> (H11 z + H12)/(H21 z + H22)`` on the Riemann sphere."""
    H = np.asarray(H, dtype=complex)
    a, b, c, d = H[0, 0], H[0, 1], H[1, 0], H[1, 1]
    if is_inf(z):
        return INF if c == 0 else complex(a / c)
    den = c * z + d
    if den == 0:
        return INF
    return complex((a * z + b) / den)


def half_space_distance(p: HalfSpacePoint, q: HalfSpacePoint) -> float:
    num = (p.x1 - q.x1) ** 2 + (p.x2 - q.x2) ** 2 + (p.x3 - q.x3) ** 2
    return math.acosh(1 + num / (2 * p.x3 * q.x3))


def su2_defect(M) -> float:
    """Distance-like measure of ``M`` from SU(2) through its logarithm.

    ``L = log M`` lies in su(2) iff ``Re L11 = 0`` and ``L12 + conj(L21) = 0``.
    ``-M`` is used instead of ``M`` when ``Re tr M < 0`` (PSL ambiguity).
    """
    M = np.asarray(M, dtype=complex)
    if (M[0, 0] + M[1, 1]).real < 0:
        M = -M
    L = log_mat(M)
    return float(abs(L[0, 0].real) + abs(L[0, 1] + np.conj(L[1, 0])))


def su2_defect_log(L) -> float:
    return float(abs(L[0, 0].real) + abs(L[0, 1] + np.conj(L[1, 0])))


def random_sl2(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    M = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return normalize_sl2(I2 + scale * M)


def random_su2(rng: np.random.Generator) -> np.ndarray:
    a, b = rng.normal(size=2) + 1j * rng.normal(size=2)
    n = math.sqrt(abs(a) ** 2 + abs(b) ** 2)
    a, b = a / n, b / n
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]], dtype=complex)


def half_space_to_ball(X: np.ndarray) -> np.ndarray:
    """Map half-space points ``(..., 3)`` into the Poincare ball.

    Uses the inversion in the sphere of radius sqrt(2) centred at (0, 0, -1),
    which sends the boundary plane to the unit sphere and (0, 0, 1) to the origin.
    """
    X = np.asarray(X, dtype=float)
    Y = X.copy()
    Y[..., 2] += 1.0
    r2 = np.sum(Y * Y, axis=-1, keepdims=True)
    Z = 2.0 * Y / r2
    Z[..., 2] -= 1.0
    return Z
