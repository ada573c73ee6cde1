"""Green-function sums over long vertical rods in Z^3.

The rods are J_y = {y} x {1..N} for y in a finite planar set Lambda, and
B = Lambda x {1..N}. With ``V_N(y, z) = W(y) / sqrt(log N)`` on B and level
``u_N = alpha log N / N`` the coefficients

    a_N(n) = u_N (V_N, (G V_N)^{n-1} 1)

are the Taylor coefficients of the log moment generating function of
``sum_y W(y) (rod occupation of J_y) / sqrt(log N)``. G restricted to B splits
into |Lambda|^2 Toeplitz blocks ``g((y' - y, z' - z))``, applied here with
FFT-based linear convolutions.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import ValidationError
from .lattice_green import lattice_green, potential_kernel_model

MAX_COEFFS = 16
MAX_FFT_SIZE = 10**7
MAX_DENSE_SIZE = 4000
LIMIT_TAU = 3.0 / (2.0 * math.pi)


def _planar_sites(Lambda):
    pts = [tuple(int(c) for c in y) for y in Lambda]
    if any(len(p) != 2 for p in pts):
        raise ValidationError("Lambda must be a list of points of Z^2")
    if len(set(pts)) != len(pts):
        raise ValidationError("Lambda contains duplicates")
    return pts


@dataclass
class RodSpec:
    """Rod experiment parameters.

    Parameters
    ----------
    Lambda : sequence of (int, int)
        Planar sites, must contain the origin.
    W : sequence of float
        Weights on Lambda (same order).
    N : int
        Rod length, N > 1.
    alpha : float
        Level multiplier, u_N = alpha log N / N.
    centered : bool
        Require sum W = 0 (needed for the a_N coefficients).
    """

    Lambda: list
    W: np.ndarray
    N: int
    alpha: float = 1.0
    centered: bool = True

    def __post_init__(self):
        self.Lambda = _planar_sites(self.Lambda)
        self.W = np.asarray(self.W, dtype=float)
        if (0, 0) not in self.Lambda:
            raise ValidationError("Lambda must contain the origin")
        if self.W.shape != (len(self.Lambda),):
            raise ValidationError("W needs one value per site of Lambda")
        if int(self.N) != self.N or self.N < 2:
            raise ValidationError("rod length N must be an integer > 1")
        self.N = int(self.N)
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.centered and abs(self.W.sum()) > 1e-12 * max(1.0, np.abs(self.W).sum()):
            raise ValidationError(f"W is not centred: sum W = {self.W.sum():.3e}")

    @property
    def log_n(self):
        return math.log(self.N)

    @property
    def level(self):
        return self.alpha * self.log_n / self.N


class RodOperator:
    """F -> G F on functions over B = Lambda x {1..N}, as (|Lambda|, N) arrays.

    ``apply`` uses FFT linear convolutions of length >= 2N - 1; ``dense``
    builds the explicit matrix for cross-checks on small instances.
    """

    def __init__(self, Lambda, N, model=None):
        self.Lambda = _planar_sites(Lambda)
        self.N = int(N)
        if self.N < 2:
            raise ValidationError("rod length N must be > 1")
        if len(self.Lambda) * self.N > MAX_FFT_SIZE:
            raise ValidationError(f"|Lambda| N = {len(self.Lambda) * self.N} exceeds {MAX_FFT_SIZE}")
        self.model = model or lattice_green(3)
        n = len(self.Lambda)
        self.size = fft.next_fast_len(2 * self.N - 1, real=True)
        dz = np.arange(-(self.N - 1), self.N)
        cache = {}
        self._hat = np.empty((n, n, self.size // 2 + 1), dtype=complex)
        for i, yi in enumerate(self.Lambda):
            for j, yj in enumerate(self.Lambda):
                key = tuple(sorted(map(abs, (yj[0] - yi[0], yj[1] - yi[1]))))
                if key not in cache:
                    cache[key] = self.kernel(key, dz)
                self._hat[i, j] = fft.rfft(cache[key], self.size)

    def kernel(self, dy, dz):
        pts = np.column_stack([np.full(len(dz), dy[0]), np.full(len(dz), dy[1]), dz])
        return self.model.values(pts)

    def apply(self, F):
        F = np.asarray(F, dtype=float)
        Fh = fft.rfft(F, self.size, axis=1)
        out = fft.irfft(np.einsum("ijk,jk->ik", self._hat, Fh), self.size, axis=1)
        return out[:, self.N - 1 : 2 * self.N - 1]

    def dense(self):
        n, N = len(self.Lambda), self.N
        if n * N > MAX_DENSE_SIZE:
            raise ValidationError("dense reference limited to small instances")
        pts = np.array([(y[0], y[1], z) for y in self.Lambda for z in range(1, N + 1)])
        return self.model.matrix(pts)

    def apply_dense(self, F, matrix=None):
        M = self.dense() if matrix is None else matrix
        return (M @ np.asarray(F, dtype=float).ravel()).reshape(len(self.Lambda), self.N)


def tau_N(N, model=None):
    """(1 / (2 log N)) sum_{|z| <= N} g((0, 0, z))."""
    if N < 2:
        raise ValidationError("N must be > 1")
    model = model or lattice_green(3)
    z = np.arange(-N, N + 1)
    g = model.values(np.column_stack([np.zeros_like(z), np.zeros_like(z), z]))
    return float(g.sum() / (2.0 * math.log(N)))


def rod_potential_difference(y, z, N, model=None):
    """sum_{x' in J_0} g(x, x') - sum_{x'' in J_y} g(x, x'') at x = (0, 0, z).

    Returns ``(value, b)`` with ``b = (3/2) a(y) - value``.
    """
    if not 1 <= z <= N:
        raise ValidationError(f"z = {z} is not in 1..{N}")
    model = model or lattice_green(3)
    dz = np.arange(1, N + 1) - z
    zero = np.zeros_like(dz)
    s0 = model.values(np.column_stack([zero, zero, dz])).sum()
    sy = model.values(np.column_stack([zero + y[0], zero + y[1], dz])).sum()
    value = float(s0 - sy)
    return value, 1.5 * potential_kernel_model()(y) - value


def energy(Lambda, W):
    """-3 sum_{y, y'} W(y) W(y') a(y' - y) for centred W."""
    pts = _planar_sites(Lambda)
    W = np.asarray(W, dtype=float)
    if abs(W.sum()) > 1e-12 * max(1.0, np.abs(W).sum()):
        raise ValidationError("energy needs a centred W")
    A = potential_kernel_model().matrix(pts)
    return float(-3.0 * W @ A @ W)


def _coefficients(op, w, scale, N, level, n_max):
    """level (v, (G v)^{n-1} 1) for the rod-constant potential v(y, z) = scale w(y)."""
    f = np.ones((len(w), N))
    out = np.empty(n_max)
    for n in range(n_max):
        # sum along each rod first: with f = 1 this is N sum_y w(y), exactly 0
        # for a centred w
        out[n] = level * scale * (w @ f.sum(axis=1))
        if n + 1 < n_max:
            f = op((scale * w)[:, None] * f)
    return out


def coeff_a_N(spec, n_max, operator=None, dense=False):
    """a_N(1..n_max) = u_N (V_N, (G V_N)^{n-1} 1)."""
    if not 1 <= n_max <= MAX_COEFFS:
        raise ValidationError(f"n_max must be in [1, {MAX_COEFFS}]")
    op = operator or RodOperator(spec.Lambda, spec.N)
    apply = op.apply
    if dense:
        M = op.dense()
        apply = lambda F: op.apply_dense(F, M)  # noqa: E731
    return _coefficients(apply, spec.W, 1.0 / math.sqrt(spec.log_n), spec.N, spec.level, n_max)


def coeff_tilde_a_N(N, alpha, n_max, operator=None):
    """ã_N(1..n_max) on the single rod J_0 with potential 1 / log N."""
    if not 1 <= n_max <= MAX_COEFFS:
        raise ValidationError(f"n_max must be in [1, {MAX_COEFFS}]")
    spec = RodSpec([(0, 0)], [1.0], N, alpha, centered=False)
    op = operator or RodOperator(spec.Lambda, N)
    return _coefficients(op.apply, np.ones(1), 1.0 / spec.log_n, N, spec.level, n_max)


@dataclass
class LimitReport:
    alpha: float
    energy: float
    a_limits: np.ndarray
    tilde_limits: np.ndarray

    def char_function(self, t):
        """Limit of E[exp(i t L_N)]: exp{-(alpha/2) E t^2 / (1 + (3/(2 pi)) E t^2)}."""
        t2 = np.asarray(t, dtype=float) ** 2
        E = self.energy
        return np.exp(-0.5 * self.alpha * E * t2 / (1.0 + LIMIT_TAU * E * t2))

    def mgf(self, z):
        """exp{(alpha/2) E z^2 / (1 - (3/(2 pi)) E z^2)} for real |z| below the pole."""
        z2 = np.asarray(z, dtype=float) ** 2
        E = self.energy
        return np.exp(0.5 * self.alpha * E * z2 / (1.0 - LIMIT_TAU * E * z2))

    def tilde_laplace(self, lam):
        """exp{-alpha lam / (1 + 3 lam / pi)}, the single-rod limit law."""
        lam = np.asarray(lam, dtype=float)
        return np.exp(-self.alpha * lam / (1.0 + 3.0 * lam / math.pi))

    @property
    def tilde_vacancy(self):
        return math.exp(-math.pi * self.alpha / 3.0)


def limit_characteristics(alpha, Lambda, W, k_max=8):
    """Limits of a_N(n), ã_N(n) for n = 1..2 k_max and the limit transforms."""
    E = energy(Lambda, W)
    n = np.arange(1, 2 * k_max + 1)
    a = np.where(n % 2 == 0, 0.5 * alpha * E * (LIMIT_TAU * E) ** (n // 2 - 1), 0.0)
    tilde = alpha * (3.0 / math.pi) ** (n - 1)
    return LimitReport(float(alpha), E, a, tilde)
