"""Independent reference computations used to cross-check the fast routes.

Nothing here shares code with :mod:`interlacements.lattice_green`; each
oracle starts from a different representation of the same quantity.
"""

import math

import numpy as np
from scipy.special import gammaln

from .extrapolation import richardson


def _srw1d(m, a):
    """P[S_m = a] for the discrete-time walk on Z, vectorised in ``m``."""
    m = np.asarray(m, dtype=np.int64)
    a = abs(int(a))
    out = np.zeros(m.shape)
    ok = ((m + a) % 2 == 0) & (m >= a)
    mm = m[ok]
    j = (mm + a) // 2
    out[ok] = np.exp(gammaln(mm + 1) - gammaln(j + 1) - gammaln(mm - j + 1) - mm * math.log(2.0))
    return out


def srw3d_probabilities(points, n_max):
    """P_0[X_n = x], n = 0..n_max, for 3d simple random walk.

    Each step moves along the first axis with probability 1/3; the planar
    part decomposes into two independent 1d walks along the diagonals.
    Returns an array of shape ``(len(points), n_max + 1)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.int64))
    ms = np.arange(n_max + 1)
    planar = np.array([_srw1d(ms, b + c) * _srw1d(ms, b - c) for _, b, c in points])
    axial = np.array([_srw1d(ms, a) for a, _, _ in points])
    out = np.zeros((len(points), n_max + 1))
    logw_base = gammaln(ms + 1)
    for n in range(n_max + 1):
        m = ms[: n + 1]
        logw = (
            logw_base[n] - logw_base[m] - logw_base[n - m]
            + m * math.log(2.0 / 3.0) + (n - m) * math.log(1.0 / 3.0)
        )
        w = np.exp(logw)
        out[:, n] = (planar[:, : n + 1] * axial[:, n - m]) @ w
    return out


def _lclt_tail(x, n_from):
    """sum over n > n_from (right parity) of the local CLT term 2 (3/(2 pi n))^{3/2} e^{-3r^2/2n}."""
    r2 = float(np.sum(np.asarray(x) ** 2))
    parity = int(np.sum(np.abs(x))) % 2
    cut = 200 * n_from
    n = np.arange(n_from + 1, cut + 1)
    n = n[n % 2 == parity].astype(float)
    s = np.sum(2.0 * (1.5 / (math.pi * n)) ** 1.5 * np.exp(-1.5 * r2 / n))
    # remaining terms ~ integral of (3/(2 pi n))^{3/2} dn
    return s + (1.5 / math.pi) ** 1.5 * 2.0 / math.sqrt(cut)


def green_path_sum(points, n_max=8000):
    """g(x) from truncated path sums sum_{n <= N} P_0[X_n = x], d = 3.

    The truncation error beyond N is of order N^{-1/2} (from the bound
    g(x) <= c |x|^{2-d} applied to the walk after N steps); its leading part is
    the local CLT tail, added explicitly. What remains behaves like
    ``c1 N^{-3/2} + c2 N^{-5/2}``, removed by Richardson extrapolation over
    N in {n_max/4, n_max/2, n_max}.

    Returns ``(values, error_estimate)`` arrays.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.int64))
    probs = srw3d_probabilities(points, n_max)
    cums = np.cumsum(probs, axis=1)
    levels = [n_max // 4, n_max // 2, n_max]
    vals, errs = [], []
    for k, x in enumerate(points):
        est = [cums[k, N] + _lclt_tail(x, N) for N in levels]
        h = [1.0 / N for N in levels]
        full = richardson(h, est, [1.5, 2.5])
        partial = richardson(h[1:], est[1:], [1.5])
        vals.append(full)
        errs.append(abs(full - partial))
    return np.array(vals), np.array(errs)


def green_fourier_polar(x, n=300):
    """g(x), d = 3, from the Fourier integral.

    The k_3 integral is done in closed form,
    ``(1/2pi) int cos(k x)/(A - cos k) dk = (A - sqrt(A^2-1))^|x| / sqrt(A^2-1)``,
    leaving a 2d integral over (k_1, k_2) whose 1/|k| singularity is removed by
    polar coordinates. Tensor Gauss-Legendre on two triangles of [0, pi]^2.
    """
    x1, x2, x3 = (abs(int(v)) for v in x)
    xt, wt = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for th0, th1 in ((0.0, math.pi / 4), (math.pi / 4, math.pi / 2)):
        th = 0.5 * (th1 - th0) * xt + 0.5 * (th1 + th0)
        wth = 0.5 * (th1 - th0) * wt
        rmax = math.pi / np.maximum(np.cos(th), np.sin(th))
        rho = 0.5 * rmax[:, None] * (xt[None, :] + 1.0)
        wrho = 0.5 * rmax[:, None] * wt[None, :]
        k1 = rho * np.cos(th)[:, None]
        k2 = rho * np.sin(th)[:, None]
        A = 3.0 - np.cos(k1) - np.cos(k2)
        s = np.sqrt((A - 1.0) * (A + 1.0))
        f = np.cos(k1 * x1) * np.cos(k2 * x2) * np.exp(x3 * np.log(A - s)) / s * rho
        total += float(np.sum(wth[:, None] * wrho * f))
    return 4.0 * 3.0 * total / (2.0 * math.pi) ** 2


def potential_kernel_path_sum(y, n_max=400_000):
    """a(y) from partial sums sum_{j <= N} P_0[X_j = 0] - P_0[X_j = y].

    Planar walk probabilities factor along the diagonals. Partial sums at
    even N converge like c1/N + c2/N^2; Richardson over N in
    {n_max/4, n_max/2, n_max}.
    """
    a, b = int(y[0]), int(y[1])
    j = np.arange(n_max + 1)
    p0 = _srw1d(j, 0) ** 2
    py = _srw1d(j, a + b) * _srw1d(j, a - b)
    s = np.cumsum(p0 - py)
    levels = [n_max // 4, n_max // 2, n_max]
    levels = [N - (N % 2) for N in levels]
    return richardson([1.0 / N for N in levels], [s[N] for N in levels], [1.0, 2.0])


def dirichlet_box_series(L, y1, y2, tol=1e-14):
    """g_L(y1, y2) by summing P^k e_{y2} over killed walks in [-L, L]^2.

    The killed transition operator has spectral radius cos(pi / (2L + 2)),
    so the remainder after k terms is at most |P^k e|_1 / (1 - radius).
    """
    n = 2 * L + 1
    v = np.zeros((n, n))
    v[y2[0] + L, y2[1] + L] = 1.0
    acc = v.copy()
    decay = 1.0 - math.cos(math.pi / (2 * L + 2))
    while True:
        w = np.zeros_like(v)
        w[1:, :] += v[:-1, :]
        w[:-1, :] += v[1:, :]
        w[:, 1:] += v[:, :-1]
        w[:, :-1] += v[:, 1:]
        v = 0.25 * w
        acc += v
        if v.sum() / decay < tol:
            break
    return float(acc[y1[0] + L, y1[1] + L])
