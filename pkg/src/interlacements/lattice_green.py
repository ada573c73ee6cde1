"""Green functions of simple random walk.

Four objects live here:

* :class:`LatticeGreen` -- the free Green function ``g(x)`` of simple random
  walk on Z^d, d >= 3 (expected number of visits to ``x`` starting at 0);
* :class:`PotentialKernel` -- the potential kernel ``a(y)`` on Z^2;
* :class:`DirichletBox` -- the Green function of the planar walk killed when
  it exits the box ``[-L, L]^2``;
* :class:`WeightedGraph` -- Green density of a finite weighted graph with
  killing.

The free Green function and the potential kernel are evaluated from the
Fourier representation written in continuous time: since
``1 / (1 - phi(k)) = int_0^inf exp(-t (1 - phi(k))) dt`` and the k-integral of
``exp(t phi(k)) cos(k.x)`` factorises into modified Bessel functions,

    g(x) = int_0^inf prod_i ive(x_i, t/d) dt,
    a(y) = int_0^inf [ive(0, t/2)^2 - ive(y_1, t/2) ive(y_2, t/2)] dt.

The k = 0 singularity of the Fourier integrand turns into the slowly decaying
tail of these integrals. The integral is split at ``T``: Gauss-Legendre in
``log t`` on ``[T_MIN, T]`` and the large-argument Bessel series integrated
term by term on ``[T, inf)``.
"""

import functools
import itertools
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.special import gamma as gamma_fn
from scipy.special import ive

from .errors import NumericalError, ValidationError

DEFAULT_NODES = 800
T_MIN = 1e-14
T_MAX = 1e9
TAIL_TERMS = 8
# beyond this Euclidean radius the asymptotic expansion replaces quadrature
QUAD_RADIUS = 256.0
EULER_GAMMA = 0.5772156649015329
# a(y) = (2/pi) log|y| + KAPPA + O(|y|^-2)
KAPPA = (2.0 * EULER_GAMMA + math.log(8.0)) / math.pi
MAX_GRAPH_SITES = 10_000


@functools.lru_cache(maxsize=None)
def _log_nodes(n):
    x, w = np.polynomial.legendre.leggauss(n)
    s0, s1 = math.log(T_MIN), math.log(T_MAX)
    s = 0.5 * (s1 - s0) * x + 0.5 * (s1 + s0)
    t = np.exp(s)
    wt = 0.5 * (s1 - s0) * w * t
    t.flags.writeable = False
    wt.flags.writeable = False
    return t, wt


def _bessel_series(orders, terms):
    """Coefficients ``c_k`` with ive(n, z) ~ (2 pi z)^(-1/2) sum_k c_k z^-k."""
    orders = np.asarray(orders, dtype=float)
    out = np.empty(orders.shape + (terms + 1,))
    out[..., 0] = 1.0
    mu = 4.0 * orders**2
    for k in range(1, terms + 1):
        out[..., k] = -out[..., k - 1] * (mu - (2 * k - 1) ** 2) / (8.0 * k)
    return out


def _poly_product(series_rows):
    """Truncated product of power series, one row per factor (vectorised)."""
    acc = series_rows[0]
    K = acc.shape[-1]
    for nxt in series_rows[1:]:
        new = np.zeros_like(acc)
        for m in range(K):
            new[..., m] = np.einsum("...j,...j->...", acc[..., : m + 1], nxt[..., m::-1])
        acc = new
    return acc


def _tail_integral(coeffs, d, skip_leading=False):
    """int_T^inf (2 pi t/d)^(-d/2) sum_m c_m (d/t)^m dt."""
    total = np.zeros(coeffs.shape[:-1])
    pref = (2.0 * math.pi / d) ** (-d / 2.0)
    for m in range(coeffs.shape[-1]):
        p = d / 2.0 + m
        if skip_leading and m == 0:
            continue
        total += coeffs[..., m] * pref * d**m * T_MAX ** (1.0 - p) / (p - 1.0)
    return total


def _bessel_products(points, d, nodes, chunk=4096):
    """Quadrature of prod_i ive(|x_i|, t/d) over [T_MIN, T_MAX] for each row."""
    t, w = _log_nodes(nodes)
    uniq, inv = np.unique(points, return_inverse=True)
    inv = inv.reshape(points.shape)
    table = ive(uniq[:, None].astype(float), t[None, :] / d)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        idx = inv[lo : lo + chunk]
        prod = table[idx[:, 0]].copy()
        for i in range(1, d):
            prod *= table[idx[:, i]]
        out[lo : lo + chunk] = prod @ w
    return out


def schwinger_green(points, d, nodes=DEFAULT_NODES):
    """Quadrature value of g at each row of ``points`` (no table, no asymptotics)."""
    points = np.abs(np.atleast_2d(np.asarray(points, dtype=np.int64)))
    core = _bessel_products(points, d, nodes)
    series = _bessel_series(points, TAIL_TERMS)
    coeffs = _poly_product([series[:, i, :] for i in range(d)])
    return core + _tail_integral(coeffs, d)


def schwinger_potential_kernel(points, nodes=DEFAULT_NODES):
    """Quadrature value of a(y) at each row of ``points``."""
    points = np.abs(np.atleast_2d(np.asarray(points, dtype=np.int64)))
    zero = np.zeros((1, 2), dtype=np.int64)
    core = _bessel_products(zero, 2, nodes)[0] - _bessel_products(points, 2, nodes)
    s0 = _bessel_series(zero, TAIL_TERMS)
    sy = _bessel_series(points, TAIL_TERMS)
    c0 = _poly_product([s0[:, 0, :], s0[:, 1, :]])
    cy = _poly_product([sy[:, 0, :], sy[:, 1, :]])
    out = core + _tail_integral(c0 - cy, 2, skip_leading=True)
    out[(points == 0).all(axis=1)] = 0.0
    return out


def _symmetric_table(radius, d, evaluate):
    """Dense table over [0, radius]^d filled from sorted representatives."""
    reps = np.array(
        list(itertools.combinations_with_replacement(range(radius + 1), d)),
        dtype=np.int64,
    )
    vals = evaluate(reps)
    table = np.empty((radius + 1,) * d)
    for perm in set(itertools.permutations(range(d))):
        table[tuple(reps[:, list(perm)].T)] = vals
    table.flags.writeable = False
    return table


def _as_points(points, d):
    arr = np.asarray(points, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValidationError(f"expected points of dimension {d}, got shape {arr.shape}")
    return arr


class LatticeGreen:
    """Green function g(x) = sum_n P_0[X_n = x] of simple random walk on Z^d.

    Values with all |x_i| <= ``radius`` are tabulated once at construction;
    other points inside ``QUAD_RADIUS`` are integrated on demand and points
    further out use the two-term asymptotic expansion. Instances are
    read-only after ``__init__`` and can be shared between threads.

    Parameters
    ----------
    d : int
        Dimension, at least 3.
    nodes : int
        Number of Gauss-Legendre nodes in log-time (quadrature resolution).
    radius : int, optional
        Half-width of the tabulated cube. Defaults to 64 for d = 3.
    """

    kind = "free-lattice"

    def __init__(self, d=3, nodes=DEFAULT_NODES, radius=None):
        if d < 3:
            raise ValidationError(f"simple random walk on Z^{d} is recurrent; need d >= 3")
        self.d = int(d)
        self.nodes = int(nodes)
        self.radius = int(radius if radius is not None else {3: 64, 4: 20}.get(d, 8))
        self._table = _symmetric_table(
            self.radius, self.d, lambda p: schwinger_green(p, self.d, self.nodes)
        )

    @property
    def g0(self):
        return float(self._table[(0,) * self.d])

    def values(self, points):
        """Vectorised g over an ``(n, d)`` integer array."""
        p = np.abs(_as_points(points, self.d))
        out = np.empty(len(p))
        inside = p.max(axis=1) <= self.radius
        if inside.any():
            out[inside] = self._table[tuple(p[inside].T)]
        rest = ~inside
        if rest.any():
            r = np.sqrt((p[rest].astype(float) ** 2).sum(axis=1))
            near = np.flatnonzero(rest)[r <= QUAD_RADIUS]
            far = np.flatnonzero(rest)[r > QUAD_RADIUS]
            if len(near):
                # g is invariant under coordinate permutations: integrate each orbit once
                keys, inv = np.unique(np.sort(p[near], axis=1), axis=0, return_inverse=True)
                out[near] = schwinger_green(keys, self.d, self.nodes)[inv.ravel()]
            if len(far):
                out[far] = self.asymptotic(p[far])
        return out

    def __call__(self, x):
        return float(self.values(x)[0])

    def asymptotic(self, points):
        """Two-term expansion c_d r^(2-d) + O(r^-d), cubic anisotropy included."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.d
        r2 = (p**2).sum(axis=1)
        r = np.sqrt(r2)
        s4 = (p**4).sum(axis=1)
        lead = d * gamma_fn(d / 2.0 - 1.0) / (2.0 * math.pi ** (d / 2.0)) * r ** (2.0 - d)
        # (d/6) sum_i d_i^4 of the inverse transform of |k|^-4, written with
        # q = 4 - d and q * Gamma(d/2 - 2) = -2 Gamma(d/2 - 1)
        q = 4.0 - d
        qc4 = -gamma_fn(d / 2.0 - 1.0) / (8.0 * math.pi ** (d / 2.0))
        corr = (d / 6.0) * qc4 * (
            (3.0 * d + 6.0 * (q - 4.0)) * (q - 2.0) * r ** (q - 4.0)
            + (q - 2.0) * (q - 4.0) * (q - 6.0) * s4 * r ** (q - 8.0)
        )
        return lead + corr

    def matrix(self, sites, others=None):
        """Matrix g(x - x') for x in ``sites`` and x' in ``others`` (default: sites)."""
        a = _as_points(sites, self.d)
        b = a if others is None else _as_points(others, self.d)
        diff = (a[:, None, :] - b[None, :, :]).reshape(-1, self.d)
        return self.values(diff).reshape(len(a), len(b))

    def weights(self, sites):
        """Site weights rho(x); identically 1 for the lattice normalisation."""
        return np.ones(len(_as_points(sites, self.d)))

    def neighbours(self, x):
        x = np.asarray(x, dtype=np.int64)
        eye = np.eye(self.d, dtype=np.int64)
        return np.concatenate([x + eye, x - eye])


class PotentialKernel:
    """Potential kernel a(y) of planar simple random walk.

    a(0) = 0, a(e_1) = 1 and a grows like (2/pi) log|y|. Tabulated on
    ``[0, radius]^2``; outside, the expansion
    ``(2/pi) log r + KAPPA - cos(4 theta) / (6 pi r^2)`` is used.
    """

    def __init__(self, nodes=DEFAULT_NODES, radius=256):
        self.nodes = int(nodes)
        self.radius = int(radius)
        self._table = _symmetric_table(
            self.radius, 2, lambda p: schwinger_potential_kernel(p, self.nodes)
        )

    def values(self, points):
        p = np.abs(_as_points(points, 2))
        out = np.empty(len(p))
        inside = p.max(axis=1) <= self.radius
        if inside.any():
            out[inside] = self._table[tuple(p[inside].T)]
        if (~inside).any():
            out[~inside] = self.asymptotic(p[~inside])
        return out

    def __call__(self, y):
        return float(self.values(y)[0])

    @staticmethod
    def asymptotic(points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = (p**2).sum(axis=1)
        cos4 = (p[:, 0] ** 4 - 6 * p[:, 0] ** 2 * p[:, 1] ** 2 + p[:, 1] ** 4) / r2**2
        return (1.0 / math.pi) * np.log(r2) + KAPPA - cos4 / (6.0 * math.pi * r2)

    def matrix(self, sites, others=None):
        a = _as_points(sites, 2)
        b = a if others is None else _as_points(others, 2)
        diff = (a[:, None, :] - b[None, :, :]).reshape(-1, 2)
        return self.values(diff).reshape(len(a), len(b))


@functools.lru_cache(maxsize=8)
def lattice_green(d=3, nodes=DEFAULT_NODES):
    """Shared :class:`LatticeGreen` instance per (d, nodes)."""
    return LatticeGreen(d, nodes)


@functools.lru_cache(maxsize=4)
def potential_kernel_model(nodes=DEFAULT_NODES):
    return PotentialKernel(nodes)


def green_free(x, d=3, nodes=DEFAULT_NODES):
    """g(x) for simple random walk on Z^d, d >= 3."""
    if d < 3:
        raise ValidationError(f"simple random walk on Z^{d} is recurrent; need d >= 3")
    x = np.asarray(x)
    if x.shape != (d,):
        raise ValidationError(f"point {x.tolist()} is not in Z^{d}")
    return lattice_green(d, nodes)(x)


def potential_kernel(y, nodes=DEFAULT_NODES):
    """a(y) for y in Z^2."""
    y = np.asarray(y)
    if y.shape != (2,):
        raise ValidationError(f"potential kernel is defined on Z^2, got {y.tolist()}")
    return potential_kernel_model(nodes)(y)


class DirichletBox:
    """Green function of planar SRW killed on exiting U_L = [-L, L]^2.

    The operator ``I - P`` restricted to U_L is factorised once with a sparse
    LU; columns of its inverse are g_L(., y2).
    """

    def __init__(self, L):
        if L < 1:
            raise ValidationError("box half-width L must be >= 1")
        self.L = int(L)
        n = 2 * self.L + 1
        self.side = n
        idx = np.arange(n * n).reshape(n, n)
        rows, cols = [], []
        for sl_a, sl_b in (
            ((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
            ((slice(None), slice(1, None)), (slice(None), slice(None, -1))),
        ):
            a, b = idx[sl_a].ravel(), idx[sl_b].ravel()
            rows += [a, b]
            cols += [b, a]
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        P = sp.csc_matrix((np.full(len(rows), 0.25), (rows, cols)), shape=(n * n, n * n))
        self._op = (sp.identity(n * n, format="csc") - P).tocsc()
        self._lu = spla.splu(self._op)

    def index(self, y):
        y1, y2 = int(y[0]), int(y[1])
        if max(abs(y1), abs(y2)) > self.L:
            raise ValidationError(f"site {(y1, y2)} is outside U_{self.L}")
        return (y1 + self.L) * self.side + (y2 + self.L)

    def column(self, y2):
        """g_L(., y2) as a (2L+1, 2L+1) array indexed by (y + L)."""
        rhs = np.zeros(self.side**2)
        rhs[self.index(y2)] = 1.0
        return self._lu.solve(rhs).reshape(self.side, self.side)

    def green(self, y1, y2):
        i = self.index(y1)
        return float(self.column(y2).ravel()[i])

    def exit_expectation(self, f):
        """E_y[f(X_{T_U})] for all y in U_L; ``f`` maps an (m, 2) array to values."""
        n, L = self.side, self.L
        coords = np.arange(-L, L + 1)
        rhs = np.zeros((n, n))
        # boundary layer just outside the box, one entry per crossing edge
        for axis in (0, 1):
            for sign in (-1, 1):
                out = np.empty((n, 2), dtype=np.int64)
                out[:, axis] = sign * (L + 1)
                out[:, 1 - axis] = coords
                vals = 0.25 * f(out)
                if axis == 0:
                    rhs[0 if sign < 0 else -1, :] += vals
                else:
                    rhs[:, 0 if sign < 0 else -1] += vals
        return self._lu.solve(rhs.ravel()).reshape(n, n)


@functools.lru_cache(maxsize=16)
def dirichlet_box(L):
    return DirichletBox(L)


def green_dirichlet_box(L, y1, y2):
    """g_L(y1, y2): expected visits to y2 from y1 before leaving [-L, L]^2."""
    return dirichlet_box(int(L)).green(y1, y2)


class WeightedGraph:
    """Finite weighted graph with killing; a transient GreenModel.

    Parameters
    ----------
    conductances : (n, n) array_like
        Symmetric nonnegative edge weights rho_{x,x'} (diagonal ignored).
    killing : (n,) array_like
        Nonnegative killing weights; at least one must be positive.
    labels : sequence, optional
        Names of the sites; defaults to ``range(n)``.

    The total weight is ``rho(x) = sum_x' rho_{x,x'} + killing(x)`` and the
    Green density is ``(D - A)^-1`` with D = diag(rho), A = conductances, i.e.
    expected visits divided by rho(x').
    """

    kind = "finite-weighted-graph"

    def __init__(self, conductances, killing, labels=None):
        A = np.array(conductances, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("conductance matrix must be square")
        n = A.shape[0]
        if n > MAX_GRAPH_SITES:
            raise ValidationError(f"graph has {n} sites, cap is {MAX_GRAPH_SITES}")
        np.fill_diagonal(A, 0.0)
        if (A < 0).any() or not np.allclose(A, A.T, rtol=0, atol=1e-14):
            raise ValidationError("conductances must be symmetric and nonnegative")
        kappa = np.asarray(killing, dtype=float)
        if kappa.shape != (n,) or (kappa < 0).any():
            raise ValidationError("killing must be a nonnegative vector of length n")
        ncomp, comp = connected_components(sp.csr_matrix(A > 0), directed=False)
        if ncomp > 1:
            raise ValidationError(f"support of the weights is disconnected ({ncomp} components)")
        if not (kappa > 0).any():
            raise NumericalError("no killing: the walk is recurrent and (D - A) is singular")
        self.labels = list(labels) if labels is not None else list(range(n))
        if len(self.labels) != n:
            raise ValidationError("labels do not match the number of sites")
        self._pos = {lab: i for i, lab in enumerate(self.labels)}
        self.conductances = A
        self.killing = kappa
        self.rho = A.sum(axis=1) + kappa
        try:
            cf = scipy.linalg.cho_factor(np.diag(self.rho) - A)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("D - A is not positive definite") from exc
        dens = scipy.linalg.cho_solve(cf, np.eye(n))
        self.density = 0.5 * (dens + dens.T)
        self.density.flags.writeable = False
        self.rho.flags.writeable = False

    def positions(self, sites):
        try:
            return np.array([self._pos[s] for s in sites], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"unknown site {exc.args[0]!r}") from exc

    def matrix(self, sites, others=None):
        i = self.positions(sites)
        j = i if others is None else self.positions(others)
        return self.density[np.ix_(i, j)]

    def weights(self, sites):
        return self.rho[self.positions(sites)]

    def transition_matrix(self):
        return self.conductances / self.rho[:, None]


def green_weighted(model, x, xp):
    """Green density g(x, x') of a :class:`WeightedGraph`."""
    i, j = model.positions([x, xp])
    return float(model.density[i, j])
