"""Equilibrium measure, capacity and the subset determinants g_I, c_I.

For a finite set K, the hitting probability P_x[H_K < inf] equals
``sum_x' g(x, x') e_K(x')`` and is 1 on K, so ``e_K = G_K^{-1} 1`` and
``cap(K) = 1' G_K^{-1} 1``. For every I subset of K, ``g_I = det G_I`` and
``c_I`` is the sum of all cofactors of ``G_I``, i.e. ``g_I * 1' G_I^{-1} 1``;
their ratio is again cap(I).
"""

import functools

import numpy as np
import scipy.linalg

from .errors import NumericalError, ValidationError

MAX_SUBSET_SITES = 14
NEGATIVE_TOL = 1e-12


def _canonical_sites(model, sites):
    if getattr(model, "kind", None) == "free-lattice":
        arr = np.asarray(sites, dtype=np.int64)
        if arr.ndim == 1 and model.d > 1 and arr.size == model.d:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != model.d or len(arr) == 0:
            raise ValidationError(f"expected a nonempty list of points in Z^{model.d}")
        out = [tuple(int(c) for c in row) for row in arr]
    else:
        out = list(sites)
        if not out:
            raise ValidationError("site list is empty")
        model.positions(out)
    if len(set(out)) != len(out):
        raise ValidationError("site list contains duplicates")
    return out


def _cholesky(G, what="Green matrix"):
    try:
        return scipy.linalg.cho_factor(G, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite") from exc


class SiteSet:
    """Finite ordered set K with its Green matrix, equilibrium measure and capacity.

    Parameters
    ----------
    model : GreenModel
        A :class:`~interlacements.lattice_green.LatticeGreen` or
        :class:`~interlacements.lattice_green.WeightedGraph`.
    sites : sequence
        Lattice points (or graph labels), distinct.

    Attributes
    ----------
    G : ndarray
        ``g(x, x')`` for x, x' in K (Green density on a weighted graph).
    rho : ndarray
        Site weights; all ones on the lattice.
    e : ndarray
        Equilibrium measure, solving ``G e = 1``. On a weighted graph this is
        rho(x) P_x[no return to K].
    cap : float
        Total mass of ``e``.
    """

    def __init__(self, model, sites):
        self.model = model
        self.sites = _canonical_sites(model, sites)
        self.G = np.array(model.matrix(self.sites), dtype=float)
        self.G = 0.5 * (self.G + self.G.T)
        self.rho = np.asarray(model.weights(self.sites), dtype=float)
        self._chol = _cholesky(self.G)
        e = scipy.linalg.cho_solve(self._chol, np.ones(len(self.sites)))
        if (e < -NEGATIVE_TOL).any():
            raise NumericalError(f"negative equilibrium measure {e.min():.3e}")
        self.e = np.clip(e, 0.0, None)
        self.cap = float(self.e.sum())
        for arr in (self.G, self.rho, self.e):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.sites)

    def __repr__(self):
        return f"SiteSet({len(self)} sites, cap={self.cap:.10g})"

    def index(self, site):
        key = tuple(int(c) for c in site) if isinstance(self.sites[0], tuple) else site
        try:
            return self.sites.index(key)
        except ValueError:
            raise ValidationError(f"site {site!r} is not in K") from None

    def solve(self, b):
        """G_K^{-1} b using the cached Cholesky factor."""
        return scipy.linalg.cho_solve(self._chol, b)

    @functools.cached_property
    def subsets(self):
        """:class:`SubsetTable` of K (computed on first access)."""
        return subset_table(self)


class SubsetTable:
    """g_I and c_I for every I subset of K, indexed by bitmask.

    Bit j of the mask is set when the j-th site of K belongs to I. Mask 0 is
    the empty set with g = 1 and c = 0.
    """

    def __init__(self, sites, g, c):
        self.sites = list(sites)
        self.n = len(self.sites)
        self.g = g
        self.c = c
        self.g.flags.writeable = False
        self.c.flags.writeable = False

    def members(self, mask):
        return [self.sites[j] for j in range(self.n) if mask >> j & 1]

    def mask(self, subset):
        pos = {s: j for j, s in enumerate(self.sites)}
        m = 0
        for s in subset:
            m |= 1 << pos[s]
        return m

    def products(self, V):
        """V_I = prod_{x in I} V(x) for every mask (V_empty = 1)."""
        V = np.asarray(V)
        out = np.ones(1 << self.n, dtype=np.result_type(V, float))
        for j in range(self.n):
            half = 1 << j
            out[half : 2 * half] = out[:half] * V[j]
        return out

    def polynomials(self, V):
        """(sum_I c_I V_I, sum_I g_I V_I)."""
        p = self.products(V)
        return p @ self.c, p @ self.g

    def capacities(self):
        cap = np.zeros(1 << self.n)
        cap[1:] = self.c[1:] / self.g[1:]
        return cap


def equilibrium(model, K):
    """SiteSet for the sites ``K`` (solves ``G_K e = 1``)."""
    return SiteSet(model, K)


def capacity(model, K):
    """cap(K) = sum of the equilibrium measure."""
    return SiteSet(model, K).cap


def subset_table(K):
    """Enumerate g_I = det G_I and c_I = g_I 1' G_I^{-1} 1 over all I subset of K."""
    n = len(K)
    if n > MAX_SUBSET_SITES:
        raise ValidationError(f"|K| = {n} exceeds the subset-enumeration cap {MAX_SUBSET_SITES}")
    G = K.G
    g = np.ones(1 << n)
    c = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        idx = [j for j in range(n) if mask >> j & 1]
        L, low = _cholesky(G[np.ix_(idx, idx)], what=f"G_I for I = {idx}")
        g[mask] = np.prod(np.diag(L)) ** 2
        c[mask] = g[mask] * scipy.linalg.cho_solve((L, low), np.ones(len(idx))).sum()
    return SubsetTable(K.sites, g, c)
