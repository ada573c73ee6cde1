"""Exact functionals of the occupation-time field on a finite window K.

For V supported in K write G V for the matrix ``g(x, x') V(x')``. The
exponential moments of ``sum_x V(x) L_{x,u}`` are

    E[exp{ sum V L}] = exp{ u (V, (I - GV)^{-1} 1) }    (small V),
    E[exp{-sum V L}] = exp{-u sum_I c_I V_I / sum_I g_I V_I}    (V >= 0),

and the second form is the first one written with cofactors, using
``det(I + GV) = sum_I g_I V_I``. On a weighted graph the inner product and
G carry the site weights rho (see :func:`weighted_graph_functionals`).
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError, ValidationError
from .potential_theory import MAX_SUBSET_SITES, SiteSet

MAX_DET_SITES = 12
MAX_SERIES_TERMS = 64


def _values(K, V, allow_complex=False):
    dtype = complex if allow_complex else float
    V = np.asarray(V, dtype=dtype)
    if V.shape != (len(K),):
        raise ValidationError(f"V must have one value per site of K ({len(K)}), got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValidationError("V has non-finite entries")
    return V


@dataclass
class GVOperator:
    """The matrix ``g(x, x') V(x')`` on K with its norms.

    ``linf_norm`` is the L-infinity operator norm (maximal absolute row sum),
    the quantity whose smallness makes the Neumann series of ``(I - GV)^{-1}``
    converge uniformly; ``spectral_radius`` is reported as a diagnostic.
    """

    matrix: np.ndarray
    linf_norm: float
    spectral_radius: float

    @classmethod
    def build(cls, K, V):
        M = K.G * V[None, :]
        radius = float(np.max(np.abs(np.linalg.eigvals(M)))) if len(V) else 0.0
        return cls(M, float(np.abs(M).sum(axis=1).max()), radius)


# ---------------------------------------------------------------- Laplace routes


def laplace_exact_subsets(K, V, u, table=None):
    """E[exp{-sum V(x) L_{x,u}}] for V >= 0 via the subset determinants.

    Parameters
    ----------
    K : SiteSet
    V : array_like
        Nonnegative values on the sites of K.
    u : float
        Level, u >= 0.
    table : SubsetTable, optional
        Defaults to ``K.subsets``.
    """
    V = _values(K, V)
    if (V < 0).any():
        raise ValidationError("the subset route needs V >= 0; use laplace_exact_operator")
    if u < 0:
        raise ValidationError("level u must be nonnegative")
    if len(K) > MAX_SUBSET_SITES:
        raise ValidationError(f"|K| = {len(K)} is above the subset cap {MAX_SUBSET_SITES}")
    table = K.subsets if table is None else table
    num, den = table.polynomials(V)
    return float(np.exp(-u * num / den))


def laplace_exponent_operator(K, V, gate=True):
    """(V, (I + GV)^{-1} 1), refusing when ||GV||_{L^inf -> L^inf} >= 1 and ``gate``."""
    V = _values(K, V)
    op = GVOperator.build(K, V)
    if gate and op.linf_norm >= 1.0:
        raise NumericalError(
            f"||GV|| = {op.linf_norm:.6g} >= 1: outside the certified region of the operator route"
        )
    A = np.eye(len(K)) + op.matrix
    try:
        h = scipy.linalg.solve(A, np.ones(len(K)))
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError("I + GV is singular") from exc
    return float(V @ h), op


def laplace_exact_operator(K, V, u, gate=True):
    """exp{-u (V, (I + GV)^{-1} 1)} by a linear solve.

    With ``gate`` the route refuses V with ``||GV||_{L^inf -> L^inf} >= 1``,
    which is where the Neumann series behind it is known to converge.
    """
    if u < 0:
        raise ValidationError("level u must be nonnegative")
    expo, _ = laplace_exponent_operator(K, V, gate=gate)
    return float(np.exp(-u * expo))


def exponential_moment(K, V, u, gate=True):
    """E[exp{+sum V(x) L_{x,u}}] = exp{u (V, (I - GV)^{-1} 1)} for small V."""
    V = _values(K, V)
    expo, _ = laplace_exponent_operator(K, -V, gate=gate)
    return float(np.exp(u * -expo))


def char_function(K, V, u, t):
    """E[exp{i t sum V(x) L_{x,u}}] = exp{u z (V, (I - z GV)^{-1} 1)}, z = i t.

    GV is similar to the symmetric matrix ``G^{1/2} V G^{1/2}`` and has real
    eigenvalues, so ``I - i t GV`` is invertible for every real t; the
    resolvent is still checked and a singular one is reported.
    """
    V = _values(K, V)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    M = K.G * V[None, :]
    out = np.empty(t.shape, dtype=complex)
    one = np.ones(len(K))
    for k, tk in enumerate(t):
        z = 1j * tk
        A = np.eye(len(K)) - z * M
        if np.linalg.cond(A) > 1e12:
            raise NumericalError(f"resolvent (I - zGV)^-1 is singular at z = {z}")
        out[k] = np.exp(u * z * (V @ np.linalg.solve(A, one)))
    return out if out.size > 1 else complex(out[0])


# ---------------------------------------------------------------- determinant identities


def _cofactor_matrix(A):
    n = A.shape[0]
    C = np.empty_like(A)
    for k, l in itertools.product(range(n), repeat=2):
        minor = np.delete(np.delete(A, k, axis=0), l, axis=1)
        C[k, l] = (-1) ** (k + l) * (np.linalg.det(minor) if n > 1 else 1.0)
    return C


@dataclass
class DetReport:
    det_lhs: float
    det_rhs: float
    cofactor_lhs: float
    cofactor_rhs: float
    tol: float = 1e-9
    extras: dict = field(default_factory=dict)

    @property
    def ok(self):
        scale_d = max(1.0, abs(self.det_rhs))
        scale_c = max(1.0, abs(self.cofactor_rhs))
        return (
            abs(self.det_lhs - self.det_rhs) <= self.tol * scale_d
            and abs(self.cofactor_lhs - self.cofactor_rhs) <= self.tol * scale_c
        )


def det_identities(K, V, tol=1e-9):
    """Check det(I + GV) = sum g_I V_I and sum_{k,l} C_{kl} v_l = sum c_I V_I.

    The left sides are computed directly (LU determinant, explicit minors for
    the cofactor matrix C of I + GV); the right sides from the subset table.
    """
    V = _values(K, V)
    if len(K) > MAX_DET_SITES:
        raise ValidationError(f"|K| = {len(K)} is above the cap {MAX_DET_SITES}")
    A = np.eye(len(K)) + K.G * V[None, :]
    det_lhs = float(np.linalg.det(A))
    C = _cofactor_matrix(A)
    # (V, A^{-1} 1) det A = sum_{k,l} v_k adj(A)_{kl} = sum_{k,l} v_k C_{lk}
    cof_lhs = float(V @ C.T @ np.ones(len(K)))
    num, den = K.subsets.polynomials(V)
    return DetReport(det_lhs, float(den), cof_lhs, float(num), tol)


# ---------------------------------------------------------------- series coefficients


def series_coefficients(K, V, u, n_max):
    """u (V, (GV)^{n-1} 1) for n = 1..n_max.

    These are the coefficients of z^n in the exponent ``u (V, (I - zGV)^{-1} 1)``;
    the inner product and G include the site weights rho (all ones on Z^d).
    """
    if not 1 <= n_max <= MAX_SERIES_TERMS:
        raise ValidationError(f"n_max must be in [1, {MAX_SERIES_TERMS}]")
    V = _values(K, V)
    w = K.rho * V
    M = K.G * w[None, :]
    f = np.ones(len(K))
    out = np.empty(n_max)
    for n in range(n_max):
        out[n] = u * (w @ f)
        f = M @ f
    return out


# ---------------------------------------------------------------- discrete occupation counts


def discrete_laplace(K, V, u, gate=True):
    """E[exp{-sum V(x) ell_{x,u}}] for the visit counts ell.

    Integrating out the exponential holding times gives
    ``E[exp{-sum V ell}] = E[exp{-sum (e^V - 1) L}]``. For V >= 0 the
    continuous potential ``e^V - 1`` is nonnegative and the subset route
    applies; otherwise ``e^V - 1 > -1`` is sent through the gated operator route.
    """
    V = _values(K, V)
    W = np.expm1(V)
    if (W >= 0).all() and len(K) <= MAX_SUBSET_SITES:
        return laplace_exact_subsets(K, W, u)
    return laplace_exact_operator(K, W, u, gate=gate)


# ---------------------------------------------------------------- weighted graphs


def weighted_graph_functionals(model, V, u, sites=None):
    """Laplace functional of the occupation times on a killed weighted graph.

    Returns a dict with

    ``operator``
        E[exp{-sum V L}] from the exponential-moment formula with rho-weighted
        inner product ``(f, h) = sum f h rho`` and ``Gf(x) = sum g(x,x') f(x') rho(x')``,
        evaluated at the potential ``-V / rho``;
    ``subsets``
        the cofactor/determinant form with g the Green density;
    ``linf_norm``
        ||G(V/rho)||_{L^inf -> L^inf} for the operator form.

    ``sites`` defaults to the support of V (all sites when V is a full vector).
    """
    V = np.asarray(V, dtype=float)
    labels = model.labels if sites is None else list(sites)
    if V.shape != (len(labels),):
        raise ValidationError("V must have one value per site")
    if u < 0:
        raise ValidationError("level u must be nonnegative")
    keep = [j for j in range(len(labels)) if V[j] != 0.0]
    if not keep:
        return {"operator": 1.0, "subsets": 1.0, "linf_norm": 0.0}
    K = SiteSet(model, [labels[j] for j in keep])
    V = V[keep]
    rho = K.rho
    # weighted form: potential U = -V / rho, G_rho = g diag(rho)
    U = -V / rho
    GU = K.G * (rho * U)[None, :]
    h = np.linalg.solve(np.eye(len(K)) - GU, np.ones(len(K)))
    op = float(np.exp(u * np.sum(U * h * rho)))
    out = {"operator": op, "linf_norm": float(np.abs(GU).sum(axis=1).max())}
    if (V >= 0).all() and len(K) <= MAX_SUBSET_SITES:
        out["subsets"] = laplace_exact_subsets(K, V, u)
    return out
