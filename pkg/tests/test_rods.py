import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interlacements.errors import ValidationError
from interlacements.lattice_green import potential_kernel_model
from interlacements.rods import (
    LIMIT_TAU,
    RodOperator,
    RodSpec,
    coeff_a_N,
    coeff_tilde_a_N,
    energy,
    limit_characteristics,
    rod_potential_difference,
    tau_N,
)
from interlacements.sampler import sample_besq0, sample_pinned_gff_2d

LAM3 = [(0, 0), (1, 0), (0, 1)]
W3 = [2.0, -1.0, -1.0]


@pytest.mark.parametrize("Lam,N", [([(0, 0)], 50), (LAM3, 300), ([(0, 0), (1, 0), (0, 2), (1, 1)], 500)])
def test_fft_matches_dense(Lam, N):
    op = RodOperator(Lam, N)
    F = np.random.default_rng(0).normal(size=(len(Lam), N))
    assert np.max(np.abs(op.apply(F) - op.apply_dense(F))) < 1e-10


def test_dense_route_coefficients():
    spec = RodSpec(LAM3, W3, 400, alpha=0.8)
    a = coeff_a_N(spec, 6)
    b = coeff_a_N(spec, 6, dense=True)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-8)


def test_first_coefficients():
    spec = RodSpec(LAM3, W3, 1000, alpha=1.7)
    a = coeff_a_N(spec, 3)
    assert a[0] == 0.0
    op = RodOperator(LAM3, 1000)
    v = np.repeat(np.array(W3)[:, None], 1000, axis=1) / math.sqrt(math.log(1000))
    assert a[1] == pytest.approx(spec.level * np.sum(v * op.apply(v)), rel=1e-12)
    t = coeff_tilde_a_N(1000, 1.7, 3)
    assert t[0] == pytest.approx(1.7, rel=1e-15)
    assert (t >= 0).all()


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 20), st.integers(2, 600))
def test_scaling_law(gamma, N):
    alpha = 1.3
    base = coeff_a_N(RodSpec(LAM3, W3, N, alpha), 6)
    other = coeff_a_N(RodSpec(LAM3, np.array(W3) / math.sqrt(gamma), N, gamma), 6)
    n = np.arange(1, 7)
    np.testing.assert_allclose(other, gamma ** (1 - n / 2) * base / alpha, rtol=1e-10, atol=1e-13)


def test_antisymmetric_w_has_no_odd_terms():
    # W = delta_0 - delta_e1 is odd under the reflection y -> e1 - y
    a = coeff_a_N(RodSpec([(0, 0), (1, 0)], [1.0, -1.0], 2048), 6)
    assert np.all(np.abs(a[0::2]) < 1e-12 * np.abs(a[1::2]).max())


def test_geometric_bound():
    Ns = [2**k for k in (6, 8, 10, 12)]
    rows = np.array([coeff_a_N(RodSpec(LAM3, W3, N), 10) for N in Ns])
    n = np.arange(1, 11)
    # fitted C; the point is that one C serves every N and n
    C = np.max(np.abs(rows) ** (1 / n))
    assert C < 8
    assert np.all(np.abs(rows) <= C**n + 1e-12)


def test_energy_values():
    a = potential_kernel_model()
    assert energy([(0, 0), (1, 0)], [1, -1]) == pytest.approx(6 * a((1, 0)), rel=1e-14)
    assert energy(LAM3, W3) >= 0
    assert energy(LAM3, 3 * np.array(W3)) == pytest.approx(9 * energy(LAM3, W3), rel=1e-13)
    with pytest.raises(ValidationError):
        energy(LAM3, [1, 0, 0])


def test_energy_is_gff_variance():
    x = sample_pinned_gff_2d(LAM3, seed=2, size=100_000)
    s = x @ np.array(W3)
    s2 = s**2
    assert abs(s2.mean() - energy(LAM3, W3)) < 3.5 * s2.std() / math.sqrt(len(s2))


def test_tau():
    Ns = [2**k for k in range(8, 17)]
    taus = np.array([tau_N(N) for N in Ns])
    assert (taus > 0).all()
    err = np.abs(2 * taus - 3 / math.pi)
    assert (np.diff(err) < 0).all()


def test_potential_difference():
    assert rod_potential_difference((0, 0), 5, 10)[0] == 0.0
    a = potential_kernel_model()
    for y in [(1, 0), (2, 1), (0, 3)]:
        bs = []
        for N in (16, 64, 256, 1024):
            for z in (1, N // 3, N // 2, N):
                val, b = rod_potential_difference(y, z, N)
                assert b >= -1e-9
                assert val == pytest.approx(1.5 * a(y) - b, abs=1e-14)
            bs.append(rod_potential_difference(y, N // 2, N)[1])
        assert all(b2 < b1 for b1, b2 in zip(bs, bs[1:]))
    with pytest.raises(ValidationError):
        rod_potential_difference((1, 0), 0, 10)


def test_spec_validation():
    with pytest.raises(ValidationError):
        RodSpec([(1, 0), (0, 1)], [1, -1], 10)
    with pytest.raises(ValidationError):
        RodSpec(LAM3, [1, 1, 1], 10)
    with pytest.raises(ValidationError):
        RodSpec(LAM3, W3, 1)
    with pytest.raises(ValidationError):
        coeff_a_N(RodSpec(LAM3, W3, 10), 17)


def test_limit_report():
    rep = limit_characteristics(0.9, LAM3, W3, k_max=3)
    E = energy(LAM3, W3)
    np.testing.assert_allclose(
        rep.a_limits, [0, 0.45 * E, 0, 0.45 * E * LIMIT_TAU * E, 0, 0.45 * E * (LIMIT_TAU * E) ** 2]
    )
    assert rep.char_function(0.0) == 1.0
    assert rep.tilde_laplace(0.0) == 1.0
    assert rep.tilde_laplace(1e12) == pytest.approx(rep.tilde_vacancy, rel=1e-9)
    assert rep.tilde_vacancy == pytest.approx(math.exp(-math.pi * 0.9 / 3))
    # the Taylor coefficients of log mgf are the a-limits
    z = 0.01
    series = sum(c * z ** (k + 1) for k, c in enumerate(rep.a_limits))
    assert math.log(rep.mgf(z)) == pytest.approx(series, rel=1e-9)


def test_limit_law_by_product_sampling():
    alpha = 0.8
    rep = limit_characteristics(alpha, LAM3, W3)
    n = 200_000
    R2 = sample_besq0(alpha, LIMIT_TAU, seed=11, size=n)
    psi = sample_pinned_gff_2d(LAM3, seed=12, size=n) @ np.array(W3)
    X = np.sqrt(R2) * psi
    for z in (0.05, 0.2, 0.5):
        c = np.cos(z * X)
        assert abs(c.mean() - rep.char_function(z)) < 4 * c.std() / math.sqrt(n)
        assert abs(np.sin(z * X).mean()) < 4 * np.sin(z * X).std() / math.sqrt(n)
