import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interlacements.errors import ValidationError
from interlacements.functionals import laplace_exact_subsets
from interlacements.lattice_green import lattice_green
from interlacements.potential_theory import SiteSet
from interlacements.sampler import (
    SamplerConfig,
    TraceChain,
    escape_frequencies,
    free_field_increment_covariance,
    occupation_field,
    pinned_gff_covariance,
    read_binary,
    sample_besq0,
    sample_fields,
    sample_free_field,
    sample_free_field_increments,
    sample_interlacement,
    sample_pinned_gff_2d,
    write_binary,
)

ORIGIN = (0, 0, 0)


@pytest.fixture(scope="module")
def G():
    return lattice_green(3)


@pytest.fixture(scope="module")
def K5(G):
    return SiteSet(G, [ORIGIN, (1, 0, 0), (0, 2, 0), (1, 1, 1), (-1, 0, 2)])


def zscore(samples, target):
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    return (samples.mean() - target) / se


@pytest.mark.parametrize(
    "sites",
    [[ORIGIN], [ORIGIN, (1, 0, 0)], [ORIGIN, (1, 0, 0), (0, 1, 0), (1, 1, 0)], [(3, 0, 0), (0, 0, 4), (2, 2, 2)]],
)
def test_trace_chain_identity(G, sites):
    K = SiteSet(G, sites)
    ch = TraceChain(K)
    np.testing.assert_allclose(ch.transition, np.eye(len(K)) - np.linalg.inv(K.G), atol=1e-12)
    np.testing.assert_allclose(ch.escape, K.e, atol=1e-12)
    np.testing.assert_allclose(ch.transition.sum(axis=1) + ch.escape, 1.0, atol=1e-12)


def test_u_zero_empty(G, K5):
    assert sample_interlacement(G, K5, 0.0, SamplerConfig(seed=3)) == []


def test_trajectory_structure(G, K5):
    cfg = SamplerConfig(seed=11, backward_steps=12)
    trs = sample_interlacement(G, K5, 4.0, cfg)
    assert len(trs) > 0
    Kset = set(K5.sites)
    for tr in trs:
        assert 0 <= tr.label <= 4.0
        assert len(tr.holding) == len(tr.forward) and (tr.holding > 0).all()
        assert len(tr.exits) == len(tr.forward)
        assert tr.exits[-1] is not None and tr.escaped
        assert all(tuple(p) not in Kset for p in tr.backward)
        # consecutive backward sites are lattice neighbours
        path = np.vstack([K5.sites[tr.start], tr.backward])
        assert (np.abs(np.diff(path, axis=0)).sum(axis=1) == 1).all()


def test_object_sampler_vacancy(G, K5):
    cfg = SamplerConfig(seed=5, backward_steps=0)
    u = 0.5
    empty = np.array([len(sample_interlacement(G, K5, u, cfg, replica=r)) == 0 for r in range(4000)])
    p = math.exp(-u * K5.cap)
    z = (empty.mean() - p) / math.sqrt(p * (1 - p) / len(empty))
    assert abs(z) < 4


def test_object_and_bulk_agree_in_law(G, K5):
    cfg = SamplerConfig(seed=9, backward_steps=0)
    V = np.array([0.3, 0.5, 0.2, 1.0, 0.7])
    vals = []
    for r in range(3000):
        f = occupation_field(sample_interlacement(G, K5, 1.0, cfg, replica=r), K5)
        vals.append(math.exp(-f.L @ V))
    assert abs(zscore(np.array(vals), laplace_exact_subsets(K5, V, 1.0))) < 4


def test_field_invariants(G, K5):
    cfg = SamplerConfig(seed=2, replicas=3000)
    fs = sample_fields(K5, [0.5, 1.0, 2.0], cfg)
    assert ((fs.L == 0) == (fs.ell == 0)).all()
    assert (np.diff(fs.L, axis=0) >= 0).all() and (np.diff(fs.ell, axis=0) >= 0).all()


def test_bulk_laplace(K5):
    cfg = SamplerConfig(seed=1, replicas=20_000)
    L, _ = sample_fields(K5, 1.0, cfg).at(1.0)
    V = np.array([0.3, 0.5, 0.2, 1.0, 0.7])
    assert abs(zscore(np.exp(-L @ V), laplace_exact_subsets(K5, V, 1.0))) < 4


def test_determinism_and_workers(K5):
    a = sample_fields(K5, [1.0, 3.0], SamplerConfig(seed=4, replicas=1200, chunk=300, workers=1))
    b = sample_fields(K5, [1.0, 3.0], SamplerConfig(seed=4, replicas=1200, chunk=300, workers=1))
    c = sample_fields(K5, [1.0, 3.0], SamplerConfig(seed=4, replicas=1200, chunk=300, workers=3))
    assert np.array_equal(a.L, b.L) and np.array_equal(a.L, c.L) and np.array_equal(a.ell, c.ell)
    d = sample_fields(K5, [1.0, 3.0], SamplerConfig(seed=5, replicas=1200, chunk=300))
    assert not np.array_equal(a.L, d.L)


def test_window(K5):
    cfg = SamplerConfig(seed=4, replicas=500)
    full = sample_fields(K5, 1.0, cfg)
    sub = sample_fields(K5, 1.0, cfg, window=[(0, 2, 0), ORIGIN])
    assert np.array_equal(sub.L[0][:, 0], full.L[0][:, 2])
    with pytest.raises(ValidationError):
        sample_fields(K5, 1.0, cfg, window=[(9, 9, 9)])
    with pytest.raises(ValidationError):
        occupation_field([], K5, window=[(9, 9, 9)])


def test_truncation_mode_runs(G):
    K = SiteSet(G, [ORIGIN])
    cfg = SamplerConfig(seed=1, replicas=50, mode="truncation", radius=3, backward_steps=0)
    fs = sample_fields(K, 1.0, cfg)
    assert fs.L.shape == (1, 50, 1)
    # truncation forgets late returns, so it can only undercount visits
    assert fs.L.mean() < 1.5


def test_config_validation():
    with pytest.raises(ValidationError):
        SamplerConfig(mode="approx")
    with pytest.raises(ValidationError):
        SamplerConfig(replicas=0)
    with pytest.raises(ValidationError):
        SamplerConfig(seed=-1)


def test_escape_frequencies(G):
    K = SiteSet(G, [ORIGIN, (1, 0, 0), (0, 1, 1)])
    freq, se = escape_frequencies(K, 20_000, seed=3)
    z = (freq - K.e) / se
    assert np.all(np.abs(z) < 4)


def test_binary_roundtrip(tmp_path, K5):
    fs = sample_fields(K5, [1.0, 2.0], SamplerConfig(seed=4, replicas=20))
    path = tmp_path / "f.bin"
    write_binary(path, fs, level=1.0)
    sites, u, seed, rec = read_binary(path)
    assert u == 1.0 and seed == 4
    assert np.array_equal(sites, np.array(K5.sites))
    assert np.array_equal(rec["L"], fs.at(1.0)[0])
    assert np.array_equal(rec["ell"], fs.at(1.0)[1])
    assert path.stat().st_size == 40 + 8 * 15 + 20 * (8 + 16 * 5)


# ---------------------------------------------------------------- reference samplers


def test_besq0_zero_start():
    assert sample_besq0(0.0, 1.0, seed=1) == 0.0
    assert (sample_besq0(0.0, 0.7, seed=1, size=100) == 0).all()


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.1, 3), st.integers(0, 2**32))
def test_besq0_laplace(a2, tau, seed):
    x = sample_besq0(a2, tau, seed=seed, size=40_000)
    for lam in (0.1, 1.0):
        assert abs(zscore(np.exp(-lam * x), math.exp(-lam * a2 / (1 + 2 * tau * lam)))) < 4.5
    p0 = math.exp(-a2 / (2 * tau))
    assert abs((x == 0).mean() - p0) < 4.5 * math.sqrt(p0 * (1 - p0) / len(x)) + 1e-12


def test_pinned_gff():
    pts = [(0, 0), (1, 0), (2, 3), (-1, 4)]
    C = pinned_gff_covariance(pts)
    assert np.all(C[0] == 0)
    from interlacements.lattice_green import potential_kernel_model

    a = potential_kernel_model()
    np.testing.assert_allclose(np.diag(C)[1:], [6 * a(p) for p in pts[1:]], rtol=1e-14)
    x = sample_pinned_gff_2d(pts, seed=7, size=50_000)
    assert np.all(x[:, 0] == 0)
    emp = np.cov(x.T)
    for i in range(1, 4):
        for j in range(1, 4):
            prod = x[:, i] * x[:, j]
            se = prod.std() / math.sqrt(len(prod))
            assert abs(emp[i, j] - C[i, j]) < 4 * se


def test_free_field_increments(G):
    pts = [ORIGIN, (1, 0, 0), (2, 1, 0), (0, 3, 3)]
    C = free_field_increment_covariance(G, pts)
    x = sample_free_field_increments(G, pts, seed=8, size=60_000)
    assert np.all(x[:, 0] == 0)
    gam = sample_free_field(G, pts, seed=9, size=60_000)
    alt = gam - gam[:, :1]
    for i in range(1, 4):
        for j in range(i, 4):
            for s in (x, alt):
                prod = s[:, i] * s[:, j]
                assert abs(prod.mean() - C[i, j]) < 4 * prod.std() / math.sqrt(len(prod))
