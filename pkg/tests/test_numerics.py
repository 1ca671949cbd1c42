import itertools
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from atdl import kernels
from atdl.errors import ShapeError, UndefinedCorrelationError
from atdl.numerics import (Rng, covariance, derive_seed, fit_pca, matmul, pearson, pearson_pvalue,
                           symmetric_eig)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# -- matmul -------------------------------------------------------------------------------------------


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def test_matmul_identity(rng):
    m = rng.standard_normal((3, 4))
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_example():
    assert matmul([[1, 2], [3, 4]], [[1], [1]]).tolist() == [[3], [7]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 2))
    np.testing.assert_allclose(matmul(a, b), triple_loop(a, b), atol=1e-12, rtol=0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@given(hnp.arrays(np.float64, (3, 4), elements=finite), hnp.arrays(np.float64, (4, 2), elements=finite),
       hnp.arrays(np.float64, (2, 5), elements=finite))
def test_matmul_associative(a, b, c):
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    scale = np.abs(a).max() * np.abs(b).max() * np.abs(c).max() * 16 + 1e-300
    assert np.max(np.abs(left - right)) <= 1e-9 * scale


# -- random numbers -----------------------------------------------------------------------------------


def test_rng_is_reproducible_and_counter_based():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.uniform(100), b.uniform(100))
    whole = Rng(9).uniform(10)
    r = Rng(9)
    parts = np.concatenate([r.uniform(4), r.uniform(6)])
    assert np.array_equal(whole, parts)


def test_rng_first_draws_are_frozen():
    # SplitMix64: mix(seed + k * golden_gamma), top 53 bits -> [0, 1)
    got = Rng(0).uniform(3)
    mask = (1 << 64) - 1

    def mix(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & mask
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB & mask
        return z ^ (z >> 31)

    expected = [(mix((k + 1) * 0x9E3779B97F4A7C15 & mask) >> 11) / 2.0 ** 53 for k in range(3)]
    assert got.tolist() == expected


def test_rng_uniform_range_and_moments():
    u = Rng(3).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    z = Rng(4).normal(200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_permutation_is_a_permutation_and_seeded():
    p = Rng(11).permutation(1000)
    assert sorted(p.tolist()) == list(range(1000))
    assert np.array_equal(p, Rng(11).permutation(1000))
    assert not np.array_equal(p, Rng(12).permutation(1000))


def test_gamma_and_dirichlet():
    r = Rng(8)
    g = np.array([r.gamma(0.5) for _ in range(20000)])
    assert abs(g.mean() - 0.5) < 0.03 and abs(g.var() - 0.5) < 0.06
    w = Rng(2).dirichlet(0.3, 8)
    assert w.shape == (8,) and abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)


def test_derive_seed_separates_streams():
    seeds = {derive_seed(0, i) for i in range(100)}
    assert len(seeds) == 100
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)


# -- compiled kernels vs fallback ---------------------------------------------------------------------

needs_ext = pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled extension not built")


@needs_ext
def test_backends_agree_on_uniform_and_mask():
    assert np.array_equal(kernels.splitmix_uniform(77, 5, 1001, backend="compiled"),
                          kernels.splitmix_uniform(77, 5, 1001, backend="python"))
    assert np.array_equal(kernels.splitmix_mask(77, 5, 1001, 0.3, backend="compiled"),
                          kernels.splitmix_mask(77, 5, 1001, 0.3, backend="python"))


@needs_ext
def test_backends_agree_on_shuffle():
    draws = kernels.splitmix_uniform(1, 0, 500, backend="python")
    p1, p2 = np.arange(500, dtype=np.int64), np.arange(500, dtype=np.int64)
    kernels.fisher_yates(p1, draws, backend="compiled")
    kernels.fisher_yates(p2, draws, backend="python")
    assert np.array_equal(p1, p2)


@needs_ext
@pytest.mark.parametrize("n", [1, 2, 3, 7, 16])
def test_backends_agree_on_jacobi(n, rng):
    a = rng.standard_normal((n, n))
    a = a + a.T
    wc, vc, sc, okc = kernels.jacobi_eigh(a, backend="compiled")
    wp, vp, sp, okp = kernels.jacobi_eigh(a, backend="python")
    assert okc and okp and sc == sp
    np.testing.assert_allclose(wc, wp, atol=1e-12)
    np.testing.assert_allclose(vc, vp, atol=1e-12)


def test_round_robin_covers_every_pair_once():
    for n in (2, 5, 8):
        sched = kernels.round_robin_schedule(n)
        pairs = [tuple(p) for step in sched for p in step if p[1] < n]
        assert sorted(pairs) == list(itertools.combinations(range(n), 2))
        for step in sched:
            flat = step.ravel().tolist()
            assert len(flat) == len(set(flat))


@pytest.mark.parametrize("backend", ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else []))
def test_jacobi_reconstructs(backend, rng):
    a = rng.standard_normal((12, 12))
    a = a @ a.T
    w, v, _, ok = kernels.jacobi_eigh(a, backend=backend)
    assert ok
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-9)
    np.testing.assert_allclose(v.T @ v, np.eye(12), atol=1e-10)


# -- eigen / PCA ----------------------------------------------------------------------------------------


def cubic_roots(c):
    """Eigenvalues of a symmetric 3x3 matrix from its characteristic polynomial (trigonometric form)."""
    p1 = c[0, 1] ** 2 + c[0, 2] ** 2 + c[1, 2] ** 2
    q = np.trace(c) / 3
    p2 = (c[0, 0] - q) ** 2 + (c[1, 1] - q) ** 2 + (c[2, 2] - q) ** 2 + 2 * p1
    p = np.sqrt(p2 / 6)
    b = (c - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2, -1, 1)
    phi = np.arccos(r) / 3
    e1 = q + 2 * p * np.cos(phi)
    e3 = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
    return np.array([e1, 3 * q - e1 - e3, e3])


def test_eigenvalues_match_cubic_oracle(rng):
    for _ in range(20):
        s = rng.standard_normal((10, 3))
        c = covariance(s, s.mean(axis=0))
        w, _ = symmetric_eig(c)
        np.testing.assert_allclose(w, cubic_roots(c), atol=1e-8)


def test_symmetric_eig_descending_with_sign_convention(rng):
    a = rng.standard_normal((6, 6))
    w, v = symmetric_eig(a + a.T)
    assert np.all(np.diff(w) <= 0)
    idx = np.argmax(np.abs(v), axis=0)
    assert np.all(v[idx, np.arange(6)] > 0)


def test_pca_rank_one_line():
    t = np.linspace(-1, 1, 30)
    _, k = fit_pca(np.c_[t, 2 * t], 0.995)
    assert k == 1


def test_pca_isotropic_gaussian(rng):
    x = rng.standard_normal((4000, 2))
    model, k40 = fit_pca(x, 0.4)
    _, k95 = fit_pca(x, 0.95)
    assert (k40, k95) == (1, 2)
    direct = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
    np.testing.assert_allclose(model.explained_variance, direct, atol=1e-10)


def test_pca_zero_variance_is_flagged():
    model, k = fit_pca(np.ones((5, 3)), 0.9)
    assert k == 0 and model.degenerate and model.components.shape[0] == 0


@pytest.mark.parametrize("shape", [(40, 6), (6, 40)])
def test_pca_orthonormal_and_reconstructs(shape, rng):
    x = rng.standard_normal(shape)
    model, _ = fit_pca(x, 1.0)
    c = model.components
    np.testing.assert_allclose(c @ c.T, np.eye(c.shape[0]), atol=1e-8)
    assert np.all(np.diff(model.explained_variance) <= 1e-12)
    np.testing.assert_allclose(model.inverse_transform(model.transform(x)), x, atol=1e-8)


# -- covariance / pearson -------------------------------------------------------------------------------


def test_covariance_examples():
    assert np.array_equal(covariance([[1.0, 2.0]], [1.0, 2.0]), np.zeros((2, 2)))
    assert covariance([[0, 0], [2, 0]], [1, 0]).tolist() == [[1, 0], [0, 0]]


@given(hnp.arrays(np.float64, (7, 3), elements=finite))
def test_covariance_symmetric_psd(s):
    c = covariance(s, s.mean(axis=0))
    assert np.array_equal(c, c.T)
    assert np.linalg.eigvalsh(c).min() >= -1e-10 * max(1.0, np.abs(c).max())


def test_pearson_examples():
    d = np.array([1.0, 2.0, 4.0, 7.0])
    assert pearson(d, 3 * d + 1) == pytest.approx(1.0, abs=1e-12)
    assert pearson(d, -d) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(UndefinedCorrelationError):
        pearson(d, np.ones(4))


def decimal_pearson(d, t):
    getcontext().prec = 50
    d = [Decimal(float(v)) for v in d]
    t = [Decimal(float(v)) for v in t]
    n = Decimal(len(d))
    md, mt = sum(d) / n, sum(t) / n
    num = sum((a - md) * (b - mt) for a, b in zip(d, t))
    den = (sum((a - md) ** 2 for a in d) * sum((b - mt) ** 2 for b in t)).sqrt()
    return float(num / den)


def test_pearson_matches_extended_precision(rng):
    for _ in range(20):
        d, t = rng.standard_normal(10), rng.standard_normal(10)
        assert abs(pearson(d, t) - decimal_pearson(d, t)) < 1e-10


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=12).filter(lambda v: np.ptp(v) > 1e-3),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariant_and_bounded(d, scale, shift):
    d = np.array(d)
    t = np.sin(d) + 0.1 * d
    if np.ptp(t) < 1e-6:
        return
    r = pearson(d, t)
    assert -1 <= r <= 1
    assert abs(pearson(scale * d + shift, t) - r) < 1e-10


def test_pearson_pvalue_limits():
    assert pearson_pvalue(0.0, 20) == pytest.approx(1.0)
    assert pearson_pvalue(0.99, 20) < 1e-10



def test_pearson_pvalue_matches_integrated_t_density():
    mpmath = pytest.importorskip("mpmath")
    r, n = 0.5, 20
    df = n - 2
    tstat = r * mpmath.sqrt(df / (1 - r * r))
    norm = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
    tail = mpmath.quad(lambda x: norm * (1 + x * x / df) ** (-(df + 1) / 2), [tstat, mpmath.inf])
    assert pearson_pvalue(r, n) == pytest.approx(float(2 * tail), rel=1e-9)
