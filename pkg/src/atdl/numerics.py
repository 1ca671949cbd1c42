"""Dense linear algebra, the package PRNG, and small statistics helpers.

Matrices are plain ``numpy.ndarray`` objects in float64. Randomness always
goes through :class:`Rng` so that runs are reproducible across platforms.
"""
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .errors import ConvergenceError, ShapeError, UndefinedCorrelationError

_MASK64 = (1 << 64) - 1


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def derive_seed(seed, *tags):
    """Mix integer tags into a seed; used to give sub-tasks independent streams."""
    z = int(seed) & _MASK64
    for tag in tags:
        z = (z ^ ((int(tag) + 0x9E3779B97F4A7C15) & _MASK64)) & _MASK64
        z = (z * 0xBF58476D1CE4E5B9) & _MASK64
        z ^= z >> 31
    return z


class Rng:
    """SplitMix64 generator, counter based.

    Draw ``k`` (0-based) of a stream with seed ``s`` is
    ``mix64(s + (k + 1) * 0x9E3779B97F4A7C15)``; doubles take the top 53 bits.
    The stream is identical under the compiled and the numpy backends.
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def _take(self, n):
        start = self.counter
        self.counter += n
        return start

    def uniform(self, size=None, low=0.0, high=1.0):
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        n = int(np.prod(shape, dtype=np.int64))
        u = kernels.splitmix_uniform(self.seed, self._take(n), n)
        if low != 0.0 or high != 1.0:
            u = low + (high - low) * u
        return u.reshape(shape) if shape else float(u[0])

    def keep_mask(self, shape, rate):
        """0/1 float mask; each entry is 0 with probability ``rate``."""
        n = int(np.prod(shape, dtype=np.int64))
        return kernels.splitmix_mask(self.seed, self._take(n), n, rate).reshape(shape)

    def normal(self, size, scale=1.0):
        shape = size if isinstance(size, tuple) else (size,)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = kernels.splitmix_uniform(self.seed, self._take(2 * m), 2 * m)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return (scale * z[:n]).reshape(shape)

    def permutation(self, n):
        perm = np.arange(n, dtype=np.int64)
        if n > 1:
            draws = kernels.splitmix_uniform(self.seed, self._take(n - 1), n - 1)
            kernels.fisher_yates(perm, draws)
        return perm

    def gamma(self, shape_k):
        """One Gamma(shape_k, 1) variate (Marsaglia-Tsang, boosted below shape 1)."""
        if shape_k <= 0:
            raise ValueError("gamma shape must be positive")
        boost = 1.0
        if shape_k < 1.0:
            boost = self.uniform() ** (1.0 / shape_k)
            shape_k += 1.0
        d = shape_k - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        while True:
            z = float(self.normal(1)[0])
            v = (1.0 + c * z) ** 3
            if v <= 0.0:
                continue
            u = self.uniform()
            if np.log(u) < 0.5 * z * z + d - d * v + d * np.log(v):
                return boost * d * v

    def dirichlet(self, alpha, k):
        g = np.array([self.gamma(alpha) for _ in range(k)])
        return g / g.sum()

    def choice(self, n, k):
        """``k`` distinct indices from ``range(n)``, in draw order."""
        return self.permutation(n)[:k]


def symmetric_eig(a, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns. ``tol`` bounds the off-diagonal Frobenius norm relative to the
    norm of ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigensolver needs a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    w, v, _, converged = kernels.jacobi_eigh(a, tol=tol, max_sweeps=max_sweeps)
    if not converged:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    # fix the sign so the largest-magnitude entry of each vector is positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return w, v * signs


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D) rows are orthonormal directions
    explained_variance: np.ndarray
    degenerate: bool = False

    @property
    def cumulative_ratio(self):
        total = self.explained_variance.sum()
        if total <= 0:
            return np.zeros(0)
        return np.cumsum(self.explained_variance) / total

    def transform(self, x, dims=None):
        comps = self.components if dims is None else self.components[:dims]
        return (np.asarray(x, dtype=np.float64) - self.mean) @ comps.T

    def inverse_transform(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z @ self.components[: z.shape[1]] + self.mean


def covariance(samples, mean):
    """Biased (1/N) covariance around a supplied mean."""
    x = as_matrix(samples, "samples")
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (x.shape[1],):
        raise ShapeError(f"mean of shape {mean.shape} does not match samples {x.shape}")
    c = x - mean
    cov = (c.T @ c) / x.shape[0]
    return 0.5 * (cov + cov.T)


def fit_pca(x, energy=0.995):
    """PCA by Jacobi; returns ``(model, retained_dims)``.

    ``retained_dims`` is the smallest k whose cumulative explained-variance
    ratio reaches ``energy``. When there are fewer samples than features the
    eigenproblem is solved on the N x N Gram matrix instead, which yields the
    same nonzero spectrum.
    """
    x = as_matrix(x, "x")
    n, d = x.shape
    if n < 2:
        raise ShapeError("PCA needs at least two samples")
    if not 0.0 < energy <= 1.0:
        raise ValueError("energy must lie in (0, 1]")
    mean = x.mean(axis=0)
    c = x - mean
    scale = np.abs(c).max()
    if scale == 0.0:
        return PcaModel(mean, np.zeros((0, d)), np.zeros(0), degenerate=True), 0
    if n < d:
        w, u = symmetric_eig((c @ c.T) / n)
        keep = w > w[0] * 1e-12
        w, u = w[keep], u[:, keep]
        lifted = (c.T @ u) / np.sqrt(n * w)
        # Householder QR removes the orthogonality loss of the lifted vectors
        q, _ = np.linalg.qr(lifted)
        q *= np.sign(np.sum(q * lifted, axis=0))
        comps = q.T
    else:
        w, v = symmetric_eig(covariance(c, np.zeros(d)))
        comps = v.T
    w = np.clip(w, 0.0, None)
    model = PcaModel(mean, comps, w)
    ratio = model.cumulative_ratio
    k = int(np.searchsorted(ratio, energy - 1e-12) + 1)
    return model, min(k, len(w))


def pearson(d, t):
    """Correlation coefficient of two equal-length samples (two-pass)."""
    d = np.asarray(d, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    if d.shape != t.shape or d.size < 2:
        raise ShapeError(f"pearson needs two equal-length vectors of length >= 2, got {d.shape}, {t.shape}")
    dc = d - d.mean()
    tc = t - t.mean()
    sdd = np.dot(dc, dc)
    stt = np.dot(tc, tc)
    if sdd == 0.0 or stt == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    r = np.dot(dc, tc) / np.sqrt(sdd * stt)
    return float(min(1.0, max(-1.0, r)))


def pearson_pvalue(r, n):
    """Two-sided p-value for H0: no correlation, from the t distribution."""
    if n < 3:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    tstat = r * np.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(tstat), n - 2))
