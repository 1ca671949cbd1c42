"""Pure numpy implementations of the kernels in ``_kernels.pyx``.

SplitMix64 is counter based, so the stream vectorises directly. Jacobi uses
the same round-robin ordering as the compiled version and applies each step's
disjoint rotations as one batched update.
"""
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 1.0 / 9007199254740992.0


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _states(seed, start, n):
    with np.errstate(over="ignore"):
        k = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(start)
        return np.uint64(seed) + k * GAMMA


def splitmix_uniform(seed, start, n):
    with np.errstate(over="ignore"):
        z = _mix64(_states(seed, start, n))
    return (z >> np.uint64(11)).astype(np.float64) * _TWO_M53


def splitmix_mask(seed, start, n, rate):
    return (splitmix_uniform(seed, start, n) >= rate).astype(np.float64)


def fisher_yates(perm, draws):
    n = perm.shape[0]
    for i in range(n - 1, 0, -1):
        j = min(int(draws[n - 1 - i] * (i + 1)), i)
        perm[i], perm[j] = perm[j], perm[i]


def jacobi_eigh(a, schedule, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    fro = np.sqrt(np.sum(a * a))
    sweep = 0
    converged = False
    # the dummy index n (odd sizes) is dropped from every step up front
    steps = []
    for st in range(schedule.shape[0]):
        pairs = schedule[st]
        keep = (pairs[:, 0] < n) & (pairs[:, 1] < n)
        steps.append((pairs[keep, 0], pairs[keep, 1]))
    while True:
        off = np.sqrt(np.sum((a - np.diag(np.diag(a))) ** 2))
        if fro == 0.0 or off <= tol * fro:
            converged = True
            break
        if sweep >= max_sweeps:
            break
        for p, q in steps:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            theta = (aqq - app) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            safe = np.where(big, 0.0, theta)
            t = np.sign(safe + (safe == 0)) / (np.abs(safe) + np.sqrt(safe * safe + 1.0))
            t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            x, y = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * x - s * y
            a[:, q] = s * x + c * y
            x, y = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * x - s[:, None] * y
            a[q, :] = s[:, None] * x + c[:, None] * y
            x, y = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * x - s * y
            v[:, q] = s * x + c * y
        sweep += 1
    return np.diag(a).copy(), v, sweep, converged
