"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``ATDL_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("ATDL_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _impl(name, backend=None):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return getattr(_compiled, name)
    return getattr(_fallback, name)


def splitmix_uniform(seed, start, n, backend=None):
    return _impl("splitmix_uniform", backend)(seed, start, n)


def splitmix_mask(seed, start, n, rate, backend=None):
    return _impl("splitmix_mask", backend)(seed, start, n, float(rate))


def fisher_yates(perm, draws, backend=None):
    _impl("fisher_yates", backend)(perm, np.ascontiguousarray(draws, dtype=np.float64))


def round_robin_schedule(n):
    """Tournament ordering: n-1 (or n) steps of disjoint index pairs covering every pair once.

    Odd sizes get a dummy index ``n`` that the solvers skip.
    """
    m = n + (n % 2)
    players = list(range(m))
    steps = []
    for _ in range(m - 1):
        half = m // 2
        pairs = [(min(players[i], players[m - 1 - i]), max(players[i], players[m - 1 - i]))
                 for i in range(half)]
        steps.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    return np.ascontiguousarray(np.array(steps, dtype=np.int64).reshape(m - 1, m // 2, 2))


def jacobi_eigh(a, tol=1e-12, max_sweeps=100, backend=None):
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    if n < 2:
        return np.diag(a).copy(), np.eye(n), 0, True
    schedule = round_robin_schedule(n)
    return _impl("jacobi_eigh", backend)(a, schedule, float(tol), int(max_sweeps))
