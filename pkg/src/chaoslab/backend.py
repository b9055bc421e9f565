"""Backend selection for the O(N^2) pair sums.

The compiled extension is used when it imports; ``CHAOSLAB_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

if os.environ.get("CHAOSLAB_BACKEND", "").lower() == "python":
    _impl, NAME = _fallback, "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        NAME = "cython"
    except ImportError:
        _impl, NAME = _fallback, "python"


def resolve_threads(threads: int | None = None) -> int:
    """--threads value, else CHAOSLAB_THREADS, else 1."""
    if threads is None:
        env = os.environ.get("CHAOSLAB_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def extended_table(k_values: np.ndarray) -> np.ndarray:
    """Periodic 1D samples on [-L, L) -> samples on [-2L, 2L] (2n+1 nodes).

    Node m of the result sits at -2L + m h, i.e. original index (m - n/2) mod n.
    """
    n = len(k_values)
    return np.ascontiguousarray(k_values[(np.arange(2 * n + 1) - n // 2) % n], dtype=np.float64)


def pairwise_mean(targets, sources, table, L: float, h: float, threads: int | None = None, impl=None):
    """(1/len(sources)) sum_j k(wrap(targets_i - sources_j)) with linear interpolation.

    Positions must already be wrapped into [-L, L); ``table`` comes from
    :func:`extended_table`.
    """
    impl = impl or _impl
    return impl.pairwise_mean(np.ascontiguousarray(targets, dtype=np.float64),
                              np.ascontiguousarray(sources, dtype=np.float64),
                              table, float(L), float(h), resolve_threads(threads))
