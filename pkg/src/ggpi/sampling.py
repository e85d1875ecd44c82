"""Seeded random streams and inverse-CDF sampling over rows of stochastic tables."""

from __future__ import annotations

import numpy as np


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a generator for ``(seed, stream)``.

    The same pair always replays the same draws; distinct stream ids give
    statistically independent generators (``SeedSequence`` spawn keys).
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def geometric_times(p: float, size, rng: np.random.Generator) -> np.ndarray:
    """Draw ``T ~ Geometric(p)`` on ``{1, 2, ...}`` by inverse transform.

    ``P(T = k) = (1 - p)^(k - 1) p``.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"success probability must lie in (0, 1], got {p}")
    if p == 1.0:
        return np.ones(size, dtype=np.int64)
    u = 1.0 - rng.random(size)  # in (0, 1]
    return 1 + np.floor(np.log(u) / np.log1p(-p)).astype(np.int64)


try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


def _search_rows_numpy(cdf: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-row ``searchsorted(cdf[row], u, side="right")`` by vectorised bisection."""
    n = cdf.shape[1]
    lo = np.zeros(rows.shape, dtype=np.int64)
    hi = np.full(rows.shape, n, dtype=np.int64)
    while True:
        live = lo < hi
        if not live.any():
            return lo
        mid = (lo + hi) // 2
        below = np.zeros(rows.shape, dtype=bool)
        below[live] = cdf[rows[live], mid[live]] <= u[live]
        lo = np.where(live & below, mid + 1, lo)
        hi = np.where(live & ~below, mid, hi)


if njit is not None:
    @njit(cache=True)
    def _build_guide(cdf):  # pragma: no cover - compiled
        # guide[r, j] = number of CDF entries <= j / n: a safe start for any u >= j / n
        rows, n = cdf.shape
        guide = np.empty((rows, n), dtype=np.int32)
        for r in range(rows):
            k = 0
            for j in range(n):
                level = j / n
                while k < n - 1 and cdf[r, k] <= level:
                    k += 1
                guide[r, j] = k
        return guide

    @njit(cache=True)
    def _search_rows(cdf, guide, rows, u):  # pragma: no cover - compiled
        n = cdf.shape[1]
        out = np.empty(rows.size, dtype=np.int64)
        for i in range(rows.size):
            r = rows[i]
            j = int(u[i] * n)
            if j > n - 1:
                j = n - 1
            k = guide[r, j]
            while k < n - 1 and cdf[r, k] <= u[i]:
                k += 1
            out[i] = k
        return out
else:  # pragma: no cover
    _build_guide = _search_rows = None


class RowSampler:
    """Inverse-CDF sampler for every row of a ``(..., n)`` probability table.

    Rows are flattened in C order, so for a ``(S, A, S)`` table the row of
    ``(x, a)`` is ``x * A + a``. A draw with uniform ``u`` returns the first
    outcome whose cumulative probability exceeds ``u``.
    """

    def __init__(self, table):
        table = np.asarray(table, dtype=float)
        self.n_outcomes = table.shape[-1]
        probs = table.reshape(-1, self.n_outcomes)
        self.n_rows = probs.shape[0]
        cum = np.cumsum(probs, axis=1)
        # Pin the CDF to exactly 1 from the last positive entry on, so trailing
        # zero-probability outcomes can never be drawn through rounding.
        positive = probs > 0
        last = self.n_outcomes - 1 - np.argmax(positive[:, ::-1], axis=1)
        cum[np.arange(self.n_outcomes)[None, :] >= last[:, None]] = 1.0
        self.cdf = np.ascontiguousarray(cum)
        # Guide table (cutpoint method): still an exact inverse-CDF draw, but
        # the search starts next to the answer instead of bisecting the row.
        self.guide = _build_guide(self.cdf) if _build_guide is not None else None

    def sample(self, rows, rng: np.random.Generator) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        return self.sample_with(rows, rng.random(rows.shape))

    def sample_with(self, rows, u) -> np.ndarray:
        """Deterministic inverse CDF given uniforms ``u`` in [0, 1)."""
        rows = np.asarray(rows, dtype=np.int64)
        u = np.asarray(u, dtype=float)
        if u.shape != rows.shape:
            u = np.broadcast_to(u, rows.shape)
        flat_rows = rows.reshape(-1)
        flat_u = u.reshape(-1)
        if _search_rows is not None:
            return _search_rows(self.cdf, self.guide, flat_rows, flat_u).reshape(rows.shape)
        idx = _search_rows_numpy(self.cdf, flat_rows, flat_u)
        return np.minimum(idx, self.n_outcomes - 1).reshape(rows.shape)
