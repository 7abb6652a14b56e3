"""Gaussian and Brownian-bridge primitives.

Bridges are built by sequential conditioning from left to right: given the
value at node ``j`` and the pinned terminal value, the next node is Gaussian
with the bridge transition mean and variance.  This gives the exact
finite-dimensional law on the grid in O(m) work per path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from .rng import SeedLike, as_generator

# Two-sided motion for the parabola check lives on [-PARABOLA_WINDOW, PARABOLA_WINDOW].
PARABOLA_WINDOW = 8.0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``a + j (b - a) / m`` for ``j = 0..m``."""

    a: float
    b: float
    m: int

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or not self.a < self.b:
            raise ValueError(f"need finite a < b, got a={self.a}, b={self.b}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")

    @property
    def dt(self) -> float:
        return (self.b - self.a) / self.m

    @property
    def nodes(self) -> np.ndarray:
        return self.a + (self.b - self.a) * np.arange(self.m + 1) / self.m

    @property
    def length(self) -> float:
        return self.b - self.a

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.m + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def index_of(self, u: float, tol: float = 1e-9) -> int:
        """Index of the node equal to ``u``; raises if ``u`` is off-grid."""
        j = round((u - self.a) / self.dt)
        if not 0 <= j <= self.m or abs(self.a + j * self.dt - u) > tol * max(1.0, abs(u)):
            raise ValueError(f"{u} is not a node of {self}")
        return int(j)

    def sub(self, u0: float, u1: float) -> "TimeGrid":
        j0, j1 = self.index_of(u0), self.index_of(u1)
        if j1 <= j0:
            raise ValueError("empty sub-grid")
        return TimeGrid(float(self.nodes[j0]), float(self.nodes[j1]), j1 - j0)


@dataclass
class Path:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.m + 1,):
            raise ValueError(f"expected {self.grid.m + 1} values, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")


def sample_bridges(grid: TimeGrid, x, y, seed: SeedLike, size: int | None = None) -> np.ndarray:
    """Vectorised bridge sampler.

    ``x`` and ``y`` broadcast against each other; ``size`` prepends a sample
    axis.  Returns an array of shape ``(*batch, m + 1)`` with the endpoints
    written exactly.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("bridge endpoints must be finite")
    batch = np.broadcast_shapes(x.shape, y.shape)
    if size is not None:
        batch = (size,) + batch
    x = np.broadcast_to(x, batch)
    y = np.broadcast_to(y, batch)
    rng = as_generator(seed)
    m = grid.m
    u = grid.nodes
    out = np.empty(batch + (m + 1,))
    out[..., 0] = x
    out[..., m] = y
    if m == 1:
        return out
    z = rng.standard_normal((m - 1,) + batch)
    v = x.copy()
    for j in range(m - 1):
        h = u[j + 1] - u[j]
        rest = grid.b - u[j]
        frac = h / rest
        sd = math.sqrt(h * (grid.b - u[j + 1]) / rest)
        v = v + frac * (y - v) + sd * z[j]
        out[..., j + 1] = v
    return out


def sample_bridge(grid: TimeGrid, x: float, y: float, seed: SeedLike) -> Path:
    """One Brownian bridge (diffusion parameter 1) from ``x`` at ``a`` to ``y`` at ``b``."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("bridge endpoints must be finite")
    return Path(grid, sample_bridges(grid, x, y, seed))


def bridge_sup_samples(grid: TimeGrid, x: float, y: float, n_samples: int, seed: SeedLike,
                       chunk: int = 20000) -> np.ndarray:
    """Grid suprema of ``n_samples`` bridges, streamed so memory stays O(chunk)."""
    rng = as_generator(seed)
    sups = np.empty(n_samples)
    m = grid.m
    u = grid.nodes
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        v = np.full(k, float(x))
        best = np.maximum(v, y)
        for j in range(m - 1):
            h = u[j + 1] - u[j]
            rest = grid.b - u[j]
            sd = math.sqrt(h * (grid.b - u[j + 1]) / rest)
            v = v + (h / rest) * (y - v) + sd * rng.standard_normal(k)
            np.maximum(best, v, out=best)
        sups[start:start + k] = best
    return sups


def gaussian_tail_bounds(s: float) -> tuple[float, float]:
    """Lower and upper bounds sandwiching ``P(N >= s)`` for a standard normal ``N``."""
    if not s >= 0:
        raise ValueError(f"s must be non-negative, got {s}")
    dens = math.exp(-0.5 * s * s) / math.sqrt(2.0 * math.pi)
    lower = dens * s / (s * s + 1.0)
    upper = math.inf if s == 0 else dens / s
    return lower, upper


def downcross_bound(s: float, r: float, M: float) -> float:
    """Upper bound on the chance that Brownian motion on ``[0, s]`` drops by ``M``
    within some window of length at most ``r``."""
    if not s > 0:
        raise ValueError("s must be positive")
    if not 0 < r < s:
        raise ValueError(f"need 0 < r < s, got r={r}, s={s}")
    if not M > 0:
        raise ValueError("M must be positive")
    return 16.0 / math.sqrt(math.pi) * s / (math.sqrt(r) * M) * math.exp(-M * M / (16.0 * r))


def sample_motions(s: float, m: int, size: int, seed: SeedLike) -> np.ndarray:
    """Discretised standard Brownian motions on ``[0, s]``, shape ``(size, m + 1)``."""
    rng = as_generator(seed)
    out = np.zeros((size, m + 1))
    np.cumsum(rng.standard_normal((size, m)) * math.sqrt(s / m), axis=1, out=out[:, 1:])
    return out


def drop_frequency(s: float, r: float, M: float, n_samples: int, seed: SeedLike,
                   m: int = 2 ** 12, chunk: int = 2000) -> tuple[float, float]:
    """Monte Carlo frequency of a drop of at least ``M`` within a window of length ``r``.

    Returns ``(frequency, standard error)``.
    """
    if not 0 < r < s:
        raise ValueError(f"need 0 < r < s, got r={r}, s={s}")
    rng = as_generator(seed)
    w = int(math.floor(r / (s / m))) + 1
    hits = 0
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        b = sample_motions(s, m, k, rng)
        # running max over the trailing window [t2 - r, t2]
        trailing = maximum_filter1d(b, size=w, axis=1, origin=(w - 1) // 2, mode="nearest")
        hits += int(np.count_nonzero(np.any(trailing - b >= M, axis=1)))
    p = hits / n_samples
    return p, math.sqrt(max(p * (1 - p), 0.0) / n_samples)


def parabola_crossing_check(c: float, s: float, n_samples: int, seed: SeedLike,
                            m: int = 2 ** 10) -> tuple[float, float]:
    """Empirical ``P(B(x) >= s + c x^2 for some x)`` for a two-sided motion with ``B(0) = 0``.

    The motion is truncated to ``[-8, 8]`` with ``m`` steps per side.  Returns
    ``(probability, standard error)``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    if not s >= 1:
        raise ValueError("s must be at least 1")
    rng = as_generator(seed)
    x = np.linspace(0.0, PARABOLA_WINDOW, m + 1)
    barrier = s + c * x * x
    hits = 0
    chunk = 2000
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        right = sample_motions(PARABOLA_WINDOW, m, k, rng)
        left = sample_motions(PARABOLA_WINDOW, m, k, rng)
        crossed = np.any(right >= barrier, axis=1) | np.any(left >= barrier, axis=1)
        hits += int(np.count_nonzero(crossed))
    p = hits / n_samples
    return p, math.sqrt(max(p * (1 - p), 0.0) / n_samples)
