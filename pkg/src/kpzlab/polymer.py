"""Semi-discrete Brownian polymer: partition functions, free energies, LPP.

The lattice: time steps ``m = 1..M`` of size ``dt`` and levels ``1..N``.  A
path at level ``k`` during step ``m`` collects ``exp(beta dB_k(m) - beta^2 dt / 2)``;
entering step ``m`` it may first jump up one level at cost ``dt``.  So

    Z(m, k) = [Z(m-1, k) + dt Z(m-1, k-1)] * exp(beta dB_k(m) - beta^2 dt / 2).

Every path collects the Ito compensator over the whole horizon, so the
compensated partition functions differ from the uncompensated ones by the
exact factor ``exp(-n beta^2 s / 2)`` for an ``n``-path family.  All values
are kept in log space.

Levels change by 0 or 1 per step, so two paths that swap order must share a
vertex.  The non-intersecting partition functions are therefore the
Lindstrom-Gessel-Viennot determinants of single-path partition functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numba
import numpy as np

from .gibbs import LineEnsemble
from .rng import SeedLike, as_generator
from .stochastic import TimeGrid


class DeterminantError(ArithmeticError):
    """The LGV determinant came out non-positive (a discretisation artefact)."""


@dataclass
class BrownianEnvironment:
    """Driving increments ``dB[m, i] ~ N(0, dt)``, shape ``(n_steps, N)``."""

    dt: float
    increments: np.ndarray

    @property
    def N(self) -> int:
        return self.increments.shape[1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def s_max(self) -> float:
        return self.n_steps * self.dt

    def paths(self) -> np.ndarray:
        """Cumulative motions ``B_i(m dt)``, shape ``(n_steps + 1, N)`` with a zero first row."""
        out = np.zeros((self.n_steps + 1, self.N))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def step_of(self, s: float) -> int:
        m = round(s / self.dt)
        if m < 0 or m > self.n_steps or abs(m * self.dt - s) > 1e-9 * max(1.0, s):
            raise ValueError(f"s={s} is not on the environment grid (dt={self.dt}, s_max={self.s_max})")
        return int(m)

    def coarsen(self, factor: int) -> "BrownianEnvironment":
        """Same Brownian path sampled at ``factor`` times the step.

        Trailing steps that do not fill a whole coarse step are dropped.
        """
        if factor < 1:
            raise ValueError("factor must be a positive integer")
        k = self.n_steps // factor
        inc = self.increments[:k * factor].reshape(k, factor, self.N).sum(axis=1)
        return BrownianEnvironment(self.dt * factor, inc)


def sample_environment(N: int, s_max: float, dt: float, seed: SeedLike) -> BrownianEnvironment:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    n_steps = round(s_max / dt)
    if n_steps < 1 or abs(n_steps * dt - s_max) > 1e-9 * s_max:
        raise ValueError(f"s_max={s_max} is not an integer multiple of dt={dt}")
    rng = as_generator(seed)
    return BrownianEnvironment(float(dt), rng.standard_normal((n_steps, N)) * math.sqrt(dt))


@numba.njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@numba.njit(cache=True)
def _log_partition_tables(dB, dt, starts, record, beta):
    n_steps, N = dB.shape
    out = np.full((starts.shape[0], record.shape[0], N), -np.inf)
    comp = 0.5 * beta * beta * dt
    log_dt = math.log(dt)
    for a in range(starts.shape[0]):
        z = np.full(N, -np.inf)
        z[starts[a]] = 0.0
        r = 0
        while r < record.shape[0] and record[r] == 0:
            out[a, r, :] = z
            r += 1
        lo = starts[a]
        hi = starts[a]
        for m in range(n_steps):
            if hi < N - 1:
                hi += 1
            for k in range(hi, lo, -1):
                z[k] = _logaddexp(z[k], log_dt + z[k - 1]) + beta * dB[m, k] - comp
            z[lo] = z[lo] + beta * dB[m, lo] - comp
            while r < record.shape[0] and record[r] == m + 1:
                out[a, r, :] = z
                r += 1
    return out


def log_partition_tables(env: BrownianEnvironment, starts, record_steps, beta: float = 1.0) -> np.ndarray:
    """``log Z`` from each 1-based start level to every end level at the recorded steps.

    Returns shape ``(len(starts), len(record_steps), N)``.
    """
    starts = np.asarray(starts, dtype=np.int64) - 1
    record = np.asarray(record_steps, dtype=np.int64)
    if np.any(np.diff(record) < 0):
        raise ValueError("record steps must be sorted")
    if np.any(starts < 0) or np.any(starts >= env.N):
        raise ValueError("start level out of range")
    return _log_partition_tables(env.increments, env.dt, starts, record, float(beta))


def partition_single(env: BrownianEnvironment, i: int, j: int, s: float, beta: float = 1.0) -> float:
    """``log Z`` for single paths from level ``i`` at time 0 to level ``j`` at time ``s``."""
    if not 1 <= i <= j <= env.N:
        raise ValueError(f"need 1 <= i <= j <= N, got i={i}, j={j}")
    m = env.step_of(s)
    return float(log_partition_tables(env, [i], [m], beta)[0, 0, j - 1])


def log_det(L: np.ndarray) -> float:
    """``log det exp(L)`` for a matrix of log-entries, with row/column rescaling."""
    L = np.asarray(L, dtype=float)
    if L.shape == (1, 1):
        if L[0, 0] == -np.inf:
            raise DeterminantError("the partition function vanishes; no admissible path")
        return float(L[0, 0])
    row = L.max(axis=1)
    if np.any(row == -np.inf):
        raise DeterminantError("a row of the LGV matrix vanishes")
    S = L - row[:, None]
    col = S.max(axis=0)
    if np.any(col == -np.inf):
        raise DeterminantError("a column of the LGV matrix vanishes")
    sign, logabs = np.linalg.slogdet(np.exp(S - col[None, :]))
    if sign <= 0:
        raise DeterminantError("LGV determinant is non-positive; refine dt")
    return float(logabs + row.sum() + col.sum())


def _lgv_log_z(tables_at_step: np.ndarray, n: int, N: int) -> float:
    # tables_at_step[a, k]: log Z from start level a+1 to end level k+1
    return log_det(tables_at_step[:n, N - n:N])


def partition_hierarchy(env: BrownianEnvironment, n: int, s: float, beta: float = 1.0) -> float:
    """``log Z_n(s)``: n non-intersecting paths from levels 1..n to N-n+1..N."""
    if not 1 <= n <= env.N:
        raise ValueError("need 1 <= n <= N")
    m = env.step_of(s)
    tables = log_partition_tables(env, np.arange(1, n + 1), [m], beta)[:, 0, :]
    return _lgv_log_z(tables, n, env.N)


def _grid_steps(env: BrownianEnvironment, grid: TimeGrid) -> np.ndarray:
    return np.array([env.step_of(float(u)) for u in grid.nodes], dtype=np.int64)


def _free_energies(env, n_max, grid, beta):
    steps = _grid_steps(env, grid)
    tables = log_partition_tables(env, np.arange(1, n_max + 1), steps, beta)
    X = np.empty((n_max, grid.m + 1))
    for r in range(grid.m + 1):
        prev = 0.0
        for n in range(1, n_max + 1):
            cur = _lgv_log_z(tables[:, r, :], n, env.N)
            X[n - 1, r] = cur - prev
            prev = cur
    return X


def free_energy_ensemble(env: BrownianEnvironment, n_max: int, s_grid: TimeGrid, beta: float = 1.0,
                         richardson: bool = False) -> LineEnsemble:
    """Curves ``X_n(s) = log Z_n(s) - log Z_{n-1}(s)`` for ``n = 1..n_max``.

    Values are in the compensated convention; add ``beta^2 s / 2`` to each
    curve to get the uncompensated free energy.  With ``richardson=True``
    the result is ``2 X(dt) - X(2 dt)`` on the same Brownian path, which
    removes the first-order lattice bias (it grows like ``N^2 dt / s``).
    """
    if not 1 <= n_max <= env.N:
        raise ValueError("need 1 <= n_max <= N")
    if s_grid.a <= 0:
        raise ValueError("the free energy is defined for s > 0")
    X = _free_energies(env, n_max, s_grid, beta)
    if richardson:
        X = 2.0 * X - _free_energies(env.coarsen(2), n_max, s_grid, beta)
    return LineEnsemble(s_grid, X)


# ---------------------------------------------------------------------------
# zero temperature
# ---------------------------------------------------------------------------

def _tuple_states(N: int, n: int):
    states = list(combinations(range(N), n))
    index = {st: i for i, st in enumerate(states)}
    preds, ptr = [], [0]
    for st in states:
        for moves in range(1 << n):
            prev = tuple(k - ((moves >> i) & 1) for i, k in enumerate(st))
            if prev in index:
                preds.append(index[prev])
        ptr.append(len(preds))
    return (np.array(states, dtype=np.int64).reshape(len(states), n), np.array(preds, dtype=np.int64),
            np.array(ptr, dtype=np.int64), index)


@numba.njit(cache=True)
def _maxplus_tuple_dp(dB, states, preds, ptr, start, record):
    n_steps = dB.shape[0]
    S = states.shape[0]
    g = np.full(S, -np.inf)
    g[start] = 0.0
    new = np.empty(S)
    out = np.full((record.shape[0], S), -np.inf)
    r = 0
    while r < record.shape[0] and record[r] == 0:
        out[r] = g
        r += 1
    for m in range(n_steps):
        for st in range(S):
            best = -np.inf
            for p in range(ptr[st], ptr[st + 1]):
                v = g[preds[p]]
                if v > best:
                    best = v
            if best > -np.inf:
                for i in range(states.shape[1]):
                    best += dB[m, states[st, i]]
            new[st] = best
        g[:] = new
        while r < record.shape[0] and record[r] == m + 1:
            out[r] = g
            r += 1
    return out


MAX_TUPLE_STATES = 50000


def last_passage_values(env: BrownianEnvironment, n: int, record_steps) -> np.ndarray:
    """Max over n-tuples of disjoint lattice paths of the summed energies."""
    if math.comb(env.N, n) > MAX_TUPLE_STATES:
        raise ValueError("too many disjoint-tuple states for the direct max-plus recursion")
    states, preds, ptr, index = _tuple_states(env.N, n)
    start = index[tuple(range(n))]
    end = index[tuple(range(env.N - n, env.N))]
    record = np.asarray(record_steps, dtype=np.int64)
    return _maxplus_tuple_dp(env.increments, states, preds, ptr, start, record)[:, end]


def lpp_ensemble(env: BrownianEnvironment, n_max: int, s_grid: TimeGrid) -> LineEnsemble:
    """Zero-temperature curves ``M_n(s)``: increments of the n-path last-passage values."""
    if not 1 <= n_max <= env.N:
        raise ValueError("need 1 <= n_max <= N")
    steps = _grid_steps(env, s_grid)
    G = np.zeros((n_max + 1, s_grid.m + 1))
    for n in range(1, n_max + 1):
        G[n] = last_passage_values(env, n, steps)
    return LineEnsemble(s_grid, np.diff(G, axis=0))


# ---------------------------------------------------------------------------
# KPZ scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaledEnsembleParams:
    """Time ``t`` and level count ``N`` for the finite-N KPZ_t scaling.

    The centring uses ``C(N, t, x) = exp{N + (sqrt(tN) + x)/2 + x sqrt(N/t)} (t/N)^(N/2)``.
    With this constant ``E[Z_1 / C]`` tends to the heat kernel ``p(t, x)``.
    """

    t: float
    N: int

    def __post_init__(self):
        if not self.t > 0 or self.N < 1:
            raise ValueError("need t > 0 and N >= 1")

    @property
    def center(self) -> float:
        return math.sqrt(self.t * self.N)

    def log_c(self, x):
        """``log C(N, t, x)`` for the uncompensated partition function."""
        x = np.asarray(x, dtype=float)
        t, N = self.t, self.N
        return N + 0.5 * (self.center + x) + x * math.sqrt(N / t) + 0.5 * N * math.log(t / N)

    def log_c_compensated(self, x):
        """Same constant for compensated free energies (the ``s/2`` term drops out)."""
        x = np.asarray(x, dtype=float)
        t, N = self.t, self.N
        return N + x * math.sqrt(N / t) + 0.5 * N * math.log(t / N)


def scale_ensemble(X: LineEnsemble, params: ScaledEnsembleParams) -> tuple[LineEnsemble, LineEnsemble]:
    """Map compensated free energies on an ``s`` grid to the KPZ_t line ensembles.

    Returns ``(h, H)``: ``h_n(x) = X_n(sqrt(tN) + x) - log C`` on the ``x``
    grid and ``H_n(y)`` on ``y = t^{-2/3} x`` with
    ``h_n(x) = -t/24 + t^{1/3} H_n(t^{-2/3} x)``.
    """
    c = params.center
    if X.grid.a <= 0:
        raise ValueError("window must satisfy x > -sqrt(tN)")
    xg = TimeGrid(X.grid.a - c, X.grid.b - c, X.grid.m)
    h = X.values - params.log_c_compensated(xg.nodes)[None, :]
    hens = LineEnsemble(xg, h, X.first_index)
    return hens, to_scaled(hens, params.t)


def to_scaled(h: LineEnsemble, t: float) -> LineEnsemble:
    k = t ** (-2.0 / 3.0)
    grid = TimeGrid(h.grid.a * k, h.grid.b * k, h.grid.m)
    return LineEnsemble(grid, (h.values + t / 24.0) / t ** (1.0 / 3.0), h.first_index)


def from_scaled(H: LineEnsemble, t: float) -> LineEnsemble:
    k = t ** (2.0 / 3.0)
    grid = TimeGrid(H.grid.a * k, H.grid.b * k, H.grid.m)
    return LineEnsemble(grid, -t / 24.0 + t ** (1.0 / 3.0) * H.values, H.first_index)


def lattice_window(params: ScaledEnsembleParams, dt: float, x0: float, x1: float, m: int) -> TimeGrid:
    """An ``s`` grid on the environment lattice covering ``sqrt(tN) + [x0, x1]``.

    Endpoints are snapped to multiples of ``dt`` and the spacing to a whole
    number of steps, so the resulting ``x`` nodes are within ``dt`` of the
    requested ones.  Scaled values are always reported at the actual nodes.
    """
    if not x0 < x1:
        raise ValueError("need x0 < x1")
    c = params.center
    if c + x0 <= 0:
        raise ValueError("window must satisfy x > -sqrt(tN)")
    j0 = round((c + x0) / dt)
    stride = max(1, round((x1 - x0) / (m * dt)))
    return TimeGrid(j0 * dt, (j0 + m * stride) * dt, m)
