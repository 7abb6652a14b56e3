"""H-Brownian bridge line ensembles.

Curves are indexed top to bottom: curve ``k1 - 1`` is the upper boundary
``f`` and curve ``k2 + 1`` the lower boundary ``g``.  An ensemble is weighted
against independent Brownian bridges by

    W = exp(- sum_i  int_a^b H(L_{i+1}(u) - L_i(u)) du)

with the integrals taken by the trapezoid rule on the shared grid.  An infinite
boundary is passed as ``None`` and contributes no interaction term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from .parallel import parallel_map
from .rng import Seed, SeedLike, as_generator
from .stochastic import Path, TimeGrid, sample_bridges

KS_ALPHA = 0.01
# exact two-sample KS distribution up to this many samples per side
KS_EXACT_MAX = 100


class RejectionFailure(RuntimeError):
    """Raised when the rejection sampler runs out of attempts."""

    def __init__(self, attempts: int, acceptance_rate: float):
        super().__init__(
            f"no ensemble accepted in {attempts} attempts "
            f"(observed acceptance rate {acceptance_rate:.3g}); fall back to metropolis_run"
        )
        self.attempts = attempts
        self.acceptance_rate = acceptance_rate


class OrderingViolation(RuntimeError):
    """The coupled chains lost their pointwise ordering."""


@dataclass(frozen=True)
class Hamiltonian:
    """Interaction ``H: R -> [0, inf)``.

    Use :meth:`special` for ``H_t(x) = exp(t^(1/3) x)`` and :meth:`tabulated`
    for anything else.  ``convex`` must be true for the monotone coupling.
    """

    func: Callable = field(repr=False)
    convex: bool
    name: str
    t: Optional[float] = None
    is_zero: bool = False

    @classmethod
    def special(cls, t: float) -> "Hamiltonian":
        if not t > 0:
            raise ValueError("t must be positive")
        return cls(func=_ExpHamiltonian(t ** (1.0 / 3.0)), convex=True, name=f"H_{t:g}", t=float(t))

    @classmethod
    def tabulated(cls, func: Callable, convex: bool = False, name: str = "tabulated") -> "Hamiltonian":
        return cls(func=func, convex=convex, name=name)

    @classmethod
    def zero(cls) -> "Hamiltonian":
        return cls(func=_zero, convex=True, name="zero", is_zero=True)

    def __call__(self, x):
        return self.func(x)

    def scalar(self, x: float) -> float:
        if self.is_zero:
            return 0.0
        if isinstance(self.func, _ExpHamiltonian):
            return math.exp(self.func.rate * x)
        return float(self.func(x))


class _ExpHamiltonian:
    # module level so Hamiltonians pickle across worker processes
    def __init__(self, rate: float):
        self.rate = rate

    def __call__(self, x):
        return np.exp(self.rate * np.asarray(x, dtype=float))


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class BoundaryData:
    """Entrance/exit values for curves ``k1..k2`` and the boundary curves.

    ``f``/``g`` are either ``None`` (meaning +inf / -inf) or arrays/Paths on
    the ensemble grid.
    """

    k1: int
    k2: int
    x: np.ndarray
    y: np.ndarray
    f: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k2 < self.k1:
            raise ValueError("need k1 <= k2")
        k = self.k2 - self.k1 + 1
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if self.x.shape != (k,) or self.y.shape != (k,):
            raise ValueError(f"entrance/exit data must have length {k}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("entrance/exit data must be finite")
        self.f = _boundary_values(self.f)
        self.g = _boundary_values(self.g)

    @property
    def k(self) -> int:
        return self.k2 - self.k1 + 1


def _boundary_values(b):
    if b is None:
        return None
    if isinstance(b, Path):
        return b.values
    arr = np.asarray(b, dtype=float)
    if arr.ndim == 0:
        raise TypeError("boundary curves must be arrays on the grid (or None for infinity)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("finite boundary curves must have finite values; use None for infinity")
    return arr


@dataclass
class LineEnsemble:
    """Curves ``first_index .. first_index + k - 1`` on a shared grid, shape ``(k, m + 1)``."""

    grid: TimeGrid
    values: np.ndarray
    first_index: int = 1

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.m + 1:
            raise ValueError("curves do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("line ensemble values must be finite")

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def curve(self, i: int) -> Path:
        return Path(self.grid, self.values[i - self.first_index])

    def restrict(self, u0: float, u1: float) -> "LineEnsemble":
        sub = self.grid.sub(u0, u1)
        j0 = self.grid.index_of(u0)
        return LineEnsemble(sub, self.values[:, j0:j0 + sub.m + 1], self.first_index)


def _check_boundary_grid(bd: BoundaryData, m: int):
    for name, b in (("f", bd.f), ("g", bd.g)):
        if b is not None and b.shape != (m + 1,):
            raise ValueError(f"boundary {name} is not on the ensemble grid")


def log_boltzmann_weights(curves: np.ndarray, bd: BoundaryData, H: Hamiltonian,
                          grid: TimeGrid) -> np.ndarray:
    """``log W`` for a batch of ensembles ``curves[..., k, m + 1]``."""
    if H.is_zero:
        return np.zeros(curves.shape[:-2])
    w = grid.trapezoid_weights()
    total = np.zeros(curves.shape[:-2])
    k = curves.shape[-2]
    for i in range(k - 1):
        total += H(curves[..., i + 1, :] - curves[..., i, :]) @ w
    if bd.f is not None:
        total += H(curves[..., 0, :] - bd.f) @ w
    if bd.g is not None:
        total += H(bd.g - curves[..., k - 1, :]) @ w
    return -total


def boltzmann_weight(ens: LineEnsemble, bd: BoundaryData, H: Hamiltonian) -> float:
    """Boltzmann weight of ``ens`` given its boundary data; a number in (0, 1]."""
    if ens.k != bd.k:
        raise ValueError(f"ensemble has {ens.k} curves, boundary data expects {bd.k}")
    _check_boundary_grid(bd, ens.grid.m)
    return float(np.exp(log_boltzmann_weights(ens.values, bd, H, ens.grid)))


def _free_batch(bd: BoundaryData, grid: TimeGrid, size: int, rng) -> np.ndarray:
    return sample_bridges(grid, bd.x, bd.y, rng, size=size)


def estimate_partition(bd: BoundaryData, H: Hamiltonian, grid: TimeGrid, n_samples: int,
                       seed: SeedLike, chunk: int = 4096) -> tuple[float, float]:
    """Monte Carlo normalising constant ``E_free[W]`` and its standard error."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    _check_boundary_grid(bd, grid.m)
    rng = as_generator(seed)
    weights = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        batch = _free_batch(bd, grid, k, rng)
        weights[start:start + k] = np.exp(log_boltzmann_weights(batch, bd, H, grid))
    return float(weights.mean()), float(weights.std(ddof=1) / math.sqrt(n_samples))


def rejection_sample(bd: BoundaryData, H: Hamiltonian, grid: TimeGrid, max_attempts: int,
                     seed: SeedLike, full_output: bool = False):
    """Exact sampler: propose free bridges, accept the first with ``W >= U``.

    With ``full_output=True`` returns ``(ensemble, attempts)``.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    _check_boundary_grid(bd, grid.m)
    rng = as_generator(seed)
    attempts = 0
    batch_size = 16
    while attempts < max_attempts:
        k = min(batch_size, max_attempts - attempts)
        batch = _free_batch(bd, grid, k, rng)
        u = rng.random(k)
        logw = log_boltzmann_weights(batch, bd, H, grid)
        ok = np.flatnonzero(np.exp(logw) >= u)
        if ok.size:
            i = int(ok[0])
            ens = LineEnsemble(grid, batch[i], bd.k1)
            attempts += i + 1
            return (ens, attempts) if full_output else ens
        attempts += k
        batch_size = min(2 * batch_size, 4096)
    raise RejectionFailure(attempts, 0.0)


# ---------------------------------------------------------------------------
# Discrete walk ensembles and the flip dynamics
# ---------------------------------------------------------------------------

@dataclass
class DiscreteWalkEnsemble:
    """Walks on ``n^{-1} Z`` with time step ``n^{-2}``.

    ``heights`` holds integer heights in units of ``1/n`` with shape
    ``(k, T + 1)``; consecutive entries differ by exactly one.
    """

    n: int
    a: float
    heights: np.ndarray

    def __post_init__(self):
        self.heights = np.atleast_2d(np.asarray(self.heights, dtype=np.int64))
        if self.heights.shape[1] < 3:
            raise ValueError("walks need at least one interior site")
        steps = np.abs(np.diff(self.heights, axis=1))
        if not np.all(steps == 1):
            raise ValueError("every increment must be exactly +-1/n")

    @property
    def k(self) -> int:
        return self.heights.shape[0]

    @property
    def T(self) -> int:
        return self.heights.shape[1] - 1

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.a, self.a + self.T / self.n ** 2, self.T)

    def positions(self) -> np.ndarray:
        return self.heights / self.n

    def to_line_ensemble(self) -> LineEnsemble:
        return LineEnsemble(self.grid, self.positions())

    def copy(self) -> "DiscreteWalkEnsemble":
        return DiscreteWalkEnsemble(self.n, self.a, self.heights.copy())

    @classmethod
    def minimal(cls, n: int, a: float, b: float, x: Sequence[float], y: Sequence[float]) -> "DiscreteWalkEnsemble":
        """Lowest walk bridges with the given endpoints (each in ``n^{-1} 2Z``)."""
        T = (b - a) * n * n
        if abs(T - round(T)) > 1e-9 or round(T) % 2:
            raise ValueError("(b - a) must lie in n^{-2} 2Z")
        T = int(round(T))
        xs = _lattice_points(x, n)
        ys = _lattice_points(y, n)
        s = np.arange(T + 1)
        h = np.maximum(xs[:, None] - s[None, :], ys[:, None] - (T - s)[None, :])
        return cls(n, a, h)


def _lattice_points(v, n) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float)) * n
    iv = np.round(v).astype(np.int64)
    if np.any(np.abs(v - iv) > 1e-9) or np.any(iv % 2):
        raise ValueError("walk endpoints must lie in n^{-1} 2Z")
    return iv


class _FlipChain:
    """Random-scan Metropolis flips for one walk ensemble."""

    def __init__(self, walks: DiscreteWalkEnsemble, bd: BoundaryData, H: Hamiltonian):
        if bd.k != walks.k:
            raise ValueError("boundary data and walks disagree on the number of curves")
        pos = walks.positions()
        if not (np.allclose(pos[:, 0], bd.x) and np.allclose(pos[:, -1], bd.y)):
            raise ValueError("initial walks do not match the entrance/exit data")
        _check_boundary_grid(bd, walks.T)
        self.n = walks.n
        self.h = [list(map(int, row)) for row in walks.heights]
        self.f = None if bd.f is None else bd.f.tolist()
        self.g = None if bd.g is None else bd.g.tolist()
        self.H = H.scalar
        self.weight = 1.0 / walks.n ** 2  # trapezoid weight of an interior node
        self.k = walks.k
        self.legal = 0
        self.accepted = 0

    def local_energy(self, j: int, s: int, value: float) -> float:
        H = self.H
        e = 0.0
        if j > 0:
            e += H(value - self.h[j - 1][s] / self.n)
        elif self.f is not None:
            e += H(value - self.f[s])
        if j < self.k - 1:
            e += H(self.h[j + 1][s] / self.n - value)
        elif self.g is not None:
            e += H(self.g[s] - value)
        return e

    def ratio(self, j: int, s: int, direction: int) -> Optional[float]:
        """Weight ratio for flipping site ``s`` of walk ``j``; None if the flip is illegal."""
        row = self.h[j]
        cur = row[s]
        if row[s - 1] != cur + direction or row[s + 1] != cur + direction:
            return None
        old = cur / self.n
        new = (cur + 2 * direction) / self.n
        de = self.local_energy(j, s, new) - self.local_energy(j, s, old)
        return math.exp(-self.weight * de)

    def apply(self, j: int, s: int, direction: int):
        self.h[j][s] += 2 * direction

    def result(self, template: DiscreteWalkEnsemble) -> DiscreteWalkEnsemble:
        return DiscreteWalkEnsemble(template.n, template.a, np.array(self.h))


def _proposal_stream(rng, T: int, k: int, n_steps: int, chunk: int = 65536):
    for start in range(0, n_steps, chunk):
        c = min(chunk, n_steps - start)
        sites = rng.integers(1, T, size=c).tolist()
        curves = rng.integers(0, k, size=c).tolist()
        dirs = (2 * rng.integers(0, 2, size=c) - 1).tolist()
        us = rng.random(c).tolist()
        yield from zip(sites, curves, dirs, us)


class MetropolisStats(NamedTuple):
    proposals: int
    legal: int
    accepted: int


def metropolis_run(initial: DiscreteWalkEnsemble, bd: BoundaryData, H: Hamiltonian, n_steps: int,
                   seed: SeedLike, full_output: bool = False, record_every: int = 0):
    """Run the flip dynamics for ``n_steps`` proposals.

    Each step picks a (site, curve, direction) uniformly, proposes moving that
    site by ``2/n``, and accepts when the weight ratio is at least a fresh
    uniform.  With ``full_output=True`` returns ``(final, stats, trace)`` where
    ``trace`` holds copies of the heights every ``record_every`` steps.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    chain = _FlipChain(initial, bd, H)
    rng = as_generator(seed)
    trace = []
    for step, (s, j, d, u) in enumerate(_proposal_stream(rng, initial.T, initial.k, n_steps), 1):
        r = chain.ratio(j, s, d)
        if r is not None:
            chain.legal += 1
            if r >= u:
                chain.apply(j, s, d)
                chain.accepted += 1
        if record_every and step % record_every == 0:
            trace.append(tuple(tuple(row) for row in chain.h))
    final = chain.result(initial)
    if full_output:
        return final, MetropolisStats(n_steps, chain.legal, chain.accepted), trace
    return final


class CoupledRun(NamedTuple):
    first: DiscreteWalkEnsemble
    second: DiscreteWalkEnsemble
    violations: list


def coupled_metropolis_run(initial: tuple, bd_pair: tuple, H: Hamiltonian, n_steps: int,
                           seed: SeedLike, allow_nonconvex: bool = False) -> CoupledRun:
    """Monotone coupling of two flip chains with ordered boundary data.

    ``bd_pair = (bd1, bd2)`` must satisfy ``f1 >= f2`` and ``g1 >= g2``.  Both
    chains share every proposal and every uniform.  Any step at which
    ``walk1_j(s) < walk2_j(s)`` is recorded as ``(step, j, s)``; with a convex
    Hamiltonian such a violation raises :class:`OrderingViolation`.  Set
    ``allow_nonconvex`` to run non-convex interactions and just record.
    """
    bd1, bd2 = bd_pair
    if not H.convex and not allow_nonconvex:
        raise ValueError("the monotone coupling needs a convex Hamiltonian")
    _check_ordered(bd1.f, bd2.f, "f")
    _check_ordered(bd1.g, bd2.g, "g")
    w1, w2 = initial
    if w1.heights.shape != w2.heights.shape or np.any(w1.heights < w2.heights):
        raise ValueError("initial walks must share a shape and start ordered")
    c1 = _FlipChain(w1, bd1, H)
    c2 = _FlipChain(w2, bd2, H)
    rng = as_generator(seed)
    violations = []
    for step, (s, j, d, u) in enumerate(_proposal_stream(rng, w1.T, w1.k, n_steps), 1):
        for c in (c1, c2):
            r = c.ratio(j, s, d)
            if r is not None and r >= u:
                c.apply(j, s, d)
        if c1.h[j][s] < c2.h[j][s]:
            violations.append((step, j, s))
            if H.convex and not allow_nonconvex:
                raise OrderingViolation(f"walk {j} below its partner at site {s} after step {step}")
    return CoupledRun(c1.result(w1), c2.result(w2), violations)


def _check_ordered(b1, b2, name):
    # None is +inf for f and -inf for g
    if name == "f":
        if b1 is None:
            return
        if b2 is None:
            raise ValueError("f1 finite while f2 = +inf violates f1 >= f2")
    else:
        if b2 is None:
            return
        if b1 is None:
            raise ValueError("g1 = -inf while g2 finite violates g1 >= g2")
    if np.any(b1 < b2):
        raise ValueError(f"boundary {name} is not ordered")


# ---------------------------------------------------------------------------
# Statistical Gibbs-invariance test
# ---------------------------------------------------------------------------

@dataclass
class InvarianceReport:
    functionals: list
    statistics: list
    pvalues: list
    n_tested: int
    n_failed: int
    untestable: bool
    alpha: float = KS_ALPHA

    @property
    def failure_rate(self) -> float:
        total = self.n_tested + self.n_failed
        return self.n_failed / total if total else 0.0

    @property
    def passed(self) -> bool:
        return not self.untestable and all(p > self.alpha for p in self.pvalues)


def _resample_one(args):
    ens_values, grid, k1, k2, j0, j1, H, seed, max_attempts = args
    sub = TimeGrid(float(grid.nodes[j0]), float(grid.nodes[j1]), j1 - j0)
    vals = ens_values[:, j0:j1 + 1]
    top = k1 - 1  # zero-based row of curve k1
    bot = k2 - 1
    f = None if top == 0 else vals[top - 1]
    g = None if bot == vals.shape[0] - 1 else vals[bot + 1]
    bd = BoundaryData(k1, k2, vals[top:bot + 1, 0], vals[top:bot + 1, -1], f, g)
    try:
        out = rejection_sample(bd, H, sub, max_attempts, seed)
    except RejectionFailure:
        return None
    return out.values


def ks_2samp(a, b):
    n = min(len(a), len(b))
    method = "exact" if n <= KS_EXACT_MAX else "asymp"
    res = stats.ks_2samp(a, b, method=method)
    return float(res.statistic), float(res.pvalue)


def invariance_functionals(values: np.ndarray, top_row: int, j0: int, j1: int) -> dict:
    """Midpoint value and quarter-to-three-quarter increment of curve ``top_row``."""
    mid = (j0 + j1) // 2
    q1 = j0 + (j1 - j0) // 4
    q3 = j1 - (j1 - j0) // 4
    c = values[..., top_row, :]
    return {"midpoint": c[..., mid], "increment": c[..., q3] - c[..., q1]}


def gibbs_invariance_test(samples: Sequence[LineEnsemble], K: tuple, interval: tuple, H: Hamiltonian,
                          seed: Seed | int, max_attempts: int = 20000, workers: int = 1,
                          min_samples: int = 500) -> InvarianceReport:
    """Resample curves ``K = (k1, k2)`` on ``interval`` and KS-compare with the originals.

    Indices in ``K`` are 1-based positions within each sample.  Boundary data
    for the resampling are read off the sample itself.
    """
    if len(samples) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(samples)}")
    seed = seed if isinstance(seed, Seed) else Seed(int(seed))
    grid = samples[0].grid
    j0, j1 = grid.index_of(interval[0]), grid.index_of(interval[1])
    if not (0 < j0 < j1 < grid.m):
        raise ValueError("sub-interval must lie strictly inside the grid")
    k1, k2 = K
    if not 1 <= k1 <= k2 <= samples[0].k:
        raise ValueError("index window outside the ensemble")
    jobs = [(s.values, grid, k1, k2, j0, j1, H, seed.child(replicate=i), max_attempts)
            for i, s in enumerate(samples)]
    resampled = parallel_map(_resample_one, jobs, workers)

    keep = [i for i, r in enumerate(resampled) if r is not None]
    n_failed = len(samples) - len(keep)
    untestable = n_failed > 0.5 * len(samples)
    orig = np.stack([samples[i].values for i in keep]) if keep else np.empty((0,) + samples[0].values.shape)
    new = orig.copy()
    for row, i in enumerate(keep):
        new[row, k1 - 1:k2, j0:j1 + 1] = resampled[i]

    f_orig = invariance_functionals(orig, k1 - 1, j0, j1)
    f_new = invariance_functionals(new, k1 - 1, j0, j1)
    names, statistics, pvalues = [], [], []
    if len(keep) >= 2:
        for name in f_orig:
            d, p = ks_2samp(f_orig[name], f_new[name])
            names.append(name)
            statistics.append(d)
            pvalues.append(p)
    else:
        untestable = True
    return InvarianceReport(names, statistics, pvalues, len(keep), n_failed, untestable)
