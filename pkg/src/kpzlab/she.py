"""Multiplicative stochastic heat equation on a truncated lattice.

Explicit Euler-Maruyama with Ito noise:

    Z <- Z + (dt / (2 dx^2)) (discrete Laplacian of Z) + Z xi sqrt(dt / dx)

with absorbing zero boundary at ``+-L``.  For a fixed noise array the map from
initial data to solution is linear, which the tests exploit directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
from scipy.special import logsumexp

from .rng import SeedLike, as_generator

POSITIVITY_FLOOR = 1e-300
NOISE_CHUNK = 256


@dataclass(frozen=True)
class InitialData:
    """``narrow_wedge`` (delta at ``center``) or ``function`` (``Z0 = exp(h0(x))``, ``-inf`` allowed)."""

    kind: str
    h0: Optional[Callable] = None
    center: float = 0.0

    @classmethod
    def narrow_wedge(cls, center: float = 0.0) -> "InitialData":
        return cls("narrow_wedge", None, float(center))

    @classmethod
    def function(cls, h0: Callable) -> "InitialData":
        return cls("function", h0)

    def __post_init__(self):
        if self.kind not in ("narrow_wedge", "function"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.kind == "function" and self.h0 is None:
            raise ValueError("function initial data needs h0")

    def values(self, x: np.ndarray, dx: float) -> np.ndarray:
        if self.kind == "narrow_wedge":
            z = np.zeros_like(x)
            j = int(np.argmin(np.abs(x - self.center)))
            if abs(x[j] - self.center) > 1e-9 * max(1.0, abs(self.center)):
                raise ValueError("narrow wedge center must be a grid point")
            z[j] = 1.0 / dx
            return z
        h = np.broadcast_to(np.asarray(self.h0(x), dtype=float), x.shape)
        if np.any(np.isnan(h)) or np.any(h == np.inf):
            raise ValueError("initial data must be finite or -inf")
        with np.errstate(under="ignore"):
            return np.exp(h)


@dataclass
class SheField:
    """Solution slices ``values[r, j] = Z(times[r], x[j])`` on the interior grid."""

    x: np.ndarray
    times: np.ndarray
    values: np.ndarray
    dx: float
    dt: float
    clamped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def Z(self) -> np.ndarray:
        """Final time slice."""
        return self.values[-1]

    @property
    def t(self) -> float:
        return float(self.times[-1])

    @property
    def accepted(self) -> bool:
        return self.clamped == 0

    def mass(self, r: int = -1) -> float:
        return float(self.values[r].sum() * self.dx)

    def at(self, x0: float, r: int = -1) -> float:
        j = int(np.argmin(np.abs(self.x - x0)))
        if abs(self.x[j] - x0) > 1e-9 * max(1.0, abs(x0)):
            raise ValueError(f"{x0} is not a grid point")
        return float(self.values[r, j])


@numba.njit(cache=True)
def _advance(z, xi, lam, sq):
    # one block of time steps in place; xi has shape (steps, n)
    n = z.shape[0]
    new = np.empty(n)
    clamped = 0
    for m in range(xi.shape[0]):
        for j in range(n):
            left = z[j - 1] if j > 0 else 0.0
            right = z[j + 1] if j < n - 1 else 0.0
            v = z[j] + lam * (left - 2.0 * z[j] + right) + z[j] * xi[m, j] * sq
            if v < 0.0:
                v = POSITIVITY_FLOOR
                clamped += 1
            new[j] = v
        z[:] = new
    return clamped


def default_time_step(dx: float, margin: float = 7.5) -> float:
    """``dx^2 / 3`` unless that lets a single update turn negative within ``margin`` noise deviations.

    An update goes negative only if ``xi < -(1 - 2 lam) / sqrt(lam dx)`` with
    ``lam = dt / (2 dx^2)``; ``lam`` is reduced until that threshold exceeds ``margin``.
    """
    lam = 1.0 / 6.0
    while (1.0 - 2.0 * lam) / math.sqrt(lam * dx) < margin:
        lam /= 1.25
    return 2.0 * lam * dx * dx


def default_half_width(t: float, window: float = 2.0) -> float:
    return 6.0 * math.sqrt(t) + window


def solve_mshe(init: InitialData, t: float, dx: float, seed: SeedLike, dt: float | None = None,
               half_width: float | None = None, noise: float = 1.0, record=None) -> SheField:
    """Integrate the multiplicative SHE up to time ``t``.

    ``dt`` defaults to ``dx^2 / 3``, for which the noiseless scheme matches
    the heat kernel to fourth order in ``dx``; it is reduced for coarse
    ``dx`` so that the positivity floor is practically never reached.
    ``noise=0`` gives the deterministic heat flow; the random stream is
    still consumed so that noisy and noiseless runs stay aligned.  ``record`` lists extra times to
    keep; the final time is always kept.
    """
    if not t > 0 or not dx > 0:
        raise ValueError("need t > 0 and dx > 0")
    if dt is None:
        dt = default_time_step(dx)
    if dt > 0.5 * dx * dx * (1 + 1e-12):
        raise ValueError(f"explicit scheme unstable: dt={dt} > dx^2/2={0.5 * dx * dx}")
    n_steps = max(1, math.ceil(t / dt - 1e-9))
    dt = t / n_steps
    L = default_half_width(t) if half_width is None else float(half_width)
    J = int(math.floor(L / dx + 1e-9))
    x = dx * np.arange(-J + 1, J)
    z = init.values(x, dx).astype(float)
    lam = dt / (2.0 * dx * dx)
    sq = noise * math.sqrt(dt / dx)
    rec_steps = sorted({round(r / dt) for r in (record or [])} | {n_steps})
    if rec_steps[0] < 0 or rec_steps[-1] > n_steps:
        raise ValueError("record times outside [0, t]")
    rng = as_generator(seed)
    out = np.empty((len(rec_steps), x.size))
    clamped = 0
    m = 0
    for r, target in enumerate(rec_steps):
        while m < target:
            k = min(NOISE_CHUNK, target - m)
            xi = rng.standard_normal((k, x.size))
            clamped += _advance(z, xi, lam, sq)
            m += k
        out[r] = z
    return SheField(x, np.array(rec_steps) * dt, out, dx, dt, clamped,
                    {"half_width": L, "noise": noise, "kind": init.kind})


def heat_kernel(t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def hopf_cole(field: SheField, r: int = -1) -> np.ndarray:
    """``log Z`` on a stored slice."""
    z = field.values[r]
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        j = bad[0]
        raise ValueError(f"non-positive value {z[j]} at x={field.x[j]} (t={field.times[r]})")
    return np.log(z)


def general_one_point(x_grid: np.ndarray, h_nw: np.ndarray, h0: Callable, x: float) -> float:
    """``log int exp(h_nw(y) + h0(x - y)) dy`` by the trapezoid rule in log space."""
    x_grid = np.asarray(x_grid, dtype=float)
    h_nw = np.asarray(h_nw, dtype=float)
    if x_grid.shape != h_nw.shape or x_grid.size < 2:
        raise ValueError("grid and values must match")
    dx = np.diff(x_grid)
    w = np.empty_like(x_grid)
    w[0], w[-1] = 0.5 * dx[0], 0.5 * dx[-1]
    w[1:-1] = 0.5 * (dx[:-1] + dx[1:])
    terms = h_nw + np.asarray(h0(x - x_grid), dtype=float)
    if not np.any(terms > -np.inf):
        raise ArithmeticError("convolution integrand vanishes identically")
    return float(logsumexp(terms, b=w))


@dataclass(frozen=True)
class HypParams:
    C: float
    delta: float
    kappa: float
    M: float

    def __post_init__(self):
        for name in ("C", "delta", "kappa", "M"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class HypResult:
    ok: bool
    growth_witness: Optional[float] = None
    measure: float = 0.0
    reason: str = ""

    def __bool__(self):
        return self.ok


def hyp_check(x: np.ndarray, f: np.ndarray, params: HypParams, growth_window: float = 10.0) -> HypResult:
    """Check the parabolic growth bound and the mass-near-origin condition on a tabulation.

    The growth bound is checked on every tabulated point; the tabulation must
    cover ``[-R, R]`` with ``R = max(M, growth_window)``.  The measure of
    ``{f >= -C}`` in ``[-M, M]`` is approximated by ``dx`` times a count.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    R = max(params.M, growth_window)
    if x.shape != f.shape or x.size < 2 or x.min() > -R + 1e-12 or x.max() < R - 1e-12:
        raise ValueError(f"tabulation must cover [-{R}, {R}]")
    excess = f - (params.C + 0.5 * (1.0 - params.kappa) * x * x)
    if np.any(excess > 0):
        j = int(np.argmax(excess))
        return HypResult(False, float(x[j]), reason="growth bound violated")
    inside = np.abs(x) <= params.M
    dx = float(np.median(np.diff(x)))
    measure = dx * int(np.count_nonzero(f[inside] >= -params.C))
    if measure < params.delta:
        return HypResult(False, None, measure, "too little mass near the origin")
    return HypResult(True, None, measure)


@dataclass
class AttractivityReport:
    violations: int
    sup_gap: float
    sup_initial_gap: float
    slack: float
    clamped: int

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.sup_gap <= self.sup_initial_gap + self.slack


def attractivity_check(h0_upper: Callable, h0_lower: Callable, t: float, dx: float, seed: SeedLike,
                       **kw) -> AttractivityReport:
    """Solve with ordered initial data and the same noise; count ordering violations."""
    up = solve_mshe(InitialData.function(h0_upper), t, dx, seed, **kw)
    lo = solve_mshe(InitialData.function(h0_lower), t, dx, seed, **kw)
    x = up.x
    a, b = np.asarray(h0_upper(x), float), np.asarray(h0_lower(x), float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("initial data must be finite on the grid")
    if np.any(a < b):
        raise ValueError("initial data are not ordered")
    violations = int(np.count_nonzero(up.Z < lo.Z))
    gap = float(np.max(np.abs(hopf_cole(up) - hopf_cole(lo))))
    return AttractivityReport(violations, gap, float(np.max(a - b)), 10.0 * dx, up.clamped + lo.clamped)


def endpoint_distribution(field: SheField, r: int = -1) -> np.ndarray:
    """Quenched endpoint law ``p_j = Z_j / sum Z``."""
    z = field.values[r]
    total = z.sum()
    if not total > 0:
        raise ArithmeticError("zero total mass")
    return z / total


def window_mass(x: np.ndarray, p: np.ndarray, center: float, radius: float) -> float:
    """Mass of ``[center - radius, center + radius]`` for the density ``p_j / dx`` on cells around ``x_j``."""
    dx = x[1] - x[0]
    lo = np.clip(np.minimum(x + 0.5 * dx, center + radius) - np.maximum(x - 0.5 * dx, center - radius), 0, None)
    return float(np.sum(p * lo / dx))


def mass_radius(x: np.ndarray, p: np.ndarray, mass: float = 0.9, center: float = 0.0) -> float:
    """Smallest ``r`` with ``window_mass(center, r) >= mass`` (bisection on the cell density)."""
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    lo, hi = 0.0, float(np.max(np.abs(x - center))) + x[1] - x[0]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if window_mass(x, p, center, mid) >= mass:
            hi = mid
        else:
            lo = mid
    return hi


def quenched_median(x: np.ndarray, p: np.ndarray) -> float:
    return float(x[np.searchsorted(np.cumsum(p), 0.5)])


def snapshot_rows(field: SheField, r: int = -1):
    """``(x, Z, H)`` rows of one slice; ``H`` is ``-inf`` where ``Z`` vanishes."""
    z = field.values[r]
    with np.errstate(divide="ignore"):
        h = np.log(z)
    return [(float(a), float(b), float(c)) for a, b, c in zip(field.x, z, h)]
