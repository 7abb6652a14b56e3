"""Airy kernels, Nystrom Fredholm determinants, Tracy-Widom GUE and the finite-t crossover law.

All determinants use the symmetrised Nystrom matrix ``I - W^{1/2} K W^{1/2}``
on Gauss-Legendre nodes.  Airy-type kernels are built as
``K = A diag(w_r sigma) A^T`` with ``A[i, l] = Ai(x_i + r_l)``, so the inner
``r`` integral shares the quadrature machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import airy

TWO13 = 2.0 ** (1.0 / 3.0)
# Airy functions are below 1e-16 of their scale beyond this argument
AIRY_CUTOFF = 14.0


class QuadratureError(ArithmeticError):
    pass


def airy_ai(x):
    """Airy function ``Ai``; scalar in, scalar out."""
    v = airy(np.asarray(x, dtype=float))[0]
    return float(v) if np.ndim(v) == 0 else v


def airy_ai_prime(x):
    v = airy(np.asarray(x, dtype=float))[1]
    return float(v) if np.ndim(v) == 0 else v


def gauss_legendre(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    u, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * u + 0.5 * (a + b), 0.5 * (b - a) * w


def composite_gauss_legendre(a: float, b: float, panel: float, per_panel: int) -> tuple[np.ndarray, np.ndarray]:
    k = max(1, math.ceil((b - a) / panel))
    edges = np.linspace(a, b, k + 1)
    u, w = np.polynomial.legendre.leggauss(per_panel)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return (mid[:, None] + half[:, None] * u).ravel(), (half[:, None] * w).ravel()


@dataclass
class QuadratureKernel:
    """Kernel values on Gauss-Legendre nodes of ``(s, s + length)``."""

    s: float
    length: float
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    @classmethod
    def build(cls, kernel: Callable, s: float, length: float, n: int) -> "QuadratureKernel":
        if length < 10:
            raise ValueError("truncation length must be at least 10")
        x, w = gauss_legendre(s, s + length, n)
        return cls(s, length, x, w, kernel(x[:, None], x[None, :]))

    def matrix(self) -> np.ndarray:
        r = np.sqrt(self.weights)
        return r[:, None] * self.values * r[None, :]


def fredholm_det(kernel: QuadratureKernel):
    """``det(I - W^{1/2} K W^{1/2})``; complex kernels give complex results."""
    M = kernel.matrix()
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite kernel values")
    d = np.linalg.det(np.eye(M.shape[0]) - M)
    return complex(d) if np.iscomplexobj(d) else float(d)


def airy_kernel(x, y):
    """Closed-form Airy kernel, with the diagonal limit ``Ai'(x)^2 - x Ai(x)^2``."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    ax, apx, _, _ = airy(x)
    ay, apy, _, _ = airy(y)
    d = x - y
    diag = np.abs(d) < 1e-10
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (ax * apy - apx * ay) / d
    return np.where(diag, apx * apx - x * ax * ax, out)


def _airy_matrix(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    return airy(x[:, None] + r[None, :])[0]


def airy_kernel_quadrature(x: np.ndarray, n_r: int, r_max: Optional[float] = None) -> np.ndarray:
    """Airy kernel on nodes ``x`` via ``int_0^R Ai(x + r) Ai(y + r) dr``."""
    if r_max is None:
        r_max = max(AIRY_CUTOFF - float(np.min(x)), 1.0)
    r, w = gauss_legendre(0.0, r_max, n_r)
    A = _airy_matrix(x, r)
    return (A * w) @ A.T


def _tw_det(s: float, n: int) -> float:
    length = 12.0 + abs(s)
    x, w = gauss_legendre(s, s + length, n)
    r_max = max(AIRY_CUTOFF - s, 1.0)
    r, wr = gauss_legendre(0.0, r_max, 2 * n)
    B = _airy_matrix(x, r) * np.sqrt(w)[:, None]
    M = (B * wr) @ B.T
    return float(np.linalg.det(np.eye(n) - M))


def tracy_widom_gue_cdf(s: float, n: Optional[int] = None, tol: float = 1e-6) -> float:
    """GUE Tracy-Widom distribution function ``F_2(s)``.

    Evaluated at ``n`` and ``2n`` nodes; raises if the two disagree by more
    than ``tol``.  Returns the finer value clipped to ``[0, 1]``.
    """
    if not -10 <= s <= 10:
        raise ValueError("s must lie in [-10, 10]")
    if n is None:
        n = 24 + 3 * int(math.ceil(12 + abs(s)))
    coarse, fine = _tw_det(s, n), _tw_det(s, 2 * n)
    if abs(coarse - fine) > tol:
        raise QuadratureError(f"F2({s}): resolutions disagree by {abs(coarse - fine):.2e}")
    return min(max(fine, 0.0), 1.0)


# ---------------------------------------------------------------------------
# finite-t crossover distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContourSpec:
    """Hankel contour around the non-negative reals.

    Vertex at ``-offset``; rays at angles ``+-angle`` out to ``|mu + offset| = length``.
    ``length=None`` picks the point where ``exp(-Re mu)`` drops below ``1e-15``.
    Each ray is split into geometrically growing Gauss-Legendre panels
    (first panel ``first_panel`` long) with ``per_panel`` nodes each.
    """

    offset: float = 1.0
    angle: float = math.pi / 4
    length: Optional[float] = None
    first_panel: float = 0.5
    per_panel: int = 10
    min_pole_distance: float = 0.05

    def __post_init__(self):
        if not self.offset > 0:
            raise ValueError("offset must be positive")
        if not 0 < self.angle < math.pi / 2:
            raise ValueError("angle must lie in (0, pi/2)")

    @property
    def rho_max(self) -> float:
        if self.length is not None:
            return float(self.length)
        return (self.offset + 35.0) / math.cos(self.angle)

    def scaled(self, factor: float) -> "ContourSpec":
        return ContourSpec(self.offset * factor, min(self.angle * factor, 1.5), self.length, self.first_panel,
                           self.per_panel, self.min_pole_distance)

    def nodes(self):
        """Upper-ray points ``mu``, ``dmu/drho`` and weights; the lower ray is the mirror image."""
        edges = [0.0]
        step = self.first_panel
        while edges[-1] + step < self.rho_max:
            edges.append(edges[-1] + step)
            step *= 2.0
        edges.append(self.rho_max)
        u, wu = np.polynomial.legendre.leggauss(self.per_panel)
        e0, e1 = np.array(edges[:-1]), np.array(edges[1:])
        half, mid = 0.5 * (e1 - e0), 0.5 * (e0 + e1)
        rho = (mid[:, None] + half[:, None] * u).ravel()
        w = (half[:, None] * wu).ravel()
        e = np.exp(1j * self.angle)
        return -self.offset + rho * e, e, w

    def pole_distance(self, lo: float, hi: float) -> float:
        """Distance from the contour to the real segment ``[lo, hi]`` of kernel poles."""
        # every pole p > -offset projects onto a ray, at distance (p + offset) sin(angle)
        lo = min(lo, hi)
        if lo <= -self.offset:
            return 0.0
        return (lo + self.offset) * math.sin(self.angle)


@dataclass
class CrossoverResult:
    value: float
    imag: float
    n_x: int
    n_r: int
    n_mu: int


def _crossover_setup(t: float, s: float, contour: ContourSpec, x_density: float, r_density: int):
    kappa = t ** (1.0 / 3.0) / TWO13
    x0 = TWO13 * s
    rho_max = contour.rho_max
    log_mu = math.log(rho_max + contour.offset)
    # K_mu decays in x like |mu| exp(-kappa x); truncate where that is ~1e-12
    length = max(12.0 + abs(s), (26.0 + log_mu) / kappa)
    n_x = int(math.ceil(x_density * length))
    x, wx = gauss_legendre(x0, x0 + length, n_x)
    r_min = -(30.0 + log_mu) / kappa
    r_max = max(AIRY_CUTOFF - x0, 1.0)
    # sigma switches from 0 to 1 over a width 1/kappa; resolve that region finely
    r_mid = min(36.0 / kappa, r_max)
    r1, w1 = composite_gauss_legendre(r_min, r_mid, min(1.0, 2.0 / kappa), r_density)
    if r_mid < r_max:
        r2, w2 = composite_gauss_legendre(r_mid, r_max, 1.0, r_density)
        r1, w1 = np.concatenate([r1, r2]), np.concatenate([w1, w2])
    r, wr = r1, w1
    B = _airy_matrix(x, r) * np.sqrt(wx)[:, None]
    return kappa, x, r, wr, B


def _contour_integral(t, s, contour, x_density, r_density, det_minus_one):
    if not t >= 1:
        raise ValueError("t must be at least 1")
    contour = contour or ContourSpec()
    kappa, x, r, wr, B = _crossover_setup(t, s, contour, x_density, r_density)
    poles = np.exp(-kappa * np.array([r.max(), r.min()]))
    if contour.pole_distance(poles[0], poles[1]) < contour.min_pole_distance:
        raise QuadratureError("contour passes too close to the kernel poles")
    mu_up, e_up, w = contour.nodes()
    q = np.exp(-kappa * r)
    total = 0j
    for sign in (1, -1):
        mus = mu_up if sign == 1 else np.conj(mu_up)
        dmu = e_up if sign == 1 else np.conj(e_up)
        acc = 0j
        for mu, wk in zip(mus, w):
            sigma = mu / (mu - q)
            M = (B * (wr * sigma)) @ B.T
            acc += wk * np.exp(-mu) / mu * det_minus_one(M)
        # upper ray runs inward (rho decreasing), lower ray outward
        total += -sign * acc * dmu
    total /= 2j * math.pi
    if not np.isfinite(total):
        raise QuadratureError("non-finite contour integral")
    return total, x.size, r.size, 2 * w.size


def _det_minus_one(M):
    return np.linalg.det(np.eye(M.shape[0]) - M) - 1.0


def _det_minus_one_eig(M):
    # relative accuracy survives when det(I - M) is within rounding of 1
    return np.expm1(np.sum(np.log1p(-np.linalg.eigvals(M))))


def kpz_crossover_cdf(t: float, s: float, contour: Optional[ContourSpec] = None, x_density: float = 2.0,
                      r_density: int = 12, tol_imag: float = 1e-4, full_output: bool = False):
    """``P((H(t, 0) + t/24) / t^{1/3} <= s)`` for narrow-wedge data.

    Contour integral of ``exp(-mu) det(I - K_mu) / mu`` over a Hankel contour,
    written as ``1 + (1/2 pi i) int (dmu/mu) exp(-mu) (det - 1)`` so the
    truncation of the rays only affects the decaying part.  Both rays are
    integrated separately; their imaginary parts must cancel.
    """
    total, n_x, n_r, n_mu = _contour_integral(t, s, contour, x_density, r_density, _det_minus_one)
    val = 1.0 + total
    if abs(val.imag) > tol_imag:
        raise QuadratureError(f"imaginary residual {abs(val.imag):.2e} exceeds {tol_imag}")
    res = CrossoverResult(float(val.real), float(val.imag), n_x, n_r, n_mu)
    return res if full_output else res.value


def kpz_crossover_tail(t: float, s: float, contour: Optional[ContourSpec] = None, x_density: float = 2.0,
                       r_density: int = 12) -> float:
    """``1 - kpz_crossover_cdf(t, s)`` with relative accuracy deep in the upper tail.

    ``det(I - K_mu) - 1`` is formed from the eigenvalues of the Nystrom
    matrix, so it is not lost to cancellation against 1.
    """
    total, *_ = _contour_integral(t, s, contour, x_density, r_density, _det_minus_one_eig)
    if abs(total.imag) > 1e-3 * abs(total.real) + 1e-300:
        raise QuadratureError(f"imaginary residual {abs(total.imag):.2e} in the tail integral")
    return float(-total.real)
