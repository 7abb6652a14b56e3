"""Independent reference computations used by the tests.

Nothing here calls into the package's recursions; each oracle works from the
lattice description directly.
"""
import itertools
import math

import numpy as np


def single_paths(start, end, M):
    """All level sequences ``(l_0, ..., l_M)`` from ``start`` to ``end`` with steps 0 or 1."""
    jumps = end - start
    if jumps < 0 or jumps > M:
        return []
    out = []
    for times in itertools.combinations(range(1, M + 1), jumps):
        levels = [start]
        for m in range(1, M + 1):
            levels.append(levels[-1] + (1 if m in times else 0))
        out.append(tuple(levels))
    return out


def path_log_weight(levels, dB, dt, beta):
    # jump (cost dt) on entering a step, then collect the increment of the new level
    M = len(levels) - 1
    jumps = levels[-1] - levels[0]
    energy = sum(dB[m - 1, levels[m] - 1] for m in range(1, M + 1))
    return jumps * math.log(dt) + beta * energy - 0.5 * beta * beta * dt * M


def brute_force_z(dB, dt, starts, ends, beta=1.0):
    """Sum over vertex-disjoint path tuples of the product of path weights (1-based levels)."""
    M = dB.shape[0]
    families = [single_paths(a, b, M) for a, b in zip(starts, ends)]
    terms = []
    for combo in itertools.product(*families):
        ok = all(len({p[m] for p in combo}) == len(combo) for m in range(M + 1))
        if ok:
            terms.append(sum(path_log_weight(p, dB, dt, beta) for p in combo))
    if not terms:
        return 0.0
    return math.fsum(math.exp(t) for t in terms)


def brute_force_lpp(dB, starts, ends):
    """Max over vertex-disjoint path tuples of the summed increments."""
    M = dB.shape[0]
    families = [single_paths(a, b, M) for a, b in zip(starts, ends)]
    best = -math.inf
    for combo in itertools.product(*families):
        if all(len({p[m] for p in combo}) == len(combo) for m in range(M + 1)):
            best = max(best, sum(dB[m - 1, p[m] - 1] for p in combo for m in range(1, M + 1)))
    return best


def gue_top_eigenvalue(n, size, rng, s=1.0):
    """Top eigenvalue of ``sqrt(s)`` times an ``n x n`` GUE matrix with ``E|H_ij|^2 = 1``."""
    a = rng.standard_normal((size, n, n)) + 1j * rng.standard_normal((size, n, n))
    h = (a + np.conj(np.swapaxes(a, 1, 2))) / 2.0
    return np.sqrt(s) * np.linalg.eigvalsh(h)[:, -1]


def airy_det_trapezoid(s, h, length=16.0):
    """``det(I - K_Ai)`` on ``(s, s + length)`` by a trapezoid Nystrom rule of step ``h``."""
    from scipy.special import airy

    n = int(round(length / h))
    x = s + h * np.arange(n + 1)
    w = np.full(n + 1, h)
    w[[0, -1]] = h / 2
    ai, aip, _, _ = airy(x)
    X, Y = np.meshgrid(x, x, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        K = (ai[:, None] * aip[None, :] - aip[:, None] * ai[None, :]) / (X - Y)
    K[np.diag_indices_from(K)] = aip ** 2 - x * ai ** 2
    sw = np.sqrt(w)
    return float(np.linalg.det(np.eye(n + 1) - sw[:, None] * K * sw[None, :]))


def airy_det_richardson(s, h):
    """Two-resolution Richardson extrapolation of :func:`airy_det_trapezoid` (error O(h^4))."""
    return (4 * airy_det_trapezoid(s, h / 2) - airy_det_trapezoid(s, h)) / 3
