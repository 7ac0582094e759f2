"""Independent reference computations used by several test modules."""

import math

import numpy as np


def raster_union_area(centers, R, h=1e-3):
    """Union area of equal disks by counting grid cells of side ``h``.

    Cells are marked row by row from each disk's chord, so the cost is
    linear in the number of rows rather than the number of cells.
    """
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    x0, y0 = c.min(axis=0) - R - 2 * h
    x1, y1 = c.max(axis=0) + R + 2 * h
    nx = int(math.ceil((x1 - x0) / h))
    ny = int(math.ceil((y1 - y0) / h))
    grid = np.zeros((ny, nx), dtype=bool)
    ys = y0 + (np.arange(ny) + 0.5) * h
    for cx, cy in c:
        rows = np.nonzero(np.abs(ys - cy) < R)[0]
        w = np.sqrt(R * R - (ys[rows] - cy) ** 2)
        lo = np.ceil((cx - w - x0) / h - 0.5).astype(int)
        hi = np.floor((cx + w - x0) / h - 0.5).astype(int)
        for r, a, b in zip(rows, lo, hi):
            if b >= a:
                grid[r, a : b + 1] = True
    return grid.sum() * h * h


def lens_union(dist, R):
    """Area of the union of two radius-R disks at distance ``dist``."""
    if dist >= 2 * R:
        return 2 * math.pi * R * R
    lens = 2 * R * R * math.acos(dist / (2 * R)) - 0.5 * dist * math.sqrt(4 * R * R - dist * dist)
    return 2 * math.pi * R * R - lens


def poisson_kl(lam_mu, lam_nu, volume=1.0):
    """KL divergence between Poisson processes of intensities lam_mu and lam_nu."""
    return volume * (lam_mu * math.log(lam_mu / lam_nu) - lam_mu + lam_nu)


def log_partition_interval(n_max=6):
    """log Z for d=1, Lambda=[0,1], R=0.5, empty boundary, by iterated integrals.

    Every pair of points in [0, 1] is within 2R = 1, so the union of the
    intervals is [min - R, max + R] and H depends only on the span s.  The
    n-point term integrates e^{-(1 + s)} over ordered tuples, i.e. over the
    span density (1 - s) s^{n-2} / (n-2)!.
    """
    from scipy.integrate import quad

    total = 1.0 + math.exp(-1.0)
    for n in range(2, n_max + 1):
        val, _ = quad(
            lambda s: (1 - s) * s ** (n - 2) / math.factorial(n - 2) * math.exp(-1 - s), 0, 1
        )
        total += val
    return -1.0 + math.log(total)


def partition_short_interval(a, R):
    """Z for d=1, Lambda=[0, a] with a <= 2R, empty boundary, in closed form.

    Same span argument as above with the sum over n done analytically:
    sum_{n>=2} s^{n-2}/(n-2)! = e^s cancels the e^{-s} of the energy.
    """
    assert a <= 2 * R
    return math.exp(-a) * (1.0 + a * math.exp(-2 * R) + 0.5 * a * a * math.exp(-2 * R))
