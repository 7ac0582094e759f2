"""Exact measure of unions of equal-radius balls in one and two dimensions.

The two-dimensional routine walks the boundary of the union: every circle is
split into arcs by its intersections with the other circles, arcs covered by
another disk are dropped, and the area is recovered from the exposed arcs with
Green's theorem.  Since all radii are equal no disk can contain another, which
keeps the arc bookkeeping short.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

# absolute tolerance for geometric predicates (tangency, coincidence)
EPS = 1e-12

TWO_PI = 2.0 * math.pi


def union_length(xs: ArrayLike, R: float) -> float:
    """Length of the union of intervals ``[x - R, x + R]`` on the real line."""
    pts = np.sort(np.asarray(xs, dtype=float).ravel())
    if pts.size == 0:
        return 0.0
    gaps = np.diff(pts)
    return float(2.0 * R + np.minimum(gaps, 2.0 * R).sum())


def union_length_circle(xs: ArrayLike, R: float, L: float) -> float:
    """Covered length of a circle of circumference ``L`` by arcs of half-width ``R``."""
    pts = np.sort(np.mod(np.asarray(xs, dtype=float).ravel(), L))
    if pts.size == 0:
        return 0.0
    gaps = np.diff(np.append(pts, pts[0] + L))
    return float(L - np.maximum(gaps - 2.0 * R, 0.0).sum())


def added_length(disps: Sequence[float], R: float) -> float:
    """Length added to a union of radius-``R`` intervals by an interval at 0.

    ``disps`` are the signed offsets of the existing centres relative to the
    new one.  Only the nearest centre on each side matters because all
    intervals have the same length.
    """
    two_r = 2.0 * R
    left = -math.inf
    right = math.inf
    for d in disps:
        if d < 0.0:
            if d > left:
                left = d
        elif d < right:
            right = d
    covered = 0.0
    if left > -two_r:
        covered += two_r + left
    if right < two_r:
        covered += two_r - right
    if covered >= two_r:
        return 0.0
    return two_r - covered


def _exposed_arcs(starts: NDArray, ends: NDArray) -> list[tuple[float, float]]:
    """Complement in [0, 2pi) of a union of arcs given by angle intervals."""
    s = np.mod(starts, TWO_PI)
    e = s + (ends - starts)
    # arcs crossing 2pi are split in two
    wrap = e > TWO_PI
    lo = np.concatenate([s, np.zeros(wrap.sum())])
    hi = np.concatenate([np.minimum(e, TWO_PI), e[wrap] - TWO_PI])
    order = np.argsort(lo, kind="stable")
    exposed = []
    cursor = 0.0
    for a, b in zip(lo[order].tolist(), hi[order].tolist()):
        if a > cursor + EPS:
            exposed.append((cursor, a))
        if b > cursor:
            cursor = b
    if cursor < TWO_PI - EPS:
        exposed.append((cursor, TWO_PI))
    return exposed


def union_area(centers: ArrayLike, R: float) -> float:
    """Exact area of the union of radius-``R`` disks in the plane.

    Parameters
    ----------
    centers : array_like, shape (n, 2)
    R : float

    Centres closer than ``EPS`` are merged: their disks differ by a sliver
    far below floating point resolution of the result.
    """
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    n = len(c)
    if n == 0:
        return 0.0
    c = c - c.mean(axis=0)
    diff = c[None, :, :] - c[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    np.fill_diagonal(dist, np.inf)
    if n > 1 and dist.min() < EPS:
        dup = np.triu(dist < EPS).any(axis=0)
        return union_area(c[~dup], R)
    total = 0.0
    for i in range(n):
        cx, cy = c[i]
        mask = dist[i] < 2.0 * R - EPS
        if mask.any():
            phi = np.arctan2(diff[i, mask, 1], diff[i, mask, 0])
            alpha = np.arccos(dist[i, mask] / (2.0 * R))
            arcs = _exposed_arcs(phi - alpha, phi + alpha)
        else:
            arcs = [(0.0, TWO_PI)]
        for t1, t2 in arcs:
            total += 0.5 * (
                R * R * (t2 - t1)
                + R * cx * (math.sin(t2) - math.sin(t1))
                - R * cy * (math.cos(t2) - math.cos(t1))
            )
    return total


def added_area(disps: ArrayLike, R: float) -> float:
    """Area added to a union of radius-``R`` disks by a disk at the origin."""
    d = np.asarray(disps, dtype=float).reshape(-1, 2)
    full = math.pi * R * R
    if len(d) == 0:
        return full
    near = d[np.hypot(d[:, 0], d[:, 1]) < 2.0 * R - EPS]
    if len(near) == 0:
        return full
    grown = union_area(np.vstack([np.zeros((1, 2)), near]), R)
    return min(full, max(0.0, grown - union_area(near, R)))


def covered_length_in(lo: float, hi: float, centers: ArrayLike, R: float) -> float:
    """Length of ``[lo, hi]`` covered by the intervals ``[x - R, x + R]``."""
    pts = np.sort(np.asarray(centers, dtype=float).ravel())
    pts = pts[(pts > lo - R) & (pts < hi + R)]
    if pts.size == 0:
        return 0.0
    a = np.maximum(pts - R, lo)
    b = np.minimum(pts + R, hi)
    total = 0.0
    cur_a, cur_b = a[0], b[0]
    for x, y in zip(a[1:].tolist(), b[1:].tolist()):
        if x > cur_b:
            total += cur_b - cur_a
            cur_a, cur_b = x, y
        elif y > cur_b:
            cur_b = y
    return float(total + cur_b - cur_a)
