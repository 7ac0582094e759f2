"""Point configurations, union-of-balls energies and birth rates.

Everything here is a pure function of its inputs.  ``PointConfiguration`` is
immutable; builders return new instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import geometry

__all__ = [
    "Box",
    "DomainSpec",
    "ModelParams",
    "PointConfiguration",
    "ConfigurationError",
    "DuplicatePointError",
    "union_volume",
    "conditional_energy",
    "birth_rate",
    "local_energy",
    "added_volume",
    "ball_volume",
    "read_configuration",
]

UNIT_BALL = {1: 2.0, 2: math.pi}


class ConfigurationError(ValueError):
    """Invalid domain, parameters or configuration."""


class DuplicatePointError(ConfigurationError):
    def __init__(self, x=None):
        super().__init__("duplicate point" if x is None else f"duplicate point at {tuple(x)}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi)`` in ``d`` dimensions."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ConfigurationError("box bounds must have matching dimension 1 or 2")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError(f"empty box bounds lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "Box":
        return cls((lo,) * d, (hi,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, x) -> bool:
        return all(a <= v < b for a, v, b in zip(self.lo, np.atleast_1d(x), self.hi))

    def contains_many(self, pts: NDArray) -> NDArray:
        pts = np.asarray(pts, dtype=float).reshape(-1, self.d)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((pts >= lo) & (pts < hi), axis=1)

    def inside(self, other: "Box") -> bool:
        return all(a >= c and b <= e for a, b, c, e in zip(self.lo, self.hi, other.lo, other.hi))

    def erode(self, margin: float) -> "Box":
        return Box(tuple(a + margin for a in self.lo), tuple(b - margin for b in self.hi))

    def grow(self, margin: float) -> "Box":
        return Box(tuple(a - margin for a in self.lo), tuple(b + margin for b in self.hi))

    def distance(self, x) -> float:
        """Euclidean distance from ``x`` to the box (0 inside)."""
        gap = [max(a - v, 0.0, v - b) for a, v, b in zip(self.lo, np.atleast_1d(x), self.hi)]
        return math.hypot(*gap) if len(gap) > 1 else gap[0]


@dataclass(frozen=True)
class DomainSpec:
    """Simulation domain: a flat torus ``[0, L)^d`` or a box in ``R^d``.

    On boxes balls may stick out of the box; distances are Euclidean.
    """

    d: int
    kind: str
    L: float | None = None
    box: Box | None = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError(f"dimension d={self.d} not supported (d in {{1, 2}})")
        if self.kind == "torus":
            if self.L is None or not self.L > 0:
                raise ConfigurationError("torus side length L must be > 0")
            object.__setattr__(self, "L", float(self.L))
            object.__setattr__(self, "box", Box.cube(0.0, self.L, self.d))
        elif self.kind == "box":
            if self.box is None or self.box.d != self.d:
                raise ConfigurationError("box domain needs bounds matching d")
        else:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def torus(cls, d: int, L: float) -> "DomainSpec":
        return cls(d=d, kind="torus", L=L)

    @classmethod
    def make_box(cls, lo, hi) -> "DomainSpec":
        b = Box(tuple(np.atleast_1d(lo)), tuple(np.atleast_1d(hi)))
        return cls(d=b.d, kind="box", box=b)

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    @property
    def volume(self) -> float:
        return self.box.volume

    def contains(self, x) -> bool:
        return self.box.contains(x)

    def wrap(self, pts: NDArray) -> NDArray:
        if self.is_torus:
            pts = np.mod(pts, self.L)
            # np.mod can round up to L itself
            pts[pts >= self.L] = 0.0
        return pts

    def displacement(self, a, b) -> NDArray:
        """Vector(s) ``b - a`` under the domain metric (minimum image on tori)."""
        v = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.is_torus:
            v = v - self.L * np.round(v / self.L)
        return v

    def distance_to_box(self, x, box: Box) -> float:
        if not self.is_torus:
            return box.distance(x)
        L = self.L
        gaps = []
        for a, v, b in zip(box.lo, np.atleast_1d(x), box.hi):
            gaps.append(min(max(a - w, 0.0, w - b) for w in (v - L, v, v + L)))
        return math.hypot(*gaps) if len(gaps) > 1 else gaps[0]


@dataclass(frozen=True)
class ModelParams:
    """Interaction radius and domain; the reference Poisson intensity is 1.

    ``interaction="free"`` switches the conditional energy off (birth rate
    identically 1), giving the immigration-death test model.
    """

    R: float
    domain: DomainSpec
    interaction: str = "area"

    def __post_init__(self):
        if not self.R > 0:
            raise ConfigurationError("interaction radius R must be > 0")
        if self.interaction not in ("area", "free"):
            raise ConfigurationError(f"unknown interaction {self.interaction!r}")
        if self.domain.is_torus and not self.domain.L > 4.0 * self.R:
            raise ConfigurationError(
                f"torus side L={self.domain.L} must satisfy L > 4R = {4.0 * self.R}"
            )

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def ball_volume(self) -> float:
        return ball_volume(self.R, self.d)

    @property
    def range(self) -> float:
        return 2.0 * self.R

    @property
    def cell_side(self) -> float:
        if self.domain.is_torus:
            return self.domain.L / math.floor(self.domain.L / (2.0 * self.R))
        return 2.0 * self.R

    @property
    def cells_per_axis(self) -> int | None:
        if self.domain.is_torus:
            return int(math.floor(self.domain.L / (2.0 * self.R)))
        return None

    def cell_of(self, x) -> tuple[int, ...]:
        s = self.cell_side
        idx = tuple(int(math.floor(v / s)) for v in x)
        n = self.cells_per_axis
        if n is not None:
            idx = tuple(i % n for i in idx)
        return idx

    def neighbour_cells(self, cell: tuple[int, ...]) -> Iterable[tuple[int, ...]]:
        n = self.cells_per_axis
        offsets = itertools.product((-1, 0, 1), repeat=len(cell))
        if n is None:
            return [tuple(c + o for c, o in zip(cell, off)) for off in offsets]
        return {tuple((c + o) % n for c, o in zip(cell, off)) for off in offsets}


def ball_volume(R: float, d: int) -> float:
    return UNIT_BALL[d] * R**d


class PointConfiguration:
    """Finite simple point set in a domain, indexed by a spatial hash.

    The hash uses cells of side ``2R`` (stretched slightly on tori so the
    cells tile ``[0, L)``), so any query of radius at most ``2R`` scans at
    most ``3**d`` cells.
    """

    __slots__ = ("points", "params", "_grid")

    def __init__(self, points: ArrayLike, params: ModelParams):
        d = params.d
        pts = np.array(points, dtype=float).reshape(-1, d)
        if params.domain.is_torus:
            pts = params.domain.wrap(pts)
        elif len(pts) and not params.domain.box.contains_many(pts).all():
            bad = pts[~params.domain.box.contains_many(pts)][0]
            raise ConfigurationError(f"point {tuple(bad)} outside the domain")
        pts.setflags(write=False)
        grid: dict[tuple[int, ...], list[int]] = {}
        seen = set()
        for i, p in enumerate(pts.tolist()):
            key = tuple(p)
            if key in seen:
                raise DuplicatePointError(key)
            seen.add(key)
            grid.setdefault(params.cell_of(p), []).append(i)
        self.points = pts
        self.params = params
        self._grid = grid

    @classmethod
    def empty(cls, params: ModelParams) -> "PointConfiguration":
        return cls(np.zeros((0, params.d)), params)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[NDArray]:
        return iter(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return self.params == other.params and _canonical(self.points) == _canonical(other.points)

    def __repr__(self) -> str:
        return f"PointConfiguration(n={len(self)}, d={self.params.d})"

    def cells(self) -> dict[tuple[int, ...], tuple[int, ...]]:
        return {k: tuple(v) for k, v in self._grid.items()}

    def near(self, x, radius: float | None = None) -> tuple[list[int], NDArray]:
        """Indices of and displacements to points within ``radius`` of ``x``."""
        radius = self.params.range if radius is None else radius
        if radius > self.params.cell_side + 1e-12:
            idx = list(range(len(self)))
        else:
            idx = []
            for c in self.params.neighbour_cells(self.params.cell_of(np.atleast_1d(x))):
                idx.extend(self._grid.get(c, ()))
        if not idx:
            return [], np.zeros((0, self.params.d))
        disp = self.params.domain.displacement(x, self.points[idx])
        dist = np.sqrt((disp * disp).sum(axis=1))
        keep = dist <= radius
        return [i for i, k in zip(idx, keep) if k], disp[keep]

    def restrict(self, box: Box) -> "PointConfiguration":
        return PointConfiguration(self.points[box.contains_many(self.points)], self.params)

    def count_in(self, box: Box) -> int:
        return int(box.contains_many(self.points).sum())

    def with_points(self, pts: ArrayLike) -> "PointConfiguration":
        extra = np.asarray(pts, dtype=float).reshape(-1, self.params.d)
        return PointConfiguration(np.vstack([self.points, extra]), self.params)

    def without(self, index: int) -> "PointConfiguration":
        return PointConfiguration(np.delete(self.points, index, axis=0), self.params)

    def union(self, other: "PointConfiguration") -> "PointConfiguration":
        return self.with_points(other.points)

    def to_text(self) -> str:
        dom = self.params.domain
        if dom.is_torus:
            extent = repr(dom.L)
        else:
            extent = ",".join(f"{a!r}:{b!r}" for a, b in zip(dom.box.lo, dom.box.hi))
        lines = [f"d={dom.d} kind={dom.kind} L={extent} R={self.params.R!r}"]
        lines += [" ".join(repr(v) for v in p) for p in _canonical(self.points)]
        return "\n".join(lines) + "\n"


def _canonical(points: NDArray) -> list[tuple[float, ...]]:
    return sorted(tuple(p) for p in np.asarray(points).tolist())


def read_configuration(text: str, interaction: str = "area") -> PointConfiguration:
    """Parse the plain text format written by ``PointConfiguration.to_text``."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError("empty configuration file")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        d = int(header["d"])
        kind = header["kind"]
        R = float(header["R"])
        if kind == "torus":
            domain = DomainSpec.torus(d, float(header["L"]))
        else:
            bounds = [tuple(float(v) for v in ax.split(":")) for ax in header["L"].split(",")]
            domain = DomainSpec.make_box([b[0] for b in bounds], [b[1] for b in bounds])
    except KeyError as exc:
        raise ConfigurationError(f"header missing field {exc}") from None
    params = ModelParams(R, domain, interaction)
    pts = [[float(v) for v in ln.split()] for ln in lines[1:]]
    return PointConfiguration(np.array(pts, dtype=float).reshape(-1, d), params)


def _check(eta: PointConfiguration, params: ModelParams):
    if eta.params.domain != params.domain or eta.params.R != params.R:
        raise ConfigurationError("configuration does not belong to these model parameters")


def added_volume(disps: ArrayLike | Sequence[float], params: ModelParams) -> float:
    """Covered volume added by a ball at the origin, given neighbour offsets.

    Offsets farther than ``2R`` contribute nothing and may be included.
    """
    if params.interaction == "free":
        return 0.0
    if params.d == 1:
        arr = np.asarray(disps, dtype=float).ravel().tolist()
        return geometry.added_length(arr, params.R)
    return geometry.added_area(disps, params.R)


def union_volume(eta: PointConfiguration, params: ModelParams) -> float:
    """Volume of the union of the radius-``R`` balls around the points of ``eta``.

    On a torus the union is measured with the torus metric; on boxes balls
    are measured in all of ``R^d``.
    """
    _check(eta, params)
    return _union_volume(eta.points, params)


def _union_volume(pts: NDArray, params: ModelParams) -> float:
    dom = params.domain
    if params.d == 1:
        if dom.is_torus:
            return geometry.union_length_circle(pts, params.R, dom.L)
        return geometry.union_length(pts, params.R)
    if not dom.is_torus:
        return geometry.union_area(pts, params.R)
    # telescoping over insertion order; each ball meets each earlier point in
    # at most one image because L > 4R
    total = 0.0
    for i in range(len(pts)):
        if i == 0:
            total += params.ball_volume
            continue
        disp = dom.displacement(pts[i], pts[:i])
        total += geometry.added_area(disp, params.R)
    return total


def conditional_energy(x, eta: PointConfiguration, params: ModelParams) -> float:
    """Added covered volume ``h(x, eta) = |B_R(eta + x)| - |B_R(eta)|``.

    Only points within ``2R`` of ``x`` are consulted.

    Raises
    ------
    DuplicatePointError
        If ``x`` is a point of ``eta``.
    """
    _check(eta, params)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, disp = eta.near(x)
    if len(disp) and np.any(np.all(disp == 0.0, axis=1)):
        raise DuplicatePointError(x)
    return added_volume(disp, params)


def birth_rate(x, eta: PointConfiguration, params: ModelParams) -> float:
    """Papangelou intensity ``exp(-h(x, eta))``; always in ``[exp(-kappa R^d), 1]``."""
    return math.exp(-conditional_energy(x, eta, params))


def local_energy(
    eta_in: PointConfiguration,
    boundary: PointConfiguration | None,
    Lambda: Box,
    params: ModelParams,
) -> float:
    """Energy of ``eta_in`` inside ``Lambda`` given the frozen outside configuration.

    Returns ``|B_R(eta_in + omega)| - |B_R(omega)|`` where ``omega`` is the part
    of ``boundary`` within ``2R`` of ``Lambda``.
    """
    _check(eta_in, params)
    if len(eta_in) and not Lambda.contains_many(eta_in.points).all():
        raise ConfigurationError("eta_in has points outside Lambda")
    if params.interaction == "free" or len(eta_in) == 0:
        return 0.0
    if boundary is None or len(boundary) == 0:
        return _union_volume(eta_in.points, params)
    _check(boundary, params)
    if Lambda.contains_many(boundary.points).any():
        raise ConfigurationError("boundary overlaps Lambda")
    dom = params.domain
    near = np.array(
        [p for p in boundary.points if dom.distance_to_box(p, Lambda) <= params.range]
    ).reshape(-1, params.d)
    both = np.vstack([near, eta_in.points])
    return max(0.0, _union_volume(both, params) - _union_volume(near, params))
