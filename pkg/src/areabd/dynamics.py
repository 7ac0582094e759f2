"""Event-driven simulation of the birth-and-death dynamics by Poisson thinning.

Birth proposals form a unit-intensity space-time Poisson process.  Each spatial
cell owns an independent stream of proposals, materialised lazily from an
``EventStream``; a proposal at ``x`` with mark ``u`` is accepted iff
``u <= b(x, current state)``.  Every point lives for an independent unit
exponential time.  Since ``b <= 1`` no adaptive bound is needed, and because
marks depend only on ``(seed, cell, counter)``, runs over different regions
see identical noise wherever their cells coincide.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry
from .core import Box, ConfigurationError, ModelParams, PointConfiguration, _union_volume
from .gibbs import GibbsSpec, poisson_sample
from .stream import BLOCK, BOUNDARY, PROPOSAL, EventStream

__all__ = [
    "Trajectory",
    "CouplingReport",
    "BoundarySamplerConfig",
    "simulate",
    "simulate_localized",
    "couple",
    "EVENT_KINDS",
    "write_event_log",
    "write_snapshots",
]

BIRTH_PROPOSAL = "birth-proposal"
BIRTH_ACCEPT = "birth-accept"
DEATH = "death"
EVENT_KINDS = (BIRTH_PROPOSAL, BIRTH_ACCEPT, DEATH)

_DEATH = 0
_PROPOSAL = 1


@dataclass
class Trajectory:
    """Result of one run.

    ``events`` holds ``(time, kind, coords, point_id)`` tuples in time order;
    rejected proposals appear with kind ``birth-proposal``.  Point ids
    ``0..n-1`` are the initial points.
    """

    times: list[float]
    snapshots: list[PointConfiguration]
    events: list[tuple]
    terminal: PointConfiguration
    initial: PointConfiguration
    stats: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def replay(self, t: float) -> PointConfiguration:
        """Configuration at time ``t`` rebuilt from the initial state and the event log."""
        alive = {i: tuple(p) for i, p in enumerate(self.initial.points.tolist())}
        for time, kind, x, pid in self.events:
            if time > t:
                break
            if kind == BIRTH_ACCEPT:
                alive[pid] = x
            elif kind == DEATH:
                del alive[pid]
        pts = [alive[k] for k in sorted(alive)]
        return PointConfiguration(np.array(pts, dtype=float).reshape(-1, self.initial.params.d),
                                  self.initial.params)


@dataclass(frozen=True)
class BoundarySamplerConfig:
    """How boundary configurations are drawn in the localized dynamics.

    ``mode="mcmc"`` runs the dynamics on the annulus of width ``width``
    (default ``4R``) around the window, with the window frozen and nothing
    beyond the annulus, for ``burn_in`` time units.  ``mode="exact"`` uses
    rejection over the full complement of the window in the enclosing torus.
    """

    mode: str = "mcmc"
    width: float | None = None
    burn_in: float = 20.0
    max_attempts: int = 10_000

    def __post_init__(self):
        if self.mode not in ("mcmc", "exact"):
            raise ConfigurationError(f"unknown boundary sampler mode {self.mode!r}")
        if self.burn_in < 0:
            raise ConfigurationError("boundary sampler burn_in must be >= 0")


class _Engine:
    """Mutable state and event loop for one run."""

    def __init__(self, params: ModelParams, region: Box, stream: EventStream,
                 frozen: np.ndarray | None = None, hole: Box | None = None,
                 record: bool = True):
        self.params = params
        self.d = params.d
        self.R = params.R
        self.torus = params.domain.is_torus
        self.L = params.domain.L if self.torus else 0.0
        self.free = params.interaction == "free"
        self.region = region
        self.hole = hole
        self.stream = stream
        self.record = record
        self.side = params.cell_side
        self.ncell = params.cells_per_axis
        self.pos: dict[int, tuple] = {}
        self.grid: dict[tuple, list[int]] = {}
        self.frozen: dict[tuple, list[tuple]] = {}
        if frozen is not None:
            for p in np.asarray(frozen, dtype=float).reshape(-1, self.d).tolist():
                self.frozen.setdefault(self._cell(p), []).append(tuple(p))
        self.events: list[tuple] = []
        self.next_id = 0
        self.n_prop = 0
        self.n_acc = 0
        self.n_death = 0
        self.warnings: list[str] = []
        self._build_cells()

    # -- proposal cells -----------------------------------------------------

    def _build_cells(self):
        dom = self.params.domain
        whole = self.torus and self.region == dom.box and self.hole is None
        cells = []
        if whole:
            n, s = self.ncell, self.side
            for idx in itertools.product(range(n), repeat=self.d):
                cells.append((idx, tuple(i * s for i in idx), (s,) * self.d))
            self.clip = False
        else:
            s = 2.0 * self.R
            ranges = [range(math.floor(a / s), math.ceil(b / s)) for a, b in zip(self.region.lo, self.region.hi)]
            for idx in itertools.product(*ranges):
                cells.append((idx, tuple(i * s for i in idx), (s,) * self.d))
            self.clip = True
        self.cells = cells

    # -- state ----------------------------------------------------------------

    def _cell(self, x):
        s = self.side
        if self.ncell is None:
            return tuple(math.floor(v / s) for v in x)
        n = self.ncell
        return tuple(math.floor(v / s) % n for v in x)

    def _add(self, x: tuple) -> int:
        pid = self.next_id
        self.next_id += 1
        self.pos[pid] = x
        self.grid.setdefault(self._cell(x), []).append(pid)
        return pid

    def _remove(self, pid: int) -> tuple:
        x = self.pos.pop(pid)
        self.grid[self._cell(x)].remove(pid)
        return x

    def _near_cells(self, x):
        c = self._cell(x)
        if self.ncell is None:
            return [tuple(a + o for a, o in zip(c, off))
                    for off in itertools.product((-1, 0, 1), repeat=self.d)]
        n = self.ncell
        return {tuple((a + o) % n for a, o in zip(c, off))
                for off in itertools.product((-1, 0, 1), repeat=self.d)}

    def displacements(self, x, extra: Sequence[tuple] = ()) -> list:
        """Offsets from ``x`` to current, frozen and ``extra`` points nearby."""
        out = []
        L = self.L
        cells = self._near_cells(x)
        pts = []
        for c in cells:
            for pid in self.grid.get(c, ()):
                pts.append(self.pos[pid])
            pts.extend(self.frozen.get(c, ()))
        pts.extend(extra)
        if self.d == 1:
            x0 = x[0]
            for p in pts:
                v = p[0] - x0
                if L:
                    v -= L * round(v / L)
                out.append(v)
            return out
        for p in pts:
            v = [a - b for a, b in zip(p, x)]
            if L:
                v = [w - L * round(w / L) for w in v]
            out.append(v)
        return out

    def rate(self, x, extra: Sequence[tuple] = ()) -> float:
        if self.free:
            return 1.0
        disp = self.displacements(x, extra)
        if self.d == 1:
            h = geometry.added_length(disp, self.R)
        else:
            h = geometry.added_area(np.asarray(disp, dtype=float).reshape(-1, 2), self.R)
        return math.exp(-h)

    def accept(self, x, u, cell, counter) -> bool:
        return u <= self.rate(x)

    def state(self) -> PointConfiguration:
        pts = [self.pos[k] for k in sorted(self.pos)]
        return PointConfiguration(np.array(pts, dtype=float).reshape(-1, self.d), self.params)

    # -- event loop -------------------------------------------------------------

    def run(self, initial: list[tuple], keys: list[int], T: float, snapshots: Sequence[float]):
        heap: list = []
        push, pop = heapq.heappush, heapq.heappop
        seq = itertools.count()
        stream = self.stream
        for x, k in zip(initial, keys):
            pid = self._add(tuple(x))
            life = stream.initial_lifetime(k)
            if life <= T:
                push(heap, (life, next(seq), _DEATH, pid))
        d = self.d
        width = d + 3
        # per cell: [key, origin, side, volume, counter, rows]
        state = []
        for ci, (key, origin, side) in enumerate(self.cells):
            rec = [key, origin, side, math.prod(side), 0, stream.uniforms(PROPOSAL, key, 0, width)]
            state.append(rec)
            t0 = -math.log1p(-rec[5][0][d + 2]) / rec[3]
            if t0 <= T:
                push(heap, (t0, next(seq), _PROPOSAL, ci))
        snaps = sorted(float(s) for s in snapshots if 0.0 <= s <= T)
        out_snaps = []
        si = 0
        region, hole, clip = self.region, self.hole, self.clip
        record, events = self.record, self.events
        L = self.L
        while heap:
            t, _, kind, ref = pop(heap)
            while si < len(snaps) and snaps[si] < t:
                out_snaps.append(self.state())
                si += 1
            if kind == _DEATH:
                x = self._remove(ref)
                self.n_death += 1
                if record:
                    events.append((t, DEATH, x, ref))
                continue
            rec = state[ref]
            counter = rec[4]
            row = rec[5][counter % BLOCK]
            origin, side = rec[1], rec[2]
            x = tuple(o + w * a for o, w, a in zip(origin, side, row[:d]))
            inside = True
            if clip:
                inside = region.contains(x) and (hole is None or not hole.contains(x))
                if inside and L:
                    x = tuple(v % L for v in x)
            if inside:
                self.n_prop += 1
                if self.accept(x, row[d], rec[0], counter):
                    self.n_acc += 1
                    pid = self._add(x)
                    if record:
                        events.append((t, BIRTH_ACCEPT, x, pid))
                    death = t - math.log1p(-row[d + 1])
                    if death <= T:
                        push(heap, (death, next(seq), _DEATH, pid))
                elif record:
                    events.append((t, BIRTH_PROPOSAL, x, -1))
            counter += 1
            rec[4] = counter
            if counter % BLOCK == 0:
                rec[5] = stream.uniforms(PROPOSAL, rec[0], counter // BLOCK, width)
            t_next = t - math.log1p(-rec[5][counter % BLOCK][d + 2]) / rec[3]
            if t_next <= T:
                push(heap, (t_next, next(seq), _PROPOSAL, ref))
        while si < len(snaps):
            out_snaps.append(self.state())
            si += 1
        return snaps, out_snaps


def _as_tuples(conf: PointConfiguration) -> list[tuple]:
    return [tuple(p) for p in conf.points.tolist()]


def _snapshot_grid(T: float, snapshots) -> list[float]:
    if snapshots is None:
        return [T]
    if isinstance(snapshots, (int, float)):
        # uniform grid with the given step
        n = int(math.floor(T / snapshots + 1e-9))
        return [i * snapshots for i in range(n + 1)] + ([T] if n * snapshots < T - 1e-12 else [])
    return sorted(float(s) for s in snapshots)


def _finish(engine: _Engine, initial, T, grid, times, snaps) -> Trajectory:
    return Trajectory(
        times=times,
        snapshots=snaps,
        events=engine.events,
        terminal=engine.state(),
        initial=initial,
        stats={"proposals": engine.n_prop, "accepted": engine.n_acc, "deaths": engine.n_death,
               "T": T},
        warnings=engine.warnings,
    )


def simulate(
    initial: PointConfiguration,
    spec: GibbsSpec,
    T: float,
    stream: EventStream,
    snapshots=None,
    record_events: bool = True,
    _keys: list[int] | None = None,
) -> Trajectory:
    """Exact realisation of the dynamics on ``spec.region`` up to time ``T``.

    Parameters
    ----------
    initial : PointConfiguration
        Starting configuration, inside the window.
    spec : GibbsSpec
        Window, domain and frozen boundary; births see the boundary points.
    T : float
        Time horizon, ``T >= 0``.
    stream : EventStream
        Driving noise.
    snapshots : sequence of float, float or None
        Explicit snapshot times, a grid step, or ``None`` for ``[T]``.
    record_events : bool
        Keep the full event log (needed for replay and coupling).

    Returns
    -------
    Trajectory
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    region = spec.region
    if len(initial) and not region.contains_many(initial.points).all():
        raise ConfigurationError("initial configuration has points outside the window")
    grid = _snapshot_grid(T, snapshots)
    frozen = spec.boundary.points if spec.boundary is not None else None
    eng = _Engine(spec.params, region, stream, frozen=frozen, record=record_events)
    keys = list(range(len(initial))) if _keys is None else _keys
    times, snaps = eng.run(_as_tuples(initial), keys, T, grid)
    return _finish(eng, initial, T, grid, times, snaps)


# -- localized dynamics --------------------------------------------------------


def _complement_draw(eta: np.ndarray, window: Box, params: ModelParams, rng: np.random.Generator,
                     max_attempts: int):
    """Exact draw of the torus configuration outside ``window`` given ``eta`` inside."""
    L, d = params.domain.L, params.d
    vol = L**d - window.volume
    base = _union_volume(eta, params) if len(eta) else 0.0
    for attempt in range(1, max_attempts + 1):
        n = rng.poisson(vol)
        if d == 1:
            z = np.mod(window.hi[0] + vol * rng.random((n, 1)), L)
        else:
            pts = []
            while len(pts) < n:
                cand = L * rng.random((2 * (n - len(pts)) + 4, d))
                cand = cand[~window.contains_many(cand)]
                pts.extend(cand.tolist())
            z = np.array(pts[:n], dtype=float).reshape(-1, d)
        dH = _union_volume(np.vstack([eta.reshape(-1, d), z]), params) - base if len(z) else 0.0
        if rng.random() < math.exp(-dH):
            return z, True
    return None, False


class _LocalEngine(_Engine):
    def __init__(self, params, window, stream, sampler: BoundarySamplerConfig, record):
        super().__init__(params, window, stream, record=record)
        self.sampler = sampler
        self.width = sampler.width if sampler.width is not None else 4.0 * params.R
        self.n_draws = 0
        self.n_fallback = 0

    def _interior(self, x) -> bool:
        # B_{2R}(x) inside the window: boundary configuration cannot matter
        r = 2.0 * self.R
        return all(a + r <= v <= b - r for a, v, b in zip(self.region.lo, x, self.region.hi))

    def accept(self, x, u, cell, counter) -> bool:
        if self.free or self._interior(x):
            return u <= self.rate(x)
        zeta = self.draw_boundary(cell, counter)
        return u <= self.rate(x, extra=zeta)

    def draw_boundary(self, cell, counter) -> list[tuple]:
        self.n_draws += 1
        eta = np.array([self.pos[k] for k in sorted(self.pos)], dtype=float).reshape(-1, self.d)
        if self.sampler.mode == "exact":
            rng = self.stream.rng(BOUNDARY, *cell, counter)
            z, ok = _complement_draw(eta, self.region, self.params, rng, self.sampler.max_attempts)
            if ok:
                return [tuple(p) for p in z.tolist()]
            self.n_fallback += 1
        return self._annulus_draw(eta, cell, counter)

    def _annulus_draw(self, eta, cell, counter) -> list[tuple]:
        params, win, W = self.params, self.region, self.width
        lo, hi = [], []
        for a, b in zip(win.lo, win.hi):
            w = W
            if self.torus and (b - a) + 2 * W > self.L:
                w = (self.L - (b - a)) / 2.0
            lo.append(a - w)
            hi.append(b + w)
        outer = Box(tuple(lo), tuple(hi))
        sub = _Engine(params, outer, self.stream.child(BOUNDARY, *cell, counter), frozen=eta,
                      hole=win, record=False)
        sub.run([], [], self.sampler.burn_in, [])
        return [sub.pos[k] for k in sorted(sub.pos)]


def simulate_localized(
    initial: PointConfiguration,
    Lambda: Box,
    nu_spec: GibbsSpec,
    T: float,
    stream: EventStream,
    boundary_sampler: BoundarySamplerConfig | None = None,
    snapshots=None,
    record_events: bool = True,
) -> Trajectory:
    """Dynamics on ``Lambda`` with the localized birth rate.

    At every birth proposal within ``2R`` of the window boundary a fresh
    outside configuration is drawn from (an approximation of) the Gibbs
    conditional given the current window configuration, and the proposal is
    accepted against the full rate.  Averaging over the draw gives the
    localized rate exactly when the draw is exact.
    """
    params = nu_spec.params
    if not params.domain.is_torus or nu_spec.window is not None:
        raise ConfigurationError("nu_spec must be the periodic Gibbs measure on a torus")
    if T < 0:
        raise ValueError("T must be >= 0")
    if not Lambda.inside(params.domain.box) or Lambda.volume >= params.domain.volume:
        raise ConfigurationError("Lambda must lie strictly inside the enclosing torus")
    if len(initial) and not Lambda.contains_many(initial.points).all():
        raise ConfigurationError("initial configuration has points outside Lambda")
    sampler = boundary_sampler or BoundarySamplerConfig()
    grid = _snapshot_grid(T, snapshots)
    eng = _LocalEngine(params, Lambda, stream, sampler, record_events)
    times, snaps = eng.run(_as_tuples(initial), list(range(len(initial))), T, grid)
    traj = _finish(eng, initial, T, grid, times, snaps)
    traj.stats.update(boundary_draws=eng.n_draws, boundary_mode=sampler.mode,
                      annulus_width=eng.width, boundary_burn_in=sampler.burn_in)
    if sampler.mode == "mcmc" and eng.n_draws:
        traj.warnings.append(
            f"boundary draws approximate: annulus width {eng.width}, burn-in {sampler.burn_in}"
        )
    if eng.n_fallback:
        traj.warnings.append(
            f"{eng.n_fallback} exact boundary draws exceeded {sampler.max_attempts} attempts; "
            "annulus MCMC used instead"
        )
    return traj


# -- coupling --------------------------------------------------------------------


@dataclass
class CouplingReport:
    """Disagreement of nested-region runs with the largest region, seen on ``window``.

    ``disagree[i]`` tells whether region ``i`` differs from the reference on
    the window at some time in ``[0, T]``; ``first_time[i]`` is the earliest
    such time.  ``monotone`` records whether disagreement of a larger region
    implied disagreement of every smaller one in this replica.
    """

    window: Box
    regions: list[Box]
    distances: list[float]
    disagree: list[bool]
    first_time: list[float | None]
    monotone: bool


def _window_events(traj: Trajectory, window: Box) -> list[tuple]:
    return [(t, k, x) for t, k, x, _ in traj.events
            if k != BIRTH_PROPOSAL and window.contains(x)]


def _first_difference(a: list[tuple], b: list[tuple]) -> float | None:
    for ea, eb in zip(a, b):
        if ea != eb:
            return min(ea[0], eb[0])
    if len(a) != len(b):
        return (a[len(b)] if len(a) > len(b) else b[len(a)])[0]
    return None


def couple(
    initial: PointConfiguration,
    Lambda: Box,
    regions: Sequence[Box],
    T: float,
    stream: EventStream,
) -> CouplingReport:
    """Run the dynamics on nested regions with shared noise and compare on ``Lambda``.

    Each region evolves with an empty outside.  The last (largest) region is
    the reference; initial points keep their identity across regions so they
    draw the same lifetimes.
    """
    regions = list(regions)
    if not regions:
        raise ValueError("need at least one region")
    if not Lambda.inside(regions[0]):
        raise ConfigurationError("Lambda must lie inside the smallest region")
    for a, b in zip(regions, regions[1:]):
        if not a.inside(b):
            raise ConfigurationError("regions not nested")
    params = initial.params
    trajs = []
    for reg in regions:
        mask = reg.contains_many(initial.points)
        keys = np.nonzero(mask)[0].tolist()
        sub = PointConfiguration(initial.points[mask], params)
        trajs.append(simulate(sub, GibbsSpec(params, window=reg), T, stream, snapshots=[],
                              _keys=keys))
    ref = _window_events(trajs[-1], Lambda)
    first = [_first_difference(_window_events(tr, Lambda), ref) for tr in trajs]
    disagree = [f is not None for f in first]
    monotone = all(not (disagree[j] and not disagree[i])
                   for i in range(len(regions)) for j in range(i + 1, len(regions)))
    dists = [min(min(a - c, e - b) for a, b, c, e in zip(Lambda.lo, Lambda.hi, reg.lo, reg.hi))
             for reg in regions]
    return CouplingReport(Lambda, regions, dists, disagree, first, monotone)


# -- serialisation ------------------------------------------------------------------


def event_rows(traj: Trajectory, region_id: int = 0) -> list[list]:
    """Event log rows ``time, kind, x..., point_id, region_id``."""
    return [[repr(t), k, *(repr(v) for v in x), pid, region_id] for t, k, x, pid in traj.events]


def write_event_log(trajs: Sequence[Trajectory], path, d: int) -> None:
    """CSV event log; ``trajs[i]`` is written with ``region_id = i``."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "kind", *(f"x{i}" for i in range(d)), "point_id", "region_id"])
        for rid, tr in enumerate(trajs):
            w.writerows(event_rows(tr, rid))


def write_snapshots(traj: Trajectory, directory) -> list[dict]:
    """One text file per snapshot; returns the index entries for a manifest."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for i, (t, conf) in enumerate(zip(traj.times, traj.snapshots)):
        name = f"snapshot_{i:05d}.txt"
        (out / name).write_text(conf.to_text())
        index.append({"index": i, "time": t, "file": name, "n_points": len(conf)})
    return index
