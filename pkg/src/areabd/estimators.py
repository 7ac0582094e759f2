"""Monte Carlo statistics on samples of point configurations.

All local statistics are evaluated from displacement matrices: row ``i``
holds the offsets from query location ``i`` to every point, with the minimum
image convention on tori.  A point excluded from its own neighbourhood gets
an infinite offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import geometry
from .core import Box, ConfigurationError, ModelParams, PointConfiguration

__all__ = [
    "EstimateWithCI",
    "TestFunction",
    "TestFunctionFamily",
    "DVBound",
    "PoissonDensity",
    "gnz_residual",
    "summary_stats",
    "dv_entropy_lower_bound",
    "fisher_mc",
    "window_features",
    "birth_rates",
    "quadrature_grid",
]

MIN_SAMPLES = 30


@dataclass(frozen=True)
class EstimateWithCI:
    estimate: float
    stderr: float
    n: int

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("standard error must be >= 0")

    @property
    def t(self) -> float:
        """Studentised distance from zero."""
        if self.stderr == 0:
            return 0.0 if self.estimate == 0 else math.copysign(math.inf, self.estimate)
        return self.estimate / self.stderr

    def contains(self, value: float, k: float = 3.0) -> bool:
        return abs(self.estimate - value) <= k * self.stderr

    @classmethod
    def from_values(cls, values) -> "EstimateWithCI":
        v = np.asarray(values, dtype=float)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        return cls(math.fsum(v.tolist()) / len(v), se, len(v))


# -- displacement helpers ------------------------------------------------------


def _displacements(queries: np.ndarray, pts: np.ndarray, params: ModelParams) -> np.ndarray:
    """Offsets ``pts[j] - queries[i]``, shape ``(m, n, d)``."""
    D = pts[None, :, :] - queries[:, None, :]
    if params.domain.is_torus:
        L = params.domain.L
        D = D - L * np.round(D / L)
    return D


def _self_excluded(pts: np.ndarray, params: ModelParams) -> np.ndarray:
    D = _displacements(pts, pts, params)
    idx = np.arange(len(pts))
    D[idx, idx, :] = np.inf
    return D


def _norms(D: np.ndarray) -> np.ndarray:
    return np.sqrt((D * D).sum(axis=-1)) if D.shape[-1] > 1 else np.abs(D[..., 0])


def birth_rates(D: np.ndarray, params: ModelParams) -> np.ndarray:
    """``b(x_i, eta)`` for every query row of the displacement array."""
    m = D.shape[0]
    if params.interaction == "free":
        return np.ones(m)
    R = params.R
    if params.d == 1:
        two_r = 2.0 * R
        v = D[..., 0]
        left = np.where(v < 0, v, -np.inf).max(axis=1, initial=-np.inf)
        right = np.where(v >= 0, v, np.inf).min(axis=1, initial=np.inf)
        cov = np.where(left > -two_r, two_r + left, 0.0) + np.where(right < two_r, two_r - right, 0.0)
        return np.exp(-np.maximum(two_r - cov, 0.0))
    out = np.empty(m)
    dist = _norms(D)
    for i in range(m):
        near = D[i][dist[i] < 2 * R]
        out[i] = math.exp(-geometry.added_area(near, R))
    return out


def quadrature_grid(box: Box, spacing: float) -> tuple[np.ndarray, float]:
    """Midpoint grid of ``box`` with per-axis spacing at most ``spacing``."""
    axes = []
    cell = 1.0
    for lo, hi in zip(box.lo, box.hi):
        n = max(1, math.ceil((hi - lo) / spacing - 1e-9))
        h = (hi - lo) / n
        axes.append(lo + (np.arange(n) + 0.5) * h)
        cell *= h
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh]), cell


# -- test functions -------------------------------------------------------------------


_KINDS = ("constant", "count", "covered", "nn", "empty")


@dataclass(frozen=True)
class TestFunction:
    """Bounded local statistic ``f(x, eta)`` evaluated from displacements.

    ``kind`` is one of ``constant``, ``count`` (points in ``B_r(x)``),
    ``covered`` (volume of ``B_r(x)`` covered by the ``R``-balls of eta),
    ``nn`` (nearest-neighbour distance capped at ``2R``) and ``empty``
    (indicator that ``B_r(x)`` has no point).
    """

    kind: str
    r: float = 0.0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown test function {self.kind!r}")
        if self.kind in ("count", "covered", "empty") and not self.r > 0:
            raise ConfigurationError(f"test function {self.kind!r} needs r > 0")

    @property
    def name(self) -> str:
        return self.kind if self.kind in ("constant", "nn") else f"{self.kind}({self.r:g})"

    def range(self, params: ModelParams) -> float:
        """Distance beyond which points do not affect the value."""
        return {"constant": 0.0, "count": self.r, "empty": self.r, "nn": 2 * params.R,
                "covered": self.r + params.R}[self.kind]

    def __call__(self, D: np.ndarray, params: ModelParams) -> np.ndarray:
        m = D.shape[0]
        if self.kind == "constant":
            return np.ones(m)
        dist = _norms(D)
        if self.kind == "count":
            return (dist <= self.r).sum(axis=1).astype(float)
        if self.kind == "empty":
            return (~(dist <= self.r).any(axis=1)).astype(float)
        if self.kind == "nn":
            return np.minimum(dist.min(axis=1, initial=np.inf), 2 * params.R)
        return self._covered(D, dist, params)

    def _covered(self, D, dist, params):
        R, r = params.R, self.r
        out = np.empty(D.shape[0])
        for i in range(D.shape[0]):
            near = D[i][dist[i] < r + R]
            if params.d == 1:
                out[i] = geometry.covered_length_in(-r, r, near[:, 0], R)
            else:
                out[i] = _covered_disk(near, r, R)
        return out


_DISK_CACHE: dict[tuple, tuple[np.ndarray, float]] = {}


def _covered_disk(centres: np.ndarray, r: float, R: float) -> float:
    """Area of ``B_r(0)`` covered by radius-``R`` disks, midpoint rule at spacing R/16."""
    if len(centres) == 0:
        return 0.0
    key = (r, R)
    if key not in _DISK_CACHE:
        g, cell = quadrature_grid(Box((-r, -r), (r, r)), R / 16)
        _DISK_CACHE[key] = (g[(g * g).sum(axis=1) <= r * r], cell)
    g, cell = _DISK_CACHE[key]
    diff = g[:, None, :] - centres[None, :, :]
    hit = ((diff * diff).sum(axis=-1) <= R * R).any(axis=1)
    return float(hit.sum() * cell)


@dataclass(frozen=True)
class TestFunctionFamily:
    members: tuple[TestFunction, ...]

    __test__ = False

    @classmethod
    def standard(cls, params: ModelParams, r: float | None = None) -> "TestFunctionFamily":
        """The five-member family with ball radius ``r`` (default ``R``)."""
        r = params.R if r is None else r
        return cls((TestFunction("constant"), TestFunction("count", r), TestFunction("covered", r),
                    TestFunction("nn"), TestFunction("empty", r)))

    @classmethod
    def from_names(cls, names: Sequence[str], params: ModelParams) -> "TestFunctionFamily":
        """Build from names like ``constant``, ``count``, ``count(0.3)``."""
        out = []
        for nm in names:
            nm = nm.strip()
            if "(" in nm:
                kind, arg = nm.rstrip(")").split("(", 1)
                out.append(TestFunction(kind, float(arg)))
            else:
                out.append(TestFunction(nm, 0.0 if nm in ("constant", "nn") else params.R))
        return cls(tuple(out))

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.members]


# -- GNZ residuals -----------------------------------------------------------------


def _bootstrap_se(values: np.ndarray, n_boot: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    return float(values[idx].mean(axis=1).std(ddof=1))


def _check_samples(samples, params: ModelParams | None = None):
    if len(samples) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    if params is not None:
        for s in samples[:1]:
            if s.params.domain != params.domain:
                raise ConfigurationError("samples live in a different domain")


def gnz_residual(
    samples: Sequence[PointConfiguration],
    f: TestFunction,
    B: Box,
    params: ModelParams,
    window: Box | None = None,
    spacing: float | None = None,
    n_boot: int = 200,
    seed: int = 0,
) -> EstimateWithCI:
    """Mean of ``sum_{x in eta, x in B} f(x, eta - x) - int_B b(x, eta) f(x, eta) dx``.

    Parameters
    ----------
    samples : sequence of PointConfiguration
        At least 30 configurations observed on ``window``.
    f : TestFunction
    B : Box
        Test region; must keep a ``2R`` margin from the edge of ``window``.
    params : ModelParams
        Model whose birth rate is tested.
    window : Box, optional
        Observation window, default the whole domain (no margin needed on a torus).
    spacing : float, optional
        Quadrature spacing, at most ``R/8`` (the default).
    n_boot : int
        Bootstrap resamples for the standard error; 0 uses the plain formula.
    """
    _check_samples(samples, params)
    spacing = params.R / 8 if spacing is None else spacing
    if spacing > params.R / 8 + 1e-15:
        raise ConfigurationError("quadrature spacing must be <= R/8")
    whole = window is None and params.domain.is_torus
    window = params.domain.box if window is None else window
    if not whole and not B.inside(window.erode(params.range)):
        raise ConfigurationError("B must keep a 2R margin from the sampled window boundary")
    grid, cell = quadrature_grid(B, spacing)
    vals = np.empty(len(samples))
    for i, s in enumerate(samples):
        pts = s.points
        inB = B.contains_many(pts) if len(pts) else np.zeros(0, dtype=bool)
        total = 0.0
        if inB.any():
            D = _self_excluded(pts, params)[inB]
            total = math.fsum(f(D, params).tolist())
        Dg = _displacements(grid, pts, params)
        integral = math.fsum((birth_rates(Dg, params) * f(Dg, params)).tolist()) * cell
        vals[i] = total - integral
    est = EstimateWithCI.from_values(vals)
    if n_boot:
        est = EstimateWithCI(est.estimate, _bootstrap_se(vals, n_boot, seed), est.n)
    return est


# -- summary statistics -------------------------------------------------------------


def _covered_fraction(pts: np.ndarray, box: Box, params: ModelParams) -> float:
    R = params.R
    if params.d == 1:
        xs = pts[:, 0]
        if params.domain.is_torus:
            L = params.domain.L
            xs = np.concatenate([xs - L, xs, xs + L])
        return geometry.covered_length_in(box.lo[0], box.hi[0], xs, R) / box.volume
    grid, _ = quadrature_grid(box, R / 8)
    if len(pts) == 0:
        return 0.0
    covered = np.zeros(len(grid), dtype=bool)
    D = _displacements(grid, pts, params)
    covered = ((D * D).sum(axis=-1) <= R * R).any(axis=1)
    return float(covered.mean())


def _ratio_ci(A: np.ndarray, N: np.ndarray, scale: float) -> EstimateWithCI:
    """``mean(A) / (scale * mean(N)^2)`` with a delta-method standard error."""
    n = len(A)
    a, b = A.mean(), N.mean()
    if b == 0:
        return EstimateWithCI(math.nan, math.inf, n)
    g = a / (scale * b * b)
    if a == 0:
        return EstimateWithCI(0.0, 0.0, n)
    cov = np.cov(np.vstack([A, N]), ddof=1)
    rel = cov[0, 0] / a**2 + 4 * cov[1, 1] / b**2 - 4 * cov[0, 1] / (a * b)
    return EstimateWithCI(float(g), float(abs(g) * math.sqrt(max(rel, 0.0) / n)), n)


def summary_stats(
    samples: Sequence[PointConfiguration], params: ModelParams, window: Box | None = None
) -> dict[str, EstimateWithCI]:
    """Intensity, covered fraction and pair correlation at ``R/2, R, 2R``.

    Edge effects are removed by eroding the observation window by ``2R``;
    the pair correlation uses rings ``(r - R/4, r]`` around points of the
    eroded window and a ratio estimator.  On a whole torus no erosion is
    needed.

    Returns a dict with keys ``intensity``, ``covered_fraction``, ``g(R/2)``,
    ``g(R)`` and ``g(2R)``.
    """
    _check_samples(samples, params)
    R = params.R
    whole = window is None and params.domain.is_torus
    window = params.domain.box if window is None else window
    if min(window.sides) < 6 * R:
        raise ConfigurationError(
            f"window side {min(window.sides)} is smaller than the 6R = {6 * R} minimum"
        )
    inner = window if whole else window.erode(params.range)
    V = inner.volume
    delta = R / 4
    radii = {"g(R/2)": R / 2, "g(R)": R, "g(2R)": 2 * R}
    counts = np.empty(len(samples))
    cover = np.empty(len(samples))
    pairs = {k: np.empty(len(samples)) for k in radii}
    for i, s in enumerate(samples):
        pts = s.points
        inside = inner.contains_many(pts) if len(pts) else np.zeros(0, dtype=bool)
        counts[i] = inside.sum()
        cover[i] = _covered_fraction(pts, inner, params)
        dist = _norms(_self_excluded(pts, params)[inside]) if inside.any() else np.zeros((0, 0))
        for k, r in radii.items():
            pairs[k][i] = ((dist > r - delta) & (dist <= r)).sum()
    out = {
        "intensity": EstimateWithCI.from_values(counts / V),
        "covered_fraction": EstimateWithCI.from_values(cover),
    }
    for k, r in radii.items():
        ring = 2 * delta if params.d == 1 else math.pi * (r * r - (r - delta) ** 2)
        # E[pairs] = lambda^2 |V| ring g  and  E[N] = lambda |V|
        out[k] = _ratio_ci(pairs[k], counts, ring / V)
    return out


# -- Donsker-Varadhan bound -----------------------------------------------------------


def window_features(
    samples: Sequence[PointConfiguration], family: TestFunctionFamily, window: Box,
    params: ModelParams,
) -> np.ndarray:
    """Matrix of window statistics ``phi_f(eta) = sum_{x in eta_window} f(x, eta_window - x)``."""
    out = np.zeros((len(samples), len(family)))
    for i, s in enumerate(samples):
        pts = s.points
        if len(pts) == 0:
            continue
        pts = pts[window.contains_many(pts)]
        if len(pts) == 0:
            continue
        D = _self_excluded(pts, params)
        for j, f in enumerate(family):
            out[i, j] = math.fsum(f(D, params).tolist())
    return out


@dataclass
class DVBound:
    """Donsker-Varadhan lower bound with the optimizer record."""

    estimate: float
    stderr: float
    n: int
    theta: np.ndarray
    converged: bool
    trace: list[dict] = field(default_factory=list)

    @property
    def ci(self) -> EstimateWithCI:
        return EstimateWithCI(self.estimate, self.stderr, self.n)


def _dv_value(theta, Fm, Fn):
    a = Fm @ theta
    b = Fn @ theta
    return float(a.mean() - (logsumexp(b) - math.log(len(b))))


def dv_entropy_lower_bound(
    samples_mu: Sequence[PointConfiguration],
    samples_nu: Sequence[PointConfiguration],
    family: TestFunctionFamily,
    window: Box,
    params: ModelParams,
    seed: int = 0,
    max_abs_theta: float = 10.0,
    maxiter: int = 500,
    restarts: int = 3,
    warm_start: Sequence[float] | None = None,
) -> DVBound:
    """``sup_theta mu[F_theta] - log nu[exp F_theta]`` over ``F_theta = theta . phi``.

    The supremum is searched by Nelder-Mead inside ``|theta_j| <= 10`` from
    ``theta = 0``, ``warm_start`` if given, and ``restarts - 1`` random
    starts.  The standard error is the delta-method error at the optimum.
    """
    if len(samples_mu) < 500 or len(samples_nu) < 500:
        raise ValueError("need at least 500 samples from each measure")
    if not 1 <= len(family) <= 8:
        raise ConfigurationError("feature family must have 1 to 8 members")
    Fm = window_features(samples_mu, family, window, params)
    Fn = window_features(samples_nu, family, window, params)
    # centring and scaling leave the bound unchanged (affine in F) but help the simplex
    shift = Fn.mean(axis=0)
    scale = np.where(Fn.std(axis=0) > 0, Fn.std(axis=0), 1.0)
    Fm_s, Fn_s = (Fm - shift) / scale, (Fn - shift) / scale
    k = len(family)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(k)]
    if warm_start is not None:
        ws = np.zeros(k)
        ws[: len(warm_start)] = warm_start
        starts.append(ws * scale)
    starts += [rng.uniform(-1, 1, k) for _ in range(max(restarts - 1, 0))]
    bounds = [(-max_abs_theta * s, max_abs_theta * s) for s in scale]
    best, best_val, converged, trace = np.zeros(k), 0.0, False, []
    for x0 in starts:
        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(lambda th: -_dv_value(th, Fm_s, Fn_s), x0, method="Nelder-Mead",
                       bounds=bounds, options={"maxiter": maxiter, "xatol": 1e-8, "fatol": 1e-12})
        val = -float(res.fun)
        trace.append({"start": (x0 / scale).tolist(), "value": val, "nit": int(res.nit),
                      "success": bool(res.success)})
        if val > best_val:
            best, best_val = res.x, val
        converged |= bool(res.success)
    a = Fm_s @ best
    e = np.exp(Fn_s @ best - (Fn_s @ best).max())
    var = a.var(ddof=1) / len(a) + e.var(ddof=1) / (len(e) * e.mean() ** 2)
    return DVBound(best_val, float(math.sqrt(var)), min(len(Fm), len(Fn)), best / scale,
                   converged, trace)


# -- Fisher information by Monte Carlo -----------------------------------------------------


@dataclass(frozen=True)
class PoissonDensity:
    """Starting law ``Poisson(lam)``: ``D_x log(dmu/dnu)(eta) = log lam + h(x, eta)``."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError("Poisson intensity must be > 0")


def fisher_mc(
    samples_mu: Sequence[PointConfiguration],
    density_model,
    window: Box,
    params: ModelParams,
    spacing: float | None = None,
    sites: np.ndarray | None = None,
) -> EstimateWithCI:
    """Fisher information of ``mu`` w.r.t. the Gibbs measure on ``window``.

    After the GNZ and Mecke identities the information becomes
    ``E_mu int_window (lam - b(x, eta)) (log lam + h(x, eta)) dx``, a
    nonnegative integrand.  The result is divided by ``|window|``.  If
    ``sites`` is given, the integral is replaced by a sum over the vacant
    sites and the result is not normalised; ``lam`` is then the odds
    ``p / (1 - p)`` of the per-site occupation.
    """
    if not isinstance(density_model, PoissonDensity):
        raise ConfigurationError(f"unknown density model {density_model!r}")
    _check_samples(samples_mu, params)
    lam = density_model.lam
    if sites is None:
        spacing = params.R / 8 if spacing is None else spacing
        grid, cell = quadrature_grid(window, spacing)
        norm = cell / window.volume
    else:
        grid = np.asarray(sites, dtype=float).reshape(-1, params.d)
        norm = 1.0
    vals = np.empty(len(samples_mu))
    for i, s in enumerate(samples_mu):
        pts = s.points
        if len(pts):
            pts = pts[window.contains_many(pts)]
        q = grid
        if sites is not None and len(pts):
            vacant = ~(_norms(_displacements(grid, pts, params)) == 0).any(axis=1)
            q = grid[vacant]
        b = birth_rates(_displacements(q, pts, params), params)
        h = -np.log(b)
        vals[i] = math.fsum(((lam - b) * (math.log(lam) + h)).tolist()) * norm
    return EstimateWithCI.from_values(vals)
