"""Exact birth-and-death chain on a finite set of candidate sites.

States are bitmasks over ``k <= 16`` sites.  A vacant site ``x`` is filled at
rate ``exp(-h(x, eta))`` and an occupied site is emptied at rate 1, so the
stationary law is ``pi(eta) ~ exp(-H(eta))`` by detailed balance.  Laws are
dense vectors of length ``2**k``; transient laws come from uniformization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.stats import poisson

from .core import ConfigurationError, ModelParams, PointConfiguration, added_volume

__all__ = [
    "MAX_SITES",
    "MicroSystem",
    "DoubleLayerPair",
    "relative_entropy",
    "fisher",
    "double_layer",
    "xi",
    "entropy_path",
]

MAX_SITES = 16

# Poisson tail dropped per uniformization chunk, and the largest mean per chunk
_TAIL = 1e-16
_CHUNK_MEAN = 50.0


class MicroSystem:
    """Birth-and-death generator on ``2**k`` occupancy states.

    Parameters
    ----------
    sites : array_like, shape (k,) or (k, d)
        Candidate locations, distinct, inside the domain of ``params``.
    params : ModelParams
    """

    def __init__(self, sites, params: ModelParams):
        pts = np.asarray(sites, dtype=float).reshape(-1, params.d)
        if len(pts) > MAX_SITES:
            raise ConfigurationError(f"k exceeds {MAX_SITES} (got k={len(pts)})")
        conf = PointConfiguration(pts, params)
        self.params = params
        self.sites = conf.points
        self.k = k = len(pts)
        self.n_states = n = 1 << k
        states = np.arange(n)
        self.occupied = ((states[:, None] >> np.arange(k)) & 1).astype(bool)

        # h(x, eta) depends only on the sites within 2R of x; tabulate over
        # those and gather.
        self.h = np.zeros((k, n))
        for x in range(k):
            disp = [params.domain.displacement(self.sites[x], self.sites[y]) for y in range(k)]
            nb = [y for y in range(k)
                  if y != x and float(np.linalg.norm(disp[y])) <= params.range]
            table = np.empty(1 << len(nb))
            for sub in range(len(table)):
                chosen = [disp[nb[j]] for j in range(len(nb)) if sub >> j & 1]
                table[sub] = added_volume(np.reshape(chosen, (-1, params.d)), params)
            idx = np.zeros(n, dtype=np.int64)
            for j, y in enumerate(nb):
                idx |= ((states >> y) & 1) << j
            self.h[x] = table[idx]
        self.birth = np.exp(-self.h)

        # H by telescoping over the highest occupied site
        H = np.zeros(n)
        for s in range(1, n):
            top = s.bit_length() - 1
            rest = s ^ (1 << top)
            H[s] = H[rest] + self.h[top, rest]
        self.H = H

        rows, cols, vals = [], [], []
        for x in range(k):
            bit = 1 << x
            vac = states[(states & bit) == 0]
            occ = vac | bit
            rows += [vac, occ]
            cols += [occ, vac]
            vals += [self.birth[x, vac], np.ones(len(occ))]
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.exit_rate = np.asarray(off.sum(axis=1)).ravel()
        self.Q = (off - sparse.diags(self.exit_rate)).tocsr()
        self.uniform_rate = float(self.exit_rate.max()) if n > 1 else 0.0
        if self.uniform_rate > 0:
            P = sparse.identity(n, format="csr") + self.Q / self.uniform_rate
            self._PT = P.T.tocsr()
        else:
            self._PT = sparse.identity(n, format="csr")

    def __repr__(self):
        return f"MicroSystem(k={self.k}, R={self.params.R}, d={self.params.d})"

    def state_index(self, occupied_sites) -> int:
        return sum(1 << int(i) for i in occupied_sites)

    def stationary(self) -> np.ndarray:
        w = np.exp(-(self.H - self.H.min()))
        return w / w.sum()

    def log_partition(self) -> float:
        m = self.H.min()
        return float(-m + math.log(np.exp(-(self.H - m)).sum()))

    def delta(self, state: int = 0) -> np.ndarray:
        p = np.zeros(self.n_states)
        p[state] = 1.0
        return p

    def check(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n_states,):
            raise ValueError(f"distribution must have length {self.n_states}")
        if (p < 0).any():
            raise ValueError("distribution has negative entries")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("distribution does not sum to 1")
        return p

    def evolve(self, p0, t: float) -> np.ndarray:
        """``p0 exp(tQ)`` by uniformization, in chunks of bounded Poisson mean."""
        if t < 0:
            raise ValueError("t must be >= 0")
        p = np.asarray(p0, dtype=float).copy()
        if t == 0 or self.uniform_rate == 0:
            return p
        total = self.uniform_rate * t
        chunks = max(1, math.ceil(total / _CHUNK_MEAN))
        m = total / chunks
        nmax = int(poisson.isf(_TAIL, m)) + 10
        w = poisson.pmf(np.arange(nmax + 1), m)
        mass = p.sum(axis=0)
        for _ in range(chunks):
            term = p
            acc = w[0] * term
            for j in range(1, nmax + 1):
                term = self._PT @ term
                acc = acc + w[j] * term
            # exp(tQ) conserves mass; undo truncation and rounding drift
            p = acc * (mass / acc.sum(axis=0))
        return p


def _phi_sum(p: np.ndarray, q: np.ndarray) -> float:
    """``sum q phi(p/q)``, ``phi(r) = r log r - r + 1``, stable near ``r = 1``."""
    r = p / q
    e = r - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        # log1p only near r = 1; for tiny r, r - 1 rounds to -1
        log_r = np.where(np.abs(e) < 0.5, np.log1p(e), np.log(r))
        val = np.where(r > 0, r * log_r - e, 1.0)
    return math.fsum((q * val).tolist())


def relative_entropy(p, q, return_flag: bool = False):
    """Kullback-Leibler divergence ``sum p log(p/q)`` with ``0 log 0 = 0``.

    Returns ``inf`` when ``p`` charges a state that ``q`` does not; with
    ``return_flag=True`` the result is ``(value, absolutely_continuous)``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    bad = (q == 0) & (p > 0)
    if bad.any():
        return (math.inf, False) if return_flag else math.inf
    s = q > 0
    # for probability vectors sum p log(p/q) = sum q phi(p/q); normalizing
    # first keeps ulp-level mass drift out of small divergences
    val = _phi_sum(p[s] / p.sum(), q[s] / q.sum())
    val = max(val, 0.0)
    return (val, True) if return_flag else val


def _pairs(sys: MicroSystem, x: int):
    bit = 1 << x
    states = np.arange(sys.n_states)
    vac = states[(states & bit) == 0]
    return vac, vac | bit


def fisher(sys: MicroSystem, p) -> float:
    """Modified Fisher information of ``p`` relative to the stationary law.

    ``sum_x sum_{eta without x} pi(eta) b(x, eta) D_x f D_x log f`` with
    ``f = p / pi``; infinite when ``f`` vanishes on one end of a transition
    and not the other.
    """
    p = sys.check(p)
    pi = sys.stationary()
    f = p / pi
    total = []
    for x in range(sys.k):
        vac, occ = _pairs(sys, x)
        a, c = f[occ], f[vac]
        w = pi[vac] * sys.birth[x, vac]
        one_zero = (a == 0) != (c == 0)
        if one_zero.any():
            return math.inf
        both = (a > 0) & (c > 0)
        total.extend((w[both] * (a[both] - c[both]) * (np.log(a[both]) - np.log(c[both]))).tolist())
    return max(math.fsum(total), 0.0)


@dataclass(frozen=True)
class DoubleLayerPair:
    """Measures on the pairs ``(eta, eta xor x)``, indexed by the first state.

    ``star[eta]`` is ``p(eta) b(x, eta)`` if ``x`` is vacant in ``eta`` and
    ``p(eta)`` otherwise; ``circle[eta] = star[eta xor x]``.
    """

    site: int
    star: np.ndarray
    circle: np.ndarray


def _kl_measures(a: np.ndarray, b: np.ndarray) -> float:
    """Extended KL ``sum a log(a/b) - a + b`` between nonnegative measures."""
    if ((b == 0) & (a > 0)).any():
        return math.inf
    s = b > 0
    return max(_phi_sum(a[s], b[s]), 0.0)


def double_layer(sys: MicroSystem, p, x: int, method: str = "definition"):
    """Double-layer pair at site ``x`` and the divergence of star from circle.

    ``method="density"`` evaluates the divergence through the density of
    star w.r.t. circle, ``f(eta) / f(eta xor x)`` with ``f = p / pi``.
    """
    p = sys.check(p)
    if not 0 <= x < sys.k:
        raise IndexError(f"site {x} out of range")
    bit = 1 << x
    states = np.arange(sys.n_states)
    vacant = (states & bit) == 0
    star = np.where(vacant, p * sys.birth[x], p)
    circle = star[states ^ bit]
    pair = DoubleLayerPair(x, star, circle)
    if method == "definition":
        return pair, _kl_measures(star, circle)
    if method != "density":
        raise ValueError(f"unknown method {method!r}")
    f = p / sys.stationary()
    g = f[states ^ bit]
    if ((star > 0) & (g == 0)).any():
        return pair, math.inf
    s = star > 0
    return pair, max(math.fsum((star[s] * (np.log(f[s]) - np.log(g[s]))).tolist()), 0.0)


def xi(sys: MicroSystem, p) -> float:
    """Symmetrised divergence between ``b(x, .) p`` and the site-Palm analog ``p(. + x)``."""
    p = sys.check(p)
    total = 0.0
    for x in range(sys.k):
        vac, occ = _pairs(sys, x)
        A = sys.birth[x, vac] * p[vac]
        B = p[occ]
        total += _kl_measures(A, B) + _kl_measures(B, A)
    return total


def _time_scale(sys: MicroSystem, p: np.ndarray) -> float:
    """Shortest relaxation time ``min p / |pQ|`` of the log-density."""
    dp = np.abs(sys.Q.T @ p)
    s = (p > 0) & (dp > 0)
    return float(np.min(p[s] / dp[s])) if s.any() else math.inf


def entropy_path(sys: MicroSystem, p0, times, h: float = 1e-4) -> list[dict]:
    """Entropy, Fisher information, xi and the de Bruijn residual on a time grid.

    The residual is ``(dI/dt + fisher) / max(fisher, 1e-8)`` with ``dI/dt``
    from central differences (second-order one-sided at ``t < h``).  The step
    is ``h``, shrunk to 1% of the law's shortest relaxation time when that is
    smaller, so laws with nearly empty states are still resolved.  All three
    evaluations share a common base law so that their errors are correlated.
    """
    pi = sys.stationary()
    p0 = sys.check(p0)
    rows = []
    times = sorted(float(t) for t in times)
    base_t, base = 0.0, p0
    for t in times:
        pt = sys.evolve(base, t - base_t)
        step = min(h, 0.01 * _time_scale(sys, pt))
        It = relative_entropy(pt, pi)
        if t >= step:
            start = t - step
            base = sys.evolve(base, start - base_t)
            base_t = start
            pm, pp = base, sys.evolve(base, 2 * step)
            dI = (relative_entropy(pp, pi) - relative_entropy(pm, pi)) / (2 * step)
        else:
            p1, p2 = sys.evolve(pt, step), sys.evolve(pt, 2 * step)
            dI = (-3 * It + 4 * relative_entropy(p1, pi) - relative_entropy(p2, pi)) / (2 * step)
        J = fisher(sys, pt)
        res = (dI + J) / max(J, 1e-8) if math.isfinite(J) and math.isfinite(dI) else math.nan
        rows.append({"t": t, "entropy": It, "fisher": J, "xi": xi(sys, pt), "debruijn_residual": res})
    return rows
