import math

import numpy as np
import pytest
from scipy.linalg import expm

from areabd.core import ConfigurationError, DomainSpec, ModelParams
from areabd.micro import MicroSystem, double_layer, entropy_path, fisher, relative_entropy, xi


def line(R=0.5):
    return ModelParams(R, DomainSpec.make_box([-10.0], [10.0]))


@pytest.fixture
def two_site():
    return MicroSystem([0.0, 0.6], line())


def random_system(k, seed, d=1):
    rng = np.random.default_rng(seed)
    if d == 1:
        return MicroSystem(rng.uniform(0, 3, k), line(R=0.4))
    p = ModelParams(0.5, DomainSpec.make_box([0.0, 0.0], [3.0, 3.0]))
    return MicroSystem(rng.uniform(0, 2, (k, 2)), p)


def random_law(n, rng):
    w = rng.exponential(size=n)
    return w / w.sum()


def test_two_site_stationary(two_site):
    w = np.array([1.0, math.exp(-1), math.exp(-1), math.exp(-1.6)])
    assert w.sum() == pytest.approx(1.937655, abs=1e-6)
    pi = two_site.stationary()
    assert pi == pytest.approx(w / w.sum(), abs=1e-15)
    assert pi[0] == pytest.approx(0.516088, abs=1e-6)
    assert math.exp(two_site.log_partition()) == pytest.approx(w.sum(), abs=1e-12)


def test_two_site_relative_entropy_of_empty_state(two_site):
    pi = two_site.stationary()
    val = relative_entropy(two_site.delta(0), pi)
    assert val == pytest.approx(-math.log(pi[0]), abs=1e-14)
    # the tabulated value 0.661452 is 2.6e-5 below -log(0.516088)
    assert val == pytest.approx(0.661452, abs=5e-5)


def test_one_site_and_factorisation():
    p = line(R=0.5)
    one = MicroSystem([0.0], p)
    assert one.stationary()[0] == pytest.approx(1 / (1 + math.exp(-1.0)), abs=1e-15)
    far = MicroSystem([0.0, 3.0, 6.0], p)
    pi = far.stationary()
    q = 1 / (1 + math.exp(-1.0))
    for s in range(8):
        n = bin(s).count("1")
        assert pi[s] == pytest.approx(q ** (3 - n) * (1 - q) ** n, abs=1e-15)


@pytest.mark.parametrize("seed,d", [(0, 1), (1, 1), (2, 2)])
def test_generator_structure_and_detailed_balance(seed, d):
    sys = random_system(5, seed, d)
    Q = sys.Q.toarray()
    assert np.abs(Q.sum(axis=1)).max() < 1e-13
    off = Q - np.diag(np.diag(Q))
    assert off.min() >= 0
    pi = sys.stationary()
    flux = pi[:, None] * Q
    assert np.abs(flux - flux.T).max() < 1e-15


def test_rates_match_core_energies():
    from areabd.core import PointConfiguration, conditional_energy

    sys = random_system(6, 3, d=2)
    p = sys.params
    rng = np.random.default_rng(0)
    for s in rng.integers(0, 64, 10):
        eta = PointConfiguration(sys.sites[sys.occupied[s]], p)
        for x in range(6):
            if not sys.occupied[s, x]:
                assert sys.h[x, s] == pytest.approx(conditional_energy(sys.sites[x], eta, p), abs=1e-12)


def test_too_many_sites():
    with pytest.raises(ConfigurationError, match="k exceeds 16"):
        MicroSystem(np.linspace(0, 5, 17), line(R=0.1))


def test_evolve_basic(two_site):
    pi = two_site.stationary()
    p0 = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(two_site.evolve(p0, 0.0), p0)
    assert np.abs(two_site.evolve(pi, 7.0) - pi).max() < 1e-10
    late = two_site.evolve(two_site.delta(0), 200.0)
    # ergodic limit via the eigendecomposition of Q
    vals, vecs = np.linalg.eig(two_site.Q.toarray().T)
    v = np.real(vecs[:, np.argmin(np.abs(vals))])
    assert 0.5 * np.abs(late - v / v.sum()).sum() < 1e-8
    with pytest.raises(ValueError):
        two_site.evolve(p0, -1.0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_evolve_matches_matrix_exponential(k):
    sys = random_system(k, 10 + k)
    rng = np.random.default_rng(k)
    p0 = random_law(sys.n_states, rng)
    for t in (0.01, 0.7, 3.0, 40.0):
        ref = p0 @ expm(t * sys.Q.toarray())
        assert np.abs(sys.evolve(p0, t) - ref).max() < 1e-10


def test_relative_entropy_properties():
    rng = np.random.default_rng(0)
    p, q = random_law(8, rng), random_law(8, rng)
    assert relative_entropy(p, p) == 0.0
    assert relative_entropy(p, q) > 0
    q[3] = 0.0
    q /= q.sum()
    val, ok = relative_entropy(p, q, return_flag=True)
    assert val == math.inf and not ok


def test_fisher_and_xi_vanish_at_stationarity():
    for sys in (random_system(4, 0), random_system(8, 1), random_system(4, 2, d=2)):
        pi = sys.stationary()
        assert fisher(sys, pi) < 1e-12
        assert xi(sys, pi) < 1e-12
        for x in range(sys.k):
            assert double_layer(sys, pi, x)[1] < 1e-12


def test_fisher_positive_off_stationarity():
    sys = random_system(8, 4)
    pi = sys.stationary()
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.standard_normal(sys.n_states)
        p = pi * (1 + 1e-3 * (w - pi @ w))
        p /= p.sum()
        assert fisher(sys, p) > 0 and xi(sys, p) > 0


def test_xi_is_symmetrised_fisher():
    sys = random_system(6, 5)
    p = random_law(sys.n_states, np.random.default_rng(2))
    assert xi(sys, p) == pytest.approx(fisher(sys, p), rel=1e-12)


def test_double_layer_sum_and_density_lemma():
    sys = random_system(6, 6, d=2)
    p = random_law(sys.n_states, np.random.default_rng(3))
    kls = []
    for x in range(sys.k):
        pair, kl = double_layer(sys, p, x)
        assert pair.star.sum() == pytest.approx(pair.circle.sum(), rel=1e-14)
        assert np.array_equal(pair.star > 0, pair.circle > 0)
        _, kl2 = double_layer(sys, p, x, method="density")
        assert kl == pytest.approx(kl2, abs=1e-12)
        kls.append(kl)
    assert math.fsum(kls) == pytest.approx(fisher(sys, p), abs=1e-10)


def test_degenerate_start_two_site(two_site):
    # delta at the empty state: no mass at occupied states, so every
    # dissipation functional is infinite at t=0 and finite immediately after
    p0 = two_site.delta(0)
    assert fisher(two_site, p0) == math.inf
    pair, kl = double_layer(two_site, p0, 0)
    assert kl == math.inf and double_layer(two_site, p0, 0, method="density")[1] == math.inf
    values = [xi(two_site, two_site.evolve(p0, t)) for t in (0, 1, 2, 4)]
    assert values[0] == math.inf
    assert all(v > 0 for v in values)
    assert all(a > b for a, b in zip(values, values[1:]))
    p1 = two_site.evolve(p0, 0.5)
    _, a = double_layer(two_site, p1, 0)
    _, b = double_layer(two_site, p1, 0, method="density")
    assert a == pytest.approx(b, abs=1e-12)


def test_debruijn_from_empty_state(two_site):
    rows = entropy_path(two_site, two_site.delta(0), [0.0, 0.25, 1.0, 3.0])
    assert rows[0]["entropy"] == pytest.approx(0.6614787, abs=1e-6)
    assert math.isnan(rows[0]["debruijn_residual"])
    for r in rows[1:]:
        assert abs(r["debruijn_residual"]) <= 1e-5


def test_debruijn_full_support_start_includes_t0():
    sys = random_system(5, 7)
    p0 = random_law(sys.n_states, np.random.default_rng(4))
    for r in entropy_path(sys, p0, [0.0, 0.5, 2.0]):
        assert abs(r["debruijn_residual"]) <= 1e-5


def test_entropy_nonincreasing():
    sys = random_system(8, 8)
    pi = sys.stationary()
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = random_law(sys.n_states, rng)
        prev = relative_entropy(p, pi)
        for _ in range(30):
            p = sys.evolve(p, 0.1)
            cur = relative_entropy(p, pi)
            assert cur <= prev + 1e-9
            prev = cur


def test_relative_entropy_tiny_ratios():
    q = np.array([0.5, 0.5])
    p = np.array([1e-20, 1 - 1e-20])
    assert relative_entropy(p, q) == pytest.approx(math.log(2), rel=1e-12)
