import math

import numpy as np
import pytest

from areabd.core import Box, ConfigurationError, DomainSpec, ModelParams, PointConfiguration
from areabd.gibbs import (
    GibbsSpec,
    RejectionLimitError,
    log_partition_estimate,
    rejection_samples,
    sample_mcmc,
    sample_rejection,
)
from oracles import log_partition_interval, partition_short_interval


def line(R=0.25, lo=-5.0, hi=5.0, interaction="area"):
    return ModelParams(R, DomainSpec.make_box([lo], [hi]), interaction=interaction)


def test_short_interval_oracles_agree():
    # closed form vs truncated iterated integrals on the same geometry
    assert math.log(partition_short_interval(1.0, 0.5)) == pytest.approx(
        log_partition_interval(12), abs=1e-9
    )
    assert log_partition_interval(6) == pytest.approx(-0.56060, abs=1e-5)


def test_empty_probability_small_window():
    p = line()
    spec = GibbsSpec(p, window=Box((0.0,), (0.1,)))
    p_empty = math.exp(-0.1) / partition_short_interval(0.1, 0.25)
    n = 100_000
    samples, _ = rejection_samples(spec, n, seed=1)
    freq = sum(len(s) == 0 for s in samples) / n
    assert abs(freq - p_empty) < 3 * math.sqrt(p_empty * (1 - p_empty) / n)


def test_free_interaction_gives_poisson():
    p = line(interaction="free")
    spec = GibbsSpec(p, window=Box((0.0,), (1.0,)))
    n = 20_000
    samples, attempts = rejection_samples(spec, n, seed=2)
    assert attempts == n
    freq = sum(len(s) == 0 for s in samples) / n
    q = math.exp(-1.0)
    assert abs(freq - q) < 3 * math.sqrt(q * (1 - q) / n)


def full_cover_spec():
    p = line(R=0.5)
    win = Box((0.0,), (0.4,))
    # each window point is within R of a frozen point, so no area is added
    wall = PointConfiguration(np.array([[-0.05], [0.45]]), p)
    return GibbsSpec(p, window=win, boundary=wall)


def test_full_cover_boundary_accepts_first_attempt():
    spec = full_cover_spec()
    for seed in range(50):
        assert sample_rejection(spec, seed).attempts == 1
    est, se = log_partition_estimate(spec, 200, seed=0)
    assert est == 0.0 and se == 0.0


def test_log_partition_matches_quadrature():
    spec = GibbsSpec(line(R=0.5), window=Box((0.0,), (1.0,)))
    est, se = log_partition_estimate(spec, 40_000, seed=3)
    assert abs(est - log_partition_interval(6)) < 3 * se


def test_log_partition_tiny_window_near_zero():
    spec = GibbsSpec(line(), window=Box((0.0,), (1e-6,)))
    est, se = log_partition_estimate(spec, 100, seed=0)
    assert abs(est) < 1e-5


def test_acceptance_rate_matches_partition_function():
    spec = GibbsSpec(line(R=0.5), window=Box((0.0,), (1.0,)))
    n = 20_000
    _, attempts = rejection_samples(spec, n, seed=4)
    z = math.exp(log_partition_interval(8))
    rate = n / attempts
    # attempts is negative binomial; delta-method sd of the rate
    assert abs(rate - z) < 3 * z * math.sqrt((1 - z) / n)


def test_rejection_limit_error():
    spec = GibbsSpec(line(lo=0.0, hi=40.0))
    with pytest.raises(RejectionLimitError) as err:
        sample_rejection(spec, 0, max_attempts=3)
    assert err.value.attempts == 3


def test_spec_validation():
    p = line()
    with pytest.raises(ConfigurationError):
        GibbsSpec(p, window=Box((4.0,), (6.0,)))
    with pytest.raises(ConfigurationError):
        GibbsSpec(p, window=Box((0.0,), (1.0,)), boundary=PointConfiguration(np.array([[0.5]]), p))
    assert GibbsSpec(ModelParams(0.25, DomainSpec.torus(1, 3.0))).boundary_kind == "torus-periodic"
    assert full_cover_spec().boundary_kind == "frozen"


def test_mcmc_zero_burn_in_is_empty():
    spec = GibbsSpec(line(), window=Box((0.0,), (2.0,)))
    assert len(sample_mcmc(spec, 0, 0.0).configuration) == 0


def test_mcmc_count_distribution_matches_rejection():
    spec = GibbsSpec(line(), window=Box((0.0,), (2.0,)))
    n = 4000
    rej, _ = rejection_samples(spec, n, seed=5)
    mc = [len(sample_mcmc(spec, 6, 20.0, replica=i).configuration) for i in range(n)]
    a = np.bincount([len(s) for s in rej], minlength=30)[:30] / n
    b = np.bincount(mc, minlength=30)[:30] / n
    assert 0.5 * np.abs(a - b).sum() < 0.05
    nr = [len(s) for s in rej]
    assert abs(np.mean(mc) - np.mean(nr)) < 3 * math.sqrt((np.var(mc) + np.var(nr)) / n)


def test_independent_seeds_uncorrelated():
    spec = GibbsSpec(line(), window=Box((0.0,), (2.0,)))
    n = 2000
    x = [len(sample_mcmc(spec, 100, 10.0, replica=i).configuration) for i in range(n)]
    y = [len(sample_mcmc(spec, 200, 10.0, replica=i).configuration) for i in range(n)]
    r = np.corrcoef(x, y)[0, 1]
    assert abs(r) < 3 / math.sqrt(n)


def test_mcmc_diagnostics_present():
    spec = GibbsSpec(line(), window=Box((0.0,), (2.0,)))
    rep = sample_mcmc(spec, 1, 30.0)
    assert 0.0 < rep.diagnostics["acceptance_rate"] <= 1.0
    assert -1.0 <= rep.diagnostics["autocorrelation"] <= 1.0
