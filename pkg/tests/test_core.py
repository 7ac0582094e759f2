import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from areabd.core import (
    Box,
    ConfigurationError,
    DomainSpec,
    DuplicatePointError,
    ModelParams,
    PointConfiguration,
    birth_rate,
    conditional_energy,
    local_energy,
    read_configuration,
    union_volume,
)
from oracles import lens_union, raster_union_area


def line(R=0.5, lo=-20.0, hi=20.0):
    return ModelParams(R, DomainSpec.make_box([lo], [hi]))


def plane(R=1.0, lo=-20.0, hi=20.0):
    return ModelParams(R, DomainSpec.make_box([lo, lo], [hi, hi]))


def conf(pts, params):
    return PointConfiguration(np.asarray(pts, dtype=float).reshape(-1, params.d), params)


# -- union_volume ----------------------------------------------------------


def test_union_single_interval_torus():
    p = ModelParams(0.5, DomainSpec.torus(1, 10.0))
    assert union_volume(conf([0.0], p), p) == pytest.approx(1.0)


def test_union_two_intervals():
    p = line()
    assert union_volume(conf([0.0, 0.6], p), p) == pytest.approx(1.6)


def test_union_two_disks_closed_form():
    p = plane()
    expected = 4 * math.pi / 3 + math.sqrt(3) / 2
    assert expected == pytest.approx(5.054816, abs=1e-6)
    assert union_volume(conf([(0, 0), (1, 0)], p), p) == pytest.approx(expected, abs=1e-12)
    assert raster_union_area([(0, 0), (1, 0)], 1.0) == pytest.approx(expected, abs=5e-3)


def test_union_antipodal_full_cover():
    p = ModelParams(0.5, DomainSpec.torus(1, 2.000001))
    # L must exceed 4R; with L=2 exactly the construction is rejected
    with pytest.raises(ConfigurationError, match="4R"):
        ModelParams(0.5, DomainSpec.torus(1, 2.0))
    q = ModelParams(0.25, DomainSpec.torus(1, 2.0))
    pts = conf([0.0, 0.5, 1.0, 1.5], q)
    assert union_volume(pts, q) == pytest.approx(2.0)
    assert union_volume(conf([0.0, 1.0], p), p) == pytest.approx(2.0)


@pytest.mark.parametrize("dist", [0.0001, 0.3, 1.0, 1.7, 1.999999, 2.0, 3.0])
def test_two_disk_lens(dist):
    p = plane()
    got = union_volume(conf([(0, 0), (dist, 0)], p), p)
    assert got == pytest.approx(lens_union(dist, 1.0), abs=1e-9)


def test_union_area_matches_raster_random():
    rng = np.random.default_rng(7)
    p = plane(R=0.5)
    for _ in range(5):
        pts = rng.uniform(0, 2, size=(10, 2))
        assert union_volume(conf(pts, p), p) == pytest.approx(raster_union_area(pts, 0.5), abs=5e-3)


def test_torus_2d_union_matches_unwrapped_copies():
    p = ModelParams(0.4, DomainSpec.torus(2, 3.0))
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 3, size=(12, 2))
    # measure one period of the periodic union by rasterising 3x3 copies
    shifts = np.array([(a, b) for a in (-3, 0, 3) for b in (-3, 0, 3)], dtype=float)
    copies = (pts[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    h = 2e-3
    xs = (np.arange(int(3 / h)) + 0.5) * h
    X, Y = np.meshgrid(xs, xs)
    covered = np.zeros_like(X, dtype=bool)
    for c in copies:
        covered |= (X - c[0]) ** 2 + (Y - c[1]) ** 2 < 0.16
    assert union_volume(conf(pts, p), p) == pytest.approx(covered.sum() * h * h, abs=5e-3)


# -- conditional energy and birth rate ---------------------------------------


def test_conditional_energy_examples():
    p = line()
    assert conditional_energy(0.0, conf([], p), p) == pytest.approx(1.0)
    assert conditional_energy(0.6, conf([0.0], p), p) == pytest.approx(0.6)
    assert conditional_energy(3.0, conf([0.0], p), p) == pytest.approx(1.0)


def test_duplicate_point_rejected():
    p = line()
    with pytest.raises(DuplicatePointError):
        conditional_energy(0.0, conf([0.0], p), p)
    with pytest.raises(DuplicatePointError):
        conf([0.1, 0.1], p)


def test_birth_rate_examples():
    p = line()
    assert birth_rate(0.6, conf([0.0], p), p) == pytest.approx(math.exp(-0.6))
    assert birth_rate(0.6, conf([0.0], p), p) == pytest.approx(0.548812, abs=1e-6)
    assert birth_rate(5.0, conf([], p), p) == pytest.approx(0.367879, abs=1e-6)
    # ball of x already covered
    packed = conf([-0.5, 0.5], p)
    assert birth_rate(0.0, packed, p) == 1.0
    p2 = plane(R=1.0)
    ring = [(math.cos(a), math.sin(a)) for a in np.linspace(0, 2 * math.pi, 7)[:-1]]
    assert birth_rate((0.0, 0.0), conf(ring, p2), p2) == pytest.approx(1.0, abs=1e-12)


def test_free_interaction_has_unit_rate():
    p = ModelParams(0.5, DomainSpec.torus(1, 5.0), interaction="free")
    assert birth_rate(1.0, conf([1.2], p), p) == 1.0


# -- local energy ------------------------------------------------------------


def test_local_energy_examples():
    p = line()
    lam = Box((0.0,), (1.0,))
    assert local_energy(conf([], p), conf([-0.1], p), lam, p) == 0.0
    eta = conf([0.2, 0.7], p)
    assert local_energy(eta, None, lam, p) == pytest.approx(union_volume(eta, p))
    assert local_energy(conf([0.2], p), conf([-0.1], p), lam, p) == pytest.approx(0.3)


def test_local_energy_ignores_far_boundary_and_rejects_overlap():
    p = line()
    lam = Box((0.0,), (1.0,))
    eta = conf([0.2], p)
    assert local_energy(eta, conf([-0.1, 5.0], p), lam, p) == pytest.approx(0.3)
    with pytest.raises(ConfigurationError):
        local_energy(eta, conf([0.5], p), lam, p)


# -- properties ---------------------------------------------------------------

coords1 = st.lists(st.floats(0.0, 6.0, exclude_max=True), min_size=0, max_size=12, unique=True)
coords2 = st.lists(
    st.tuples(st.floats(0.0, 4.0, exclude_max=True), st.floats(0.0, 4.0, exclude_max=True)), min_size=0, max_size=8, unique=True
)


def _params(d, torus):
    if torus:
        return ModelParams(0.5, DomainSpec.torus(d, 6.0 if d == 1 else 4.0))
    return ModelParams(0.5, DomainSpec.make_box([-1.0] * d, [7.0] * d))


@settings(max_examples=60, deadline=None)
@given(pts=coords1, x=st.floats(0.0, 6.0, exclude_max=True), torus=st.booleans())
def test_range_locality_and_bounds_1d(pts, x, torus):
    p = _params(1, torus)
    if x in pts:
        return
    eta = conf(pts, p)
    near = [y for y in pts if abs(float(p.domain.displacement(x, y))) <= 2 * p.R]
    h = conditional_energy(x, eta, p)
    assert h == pytest.approx(conditional_energy(x, conf(near, p), p), abs=1e-12)
    assert -1e-12 <= h <= p.ball_volume + 1e-12
    b = birth_rate(x, eta, p)
    assert math.exp(-p.ball_volume) - 1e-12 <= b <= 1.0


@settings(max_examples=40, deadline=None)
@given(pts=coords2, torus=st.booleans(), data=st.data())
def test_monotone_and_telescoping_2d(pts, torus, data):
    p = _params(2, torus)
    eta = conf(pts, p)
    x = data.draw(st.tuples(st.floats(0.0, 4.0, exclude_max=True), st.floats(0.0, 4.0, exclude_max=True)))
    if x in pts:
        return
    k = data.draw(st.integers(0, len(pts)))
    sub = conf(pts[:k], p)
    # fewer points -> more added area -> lower birth rate
    assert conditional_energy(x, sub, p) >= conditional_energy(x, eta, p) - 1e-9
    total = union_volume(eta, p)
    fwd = sum(conditional_energy(pts[i], conf(pts[:i], p), p) for i in range(len(pts)))
    rev = list(reversed(pts))
    bwd = sum(conditional_energy(rev[i], conf(rev[:i], p), p) for i in range(len(rev)))
    assert fwd == pytest.approx(total, abs=1e-10)
    assert bwd == pytest.approx(total, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(pts=coords1, torus=st.booleans())
def test_telescoping_1d(pts, torus):
    p = _params(1, torus)
    total = union_volume(conf(pts, p), p)
    for order in (pts, pts[::-1]):
        s = sum(conditional_energy(order[i], conf(order[:i], p), p) for i in range(len(order)))
        assert s == pytest.approx(total, abs=1e-10)


def test_grid_consistent():
    p = ModelParams(0.3, DomainSpec.torus(2, 5.0))
    rng = np.random.default_rng(0)
    eta = conf(rng.uniform(0, 5, size=(50, 2)), p)
    cells = eta.cells()
    flat = sorted(i for v in cells.values() for i in v)
    assert flat == list(range(50))
    for c, members in cells.items():
        for i in members:
            assert p.cell_of(eta.points[i]) == c
    # neighbour lookups agree with brute force
    for x in rng.uniform(0, 5, size=(20, 2)):
        idx, _ = eta.near(x)
        brute = [i for i, y in enumerate(eta.points) if np.linalg.norm(p.domain.displacement(x, y)) <= 0.6]
        assert sorted(idx) == brute


def test_text_roundtrip():
    p = ModelParams(0.25, DomainSpec.make_box([0.0, -1.0], [2.0, 1.0]))
    rng = np.random.default_rng(4)
    eta = conf(np.column_stack([rng.uniform(0, 2, 7), rng.uniform(-1, 1, 7)]), p)
    text = eta.to_text()
    assert text.splitlines()[0] == "d=2 kind=box L=0.0:2.0,-1.0:1.0 R=0.25"
    assert read_configuration(text) == eta
    t = ModelParams(0.5, DomainSpec.torus(1, 3.0))
    e2 = conf([0.1, 2.9], t)
    assert read_configuration(e2.to_text()) == e2


def test_points_outside_domain_rejected():
    with pytest.raises(ConfigurationError, match="outside"):
        conf([5.0], ModelParams(0.5, DomainSpec.make_box([0.0], [1.0])))
    with pytest.raises(ConfigurationError):
        DomainSpec(3, "torus", L=5.0)
