import math

import numpy as np
from scipy import stats

from areabd.stream import BLOCK, EventStream, mix


def test_marks_pure_function_of_address():
    a, b = EventStream(11), EventStream(11)
    queries = [((i % 3, -(i % 2)), i * 7 % 150) for i in range(40)]
    first = [a.raw_mark(c, k) for c, k in queries]
    second = [b.raw_mark(c, k) for c, k in reversed(queries)][::-1]
    assert first == second


def test_streams_differ_by_seed_replica_and_cell():
    base = EventStream(5).raw_mark((0,), 0)
    assert EventStream(6).raw_mark((0,), 0) != base
    assert EventStream(5, replica=1).raw_mark((0,), 0) != base
    assert EventStream(5).raw_mark((1,), 0) != base
    assert EventStream(5).raw_mark((0,), 1) != base


def test_mark_ranges():
    s = EventStream(3)
    for k in range(2 * BLOCK + 3):
        m = s.mark((2, 1), k, (1.0, 0.5), (0.5, 0.5))
        assert 1.0 <= m.x[0] < 1.5 and 0.5 <= m.x[1] < 1.0
        assert 0.0 <= m.u < 1.0 and m.r >= 0.0 and m.s >= 0.0


def test_lifetimes_are_unit_exponential():
    s = EventStream(17)
    life = [s.initial_lifetime(i) for i in range(5000)]
    assert stats.kstest(life, "expon").pvalue > 0.01
    r = [s.mark((0,), k, (0.0,), (1.0,)).r for k in range(5000)]
    assert stats.kstest(r, "expon").pvalue > 0.01


def test_waiting_times_scale_with_cell_volume():
    s = EventStream(2)
    w = np.array([s.mark((0, 0), k, (0, 0), (2.0, 2.0)).s for k in range(4000)])
    assert abs(w.mean() - 0.25) < 4 * 0.25 / math.sqrt(4000)


def test_mix_handles_negative_keys():
    assert mix(1, -1) != mix(1, 1)
    assert mix(0) == mix(0)
    child = EventStream(1).child(3, 4, 5)
    assert child == EventStream(1).child(3, 4, 5)
    assert child != EventStream(1).child(3, 4, 6)
