import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodgraph.exceptions import CapacityError, DomainError, GeoreferenceError
from floodgraph.inventory import (
    Inventory,
    SamplePoint,
    detect_change,
    read_points_csv,
    sample_flood_points,
    sample_nonflood,
    split_temporal,
    write_points_csv,
)
from helpers import make_grid


def change_inputs(ref, mon, water=None, slope=None, dist=None, cs=30.0):
    shape = np.shape(ref)
    z = np.zeros(shape)
    return (make_grid(ref, cs), make_grid(mon, cs),
            make_grid(z if water is None else water, cs),
            make_grid(z if slope is None else slope, cs),
            make_grid(z if dist is None else dist, cs))


def test_difference_threshold_flags_cell():
    out = detect_change(*change_inputs([[-8.0]], [[-12.0]]), threshold_db=-3.0, open_result=False)
    assert out.values[0, 0] == 1
    out = detect_change(*change_inputs([[-8.0]], [[-10.0]]), threshold_db=-3.0, open_result=False)
    assert out.values[0, 0] == 0


def test_permanent_water_never_flagged():
    out = detect_change(*change_inputs([[-8.0]], [[-30.0]], water=[[1.0]]), open_result=False)
    assert out.values[0, 0] == 0


def test_isolated_pixel_removed_by_opening():
    ref = np.zeros((5, 5))
    mon = np.zeros((5, 5))
    mon[2, 2] = -5.0
    assert detect_change(*change_inputs(ref, mon), open_result=False).values.sum() == 1
    assert detect_change(*change_inputs(ref, mon)).values.sum() == 0


def test_plausibility_filter():
    ref = np.zeros((1, 3))
    mon = np.full((1, 3), -5.0)
    slope = np.array([[10.0, 15.0, 10.0]])
    dist = np.array([[0.0, 0.0, 2000.1]])
    out = detect_change(*change_inputs(ref, mon, slope=slope, dist=dist), open_result=False)
    assert out.values.tolist() == [[1, 0, 0]]


def test_change_requires_alignment_and_negative_threshold():
    args = list(change_inputs(np.zeros((3, 3)), np.zeros((3, 3))))
    args[1] = make_grid(np.zeros((3, 3)), 10.0)
    with pytest.raises(GeoreferenceError):
        detect_change(*args)
    with pytest.raises(DomainError):
        detect_change(*change_inputs(np.zeros((3, 3)), np.zeros((3, 3))), threshold_db=1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-6, -0.5), st.floats(0.1, 3))
def test_change_monotone_in_threshold(seed, t, gap):
    rng = np.random.default_rng(seed)
    ref = rng.normal(-8, 1, (12, 12))
    mon = ref + rng.normal(-2, 2, (12, 12))
    inp = change_inputs(ref, mon)
    loose = detect_change(*inp, threshold_db=t, open_result=False).values == 1
    strict = detect_change(*inp, threshold_db=t - gap, open_result=False).values == 1
    assert not np.any(strict & ~loose)


def test_flood_cap_examples():
    m = np.zeros((40, 40))
    m.ravel()[[3, 500, 900]] = 1
    assert len(sample_flood_points(make_grid(m), 500, 2019, 1)) == 3
    big = np.zeros((40, 40))
    big.ravel()[:1000] = 1
    pts = sample_flood_points(make_grid(big), 500, 2019, 1)
    assert len(pts) == 500 and len({(p.x, p.y) for p in pts}) == 500
    assert all(p.label == 1 and p.year == 2019 for p in pts)


def test_flood_sampling_deterministic_and_centred():
    m = (np.random.default_rng(0).random((30, 30)) < 0.3).astype(float)
    g = make_grid(m, 30.0, 1000.0, 2000.0)
    a = sample_flood_points(g, 50, 2020, 7)
    assert a == sample_flood_points(g, 50, 2020, 7)
    for p in a:
        r, c, inside = g.cell_index(p.x, p.y)
        assert inside and m[r, c] == 1
        assert (p.x, p.y) == g.cell_center(int(r), int(c))


def test_empty_mask_gives_no_points():
    assert sample_flood_points(make_grid(np.zeros((4, 4))), 10, 2020, 0) == []


def flood_points(rng, n, size, cs):
    cells = rng.choice(size * size, n, replace=False)
    g = make_grid(np.zeros((size, size)), cs)
    return [SamplePoint(*g.cell_center(*divmod(int(c), size)), 1, 2018 + i % 5)
            for i, c in enumerate(cells)]


def test_ratio_five_gives_five_per_flood(rng):
    floods = flood_points(rng, 20, 100, 100.0)
    domain = make_grid(np.ones((100, 100)), 100.0)
    non = sample_nonflood(domain, floods, 5, 1000.0, 3)
    assert len(non) == 100
    assert sorted(p.year for p in non) == sorted(np.repeat([p.year for p in floods], 5))


def test_buffer_larger_than_domain_is_capacity_error(rng):
    floods = flood_points(rng, 2, 10, 100.0)
    with pytest.raises(CapacityError, match="shortfall"):
        sample_nonflood(make_grid(np.ones((10, 10)), 100.0), floods, 5, 5000.0, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_buffer_invariant(seed):
    rng = np.random.default_rng(seed)
    floods = flood_points(rng, int(rng.integers(1, 12)), 80, 100.0)
    domain = make_grid((rng.random((80, 80)) < 0.9).astype(float), 100.0)
    non = sample_nonflood(domain, floods, 5, 1000.0, seed)
    assert len(non) == 5 * len(floods)
    f = np.array([[p.x, p.y] for p in floods])
    for p in non:
        assert np.sqrt(((f - [p.x, p.y]) ** 2).sum(1)).min() >= 1000.0
    assert non == sample_nonflood(domain, floods, 5, 1000.0, seed)


def test_temporal_split():
    pts = [SamplePoint(0, 0, 1, y) for y in (2017, 2018, 2020, 2022, 2023, 2023)]
    s = split_temporal(Inventory(pts), (2018, 2022), (2023, 2023))
    assert len(s.train) == 3 and len(s.test) == 2 and s.dropped == 1
    assert len(s.train) + len(s.test) + s.dropped == len(pts)
    s = split_temporal(Inventory(pts), (2017, 2023), None)
    assert len(s.train) == 6 and len(s.test) == 0
    with pytest.raises(ValueError, match="overlap"):
        split_temporal(Inventory(pts), (2018, 2022), (2022, 2023))


def test_points_csv_roundtrip(tmp_path):
    pts = [SamplePoint(1.5, 2.25, 1, 2019, "sar"), SamplePoint(3.0, 4.0, 0, 2020, "supplied")]
    p = tmp_path / "pts.csv"
    write_points_csv(pts, p)
    assert p.read_text().splitlines()[0] == "x,y,label,year,source"
    assert read_points_csv(p) == pts
