import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdwnroute.topology import LinkSpec, NodeSpec, TopologySpec, generate_topology
from sdwnroute.traffic import (SeriesFormatError, TrafficDemand, diurnal_profile, generate_series,
                               gravity_demand, read_series, route_and_count, series_digest, write_series)


def line_topology(caps=(40.0, 40.0)):
    nodes = tuple(NodeSpec(i + 1, 50.0 * i, 0.0) for i in range(len(caps) + 1))
    links = tuple(LinkSpec(i + 1, i + 2, c, base_delay=2.0, loss_rate=0.5, err_rate=0.1)
                  for i, c in enumerate(caps))
    return TopologySpec(nodes, links)


def brute_gravity(masses, total):
    n = len(masses)
    norm = sum(masses[k] * masses[l] for k, l in itertools.permutations(range(n), 2))
    return [[0.0 if i == j else total * masses[i] * masses[j] / norm for j in range(n)] for i in range(n)]


# ---- gravity model and profile

def test_gravity_examples():
    np.testing.assert_allclose(gravity_demand([1, 1, 1], 6.0), np.ones((3, 3)) - np.eye(3), atol=1e-12)
    np.testing.assert_array_equal(gravity_demand([1, 2, 3], 0.0), 0.0)
    assert gravity_demand([2, 1, 1], 8.0)[0, 1] == pytest.approx(1.6, abs=1e-12)


def test_gravity_needs_two_nodes():
    with pytest.raises(ValueError):
        gravity_demand([1.0], 5.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 5.0), min_size=2, max_size=8), st.floats(0, 200), st.floats(0, 86399))
def test_gravity_matches_brute_force_and_sums(masses, total, t):
    d = gravity_demand(masses, total)
    np.testing.assert_allclose(d, brute_gravity(masses, total), rtol=1e-12, atol=1e-12)
    timed = gravity_demand(masses, total, t)
    assert timed.sum() == pytest.approx(total * diurnal_profile(t), abs=1e-9)


def test_diurnal_examples():
    assert diurnal_profile(12 * 3600) == 1.0
    assert diurnal_profile(3 * 3600) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        diurnal_profile(86400.0)


def test_diurnal_continuity_and_range():
    t = np.arange(0, 86400, 1.0)
    f = np.array([diurnal_profile(x) for x in t])
    assert f.min() == pytest.approx(0.2) and f.max() == 1.0
    assert np.abs(np.diff(f)).max() <= 1e-3


def test_demand_validation():
    with pytest.raises(ValueError):
        TrafficDemand(1, 1, 5.0)
    with pytest.raises(ValueError):
        TrafficDemand(1, 2, 60.0)


# ---- counting

def test_single_demand_on_one_link():
    topo = line_topology()
    res = route_and_count([TrafficDemand(1, 2, 10.0)], [[1, 2]], topo, interval=5.0)
    recs = res.snapshot.by_key()
    assert recs[(1, 2)].bw_use == pytest.approx(10.0, abs=1e-9)
    assert recs[(2, 3)].bw_use == 0.0


def test_no_demands():
    res = route_and_count([], [], line_topology())
    assert all(r.bw_use == 0.0 for r in res.snapshot.records)


def test_shared_link_additivity():
    topo = line_topology()
    res = route_and_count([TrafficDemand(1, 3, 6.0), TrafficDemand(2, 3, 9.0)], [[1, 2, 3], [2, 3]], topo)
    recs = res.snapshot.by_key()
    assert recs[(2, 3)].bw_use == pytest.approx(15.0, abs=1e-9)
    assert recs[(1, 2)].bw_use == pytest.approx(6.0, abs=1e-9)


def test_congestion_raises_delay_and_loss():
    topo = line_topology(caps=(10.0, 10.0))
    light = route_and_count([TrafficDemand(1, 2, 5.0)], [[1, 2]], topo).snapshot.record(1, 2)
    heavy = route_and_count([TrafficDemand(1, 2, 30.0)], [[1, 2]], topo).snapshot.record(1, 2)
    assert heavy.delay > light.delay
    assert heavy.loss > light.loss
    assert heavy.bw_use <= 10.0


def test_invalid_path_rejected():
    topo = line_topology()
    with pytest.raises(ValueError):
        route_and_count([TrafficDemand(1, 3, 1.0)], [[1, 3]], topo)


# ---- series

@pytest.fixture(scope="module")
def small_series():
    return generate_series(generate_topology(6, 8, seed=2), 30, seed=42)


def test_series_timestamps(small_series):
    ts = [s.timestamp for s in small_series.snapshots]
    assert ts == [5.0 * k for k in range(30)]


def test_series_determinism(small_series, tmp_path):
    topo = generate_topology(6, 8, seed=2)
    again = generate_series(topo, 30, seed=42)
    write_series(tmp_path / "a.ndjson", small_series)
    write_series(tmp_path / "b.ndjson", again)
    assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()
    assert series_digest(generate_series(topo, 30, seed=43)) != series_digest(small_series)


def test_series_round_trip(small_series, tmp_path):
    write_series(tmp_path / "s.ndjson", small_series)
    back = read_series(tmp_path / "s.ndjson")
    assert back == small_series


def test_series_invariants(small_series):
    topo = generate_topology(6, 8, seed=2)
    caps = {lk.key: lk.bw_capmax for lk in topo.links}
    for snap in small_series.snapshots:
        for r in snap.records:
            assert 0.0 <= r.bw_use <= caps[r.key]
            assert r.bw_free == pytest.approx(abs(caps[r.key] - r.bw_use))
            assert 0.0 <= r.loss <= 100.0 and 0.0 <= r.pkt_err <= 100.0
            assert r.delay > 0 and r.distance > 0


def test_counters_monotone():
    topo = line_topology()
    counters = None
    rng = np.random.default_rng(0)
    prev = None
    for k in range(5):
        res = route_and_count([TrafficDemand(1, 3, 8.0)], [[1, 2, 3]], topo, counters=counters,
                              timestamp=5.0 * k, rng=rng)
        counters = res.counters
        if prev is not None:
            for key, c in counters.items():
                p = prev[key]
                assert c.tx_b >= p.tx_b and c.rx_b >= p.rx_b and c.tx_p >= p.tx_p and c.rx_p >= p.rx_p
                assert c.t_d > p.t_d
        prev = counters


def test_corrupt_file_reports_offset(small_series, tmp_path):
    path = tmp_path / "s.ndjson"
    write_series(path, small_series)
    lines = path.read_bytes().splitlines(keepends=True)
    lines[3] = b'{"t": 15.0, "links": [[1, 2]]}\n'
    path.write_bytes(b"".join(lines))
    with pytest.raises(SeriesFormatError) as info:
        read_series(path)
    assert info.value.offset == sum(len(x) for x in lines[:3])


def test_missing_header(tmp_path):
    path = tmp_path / "x.ndjson"
    path.write_text("")
    with pytest.raises(SeriesFormatError):
        read_series(path)
