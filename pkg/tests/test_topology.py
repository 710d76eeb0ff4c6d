import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdwnroute.topology import (EmptyMatrixError, IncompleteSnapshotError, LinkRecord, LinkSnapshot, LinkSpec,
                                NodeSpec, NormalizationConfig, PortCounters, SamplingError, TopologyError,
                                TopologySpec, UndefinedRateError, bundled_topology, compute_bandwidth,
                                compute_delay, compute_distance, compute_loss_err_drop, generate_topology,
                                is_sentinel, normalize, to_info_matrices)
from sdwnroute.traffic import generate_series


def two_node():
    return TopologySpec((NodeSpec(1, 0, 0), NodeSpec(2, 3, 4)), (LinkSpec(1, 2, 40.0),))


def record(i, j, **kw):
    base = dict(bw_free=30.0, bw_use=10.0, delay=6.0, loss=1.0, pkt_err=0.5, pkt_drop=0.0, distance=50.0)
    base.update(kw)
    return LinkRecord(i, j, **base)


# ---- bandwidth

def test_bandwidth_unit_conversion():
    before = PortCounters(tx_b=0, rx_b=0, t_d=0.0)
    after = PortCounters(tx_b=625_000, rx_b=625_000, t_d=1.0)
    assert compute_bandwidth(40.0, before, after) == pytest.approx((10.0, 30.0), abs=1e-12)


def test_bandwidth_zero_delta_and_saturation():
    c = PortCounters(tx_b=500, rx_b=500, t_d=2.0)
    assert compute_bandwidth(25.0, PortCounters(tx_b=500, rx_b=500, t_d=1.0), c) == (0.0, 25.0)
    full = PortCounters(tx_b=20 * 125_000, t_d=1.0)
    assert compute_bandwidth(20.0, PortCounters(), full) == (20.0, 0.0)


def test_bandwidth_uses_busier_port():
    b = [PortCounters(), PortCounters()]
    a = [PortCounters(tx_b=125_000, t_d=1.0), PortCounters(rx_b=375_000, t_d=1.0)]
    assert compute_bandwidth(10.0, b, a) == (3.0, 7.0)


def test_bandwidth_zero_interval():
    with pytest.raises(SamplingError):
        compute_bandwidth(10.0, PortCounters(t_d=1.0), PortCounters(tx_b=10, t_d=1.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(1, 100), st.floats(0, 1))
def test_bandwidth_free_plus_used_is_capacity(cap, frac):
    after = PortCounters(tx_b=cap * frac * 125_000 * 5, t_d=5.0)
    use, free = compute_bandwidth(cap, PortCounters(), after)
    assert use + free == pytest.approx(cap, rel=1e-12)


# ---- delay, loss, distance

@pytest.mark.parametrize("probe,expected", [((10, 12, 4, 6), 6.0), ((5, 5, 5, 5), 0.001), ((5, 5, 0, 0), 5.0)])
def test_delay_examples(probe, expected):
    assert compute_delay(*probe) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=4, max_size=4))
def test_delay_floor(probe):
    assert compute_delay(*probe) >= 0.001


def test_loss_err_drop_example():
    p_i = PortCounters(tx_p=100, rx_p=49, rx_b=1000)
    p_j = PortCounters(tx_p=50, rx_p=98, tx_b=950)
    loss, err, drop = compute_loss_err_drop(p_i, p_j)
    assert loss == pytest.approx(2.0, abs=1e-9)
    assert err == pytest.approx(5.0, abs=1e-9)
    assert drop == 1


def test_loss_undefined_without_packets():
    with pytest.raises(UndefinedRateError):
        compute_loss_err_drop(PortCounters(tx_p=0, rx_b=10), PortCounters(tx_p=5))


def test_distance_examples():
    assert compute_distance(NodeSpec(1, 0, 0, 0), NodeSpec(2, 3, 4, 0)) == 5.0
    assert compute_distance(NodeSpec(1, 0, 0, 0), NodeSpec(2, 1, 1, 1)) == pytest.approx(1.7320508, abs=1e-7)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert compute_distance(NodeSpec(1, 1, 1, 1), NodeSpec(2, 1, 1, 1)) == 0.0
    assert caught


# ---- topology

def test_topology_validation():
    n = (NodeSpec(1, 0, 0), NodeSpec(2, 1, 0), NodeSpec(3, 2, 0))
    with pytest.raises(TopologyError):
        TopologySpec(n, (LinkSpec(1, 1, 5.0), LinkSpec(1, 2, 5.0)))
    with pytest.raises(TopologyError):
        TopologySpec(n, (LinkSpec(1, 2, 5.0), LinkSpec(2, 1, 5.0), LinkSpec(2, 3, 5.0)))
    with pytest.raises(TopologyError):
        TopologySpec(n, (LinkSpec(1, 2, 5.0),))  # node 3 unreachable
    with pytest.raises(TopologyError):
        TopologySpec((NodeSpec(1, 0, 0), NodeSpec(3, 1, 0)), (LinkSpec(1, 3, 5.0),))


def test_bundled_topology_shape():
    topo = bundled_topology()
    assert topo.n == 14 and len(topo.links) == 25
    for lk in topo.links:
        assert 5 <= lk.bw_capmax <= 40
        assert 1 <= lk.base_delay <= 10
        assert 0.1 <= lk.loss_rate <= 1.0
        assert 30 <= topo.distance(lk.i, lk.j) <= 110


def test_topology_file_round_trip(tmp_path):
    topo = generate_topology(8, 12, seed=4)
    topo.save(tmp_path / "t.json")
    back = TopologySpec.load(tmp_path / "t.json")
    assert back == topo and back.digest() == topo.digest()


def test_generate_topology_deterministic():
    assert generate_topology(10, 15, seed=9) == generate_topology(10, 15, seed=9)
    assert generate_topology(10, 15, seed=9) != generate_topology(10, 15, seed=10)


# ---- info matrices

def test_info_matrices_single_link():
    topo = two_node()
    m = to_info_matrices(LinkSnapshot(0.0, (record(1, 2, delay=6.0),)), topo)
    d = m["delay"]
    assert d[0, 1] == d[1, 0] == 6.0
    assert is_sentinel(d[0, 0]) and is_sentinel(d[1, 1])


def test_info_matrices_missing_link():
    topo = generate_topology(4, 4, seed=0)
    recs = tuple(record(lk.i, lk.j) for lk in topo.links[1:])
    with pytest.raises(IncompleteSnapshotError) as info:
        to_info_matrices(LinkSnapshot(0.0, recs), topo)
    assert topo.links[0].key in info.value.missing


def test_info_matrices_on_bundled_snapshot():
    topo = bundled_topology()
    snap = generate_series(topo, 2, seed=0).snapshots[-1]
    mats = to_info_matrices(snap, topo)
    assert len(mats) == 5
    adj = topo.adjacency().astype(bool)
    for m in mats.values():
        assert m.shape == (14, 14)
        np.testing.assert_array_equal(np.isnan(m), np.isnan(m.T))
        np.testing.assert_array_equal(m[adj], m.T[adj])
        assert np.all(np.isnan(np.diag(m)))
        assert np.all(np.isnan(m[~adj])) and not np.any(np.isnan(m[adj]))


# ---- normalization

def test_normalize_examples():
    m = np.array([[np.nan, 0.0], [10.0, np.nan]])
    out = normalize(m)
    assert out[0, 1] == 0.0
    assert out[1, 0] == pytest.approx(10 / (10 + 1e-6), abs=1e-15)
    assert np.isnan(out[0, 0])
    assert normalize(m, NormalizationConfig(0.1, 0.9))[0, 1] == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_array_equal(normalize(np.array([3.0, 3.0, 3.0])), 0.0)


def test_normalize_all_sentinel():
    with pytest.raises(EmptyMatrixError):
        normalize(np.full((2, 2), np.nan))


def test_normalization_config_bounds():
    with pytest.raises(ValueError):
        NormalizationConfig(0.5, 0.5)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20),
       st.floats(0, 0.4), st.floats(0.6, 1.0))
def test_normalize_range_and_order(values, a, b):
    v = np.array(values)
    out = normalize(v, NormalizationConfig(a, b))
    assert np.all(out >= a - 1e-12) and np.all(out <= b + 1e-12)
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-12)


def test_link_record_tuple_round_trip():
    r = record(2, 5, sent_mb=3.5)
    assert LinkRecord.from_tuple(r.as_tuple()) == r
    assert r.key == (2, 5) and record(5, 2).key == (2, 5)
    assert math.isfinite(r.distance)
