import json
from collections import defaultdict

import numpy as np
import pytest

from divshare.core import FormatError, derive_stream, validate_config
from divshare.netsim import (
    LinkSpec, assign_regions, build_network, build_straggler_network, load_network_matrix, make_nodes,
    read_region_matrix, run_simulation, transfer_duration,
)
from divshare.tasks import build_task

from conftest import small_config


def _matrix(tmp_path, regions, lat, bw, skip=()):
    lines = ["src_region,dst_region,latency_ms,bandwidth_mbps"]
    for a in regions:
        for b in regions:
            if (a, b) not in skip:
                lines.append(f"{a},{b},{lat(a, b)},{bw(a, b)}")
    path = tmp_path / "matrix.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_transfer_duration():
    link = LinkSpec(0, 1, 0.001, 1e6)
    assert transfer_duration(link, 10**6) == pytest.approx(1.001, abs=1e-15)
    assert transfer_duration(link, 2000) - 0.001 == pytest.approx(2 * (transfer_duration(link, 1000) - 0.001))
    with pytest.raises(ValueError):
        transfer_duration(link, 0)


def test_no_straggling_uniform_links():
    cfg = validate_config({"n": 6, "j_fanout": 2, "straggler_count": 3, "straggling_factor": 1.0})
    net = build_straggler_network(cfg, np.random.default_rng(0))
    off = ~np.eye(6, dtype=bool)
    assert np.all(net.bandwidth[off] == cfg.fast_bandwidth)
    assert np.all(net.latency[off] == cfg.fast_latency)


def test_straggler_bandwidth_mean():
    mib = 2**20
    cfg = validate_config({"n": 60, "j_fanout": 6, "straggler_count": 30, "straggling_factor": 5.0,
                           "fast_bandwidth": 60.0 * mib})
    draws = []
    for seed in range(100):
        net = build_straggler_network(cfg, np.random.default_rng(seed))
        assert len(net.stragglers) == 30
        fast = [i for i in range(60) if i not in net.stragglers]
        assert np.all(net.bandwidth[fast][:, 0][np.array(fast) != 0] == 60.0 * mib)
        draws.extend(net.bandwidth[s, (s + 1) % 60] for s in net.stragglers)
    draws = np.array(draws)
    assert abs(draws.mean() - 12 * mib) < 3 * cfg.straggler_bw_std / np.sqrt(len(draws))


def test_straggler_truncation():
    cfg = validate_config({"n": 4, "j_fanout": 2, "straggler_count": 4, "straggling_factor": 10.0,
                           "fast_bandwidth": 1000.0, "straggler_bw_std": 1e6})
    net = build_straggler_network(cfg, np.random.default_rng(1))
    assert np.all(net.bandwidth >= 0.05 * 100.0)


def test_region_matrix_units(tmp_path):
    path = _matrix(tmp_path, ["a", "b"], lambda a, b: 10 if a == b else 85.5, lambda a, b: 800)
    table = read_region_matrix(path)
    assert table[("a", "b")] == (85.5 / 1000, 100e6)


def test_region_matrix_errors(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("src,dst,lat,bw\na,a,1,1\n")
    with pytest.raises(FormatError):
        read_region_matrix(path)
    path.write_text("src_region,dst_region,latency_ms,bandwidth_mbps\na,a,x,1\n")
    with pytest.raises(FormatError):
        read_region_matrix(path)
    path.write_text("src_region,dst_region,latency_ms,bandwidth_mbps\na,a,1,0\n")
    with pytest.raises(FormatError):
        read_region_matrix(path)
    missing = _matrix(tmp_path, ["a", "b"], lambda a, b: 1, lambda a, b: 10, skip={("b", "a")})
    with pytest.raises(FormatError):
        load_network_matrix(missing, ["a", "b"])


def test_intra_region_uses_diagonal(tmp_path):
    path = _matrix(tmp_path, ["a", "b"], lambda a, b: 1 if a == b else 50, lambda a, b: 1000 if a == b else 100)
    net = load_network_matrix(path, ["a", "a", "b"])
    assert net.link(0, 1).latency == 0.001 and net.link(0, 1).bandwidth == 125e6
    assert net.link(0, 2).latency == 0.05 and net.link(2, 1).bandwidth == 12.5e6


def test_ten_regions_sixty_nodes(tmp_path):
    regions = [f"r{k}" for k in range(10)]
    path = _matrix(tmp_path, regions, lambda a, b: 1 + regions.index(a) + 10 * regions.index(b),
                   lambda a, b: 100 + regions.index(a))
    assignment = assign_regions(regions, 60, np.random.default_rng(0))
    assert all(assignment.count(r) == 6 for r in regions)
    net = load_network_matrix(path, assignment)
    classes = net.link_classes()
    assert net.n == 60 and len(classes) == 100
    assert all(len(v) == 1 for v in classes.values())


def _trace(**changes):
    cfg = small_config(**changes)
    return cfg, run_simulation(cfg)


def test_two_node_schedule():
    # with eta = 0 and Omega = 1, node 1's second aggregation averages in node 0's round-1 model
    cfg = small_config(n=2, j_fanout=1, omega=1.0, eta=0.0, rounds=2,
                       dataset={"kind": "classification", "samples": 200, "features": 2, "classes": 2,
                                "shards_per_node": 1})
    task = build_task(cfg)
    x0 = [node.model.copy() for node in make_nodes(cfg, task)]
    trace = run_simulation(cfg, task=task)
    arrive = [e for e in trace.events if e.kind == "arrive" and e.src == 0 and e.round == 1]
    assert arrive and arrive[0].time < 2 * cfg.compute_time
    assert np.allclose(trace.final_models[1], (x0[0] + x0[1]) / 2, atol=1e-15)
    assert np.allclose(trace.final_models[0], trace.final_models[1], atol=1e-15)


def test_determinism():
    cfg, a = _trace(rounds=8, straggler_count=2, straggling_factor=4.0)
    b = run_simulation(cfg)
    assert a.to_ndjson() == b.to_ndjson()
    assert np.array_equal(a.snapshots, b.snapshots)
    assert np.array_equal(a.drops, b.drops)


def test_seed_changes_trace():
    _, a = _trace(rounds=4)
    _, b = _trace(rounds=4, seed=1)
    assert a.to_ndjson() != b.to_ndjson()


def check_trace_invariants(trace):
    times = [e.time for e in trace.events]
    assert all(t0 <= t1 for t0, t1 in zip(times, times[1:]))
    sends = [e for e in trace.events if e.kind == "send"]
    arrivals = [e for e in trace.events if e.kind == "arrive"]
    assert len(sends) == len(arrivals) + trace.in_flight_at_end
    by_src = defaultdict(list)
    for s in sends:
        by_src[s.src].append((s.time, s.time + s.duration))
    for spans in by_src.values():
        spans.sort()
        for (a0, a1), (b0, _) in zip(spans, spans[1:]):
            assert a1 <= b0
    pending = defaultdict(list)
    for s in sends:
        pending[(s.src, s.dst)].append(s.time + s.duration)
    for a in arrivals:
        expect = pending[(a.src, a.dst)].pop(0)
        assert a.time == expect
    computes = [e for e in trace.events if e.kind == "compute"]
    assert sum(e.dropped for e in computes) == int(trace.drops.sum())


def test_trace_invariants():
    _, trace = _trace(rounds=10, straggler_count=2, straggling_factor=5.0, fast_bandwidth=2000.0,
                      straggler_bw_std=10.0)
    check_trace_invariants(trace)
    _, trace = _trace(rounds=10, protocol="adpsgd", straggler_count=2, straggling_factor=5.0)
    check_trace_invariants(trace)


def test_straggler_drops_logged():
    # 4 entries of 4*4+64 = 80 bytes at 20 B/s straggler uplink: 4 s > 1 s compute period
    _, trace = _trace(rounds=6, straggler_count=1, straggling_factor=5.0, fast_bandwidth=100.0,
                      straggler_bw_std=1e-9, fast_latency=0.0)
    s = trace.extras["stragglers"][0]
    assert trace.drops[s, 1:].sum() > 0
    assert any(e.kind == "compute" and e.src == s and e.dropped > 0 for e in trace.events)


def test_flush_keeps_in_flight_then_sends_new_head():
    _, trace = _trace(rounds=6, straggler_count=1, straggling_factor=5.0, fast_bandwidth=100.0,
                      straggler_bw_std=1e-9, fast_latency=0.0)
    s = trace.extras["stragglers"][0]
    sends = [e for e in trace.events if e.kind == "send" and e.src == s]
    computes = {e.round: e.time for e in trace.events if e.kind == "compute" and e.src == s}
    checked = 0
    for prev, nxt in zip(sends, sends[1:]):
        end = prev.time + prev.duration
        if prev.round + 1 in computes and prev.time < computes[prev.round + 1] < end:
            assert any(e.kind == "arrive" and e.src == s and e.round == prev.round and e.time == end
                       for e in trace.events)
            assert nxt.time == end and nxt.round > prev.round
            checked += 1
    assert checked > 0


def test_snapshots_cadence():
    cfg, trace = _trace(rounds=7, snapshot_interval=2.0)
    assert np.allclose(trace.snapshot_times, [0.0, 2.0, 4.0, 6.0])
    assert trace.snapshots.shape == (4, cfg.n, 8)
    assert trace.end_time == 7.0


def test_ndjson_records():
    _, trace = _trace(rounds=2)
    lines = trace.to_ndjson().splitlines()
    recs = [json.loads(line) for line in lines]
    assert {r["kind"] for r in recs} == {"compute", "send", "arrive", "snapshot"}
    assert all({"time", "src", "dst", "bytes"} <= set(r) for r in recs if r["kind"] != "snapshot")


def test_uniform_matrix_equals_no_straggling(tmp_path):
    path = _matrix(tmp_path, ["x"], lambda a, b: 1, lambda a, b: 0.8)
    base = small_config(rounds=6, fast_bandwidth=1e5, fast_latency=0.001)
    via_matrix = base.replace(network_matrix=str(path))
    assert run_simulation(base).to_ndjson() == run_simulation(via_matrix).to_ndjson()


def test_network_size_mismatch():
    cfg = small_config()
    other = build_network(small_config(n=5))
    with pytest.raises(ValueError):
        run_simulation(cfg, net=other)
