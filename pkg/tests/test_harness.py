"""Workloads, operators, latency markers, metrics and the equivalence checker."""
import itertools
import random
from collections import Counter

import pytest

from conftest import small_config
from streamscale.bench.equivalence import equivalence_check
from streamscale.bench.metrics import compute_metrics
from streamscale.bench.operators import KeyedAggregate, SlidingWindow, sliding_window
from streamscale.bench.scenario import ScenarioConfig, reference_run, run_scenario
from streamscale.bench.workload import WorkloadConfig, generate_workload, key_name
from streamscale.errors import IncompleteTrace, MalformedRecord, WatermarkRegression
from streamscale.runtime.graph import EdgeSpec, JobSpec, OperatorSpec
from streamscale.runtime.trace import Trace


# workload
def test_uniform_keys_within_five_percent():
    wl = generate_workload(WorkloadConfig(rate=1000.0, duration=4000, key_space=4, zipf_s=0.0))
    counts = Counter(k for _, k, _ in wl.records)
    assert len(wl) == 4000
    assert all(abs(counts[key_name(i)] - 1000) <= 50 for i in range(4))
    chi2 = sum((c - 1000) ** 2 / 1000 for c in counts.values())
    assert chi2 < 16.27  # 3 degrees of freedom, p = 0.001


def test_zipf_rank_order():
    wl = generate_workload(WorkloadConfig(rate=1000.0, duration=5000, key_space=50, zipf_s=1.5))
    counts = Counter(k for _, k, _ in wl.records)
    assert counts[key_name(0)] > counts[key_name(1)] > counts[key_name(2)]


def test_workload_deterministic():
    cfg = WorkloadConfig(seed=11, duration=3000)
    assert generate_workload(cfg).records == generate_workload(cfg).records
    assert generate_workload(cfg).records != generate_workload(WorkloadConfig(seed=12, duration=3000)).records


def test_event_time_is_emission_tick():
    wl = generate_workload(WorkloadConfig(rate=250.0, duration=100))
    assert [t for t, _, _ in wl.records] == [0, 4, 8, 12, 16, 20, 24, 28, 32, 36, 40, 44, 48, 52,
                                              56, 60, 64, 68, 72, 76, 80, 84, 88, 92, 96]


@pytest.mark.parametrize("bad", [{"rate": 0}, {"zipf_s": -1}, {"key_space": 0}])
def test_workload_config_validation(bad):
    with pytest.raises(ValueError):
        WorkloadConfig(**bad)


# operators
def test_keyed_sum():
    op = KeyedAggregate()
    state = None
    for v in (2, 3, 5):
        state, out = op.apply(state, b"k", v)
    assert state == (10, 3) and out == (b"k", (10, 3))
    assert op.apply(None, b"k", 7)[0] == (7, 1)


def test_keyed_sum_emit_every():
    op = KeyedAggregate(emit_every=2)
    s, out = op.apply(None, b"k", 1)
    assert out is None
    assert op.apply(s, b"k", 1)[1] == (b"k", (2, 2))


def test_keyed_sum_cross_key_order_irrelevant():
    recs = [(b"a", 1), (b"b", 2), (b"a", 3), (b"c", 4), (b"b", 5)]
    results = set()
    for perm in itertools.permutations(recs):
        # keep per-key order, vary the cross-key interleaving
        if [r for r in perm if r[0] == b"a"] != [r for r in recs if r[0] == b"a"]:
            continue
        op, state = KeyedAggregate(), {}
        for k, v in perm:
            state[k], _ = op.apply(state.get(k), k, v)
        results.add(tuple(sorted(state.items())))
    assert len(results) == 1


@pytest.mark.parametrize("payload", [b"x1", 1.5, True, None])
def test_malformed_payload(payload):
    with pytest.raises(MalformedRecord):
        KeyedAggregate().apply(None, b"k", payload)


def test_tuple_payload_field():
    op = KeyedAggregate(field=1)
    assert op.apply(None, b"k", (10, 3))[0] == (3, 1)
    with pytest.raises(MalformedRecord):
        op.apply(None, b"k", (10,))


def brute_windows(events, size, slide):
    out = Counter()
    for t in events:
        for start in range(0, t + 1, slide):
            if start <= t < start + size:
                out[start] += 1
    return dict(out)


def test_sliding_window_example():
    outs = sliding_window([(b"k", 1), (b"k", 6), (b"k", 11)], [100], size=10, slide=5)
    got = {start: c for _, (start, c) in outs}
    assert got[0] == 2 and got[5] == 2
    assert got == brute_windows([1, 6, 11], 10, 5)


def test_sliding_window_random_against_brute_force():
    rng = random.Random(2)
    for _ in range(20):
        events = sorted(rng.randrange(60) for _ in range(rng.randrange(1, 15)))
        size, slide = rng.choice([(10, 5), (6, 2), (4, 4), (9, 3)])
        outs = sliding_window([(b"k", t) for t in events], [1000], size, slide)
        assert {s: c for _, (s, c) in outs} == brute_windows(events, size, slide)


def test_sliding_window_fires_in_watermark_steps():
    op = SlidingWindow(10, 5)
    state, _ = op.apply(None, b"k", 1, 3)
    state, fired = op.fire(state, b"k", 9)
    assert fired == []
    state, fired = op.fire(state, b"k", 10)
    assert fired == [(b"k", (0, 1))]


def test_sliding_window_no_events():
    assert sliding_window([], [10, 20], 10, 5) == []


def test_sliding_window_regression():
    with pytest.raises(WatermarkRegression):
        sliding_window([(b"k", 1)], [20, 10], 10, 5)


# latency markers
def _chain(process_ticks=0):
    return JobSpec(
        operators=[OperatorSpec("gen", "source", 1, process_ticks=0),
                   OperatorSpec("pre", "keyed_aggregate", 2, process_ticks=process_ticks),
                   OperatorSpec("agg", "keyed_aggregate", 2, process_ticks=process_ticks,
                                params={"field": 1}),
                   OperatorSpec("sink", "sink", 1, process_ticks=0)],
        edges=[EdgeSpec("gen", "pre", "keyed"), EdgeSpec("pre", "agg", "keyed"),
               EdgeSpec("agg", "sink")],
        num_keygroups=8)


def test_idle_marker_latency_counts_hops():
    cfg = ScenarioConfig(job=_chain(), workload=WorkloadConfig(rate=10.0, duration=2000))
    r = reference_run(cfg)
    assert {lat for _, lat in r.metrics.latency_series} == {3}
    sent = sum(i.source.markers for i in r.sim.instances.values() if i.source)
    assert sent == len(r.metrics.latency_series) == 40


def test_marker_waits_out_suspension():
    r = run_scenario(small_config(wl_rate=1500.0, wl_payload_bytes=1024), "all_at_once")
    t, lat = max(r.metrics.latency_series, key=lambda s: s[1])
    emitted = t - lat
    spans = [s for s in r.metrics.suspension_events if s[1] <= emitted + 1 <= s[2]]
    assert spans and t >= min(b for _, _, b in spans)


def test_markers_not_in_window_output():
    cfg = small_config(operator="sliding_window", wl_watermark_period=20)
    r = reference_run(cfg)
    keys = {k for _, k, _ in r.sim.workload.records}
    assert r.sim.sink_outputs() and set(r.sim.sink_outputs()) <= keys


def test_throughput_conservation():
    r = run_scenario(small_config(), "drrs")
    emitted = sum(n for _, n in r.sim.emitted_counts().values())
    assert sum(n for _, n in r.metrics.throughput_series) == emitted
    outputs = sum(len(v) for v in r.sim.sink_outputs().values())
    assert outputs == emitted and r.sim.in_flight() == 0


# metrics
def _trace(*events):
    t = Trace()
    for tick, inst, kind, seq, detail in events:
        t.add(tick, inst, kind, seq, detail)
    return t


def test_definitional_metrics():
    t = _trace((0, "controller", "session_start", 1, {"migrating": 2}),
               (100, "controller", "inject", 1, None),
               (103, "agg#0", "chunk", 0, {"subscale": 1, "kg": 5}),
               (107, "agg#0", "chunk", 0, {"subscale": 1, "kg": 6}),
               (110, "agg#2", "suspend_begin", 0, None),
               (114, "agg#2", "suspend_end", 0, None),
               (150, "controller", "session_end", 1, None))
    m = compute_metrics(t)
    assert (m.L_total, m.L_p, m.L_d, m.L_s) == (150, 3, 5, 4)
    assert m.L_o == 138 and m.residual_ok()
    assert m.suspension_events == [("agg#2", 110, 114)]


def test_missing_injection_is_incomplete():
    t = _trace((0, "controller", "session_start", 1, {"migrating": 2}),
               (9, "controller", "session_end", 1, None))
    with pytest.raises(IncompleteTrace):
        compute_metrics(t)


def test_missing_end_is_incomplete():
    t = _trace((0, "controller", "session_start", 1, {"migrating": 0}))
    with pytest.raises(IncompleteTrace):
        compute_metrics(t)


@pytest.mark.parametrize("protocol", ["drrs", "fluid", "all_at_once", "fetch_on_demand",
                                      "stop_restart", "unbound"])
def test_residual_identity(protocol):
    m = run_scenario(small_config(), protocol).metrics
    assert m.L_p + m.L_s + m.L_d + m.L_o == m.L_total
    assert m.scaling_duration >= 0
    ticks = [t for t, _ in m.latency_series]
    assert ticks == sorted(ticks)


def test_equivalence_self_check():
    r = reference_run(small_config())
    v = equivalence_check(r, r)
    assert v.ok and v.diffs == []


def test_equivalence_reports_state_diff():
    cfg = small_config()
    ref = reference_run(cfg)
    r = run_scenario(cfg, "drrs")
    key = next(iter(r.final_state))
    r.final_state = dict(r.final_state, **{})
    r.final_state[key] = (-1, -1)
    v = equivalence_check(r, ref)
    assert not v.per_key_state_equal and v.per_channel_order_equal
    assert any(repr(key) in d for d in v.diffs)
