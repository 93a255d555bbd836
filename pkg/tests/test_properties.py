"""Property-based checks of the core invariants."""
import math
from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from streamscale.bench.operators import sliding_window
from streamscale.control import divide_subscales, plan_repartition
from streamscale.runtime.channel import Channel, redirect_output_cache
from streamscale.runtime.messages import Lane, data, trigger, watermark
from streamscale.state import (
    RoutingTable, dump_state_lines, key_to_keygroup, load_state_lines, lookup_route,
)

keys = st.binary(max_size=16)


@given(st.integers(1, 64), st.integers(1, 64), st.lists(keys, max_size=30), st.data())
def test_routing_is_total(K, n, ks, draw):
    n = min(n, K)
    table = RoutingTable.uniform(n, K)
    for key in ks:
        assert 0 <= lookup_route(table, key) < n
    update = draw.draw(st.dictionaries(st.integers(0, K - 1), st.integers(0, n - 1)))
    table.apply_update(update)
    for key in ks:
        kg = key_to_keygroup(key, K)
        assert lookup_route(table, key) == update.get(kg, lookup_route(table, key))


@given(st.integers(1, 256), st.integers(1, 40), st.integers(1, 40))
def test_plan_sound_and_balanced(K, a, b):
    a, b = min(a, K), min(b, K)
    plan = plan_repartition(K, a, b)
    moved = {kg for kg, _, _ in plan.migrations}
    assert len(moved) == len(plan.migrations)
    for kg in range(K):
        changed = plan.owner_before[kg] != plan.owner_after[kg]
        assert changed == (kg in moved)
    for kg, src, tgt in plan.migrations:
        assert (plan.owner_before[kg], plan.owner_after[kg]) == (src, tgt)
    sizes = Counter(plan.owner_after)
    assert len(sizes) == b and max(sizes.values()) - min(sizes.values()) <= 1


@given(st.integers(2, 128), st.integers(1, 12), st.integers(1, 12), st.integers(1, 16))
def test_divide_partitions_each_pair(K, a, b, size):
    a, b = min(a, K), min(b, K)
    migs = plan_repartition(K, a, b).migrations
    subs = divide_subscales(migs, size)
    flat = [kg for s in subs for kg in s.keygroups]
    assert sorted(flat) == sorted(kg for kg, _, _ in migs)
    pairs = Counter((src, tgt) for _, src, tgt in migs)
    for pair, count in pairs.items():
        group = [len(s.keygroups) for s in subs if (s.source, s.target) == pair]
        assert len(group) == math.ceil(count / size)
        assert max(group) <= size and max(group) - min(group) <= 1
    owner = {kg: (src, tgt) for kg, src, tgt in migs}
    for s in subs:
        assert {owner[kg] for kg in s.keygroups} == {(s.source, s.target)}


K = 16
cache_item = st.one_of(
    st.tuples(st.just("d"), st.integers(0, 200)),
    st.tuples(st.just("w"), st.integers(0, 50)),
)


@given(st.lists(cache_item, max_size=40), st.sets(st.integers(0, K - 1)))
def test_redirect_preserves_relative_order(items, moving):
    old, new = Channel("A", "B"), Channel("A", "C")
    msgs = []
    for tag, v in items:
        m = data(b"k%d" % v, v) if tag == "d" else watermark(v)
        msgs.append(m)
        old.output_cache.append(m)
    redirect_output_cache(old, new, set(moving), K)

    def goes(m):
        return m.key is not None and key_to_keygroup(m.key, K) in moving

    data_new = [m for m in new.output_cache if m.key is not None]
    data_old = [m for m in old.output_cache if m.key is not None]
    assert data_new == [m for m in msgs if m.key is not None and goes(m)]
    assert data_old == [m for m in msgs if m.key is not None and not goes(m)]


@given(st.lists(st.booleans(), max_size=30))
def test_priority_lane_dominates(lanes):
    ch = Channel("a", "b")
    sent = []
    for i, prio in enumerate(lanes):
        m = trigger(i) if prio else data(b"x", i)
        ch.enqueue(m, Lane.PRIORITY if prio else Lane.NORMAL)
        sent.append((prio, m))
    out = []
    while (m := ch.dequeue()) is not None:
        out.append(m)
    assert out == [m for p, m in sent if p] + [m for p, m in sent if not p]


def brute_windows(events, size, slide):
    out = Counter()
    for t in events:
        for start in range(0, t + 1, slide):
            if start <= t < start + size:
                out[start] += 1
    return dict(out)


@settings(max_examples=60)
@given(st.lists(st.integers(0, 80), max_size=20), st.integers(1, 12), st.integers(1, 12))
def test_window_counts_match_brute_force(events, size, slide):
    events = sorted(events)
    outs = sliding_window([(b"k", t) for t in events], [10_000], size, slide)
    assert {s: c for _, (s, c) in outs} == brute_windows(events, size, slide)


values = st.recursive(
    st.one_of(st.integers(-2 ** 40, 2 ** 40), st.binary(max_size=8)),
    lambda inner: st.tuples(inner, inner), max_leaves=4)


@given(st.dictionaries(st.integers(0, 127),
                       st.dictionaries(st.binary(max_size=8), values, min_size=1, max_size=5),
                       max_size=6))
def test_dump_roundtrip(state):
    assert load_state_lines(dump_state_lines(state)) == state
