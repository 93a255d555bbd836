"""Graph construction, channels, redirection and the virtual clock."""
import pytest

from streamscale.bench.scenarios import keys_in_keygroup
from streamscale.errors import (
    ChannelClosed, GraphCycle, InvalidPartitioning, SenderMismatch, SimulationDrained,
)
from streamscale.runtime.channel import Channel, redirect_output_cache
from streamscale.runtime.clock import VirtualClock, step
from streamscale.runtime.engine import InstanceHooks, Simulation
from streamscale.runtime.graph import EdgeSpec, JobSpec, OperatorSpec, build_graph, three_operator_job
from streamscale.runtime.messages import Lane, MsgKind, data, trigger, watermark


def test_build_graph_uniform_routing_k4():
    g = build_graph(three_operator_job(parallelism=2, num_keygroups=4))
    for (up, down), table in g.routing.items():
        assert down == "agg"
        assert table.owners() == [0, 0, 1, 1]
    assert len(g.channels) == 2 * 2 + 2 * 1


def test_self_loop_is_a_cycle():
    job = three_operator_job(num_keygroups=4)
    job.edges.append(EdgeSpec("agg", "agg"))
    with pytest.raises(GraphCycle):
        build_graph(job)


def test_longer_cycle_rejected():
    job = JobSpec(
        operators=[OperatorSpec("gen", "source"), OperatorSpec("a", "keyed_aggregate"),
                   OperatorSpec("b", "keyed_aggregate"), OperatorSpec("sink", "sink")],
        edges=[EdgeSpec("gen", "a", "keyed"), EdgeSpec("a", "b", "keyed"),
               EdgeSpec("b", "a", "keyed"), EdgeSpec("b", "sink")],
        num_keygroups=8)
    with pytest.raises(GraphCycle):
        build_graph(job)


def test_parallelism_above_keygroups():
    with pytest.raises(InvalidPartitioning):
        build_graph(three_operator_job(parallelism=5, num_keygroups=4))


def test_jobspec_yaml_roundtrip():
    job = three_operator_job(parallelism=3, num_keygroups=16)
    assert JobSpec.from_yaml(job.to_yaml()) == job


# channels
def _drain(ch):
    out = []
    while True:
        m = ch.dequeue()
        if m is None:
            return out
        out.append(m)


def test_priority_lane_overtakes_queued_data():
    ch = Channel("a", "b")
    msgs = [data(b"m%d" % i, i) for i in range(1, 4)]
    for m in msgs:
        ch.enqueue(m)
    t = trigger(1)
    ch.enqueue(t, Lane.PRIORITY)
    assert _drain(ch) == [t] + msgs


def test_fifo_within_each_lane():
    ch = Channel("a", "b")
    a, b = trigger(1), trigger(2)
    ch.enqueue(a, Lane.PRIORITY)
    ch.enqueue(b, Lane.PRIORITY)
    m = data(b"x")
    ch.enqueue(m)
    assert _drain(ch) == [a, b, m]


def test_empty_channel_single_message():
    ch = Channel("a", "b")
    m = data(b"x")
    ch.enqueue(m)
    assert ch.dequeue() is m
    assert ch.dequeue() is None


def test_closed_channel_rejects():
    ch = Channel("a", "b")
    ch.close()
    with pytest.raises(ChannelClosed):
        ch.enqueue(data(b"x"))


K = 32
KG3, KG4, KG1, KG2 = 3, 4, 1, 2


def _rec(kg, tag=0):
    return data(keys_in_keygroup(kg, K, tag + 1)[tag], tag)


def test_redirect_moves_migrating_records():
    old, new = Channel("A", "C1"), Channel("A", "C2")
    r1, r3, r2, r4 = _rec(KG1), _rec(KG3), _rec(KG2), _rec(KG4)
    for m in (r1, r3, r2, r4):
        old.output_cache.append(m)
    moved = redirect_output_cache(old, new, {KG3, KG4}, K)
    assert moved == 2
    assert list(old.output_cache) == [r1, r2]
    assert list(new.output_cache) == [r3, r4]


def test_redirect_empty_cache():
    assert redirect_output_cache(Channel("A", "C1"), Channel("A", "C2"), {1}, K) == 0


def test_redirect_preserves_order_of_moved():
    old, new = Channel("A", "C1"), Channel("A", "C2")
    r3, r4, r3b = _rec(KG3), _rec(KG4), _rec(KG3, 1)
    for m in (r3, r4, r3b):
        old.output_cache.append(m)
    redirect_output_cache(old, new, {KG3, KG4}, K)
    assert list(new.output_cache) == [r3, r4, r3b]
    assert not old.output_cache


def test_redirect_duplicates_watermarks_in_place():
    old, new = Channel("A", "C1"), Channel("A", "C2")
    r1, r3 = _rec(KG1), _rec(KG3)
    for m in (r3, watermark(9), r1, _rec(KG3, 1)):
        old.output_cache.append(m)
    redirect_output_cache(old, new, {KG3}, K)
    kinds_new = [m.kind for m in new.output_cache]
    assert kinds_new == [MsgKind.DATA, MsgKind.WATERMARK, MsgKind.DATA]
    assert [m.kind for m in old.output_cache] == [MsgKind.WATERMARK, MsgKind.DATA]


def test_redirect_stops_at_checkpoint_barrier():
    from streamscale.runtime.messages import checkpoint_barrier
    old, new = Channel("A", "C1"), Channel("A", "C2")
    r, ck, r2 = _rec(KG3), checkpoint_barrier(1), _rec(KG3, 1)
    for m in (r, ck, r2):
        old.output_cache.append(m)
    assert redirect_output_cache(old, new, {KG3}, K, after_checkpoint=True) == 1
    assert list(old.output_cache) == [r, ck]
    assert list(new.output_cache) == [r2]


def test_redirect_sender_mismatch():
    with pytest.raises(SenderMismatch):
        redirect_output_cache(Channel("A", "C1"), Channel("B", "C2"), {1}, K)


# clock
def test_clock_step_advances():
    c = VirtualClock()
    hits = []
    c.schedule(5, 0, "x", "deliver", hits.append, 1)
    ev = step(c)
    assert c.now == 5 and hits == [1]
    assert (ev.tick, ev.instance, ev.kind) == (5, "x", "deliver")


def test_clock_tie_break_by_instance_then_insertion():
    c = VirtualClock()
    order = []
    c.schedule(3, 2, "b", "e", order.append, "b1")
    c.schedule(3, 1, "a", "e", order.append, "a1")
    c.schedule(3, 2, "b", "e", order.append, "b2")
    c.schedule(1, 9, "z", "e", order.append, "z")
    while c.pending():
        c.step()
    assert order == ["z", "a1", "b1", "b2"]


def test_clock_drained():
    with pytest.raises(SimulationDrained):
        VirtualClock().step()


# record selection at one instance
class _Gate(InstanceHooks):
    inter_channel = True
    intra_channel = True

    def __init__(self, ok_keys):
        self.ok = set(ok_keys)

    def processable(self, inst, msg, ch):
        return msg.kind is not MsgKind.DATA or msg.key in self.ok


def _two_channel_instance():
    sim = Simulation(three_operator_job(parallelism=2, num_keygroups=4))
    inst = sim.instance("agg#0")
    return sim, inst, inst.inputs[0], inst.inputs[1]


def test_switches_to_processable_channel():
    sim, inst, ch1, ch2 = _two_channel_instance()
    ch1.inbox.append(data(b"good"))
    ch2.inbox.append(data(b"bad"))
    inst.rr = 1
    msg, ch = sim.select_scheduled(inst, _Gate({b"good"}))
    assert msg.key == b"good" and ch is ch1


def test_skips_within_channel_up_to_a_watermark():
    sim, inst, ch1, ch2 = _two_channel_instance()
    for k in (b"bad", b"bad", b"good"):
        ch2.inbox.append(data(k))
    msg, ch = sim.select_scheduled(inst, _Gate({b"good"}))
    assert msg.key == b"good" and ch is ch2
    assert [m.key for m in ch2.inbox] == [b"bad", b"bad"]


def test_never_crosses_watermark():
    sim, inst, ch1, ch2 = _two_channel_instance()
    ch2.inbox.extend([data(b"bad"), watermark(5), data(b"good")])
    assert sim.select_scheduled(inst, _Gate({b"good"})) is None
    assert inst.waiting


def test_never_crosses_barrier():
    sim, inst, ch1, ch2 = _two_channel_instance()
    ch1.inbox.extend([data(b"bad"), trigger(1), data(b"good")])
    assert sim.select_scheduled(inst, _Gate({b"good"})) is None


def test_no_scheduling_suspends_on_head():
    sim, inst, ch1, ch2 = _two_channel_instance()
    ch1.inbox.append(data(b"bad"))
    ch2.inbox.append(data(b"good"))
    gate = _Gate({b"good"})
    gate.inter_channel = gate.intra_channel = False
    inst.rr = 0
    assert sim.select_scheduled(inst, gate) is None
