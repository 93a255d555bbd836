"""Key-group hashing, routing tables and the key-group lifecycle."""
import functools
import random

import pytest

from streamscale.errors import (
    DuplicateChunk, IllegalStateTransition, IncompleteTable, UnexpectedChunk,
)
from streamscale.state import (
    KeyedStateStore, KgStatus, RoutingTable, StateChunk, StateUnavailable,
    apply_route_update, dump_state_lines, extract_chunks, fnv1a64, install_chunk,
    key_to_keygroup, keygroup_status, load_state_lines, lookup_route,
)

# published FNV-1a 64-bit test vectors
VECTORS = {
    b"": 0xCBF29CE484222325,
    b"a": 0xAF63DC4C8601EC8C,
    b"foobar": 0x85944171F73967E8,
}


def reference_fnv(data: bytes) -> int:
    return functools.reduce(lambda h, b: ((h ^ b) * 1099511628211) % 2 ** 64, data,
                            14695981039346656037)


@pytest.mark.parametrize("key", sorted(VECTORS))
def test_fnv_vectors(key):
    assert fnv1a64(key) == VECTORS[key] == reference_fnv(key)


def test_empty_key_keygroup():
    assert key_to_keygroup(b"", 128) == 37


def test_single_keygroup():
    assert key_to_keygroup(b"anything", 1) == 0


def test_keygroup_matches_reference():
    rng = random.Random(4)
    for _ in range(500):
        key = bytes(rng.randrange(256) for _ in range(rng.randrange(12)))
        assert key_to_keygroup(key, 128) == reference_fnv(key) % 128


# routing
def test_lookup_and_update():
    table = RoutingTable(["A", "B"])
    k0 = next(b"x%d" % i for i in range(100) if key_to_keygroup(b"x%d" % i, 2) == 0)
    assert lookup_route(table, k0) == "A"
    apply_route_update(table, {0: "C"})
    assert lookup_route(table, k0) == "C"


def test_fig4_style_update():
    table = RoutingTable(["C1"] * 8)
    v = table.apply_update({3: "C2", 4: "C2"})
    assert v == 1
    assert table.owners() == ["C1"] * 3 + ["C2", "C2"] + ["C1"] * 3


def test_version_bumps():
    table = RoutingTable.uniform(2, 8)
    before = table.owners()
    assert table.apply_update({}) == 1
    assert table.owners() == before
    table.apply_update({0: 1})
    assert table.version == 2


def test_incomplete_table():
    with pytest.raises(IncompleteTable):
        RoutingTable([0, None]).owner_of(1)


def test_random_keys_route_to_unique_owner():
    K = 64
    table = RoutingTable.uniform(5, K)
    owners = {kg: [o for o in range(5) if kg * 5 // K == o] for kg in range(K)}
    rng = random.Random(0)
    for _ in range(100_000 // 10):
        key = b"%d" % rng.getrandbits(40)
        kg = reference_fnv(key) % K
        assert owners[kg] == [table.lookup(key)]


# lifecycle
def _store():
    s = KeyedStateStore(8, owned=[3, 4, 5])
    s.put(3, b"k3", 7)
    s.put(4, b"k4", 9)
    return s


def test_extract_chunks_in_kg_order():
    s = _store()
    chunks = extract_chunks(s, {4, 3}, subscale_id=1)
    assert [(c.keygroup, dict(c.entries)) for c in chunks] == [(3, {b"k3": 7}), (4, {b"k4": 9})]
    assert keygroup_status(s, 3) is keygroup_status(s, 4) is KgStatus.MIGRATED_OUT


def test_extract_empty_keygroup():
    chunks = extract_chunks(_store(), [5], 1)
    assert chunks[0].entries == {}


def test_extract_twice_is_illegal():
    s = _store()
    extract_chunks(s, [3], 1)
    with pytest.raises(IllegalStateTransition):
        extract_chunks(s, [3], 1)


def test_install_before_activation_not_readable():
    t = KeyedStateStore(8)
    t.expect([3])
    assert install_chunk(t, StateChunk(1, 3, {b"k3": 7}, 0, 1)) is KgStatus.INACTIVE_ARRIVED
    with pytest.raises(StateUnavailable):
        t.get(3, b"k3")
    t.activate(3)
    assert t.get(3, b"k3") == 7
    assert keygroup_status(t, 3) is KgStatus.ACTIVE


def test_duplicate_and_unexpected_chunks():
    t = KeyedStateStore(8)
    t.expect([3])
    c = StateChunk(1, 3, {}, 0, 1)
    t.install_chunk(c)
    with pytest.raises(DuplicateChunk):
        t.install_chunk(c)
    with pytest.raises(UnexpectedChunk):
        t.install_chunk(StateChunk(1, 6, {}, 0, 1))


def test_fresh_store_local():
    assert keygroup_status(_store(), 5) is KgStatus.LOCAL


def test_transition_history_is_legal_chain():
    s, t = _store(), KeyedStateStore(8)
    t.expect([3])
    for c in extract_chunks(s, [3], 1):
        t.install_chunk(c)
    t.activate(3)
    assert s.transitions[3] == [KgStatus.LOCAL, KgStatus.MIGRATING_OUT, KgStatus.MIGRATED_OUT]
    assert t.transitions[3] == [KgStatus.INCOMING, KgStatus.INACTIVE_ARRIVED, KgStatus.ACTIVE]
    # conservation
    assert t.entries(3) == {b"k3": 7}


def test_settle_closes_lifecycle():
    s, t = _store(), KeyedStateStore(8)
    t.expect([3])
    t.install_chunk(extract_chunks(s, [3], 1)[0])
    t.activate(3)
    s.settle()
    t.settle()
    assert s.status(3) is None and t.status(3) is KgStatus.LOCAL


def test_state_dump_roundtrip():
    state = {1: {b"a": (3, 4), b"b": 5}, 2: {b"\x00": b"raw"}}
    assert load_state_lines(dump_state_lines(state)) == state
