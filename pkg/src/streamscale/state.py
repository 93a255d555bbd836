"""Key-group partitioned keyed state, routing tables and state chunks.

A key-group is the atomic unit of state migration.  Every key hashes to
exactly one key-group via 64-bit FNV-1a, and every key-group has exactly one
owning instance recorded in the routing tables held by upstream instances.
"""
from __future__ import annotations

import base64
import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

from .errors import (
    DuplicateChunk,
    IllegalStateTransition,
    IncompleteTable,
    InvalidPartitioning,
    UnexpectedChunk,
)

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 16)
def key_to_keygroup(key: bytes, num_keygroups: int) -> int:
    """Map a record key to its key-group: ``fnv1a64(key) mod K``."""
    if num_keygroups < 1:
        raise InvalidPartitioning(f"num_keygroups must be >= 1, got {num_keygroups}")
    return fnv1a64(key) % num_keygroups


def uniform_owner(kg: int, parallelism: int, num_keygroups: int) -> int:
    """Contiguous-range owner of ``kg`` among ``parallelism`` instances."""
    return kg * parallelism // num_keygroups


def uniform_assignment(parallelism: int, num_keygroups: int) -> List[int]:
    if not 1 <= parallelism <= num_keygroups:
        raise InvalidPartitioning(
            f"parallelism {parallelism} must lie in [1, {num_keygroups}]"
        )
    return [uniform_owner(kg, parallelism, num_keygroups) for kg in range(num_keygroups)]


class RoutingTable:
    """Key-group -> owner map held by one upstream instance.

    Owners are opaque hashable ids (the runtime uses instance indices within
    the downstream operator).
    """

    __slots__ = ("num_keygroups", "version", "_owner")

    def __init__(self, owner: Iterable[Any], version: int = 0):
        self._owner = list(owner)
        self.num_keygroups = len(self._owner)
        self.version = version
        if self.num_keygroups == 0:
            raise InvalidPartitioning("routing table needs at least one key-group")

    @classmethod
    def uniform(cls, parallelism: int, num_keygroups: int) -> "RoutingTable":
        return cls(uniform_assignment(parallelism, num_keygroups))

    def owner_of(self, kg: int) -> Any:
        owner = self._owner[kg]
        if owner is None:
            raise IncompleteTable(f"key-group {kg} has no owner")
        return owner

    def lookup(self, key: bytes) -> Any:
        return self.owner_of(key_to_keygroup(key, self.num_keygroups))

    def apply_update(self, reassignments: Mapping[int, Any]) -> int:
        """Reassign key-groups atomically; returns the new version."""
        for kg in reassignments:
            if not 0 <= kg < self.num_keygroups:
                raise InvalidPartitioning(f"unknown key-group {kg}")
        for kg, owner in reassignments.items():
            self._owner[kg] = owner
        self.version += 1
        return self.version

    def owners(self) -> List[Any]:
        return list(self._owner)

    def keygroups_of(self, owner: Any) -> List[int]:
        return [kg for kg, o in enumerate(self._owner) if o == owner]

    def copy(self) -> "RoutingTable":
        return RoutingTable(self._owner, self.version)

    def __eq__(self, other):
        return isinstance(other, RoutingTable) and self._owner == other._owner

    def __repr__(self):
        return f"RoutingTable(v{self.version}, {self._owner})"


def lookup_route(table: RoutingTable, key: bytes) -> Any:
    return table.lookup(key)


def apply_route_update(table: RoutingTable, reassignments: Mapping[int, Any]) -> int:
    return table.apply_update(reassignments)


class KgStatus(enum.Enum):
    LOCAL = "Local"
    MIGRATING_OUT = "MigratingOut"
    MIGRATED_OUT = "MigratedOut"
    INCOMING = "Incoming"
    INACTIVE_ARRIVED = "InactiveArrived"
    ACTIVE = "Active"


READABLE = frozenset({KgStatus.LOCAL, KgStatus.MIGRATING_OUT, KgStatus.ACTIVE})

_TRANSITIONS = {
    KgStatus.LOCAL: {KgStatus.MIGRATING_OUT},
    KgStatus.MIGRATING_OUT: {KgStatus.MIGRATED_OUT},
    KgStatus.INCOMING: {KgStatus.INACTIVE_ARRIVED},
    KgStatus.INACTIVE_ARRIVED: {KgStatus.ACTIVE},
}


@dataclass(frozen=True)
class StateChunk:
    subscale_id: int
    keygroup: int
    entries: Mapping[bytes, Any]
    source: Any
    target: Any
    size_bytes: int = 0


class StateUnavailable(IllegalStateTransition):
    """Read or write against a key-group that is not in a readable status."""


class KeyedStateStore:
    """Per-instance keyed state organised by key-group.

    Values are treated as immutable; callers replace them rather than mutate.
    Every status change is appended to ``transitions`` so lifecycle legality
    can be audited after a run.
    """

    def __init__(self, num_keygroups: int, owned: Iterable[int] = ()):
        self.num_keygroups = num_keygroups
        self._status: Dict[int, KgStatus] = {}
        self._entries: Dict[int, Dict[bytes, Any]] = {}
        self._installed: set = set()
        self.transitions: Dict[int, List[KgStatus]] = {}
        for kg in owned:
            self._set(kg, KgStatus.LOCAL)
            self._entries[kg] = {}

    def _set(self, kg: int, status: KgStatus) -> None:
        self._status[kg] = status
        self.transitions.setdefault(kg, []).append(status)

    def _move(self, kg: int, status: KgStatus) -> None:
        current = self._status.get(kg)
        if status not in _TRANSITIONS.get(current, ()):
            raise IllegalStateTransition(
                f"key-group {kg}: {current and current.value} -> {status.value}"
            )
        self._set(kg, status)

    # status queries
    def status(self, kg: int) -> Optional[KgStatus]:
        return self._status.get(kg)

    def readable(self, kg: int) -> bool:
        return self._status.get(kg) in READABLE

    def keygroups(self, status: Optional[KgStatus] = None) -> List[int]:
        if status is None:
            return sorted(self._status)
        return sorted(kg for kg, s in self._status.items() if s is status)

    def readable_keygroups(self) -> List[int]:
        return sorted(kg for kg, s in self._status.items() if s in READABLE)

    # entry access
    def get(self, kg: int, key: bytes, default: Any = None) -> Any:
        if self._status.get(kg) not in READABLE:
            raise StateUnavailable(f"key-group {kg} is not readable here")
        return self._entries[kg].get(key, default)

    def put(self, kg: int, key: bytes, value: Any) -> None:
        if self._status.get(kg) not in READABLE:
            raise StateUnavailable(f"key-group {kg} is not writable here")
        self._entries[kg][key] = value

    def entries(self, kg: int) -> Dict[bytes, Any]:
        return self._entries.get(kg, {})

    def items(self) -> Iterator[Tuple[int, bytes, Any]]:
        for kg in sorted(self._entries):
            if self._status.get(kg) in READABLE:
                for key, value in self._entries[kg].items():
                    yield kg, key, value

    # lifecycle
    def adopt(self, kg: int, entries: Optional[Mapping[bytes, Any]] = None) -> None:
        """Take ownership of ``kg`` outside any migration (startup/restore)."""
        self._set(kg, KgStatus.LOCAL)
        self._entries[kg] = dict(entries or {})
        self._installed.discard(kg)

    def expect(self, kgs: Iterable[int]) -> None:
        for kg in kgs:
            if self.readable(kg):
                raise IllegalStateTransition(f"key-group {kg} is already held here")
            self._set(kg, KgStatus.INCOMING)
            self._entries.pop(kg, None)
            self._installed.discard(kg)

    def begin_extraction(self, kgs: Iterable[int]) -> None:
        kgs = list(kgs)
        for kg in kgs:
            if self._status.get(kg) is not KgStatus.LOCAL:
                raise IllegalStateTransition(
                    f"key-group {kg} must be Local to migrate, is {self._status.get(kg)}"
                )
        for kg in kgs:
            self._move(kg, KgStatus.MIGRATING_OUT)

    def emit_chunk(self, kg: int, subscale_id: int, source: Any = None,
                   target: Any = None, entry_bytes: int = 0) -> StateChunk:
        if self._status.get(kg) is not KgStatus.MIGRATING_OUT:
            raise IllegalStateTransition(
                f"key-group {kg} must be MigratingOut to emit, is {self._status.get(kg)}"
            )
        entries = self._entries.pop(kg, {})
        self._move(kg, KgStatus.MIGRATED_OUT)
        return StateChunk(subscale_id, kg, dict(entries), source, target,
                          size_bytes=len(entries) * entry_bytes)

    def install_chunk(self, chunk: StateChunk) -> KgStatus:
        kg = chunk.keygroup
        if kg in self._installed:
            raise DuplicateChunk(f"key-group {kg} already installed")
        if self._status.get(kg) is not KgStatus.INCOMING:
            raise UnexpectedChunk(f"key-group {kg} is not expected here")
        self._entries[kg] = dict(chunk.entries)
        self._installed.add(kg)
        self._move(kg, KgStatus.INACTIVE_ARRIVED)
        return KgStatus.INACTIVE_ARRIVED

    def activate(self, kg: int) -> None:
        self._move(kg, KgStatus.ACTIVE)

    def settle(self) -> None:
        """Close a migration lifecycle: Active becomes Local, MigratedOut is dropped."""
        for kg, status in list(self._status.items()):
            if status is KgStatus.ACTIVE:
                self._set(kg, KgStatus.LOCAL)
            elif status is KgStatus.MIGRATED_OUT:
                del self._status[kg]
                self._entries.pop(kg, None)
        self._installed.clear()

    def release(self, kg: int) -> Dict[bytes, Any]:
        """Drop ownership without a chunk (stop-and-restart redistribution)."""
        self._status.pop(kg, None)
        return self._entries.pop(kg, {})

    def snapshot(self, kgs: Optional[Iterable[int]] = None) -> Dict[int, Dict[bytes, Any]]:
        chosen = self.readable_keygroups() if kgs is None else kgs
        return {kg: dict(self._entries.get(kg, {})) for kg in chosen}


def extract_chunks(store: KeyedStateStore, kgs: Iterable[int], subscale_id: int,
                   source: Any = None, target: Any = None) -> List[StateChunk]:
    ordered = sorted(set(kgs))
    store.begin_extraction(ordered)
    return [store.emit_chunk(kg, subscale_id, source, target) for kg in ordered]


def install_chunk(store: KeyedStateStore, chunk: StateChunk) -> KgStatus:
    return store.install_chunk(chunk)


def keygroup_status(store: KeyedStateStore, kg: int) -> Optional[KgStatus]:
    return store.status(kg)


# snapshot dump: JSON lines of {kg, key, value}, key and value base64-encoded
def encode_value(value: Any) -> bytes:
    if isinstance(value, bytes):
        return b"b:" + value
    if isinstance(value, int) and not isinstance(value, bool):
        return b"i:" + str(value).encode()
    return b"j:" + json.dumps(_tagged(value), sort_keys=True).encode()


def _tagged(obj):
    # JSON has no tuples or bytes; wrap them so decoding restores the exact type
    if isinstance(obj, bytes):
        return {"b": base64.b64encode(obj).decode("ascii")}
    if isinstance(obj, tuple):
        return {"t": [_tagged(x) for x in obj]}
    if isinstance(obj, list):
        return [_tagged(x) for x in obj]
    if isinstance(obj, dict):
        return {"d": [[_tagged(k), _tagged(v)] for k, v in obj.items()]}
    return obj


def decode_value(raw: bytes) -> Any:
    tag, body = raw[:2], raw[2:]
    if tag == b"b:":
        return body
    if tag == b"i:":
        return int(body)
    if tag == b"j:":
        return _untagged(json.loads(body))
    raise ValueError(f"unknown value tag {tag!r}")


def _untagged(obj):
    if isinstance(obj, list):
        return [_untagged(x) for x in obj]
    if isinstance(obj, dict):
        if "b" in obj:
            return base64.b64decode(obj["b"])
        if "t" in obj:
            return tuple(_untagged(x) for x in obj["t"])
        return {_untagged(k): _untagged(v) for k, v in obj["d"]}
    return obj


def dump_state_lines(state: Mapping[int, Mapping[bytes, Any]]) -> Iterator[str]:
    for kg in sorted(state):
        for key in sorted(state[kg]):
            yield json.dumps({
                "kg": kg,
                "key": base64.b64encode(key).decode("ascii"),
                "value": base64.b64encode(encode_value(state[kg][key])).decode("ascii"),
            }, sort_keys=True)


def load_state_lines(lines: Iterable[str]) -> Dict[int, Dict[bytes, Any]]:
    state: Dict[int, Dict[bytes, Any]] = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        state.setdefault(row["kg"], {})[base64.b64decode(row["key"])] = decode_value(
            base64.b64decode(row["value"]))
    return state
