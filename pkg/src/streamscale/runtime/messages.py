"""Messages that travel on channels and migration paths."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import ProtocolError


class MsgKind(enum.IntEnum):
    DATA = 0
    WATERMARK = 1
    LATENCY_MARKER = 2
    TRIGGER_BARRIER = 3
    CONFIRM_BARRIER = 4
    CHECKPOINT_BARRIER = 5
    STATE_CHUNK = 6
    REROUTED_RECORD = 7
    REROUTED_CONFIRM = 8


class Lane(enum.Enum):
    NORMAL = "normal"
    PRIORITY = "priority"


KEYED_KINDS = frozenset({MsgKind.DATA, MsgKind.REROUTED_RECORD})
SUBSCALE_KINDS = frozenset({
    MsgKind.TRIGGER_BARRIER, MsgKind.CONFIRM_BARRIER, MsgKind.STATE_CHUNK,
    MsgKind.REROUTED_RECORD, MsgKind.REROUTED_CONFIRM,
})
# intra-channel scheduling never moves a record across one of these
NON_CROSSABLE = frozenset({
    MsgKind.WATERMARK, MsgKind.TRIGGER_BARRIER, MsgKind.CONFIRM_BARRIER,
    MsgKind.CHECKPOINT_BARRIER,
})


@dataclass(slots=True, eq=False)
class StreamMessage:
    kind: MsgKind
    key: Optional[bytes] = None
    payload: Any = None
    event_time: int = 0
    seq_id: int = 0
    subscale_id: Optional[int] = None
    checkpoint_id: Optional[int] = None
    # runtime bookkeeping, not part of the wire contract
    origin: Optional[str] = None
    kg: int = -1
    extra: Optional[dict] = None

    def validate(self) -> "StreamMessage":
        if (self.key is not None) != (self.kind in KEYED_KINDS):
            raise ProtocolError(f"{self.kind.name}: key presence violates message contract")
        if (self.subscale_id is not None) != (self.kind in SUBSCALE_KINDS):
            raise ProtocolError(f"{self.kind.name}: subscale_id presence violates message contract")
        return self

    @property
    def is_data(self) -> bool:
        return self.kind is MsgKind.DATA

    def __repr__(self):
        bits = [self.kind.name]
        if self.key is not None:
            bits.append(f"key={self.key!r}")
        if self.subscale_id is not None:
            bits.append(f"s={self.subscale_id}")
        if self.checkpoint_id is not None:
            bits.append(f"ckpt={self.checkpoint_id}")
        bits.append(f"seq={self.seq_id}")
        return f"<{' '.join(bits)}>"


class SeqAllocator:
    """Globally unique 64-bit ids, monotone per producing instance.

    The producer index occupies the top 24 bits so ids from different
    instances never collide.
    """

    SHIFT = 40
    # control signals draw from their own range so data ids do not depend on them
    CONTROL = 1 << 39

    def __init__(self, producer_index: int, issued: int = 0):
        self._base = producer_index << self.SHIFT
        self.issued = issued
        self.control_issued = 0

    def next(self) -> int:
        self.issued += 1
        return self._base | self.issued

    def peek(self) -> int:
        """Id the next data message will get."""
        return self._base | (self.issued + 1)

    def next_control(self) -> int:
        self.control_issued += 1
        return self._base | self.CONTROL | self.control_issued


def producer_of(seq_id: int) -> int:
    return seq_id >> SeqAllocator.SHIFT


def data(key: bytes, payload: Any = None, event_time: int = 0, seq_id: int = 0,
         origin: Optional[str] = None) -> StreamMessage:
    return StreamMessage(MsgKind.DATA, key=key, payload=payload, event_time=event_time,
                         seq_id=seq_id, origin=origin)


def watermark(ts: int, seq_id: int = 0) -> StreamMessage:
    return StreamMessage(MsgKind.WATERMARK, event_time=ts, seq_id=seq_id)


def marker(emitted_at: int, seq_id: int = 0, origin: Optional[str] = None) -> StreamMessage:
    return StreamMessage(MsgKind.LATENCY_MARKER, event_time=emitted_at, seq_id=seq_id,
                         origin=origin)


def trigger(subscale_id: int, seq_id: int = 0, **extra) -> StreamMessage:
    return StreamMessage(MsgKind.TRIGGER_BARRIER, subscale_id=subscale_id, seq_id=seq_id,
                         extra=extra or None)


def confirm(subscale_id: int, seq_id: int = 0, **extra) -> StreamMessage:
    return StreamMessage(MsgKind.CONFIRM_BARRIER, subscale_id=subscale_id, seq_id=seq_id,
                         extra=extra or None)


def checkpoint_barrier(checkpoint_id: int, seq_id: int = 0) -> StreamMessage:
    return StreamMessage(MsgKind.CHECKPOINT_BARRIER, checkpoint_id=checkpoint_id,
                         seq_id=seq_id)
