"""Point-to-point channels with a normal and a priority lane.

A channel is split into three stages:

* ``output_cache`` -- sender-side FIFO of messages not yet put on the wire
  (network buffers at the sender are folded into it);
* the wire -- messages in transit, each with an arrival tick;
* the receiver inbox -- arrived messages waiting to be selected.

Priority messages skip the output cache and the receiver's normal inbox.
"""
from __future__ import annotations

from collections import deque
from typing import Any, Callable, Collection, Deque, Iterator, List, Optional, Tuple

from ..errors import ChannelClosed, SenderMismatch
from ..state import key_to_keygroup
from .messages import Lane, MsgKind, StreamMessage


class Channel:
    __slots__ = (
        "sender", "receiver", "name", "capacity", "buffer_size",
        "output_cache", "wire", "inbox", "prio_wire", "prio_inbox",
        "closed", "last_arrival", "last_prio_arrival", "ckpt_floor",
        "enqueued", "delivered", "index",
    )

    def __init__(self, sender: str, receiver: str, capacity: int = 1000,
                 buffer_size: int = 256, name: Optional[str] = None):
        self.sender = sender
        self.receiver = receiver
        self.name = name or f"{sender}->{receiver}"
        self.capacity = capacity
        self.buffer_size = buffer_size
        self.output_cache: Deque[StreamMessage] = deque()
        self.wire: Deque[Tuple[int, StreamMessage]] = deque()
        self.inbox: Deque[StreamMessage] = deque()
        self.prio_wire: Deque[Tuple[int, StreamMessage]] = deque()
        self.prio_inbox: Deque[StreamMessage] = deque()
        self.closed = False
        self.last_arrival = 0
        self.last_prio_arrival = 0
        self.ckpt_floor = 1
        self.enqueued = 0
        self.delivered = 0
        self.index = -1

    # sender side
    def enqueue(self, msg: StreamMessage, lane: Lane = Lane.NORMAL) -> None:
        if self.closed:
            raise ChannelClosed(self.name)
        if lane is Lane.PRIORITY:
            self.prio_wire.append((self.last_prio_arrival, msg))
        else:
            self.output_cache.append(msg)

    def cache_full(self) -> bool:
        return len(self.output_cache) >= self.capacity

    def room(self) -> int:
        return self.buffer_size - len(self.wire) - len(self.inbox)

    def put_wire(self, msg: StreamMessage, arrival: int) -> int:
        """Place ``msg`` on the normal wire; arrival order never inverts."""
        arrival = max(arrival, self.last_arrival)
        self.last_arrival = arrival
        self.wire.append((arrival, msg))
        return arrival

    def put_priority(self, msg: StreamMessage, arrival: int) -> int:
        if self.closed:
            raise ChannelClosed(self.name)
        arrival = max(arrival, self.last_prio_arrival)
        self.last_prio_arrival = arrival
        self.prio_wire.append((arrival, msg))
        return arrival

    # receiver side
    def arrive(self, now: int) -> int:
        moved = 0
        while self.prio_wire and self.prio_wire[0][0] <= now:
            self.prio_inbox.append(self.prio_wire.popleft()[1])
            moved += 1
        while self.wire and self.wire[0][0] <= now:
            msg = self.wire.popleft()[1]
            self.enqueued += 1
            if msg.extra is None:
                msg.extra = {"pos": self.enqueued}
            else:
                msg.extra["pos"] = self.enqueued
            self.inbox.append(msg)
            moved += 1
        return moved

    def dequeue(self) -> Optional[StreamMessage]:
        """Next message in logical delivery order, ignoring transit delays.

        Priority stages drain first, then the normal lane from the receiver
        inbox back through the wire to the sender's output cache.
        """
        if self.prio_inbox:
            return self.prio_inbox.popleft()
        if self.prio_wire:
            return self.prio_wire.popleft()[1]
        if self.inbox:
            return self.inbox.popleft()
        if self.wire:
            return self.wire.popleft()[1]
        if self.output_cache:
            return self.output_cache.popleft()
        return None

    def pending(self) -> int:
        return (len(self.output_cache) + len(self.wire) + len(self.inbox)
                + len(self.prio_wire) + len(self.prio_inbox))

    def in_transit(self) -> Iterator[StreamMessage]:
        for _, msg in self.wire:
            yield msg

    def close(self) -> None:
        self.closed = True

    def __repr__(self):
        return (f"Channel({self.name}, cache={len(self.output_cache)}, "
                f"wire={len(self.wire)}, inbox={len(self.inbox)})")


def _kg_of(msg: StreamMessage, num_keygroups: int) -> int:
    if msg.kg < 0:
        msg.kg = key_to_keygroup(msg.key, num_keygroups)
    return msg.kg


def redirect_output_cache(old: Channel, new: Channel, keygroups: Collection[int],
                          num_keygroups: int, after_checkpoint: bool = False,
                          on_move: Optional[Callable[[StreamMessage], None]] = None) -> int:
    """Move cached Data messages whose key-group is in ``keygroups`` to ``new``.

    Relative order is kept on both sides.  Watermarks inside the redirected
    region are duplicated onto ``new`` at their relative position.  With
    ``after_checkpoint`` only the region behind the last cached checkpoint
    barrier is considered; everything before it stays put.  ``on_move`` is
    called with every moved Data message.
    """
    if old.sender != new.sender:
        raise SenderMismatch(f"{old.name} vs {new.name}")
    cache = old.output_cache
    if not cache:
        return 0
    start = 0
    if after_checkpoint:
        for i in range(len(cache) - 1, -1, -1):
            if cache[i].kind is MsgKind.CHECKPOINT_BARRIER:
                start = i + 1
                break
    kept: List[StreamMessage] = []
    moved: List[StreamMessage] = []
    for i, msg in enumerate(cache):
        if i < start:
            kept.append(msg)
        elif msg.kind is MsgKind.DATA and _kg_of(msg, num_keygroups) in keygroups:
            moved.append(msg)
        elif msg.kind is MsgKind.WATERMARK:
            kept.append(msg)
            moved.append(StreamMessage(MsgKind.WATERMARK, event_time=msg.event_time,
                                       seq_id=msg.seq_id, origin=msg.origin))
        else:
            kept.append(msg)
    count = sum(1 for m in moved if m.kind is MsgKind.DATA)
    if count == 0:
        return 0
    old.output_cache = deque(kept)
    if on_move is not None:
        for m in moved:
            if m.kind is MsgKind.DATA:
                on_move(m)
    new.output_cache.extend(moved)
    return count
