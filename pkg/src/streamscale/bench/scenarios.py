"""Hand-built scenarios that put one protocol mechanism under a spotlight.

Each builder returns a ``(ScenarioConfig, Workload)`` pair that
:func:`run_scenario` accepts directly.
"""
from __future__ import annotations

import dataclasses
from typing import Dict, List, Sequence, Tuple

from ..state import key_to_keygroup
from .scenario import ScenarioConfig
from .workload import Record, Workload, WorkloadConfig, generate_workload


def keys_in_keygroup(kg: int, num_keygroups: int, count: int, prefix: bytes = b"k") -> List[bytes]:
    """The first ``count`` keys ``prefix + n`` that hash into ``kg``."""
    out: List[bytes] = []
    n = 0
    while len(out) < count:
        key = prefix + b"%d" % n
        if key_to_keygroup(key, num_keygroups) == kg:
            out.append(key)
        n += 1
    return out


def _workload(records: List[Record], duration: int, watermark_period: int = 0,
              marker_period: int = 0) -> Workload:
    cfg = WorkloadConfig(rate=1000.0, duration=duration, key_space=1, zipf_s=0.0,
                         marker_period=marker_period, watermark_period=watermark_period)
    return Workload(cfg, records)


def _layout(num_keygroups: int, keys_per_kg: int) -> Dict[int, List[bytes]]:
    return {kg: keys_in_keygroup(kg, num_keygroups, keys_per_kg) for kg in range(num_keygroups)}


def _kept(index: int, num_keygroups: int) -> List[int]:
    """Key-groups instance ``index`` owns both at parallelism 2 and at 3."""
    return [kg for kg in range(num_keygroups)
            if kg * 2 // num_keygroups == index and kg * 3 // num_keygroups == index]


def head_of_line(payload_bytes: int = 1024, keys_per_kg: int = 8, scale_at: int = 600,
                 tail: int = 400, gap: int = 2, per_tick: int = 1, watermark_period: int = 0,
                 targets: Sequence[int] = (2,), with_local: bool = False, node_cap: int = 2
                 ) -> Tuple[ScenarioConfig, Workload]:
    """Scale 2 -> 3 where a target's first post-scaling record needs its last key-group.

    A warm-up pass gives every key-group ``keys_per_kg`` entries of
    ``payload_bytes`` each, so every chunk takes a while on the link.  Right
    after scaling the single source sends one record for the highest
    migrating key-group of each of ``targets``, then a steady mix over their
    remaining migrating key-groups, ``per_tick`` records every ``gap``
    ticks.  A protocol that serves records strictly in
    arrival order waits on the last chunk of its migration sequence.
    ``with_local`` interleaves records for key-groups the targets already own
    and keep, which an instance can process while it waits.
    """
    K = 32
    keys = _layout(K, keys_per_kg)
    incoming = {t: kgs for t, kgs in ((1, list(range(11, 16))), (2, list(range(22, 32))))
                if t in targets}
    records: List[Record] = []
    t = 0
    for kg in range(K):
        for key in keys[kg]:
            records.append((t, key, 1))
            t += 1
    assert t < scale_at, "warm-up must finish before scaling"
    t = scale_at + 1
    for tgt in sorted(incoming):
        records.append((t, keys[incoming[tgt][-1]][0], 1))
        t += 1
    others = [kg for tgt in sorted(incoming) for kg in incoming[tgt][:-1]]
    if with_local:
        local = [kg for tgt in sorted(incoming) for kg in _kept(tgt, K)]
        mixed = []
        for i in range(max(len(others), len(local))):
            mixed.append(local[i % len(local)])
            mixed.append(others[i % len(others)])
        others = mixed
    for i in range(tail):
        kg = others[i % len(others)]
        records.append((t, keys[kg][i % keys_per_kg], 1))
        if (i + 1) % per_tick == 0:
            t += gap
    wl = _workload(records, t + 1, watermark_period)
    cfg = ScenarioConfig(
        name="head_of_line", sources=1, node_cap=node_cap, num_keygroups=K, parallelism=2, new_parallelism=3,
        scale_at=scale_at, workload=dataclasses.replace(wl.config, payload_bytes=payload_bytes),
        stab_window=200,
    )
    wl.config = cfg.workload
    return cfg, wl


def prequeued(rate: float = 1600.0, process_ticks: int = 4, duration: int = 8000,
              seed: int = 1) -> Tuple[ScenarioConfig, Workload]:
    """An overloaded aggregator so more than 1000 records wait in each predecessor's cache."""
    wc = WorkloadConfig(rate=rate, duration=duration, key_space=500, zipf_s=1.0, seed=seed)
    cfg = ScenarioConfig(name="prequeued", process_ticks=process_ticks, channel_capacity=5000,
                         workload=wc)
    return cfg, generate_workload(wc)


def _interleave(first: List[Record], second: List[Record], filler: bytes) -> List[Record]:
    """Merge two per-source streams into the round-robin record order."""
    a, b = list(first), list(second)
    while len(a) < len(b):
        a.append((a[-1][0] + 1 if a else 0, filler, 1))
    while len(b) < len(a):
        b.append((b[-1][0] + 1 if b else 0, filler, 1))
    out: List[Record] = []
    for x, y in zip(a, b):
        out.append(x)
        out.append(y)
    return out


def alternating_access(backlog: int = 300, follow: int = 300, keys_per_kg: int = 8,
                       scale_at: int = 400, hot: int = 22) -> Tuple[ScenarioConfig, Workload]:
    """Old and new owner both keep needing the same hot key-group.

    Just before scaling, source 1 floods the hot key-group so the old owner
    is left with a long backlog of records that precede the routing switch.
    Right after scaling, source 0 keeps sending records for the same
    key-group, which now go to the new owner.  Both owners work on the hot
    key-group at the same time, so pull-based migration hands its fragments
    back and forth.
    """
    K = 32
    keys = _layout(K, keys_per_kg)
    warm = [(kg * keys_per_kg + i, key, 1) for kg in range(K) for i, key in enumerate(keys[kg])]
    warm_end = K * keys_per_kg
    assert warm_end < scale_at - 20
    hot_keys = keys[hot]
    s0 = list(warm[0::2])
    s1 = list(warm[1::2])
    t = scale_at - 20
    for i in range(backlog):
        s1.append((t + i // 16, hot_keys[i % keys_per_kg], 1))
    for i in range(follow):
        s0.append((scale_at + 1 + i, hot_keys[(i * 3) % keys_per_kg], 1))
    filler = keys_in_keygroup(0, K, 1, prefix=b"filler")[0]
    records = _interleave(s0, s1, filler)
    duration = max(r[0] for r in records) + 1
    wl = _workload(records, duration)
    cfg = ScenarioConfig(name="alternating_access", sources=2, num_keygroups=K, parallelism=2,
                         new_parallelism=3, scale_at=scale_at, workload=wl.config,
                         stab_window=200)
    return cfg, wl


def zipf_shared(seed: int, rate: float = 1800.0, duration: int = 8000, key_space: int = 2000,
                payload_bytes: int = 512) -> ScenarioConfig:
    """Generated Zipf(1.0) load near the capacity of the old parallelism.

    Large enough state that migration cost shows up in marker latency.
    """
    return ScenarioConfig(name="zipf_shared",
                          workload=WorkloadConfig(rate=rate, duration=duration,
                                                  key_space=key_space, zipf_s=1.0, seed=seed,
                                                  payload_bytes=payload_bytes))


def checkpoint_during_scaling(case: str) -> ScenarioConfig:
    """Checkpoint 1 at tick 2000 with DRRS scaling starting shortly after.

    ``"a"``: scaling starts while the checkpoint barrier still sits in the
    predecessors' output caches.  ``"b"``: the barrier has already left
    the caches and waits in the scaling instance's input buffer.
    """
    if case == "a":
        rate, scale_at = 3000.0, 2003
    elif case == "b":
        rate, scale_at = 2150.0, 2050
    else:
        raise ValueError(f"unknown checkpoint case {case!r}")
    wc = WorkloadConfig(rate=rate, duration=6000, key_space=300, zipf_s=1.0, seed=5)
    return ScenarioConfig(name=f"checkpoint_{case}", workload=wc, scale_at=scale_at,
                          checkpoints=[(1, 2000)])
