"""Seeded synthetic keyed workloads with Zipf-distributed keys."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Tuple

import numpy as np

Record = Tuple[int, bytes, int]


@dataclass
class WorkloadConfig:
    rate: float = 1000.0          # records per 1000 ticks
    duration: int = 10_000        # ticks
    key_space: int = 1000
    zipf_s: float = 1.0
    payload_bytes: int = 64       # size of one state entry
    seed: int = 0
    marker_period: int = 50
    watermark_period: int = 100
    max_value: int = 100

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.zipf_s < 0:
            raise ValueError("zipf_s must be >= 0")
        if self.key_space < 1 or self.duration < 1:
            raise ValueError("key_space and duration must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Workload:
    config: WorkloadConfig
    records: List[Record]

    @property
    def duration(self) -> int:
        return self.config.duration

    @property
    def marker_period(self) -> int:
        return self.config.marker_period

    @property
    def watermark_period(self) -> int:
        return self.config.watermark_period

    def __len__(self):
        return len(self.records)


class ZipfSampler:
    """Rejection-inversion sampling of ranks in ``[1, n]`` with P(k) ~ k^-s.

    Works for any ``s >= 0`` (``s = 0`` is uniform) and is vectorised over
    numpy arrays.
    """

    def __init__(self, n: int, s: float):
        self.n = n
        self.s = s
        self.h_x1 = self._H(1.5) - 1.0
        self.h_n = self._H(n + 0.5)
        self.cut = 2.0 - self._H_inv(self._H(2.5) - self._h(2.0))

    @staticmethod
    def _helper1(x):
        # log1p(x) / x, continuous at 0
        x = np.asarray(x, dtype=float)
        small = np.abs(x) < 1e-8
        safe = np.where(small, 1.0, x)
        return np.where(small, 1.0 - x / 2.0, np.log1p(safe) / safe)

    @staticmethod
    def _helper2(x):
        # expm1(x) / x, continuous at 0
        x = np.asarray(x, dtype=float)
        small = np.abs(x) < 1e-8
        safe = np.where(small, 1.0, x)
        return np.where(small, 1.0 + x / 2.0, np.expm1(safe) / safe)

    def _h(self, x):
        return np.exp(-self.s * np.log(x))

    def _H(self, x):
        lx = np.log(x)
        return self._helper2((1.0 - self.s) * lx) * lx

    def _H_inv(self, x):
        t = np.maximum(x * (1.0 - self.s), -1.0)
        return np.exp(self._helper1(t) * x)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.int64)
        filled = 0
        while filled < size:
            want = size - filled
            batch = max(64, int(want * 1.3))
            u = self.h_n + rng.random(batch) * (self.h_x1 - self.h_n)
            x = self._H_inv(u)
            k = np.clip(np.floor(x + 0.5), 1, self.n)
            ok = (k - x <= self.cut) | (u >= self._H(k + 0.5) - self._h(k))
            got = k[ok].astype(np.int64)[:want]
            out[filled:filled + len(got)] = got
            filled += len(got)
        return out


def key_name(rank: int) -> bytes:
    return b"key-%d" % rank


def generate_workload(config: WorkloadConfig) -> Workload:
    """Records evenly spaced at ``rate`` per 1000 ticks; event time is the emission tick."""
    n = int(math.floor(config.rate * config.duration / 1000.0))
    rng = np.random.default_rng(config.seed)
    ranks = ZipfSampler(config.key_space, config.zipf_s).sample(rng, n)
    values = rng.integers(1, config.max_value, size=n)
    step = 1000.0 / config.rate
    records = [(int(i * step), key_name(int(r) - 1), int(v))
               for i, (r, v) in enumerate(zip(ranks, values))]
    return Workload(config, records)


def records_from(items) -> Workload:
    """Wrap a hand-built list of ``(tick, key, value)`` records as a workload."""
    items = list(items)
    end = max((t for t, _, _ in items), default=0) + 1
    cfg = WorkloadConfig(rate=1000.0, duration=end, key_space=1, zipf_s=0.0,
                         marker_period=0, watermark_period=0)
    return Workload(cfg, items)
