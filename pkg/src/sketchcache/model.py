"""Core data model: samples, series identity, windows, sketch configuration.

Conventions used throughout the package:

* timestamps are integer milliseconds,
* windows are start-exclusive / end-inclusive: ``start < t <= end``,
* sample values are floats or strings; strings (and floats, uniformly)
  are interned to 64-bit tokens for the frequency-domain sketches.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

from .errors import DuplicateLabel, EmptyWindow

Value = Union[float, str]

_NAME_RE = re.compile(r"^[a-zA-Z_][a-zA-Z0-9_]*$")


class Family(Enum):
    """Statistic family an instance serves; also the payload kind."""

    QUANTILE = "quantile"
    GSUM = "gsum"
    SAMPLE = "sample"


def _hash_bytes(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SeriesId:
    """Canonical identity of one timeseries."""

    metric: str
    labels: tuple[tuple[str, str], ...]
    canonical_id: int

    def canonical(self) -> str:
        if not self.labels:
            return self.metric
        inner = ",".join(f'{k}="{v}"' for k, v in self.labels)
        return f"{self.metric}{{{inner}}}"

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.canonical()


def canonicalize(metric: str, labels: Mapping[str, str] | Sequence[tuple[str, str]] = ()) -> SeriesId:
    """Build a :class:`SeriesId` with sorted labels and a stable 64-bit id.

    Label order does not matter; duplicate label names raise
    :class:`DuplicateLabel`. The id is a keyed content hash, so it is
    stable across processes and restarts.
    """
    if not _NAME_RE.match(metric):
        raise ValueError(f"invalid metric name: {metric!r}")
    pairs = list(labels.items()) if isinstance(labels, Mapping) else list(labels)
    seen: set[str] = set()
    for name, value in pairs:
        if not _NAME_RE.match(name):
            raise ValueError(f"invalid label name: {name!r}")
        if not isinstance(value, str):
            raise ValueError(f"label value must be a string: {name}={value!r}")
        if name in seen:
            raise DuplicateLabel(f"label {name!r} appears more than once")
        seen.add(name)
    ordered = tuple(sorted(pairs))
    sid = SeriesId(metric, ordered, 0)
    cid = _hash_bytes(sid.canonical().encode("utf-8"))
    return SeriesId(metric, ordered, cid)


@dataclass(frozen=True)
class TimeWindow:
    """Half-open-from-the-left window ``(start, end]`` in milliseconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise EmptyWindow(f"window ({self.start}, {self.end}] has no interior")

    @property
    def duration_ms(self) -> int:
        return self.end - self.start


def window_contains(w: TimeWindow, ts_ms: int) -> bool:
    """True iff the sample at ``ts_ms`` belongs to ``w`` (start-exclusive)."""
    return w.start < ts_ms <= w.end


@dataclass(frozen=True)
class DataSample:
    series: SeriesId
    ts_ms: int
    value: Value

    def __post_init__(self) -> None:
        if self.ts_ms < 0:
            raise ValueError("timestamp must be >= 0")


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class SketchConfig:
    """Shared knob block for every sketch kind.

    ``map_threshold_bytes=0`` means "derive the default": the serialized
    size of one universal sketch under this config, so exact maps are kept
    exactly while they are no bigger than the sketch that would replace
    them.
    """

    k_eh: int = 50
    k_kll: int = 256
    univ_layers: int = 16
    cs_rows: int = 3
    cs_cols_top: int = 2048
    cs_cols_bottom: int = 512
    map_threshold_bytes: int = 0
    sample_prob: float = 0.1
    confidence_delta: float = 0.05

    def __post_init__(self) -> None:
        if self.k_eh < 2:
            raise ValueError("k_eh must be >= 2")
        if self.k_kll < 8:
            raise ValueError("k_kll must be >= 8")
        if not 1 <= self.univ_layers <= 64:
            raise ValueError("univ_layers must be in [1, 64]")
        if self.cs_rows < 1 or self.cs_rows > 64:
            raise ValueError("cs_rows must be in [1, 64]")
        if not (_is_pow2(self.cs_cols_top) and _is_pow2(self.cs_cols_bottom)):
            raise ValueError("count-sketch column counts must be powers of two")
        if self.cs_cols_bottom > self.cs_cols_top:
            raise ValueError("cs_cols_bottom must not exceed cs_cols_top")
        if not 0.0 < self.sample_prob <= 1.0:
            raise ValueError("sample_prob must be in (0, 1]")
        if not 0.0 < self.confidence_delta < 1.0:
            raise ValueError("confidence_delta must be in (0, 1)")

    def layer_cols(self, layer: int) -> int:
        """Pyramid layout: the top half of the layers get the wide sketches."""
        return self.cs_cols_top if layer < (self.univ_layers + 1) // 2 else self.cs_cols_bottom

    def univ_fixed_bytes(self) -> int:
        """Serialized size of one universal sketch's fixed part (seeds+counters)."""
        counter_bytes = sum(8 * self.cs_rows * self.layer_cols(l) for l in range(self.univ_layers))
        return 64 + counter_bytes

    def map_threshold(self) -> int:
        return self.map_threshold_bytes if self.map_threshold_bytes > 0 else self.univ_fixed_bytes()


# Paper-tuned defaults per family: quantiles want a fine EH grid and a
# k=256 quantile sketch; frequency stats run on a coarser EH over the
# 16-layer pyramid of count sketches.
def default_quantile_config() -> SketchConfig:
    return SketchConfig(k_eh=50, k_kll=256)


def default_gsum_config() -> SketchConfig:
    return SketchConfig(k_eh=20, univ_layers=16, cs_rows=3, cs_cols_top=2048, cs_cols_bottom=512)


class InternTable:
    """Per-process value interning: any sample value <-> 64-bit token.

    Strings and floats are both hashed into one token space (keyed blake2b,
    so tokens are stable across processes); the reverse map is kept so
    top-k results can surface the original values.
    """

    __slots__ = ("_rev",)

    def __init__(self) -> None:
        self._rev: dict[int, Value] = {}

    def encode(self, value: Value) -> int:
        if isinstance(value, str):
            token = _hash_bytes(b"s:" + value.encode("utf-8"))
        else:
            token = _hash_bytes(b"f:" + struct.pack("<d", float(value)))
        self._rev.setdefault(token, value)
        return token

    def decode(self, token: int) -> Value | None:
        return self._rev.get(token)

    def encode_many(self, values: Iterable[Value]) -> list[int]:
        return [self.encode(v) for v in values]

    def __len__(self) -> int:
        return len(self._rev)


INTERN = InternTable()
