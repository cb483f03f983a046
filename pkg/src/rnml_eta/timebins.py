"""Daily time-bin schedules and calendar helpers for departure timestamps.

Timestamps are seconds since the Unix epoch and are read in a fixed local
offset (``utc_offset_s``, default 0), so the calendar is free of DST and
holiday effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

SECONDS_PER_DAY = 86_400
SECONDS_PER_WEEK = 7 * SECONDS_PER_DAY
SLICE_SECONDS = 300
SLICES_PER_DAY = SECONDS_PER_DAY // SLICE_SECONDS


@dataclass(frozen=True)
class TimeBinSchedule:
    """K bins, each a union of ``[start_hour, end_hour)`` ranges.

    The default is the three-bin morning-peak / evening-peak / off-peak
    split: ``[5, 11)``, ``[16, 22)`` and the remaining hours.
    """

    bins: tuple = (
        ((5.0, 11.0),),
        ((16.0, 22.0),),
        ((0.0, 5.0), (11.0, 16.0), (22.0, 24.0)),
    )
    utc_offset_s: int = 0
    _edges: np.ndarray = field(init=False, repr=False, compare=False)
    _labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        intervals = []
        for k, ranges in enumerate(self.bins):
            if not ranges:
                raise ConfigurationError(f"time bin {k + 1} has no hour ranges")
            for start, end in ranges:
                if not 0.0 <= start < end <= 24.0:
                    raise ConfigurationError(f"bad hour range [{start}, {end}) in bin {k + 1}")
                intervals.append((float(start), float(end), k))
        intervals.sort()
        cursor = 0.0
        for start, end, _ in intervals:
            if start != cursor:
                kind = "overlap" if start < cursor else "gap"
                raise ConfigurationError(f"time bins {kind} at hour {min(start, cursor)}")
            cursor = end
        if cursor != 24.0:
            raise ConfigurationError("time bins do not cover the whole day")
        object.__setattr__(self, "_edges", np.array([iv[1] * 3600.0 for iv in intervals]))
        object.__setattr__(self, "_labels", np.array([iv[2] for iv in intervals], dtype=np.int64))

    @property
    def k(self) -> int:
        return len(self.bins)

    def seconds_of_day(self, ts) -> np.ndarray:
        return np.mod(np.asarray(ts, dtype=np.int64) + self.utc_offset_s, SECONDS_PER_DAY)

    def bin_index(self, ts) -> np.ndarray:
        """0-based bin index for one or many timestamps."""
        sod = self.seconds_of_day(ts)
        pos = np.searchsorted(self._edges, sod, side="right")
        return self._labels[pos]

    def bin_of(self, ts: int) -> int:
        """1-based bin number containing the local time of ``ts``."""
        return int(self.bin_index(ts)) + 1


DEFAULT_SCHEDULE = TimeBinSchedule()


def time_slice(ts, utc_offset_s: int = 0) -> np.ndarray:
    """5-minute slice of the day, in ``[0, 288)``."""
    sod = np.mod(np.asarray(ts, dtype=np.int64) + utc_offset_s, SECONDS_PER_DAY)
    return sod // SLICE_SECONDS


def day_of_week(ts, utc_offset_s: int = 0) -> np.ndarray:
    """Day of week with Monday = 0 (the epoch fell on a Thursday)."""
    days = np.floor_divide(np.asarray(ts, dtype=np.int64) + utc_offset_s, SECONDS_PER_DAY)
    return np.mod(days + 3, 7)


def schedule_from_hours(bins: Sequence[Sequence[Sequence[float]]], utc_offset_s: int = 0) -> TimeBinSchedule:
    return TimeBinSchedule(
        bins=tuple(tuple((float(a), float(b)) for a, b in ranges) for ranges in bins),
        utc_offset_s=utc_offset_s,
    )
