"""Link similarity from per-time-bin speed histograms.

For every link and daily time bin the mean observed traversal speed is taken
over the training trips that departed in that bin (a trip revisiting a link
contributes once per visit).  The means are min-max scaled with one global
``(min, max)`` pair and the pairwise Euclidean distance between the scaled
profiles forms the difference matrix Q.  Small Q means similar links.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import Trip
from .errors import ConfigurationError, DataCorruptionError, DegenerateDataError, InvalidArgumentError
from .timebins import DEFAULT_SCHEDULE, TimeBinSchedule

QMAT_MAGIC = b"RNMLQMAT"


def bin_of(depart_ts: int, schedule: TimeBinSchedule = DEFAULT_SCHEDULE) -> int:
    """1-based time bin of a departure timestamp."""
    return schedule.bin_of(depart_ts)


@dataclass
class BinMeans:
    """Raw per-link, per-bin mean speeds.  Arrays are ``(M, K)``, row ``link_id - 1``."""

    means: np.ndarray
    support: np.ndarray
    imputed: np.ndarray
    bin_global_means: np.ndarray

    @property
    def m(self) -> int:
        return int(self.means.shape[0])


@dataclass
class SpeedHistograms:
    """Min-max scaled speed profiles of all links, plus the scaling pair."""

    values: np.ndarray  # (M, K) in [0, 1]
    support: np.ndarray
    imputed: np.ndarray
    low: float
    high: float

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    def histogram(self, link_id: int) -> np.ndarray:
        return self.values[link_id - 1]


def bin_average_speeds(train: Sequence[Trip], m: int, schedule: TimeBinSchedule = DEFAULT_SCHEDULE) -> BinMeans:
    """Mean traversal speed per (link, bin) with exactly rounded sums.

    Bins a link was never observed in are filled with that bin's global mean
    speed and flagged in ``imputed``.
    """
    k = schedule.k
    if not train:
        raise ConfigurationError("no training trips to build speed histograms from")
    links = np.concatenate([t.link_ids for t in train])
    speeds = np.concatenate([t.link_speeds_mps for t in train])
    bins = np.repeat(schedule.bin_index([t.depart_ts for t in train]),
                     [t.n_links for t in train])
    if links.min() < 1 or links.max() > m:
        raise DataCorruptionError(f"training trips reference links outside [1, {m}]")
    key = (links - 1) * k + bins
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    speeds_sorted = speeds[order]
    uniq, starts, counts = np.unique(key_sorted, return_index=True, return_counts=True)

    sums = np.zeros(m * k)
    support = np.zeros(m * k, dtype=np.int64)
    for u, s, c in zip(uniq, starts, counts):
        # fsum is exactly rounded, so the mean does not depend on trip order.
        sums[u] = math.fsum(speeds_sorted[s:s + c])
        support[u] = c
    sums = sums.reshape(m, k)
    support = support.reshape(m, k)

    global_means = np.empty(k)
    for b in range(k):
        sel = bins == b
        if not sel.any():
            raise ConfigurationError(f"time bin {b + 1} has no observations on any link")
        global_means[b] = math.fsum(speeds[sel]) / int(sel.sum())

    imputed = support == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(imputed, global_means[None, :], sums / np.maximum(support, 1))
    return BinMeans(means, support, imputed, global_means)


def normalize(raw: BinMeans) -> SpeedHistograms:
    """Scale every entry with the global min ``a`` and max ``b``: ``(v - a) / (b - a)``."""
    low = float(raw.means.min())
    high = float(raw.means.max())
    if not high > low:
        raise DegenerateDataError("all per-bin mean speeds are equal; cannot min-max scale")
    values = (raw.means - low) / (high - low)
    return SpeedHistograms(values, raw.support.copy(), raw.imputed.copy(), low, high)


def speed_histograms(train: Sequence[Trip], m: int, schedule: TimeBinSchedule = DEFAULT_SCHEDULE) -> SpeedHistograms:
    return normalize(bin_average_speeds(train, m, schedule))


def _pairwise(values: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = values[a] - values[b]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def difference_matrix(histograms) -> np.ndarray:
    """Dense ``M x M`` matrix of L2 distances between scaled speed profiles."""
    values = histograms.values if isinstance(histograms, SpeedHistograms) else np.asarray(histograms, dtype=np.float64)
    m = values.shape[0]
    q = np.empty((m, m))
    for i in range(m):
        # Row-wise evaluation of the same formula used on demand keeps both
        # storage modes bit-identical.
        diff = values[i] - values
        q[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    q = np.minimum(q, q.T)
    np.fill_diagonal(q, 0.0)
    return q


class DifferenceLookup:
    """Q entries by 1-based link ID, backed by a dense matrix or computed on demand.

    ``mode="dense"`` materializes the full matrix; ``mode="on_demand"`` keeps
    only the ``(M, K)`` histogram values, which is what large networks need.
    """

    def __init__(self, histograms, mode: str = "dense"):
        values = histograms.values if isinstance(histograms, SpeedHistograms) else np.asarray(histograms, dtype=np.float64)
        if mode not in ("dense", "on_demand"):
            raise InvalidArgumentError(f"unknown storage mode {mode!r}")
        self.values = values
        self.mode = mode
        self.m = values.shape[0]
        self.dense = difference_matrix(values) if mode == "dense" else None

    @classmethod
    def from_matrix(cls, q: np.ndarray) -> "DifferenceLookup":
        obj = cls.__new__(cls)
        obj.values = None
        obj.mode = "dense"
        obj.m = q.shape[0]
        obj.dense = np.asarray(q, dtype=np.float64)
        return obj

    def _check(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 1 or ids.max() > self.m):
            raise InvalidArgumentError(f"link IDs must be in [1, {self.m}]")
        return ids - 1

    def pairs(self, a, b) -> np.ndarray:
        """Vectorized lookup for arrays of 1-based IDs."""
        ia, ib = self._check(a), self._check(b)
        if self.dense is not None:
            return self.dense[ia, ib]
        # Same formula as a dense row, evaluated from the smaller index so
        # that both modes agree to the last bit.
        lo, hi = np.minimum(ia, ib), np.maximum(ia, ib)
        out = _pairwise(self.values, lo, hi)
        out[ia == ib] = 0.0
        return out

    def __call__(self, i: int, j: int) -> float:
        return float(self.pairs([i], [j])[0])


def lookup_difference(q, i: int, j: int) -> float:
    """Q between links ``i`` and ``j`` (1-based) from a dense array or a :class:`DifferenceLookup`."""
    if isinstance(q, DifferenceLookup):
        return q(i, j)
    q = np.asarray(q)
    m = q.shape[0]
    if not (1 <= i <= m and 1 <= j <= m):
        raise InvalidArgumentError(f"link IDs must be in [1, {m}]")
    return float(q[i - 1, j - 1])


# --- persistence -----------------------------------------------------------

def histogram_header(k: int) -> list[str]:
    return (["link_id"] + [f"v{b + 1}" for b in range(k)] + [f"z{b + 1}" for b in range(k)]
            + [f"imp{b + 1}" for b in range(k)])


def write_histograms_csv(hist: SpeedHistograms, path) -> None:
    k = hist.values.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(histogram_header(k))
        for i in range(hist.m):
            w.writerow([i + 1]
                       + [repr(float(v)) for v in hist.values[i]]
                       + [int(z) for z in hist.support[i]]
                       + [int(x) for x in hist.imputed[i]])


def read_histograms_csv(path) -> SpeedHistograms:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [r for r in reader if r]
    if header is None or (len(header) - 1) % 3 or header != histogram_header((len(header) - 1) // 3):
        raise DataCorruptionError(f"{path}: unexpected histogram header {header}")
    k = (len(header) - 1) // 3
    if [int(r[0]) for r in rows] != list(range(1, len(rows) + 1)):
        raise DataCorruptionError(f"{path}: link IDs must be the contiguous range 1..M")
    values = np.array([[float(x) for x in r[1:1 + k]] for r in rows]).reshape(len(rows), k)
    support = np.array([[int(x) for x in r[1 + k:1 + 2 * k]] for r in rows], dtype=np.int64).reshape(len(rows), k)
    imputed = np.array([[x == "1" for x in r[1 + 2 * k:]] for r in rows], dtype=bool).reshape(len(rows), k)
    return SpeedHistograms(values, support, imputed, 0.0, 1.0)


def write_q_matrix(q: np.ndarray, path) -> None:
    q = np.ascontiguousarray(q, dtype="<f8")
    m = q.shape[0]
    with open(path, "wb") as fh:
        fh.write(QMAT_MAGIC + struct.pack("<II", m, 0))
        fh.write(q.tobytes(order="C"))


def read_q_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != QMAT_MAGIC:
            raise DataCorruptionError(f"{path}: not a Q matrix dump")
        (m, _reserved) = struct.unpack("<II", head[8:])
        body = fh.read()
    if len(body) != 8 * m * m:
        raise DataCorruptionError(f"{path}: expected {m}x{m} float64 entries")
    return np.frombuffer(body, dtype="<f8").reshape(m, m).astype(np.float64)
