"""Synthetic road network and trip generator.

The generator exists to reproduce one property of real ride-hailing data:
link coverage is heavily skewed, so a few hot links carry most traffic while
a long tail of cold links is seen only a handful of times.  Links get
Zipf-distributed popularity and trips are popularity-weighted walks over the
(fully connected) link set.

Ground truth for a trip is physical: each link is driven at
``base_speed * peak_multiplier[departure bin] * lognormal noise`` and every
traversal adds an exponential intersection wait.  The mean wait of a link
grows as its slowest peak speed drops, so the wait is tied to the link's speed
profile rather than being independent per-link noise.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataCorruptionError, InvalidArgumentError
from .timebins import DEFAULT_SCHEDULE, SECONDS_PER_WEEK, TimeBinSchedule

# 2018-01-01 00:00:00 UTC, a Monday.
DEFAULT_START_TS = 1_514_764_800

MIN_TRAVEL_TIME_S = 60.0
MAX_MEAN_SPEED_MPS = 120.0 / 3.6

CATALOG_HEADER = ["link_id", "length_m", "base_speed_mps", "mult_bin1", "mult_bin2", "mult_bin3", "popularity"]


@dataclass
class LinkCatalog:
    """Static per-link records, stored column-wise and indexed by ``link_id - 1``."""

    length_m: np.ndarray
    base_speed_mps: np.ndarray
    peak_profile: np.ndarray  # (M, K) speed multipliers
    popularity: np.ndarray
    mean_wait_s: float = 8.0

    def __post_init__(self):
        self.length_m = np.asarray(self.length_m, dtype=np.float64)
        self.base_speed_mps = np.asarray(self.base_speed_mps, dtype=np.float64)
        self.peak_profile = np.atleast_2d(np.asarray(self.peak_profile, dtype=np.float64))
        self.popularity = np.asarray(self.popularity, dtype=np.float64)
        m = self.length_m.shape[0]
        if not (self.base_speed_mps.shape == (m,) and self.popularity.shape == (m,) and self.peak_profile.shape[0] == m):
            raise InvalidArgumentError("catalog columns disagree in length")
        if np.any(self.length_m <= 0) or np.any(self.base_speed_mps <= 0) or np.any(self.peak_profile <= 0):
            raise InvalidArgumentError("lengths, base speeds and multipliers must be positive")
        if np.any(self.popularity <= 0):
            raise InvalidArgumentError("popularity weights must be positive")

    @property
    def m(self) -> int:
        return int(self.length_m.shape[0])

    @property
    def link_ids(self) -> np.ndarray:
        return np.arange(1, self.m + 1, dtype=np.int64)

    def wait_means(self) -> np.ndarray:
        """Per-link mean intersection wait (seconds); averages ``mean_wait_s`` over the catalog.

        Proportional to ``(base_speed * min multiplier) ** -0.5``: links that
        get slow at some point of the day also hold cars longer at their
        downstream intersection.
        """
        slowest = self.base_speed_mps * self.peak_profile.min(axis=1)
        raw = slowest ** -0.5
        return self.mean_wait_s * raw / raw.mean()

    def sampling_cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.popularity / self.popularity.sum())
        cdf[-1] = 1.0
        return cdf


@dataclass
class Trip:
    trip_id: int
    driver_id: int
    depart_ts: int
    link_ids: np.ndarray
    link_speeds_mps: np.ndarray
    travel_time_s: float

    def __post_init__(self):
        self.link_ids = np.asarray(self.link_ids, dtype=np.int64)
        self.link_speeds_mps = np.asarray(self.link_speeds_mps, dtype=np.float64)
        if self.link_ids.ndim != 1 or self.link_ids.size < 1:
            raise InvalidArgumentError(f"trip {self.trip_id}: empty link sequence")
        if self.link_ids.shape != self.link_speeds_mps.shape:
            raise InvalidArgumentError(f"trip {self.trip_id}: links and speeds differ in length")

    @property
    def n_links(self) -> int:
        return int(self.link_ids.size)

    def to_json(self) -> str:
        obj = {
            "trip_id": int(self.trip_id),
            "driver_id": int(self.driver_id),
            "depart_ts": int(self.depart_ts),
            "links": [int(x) for x in self.link_ids],
            "speeds": [round(float(x), 3) for x in self.link_speeds_mps],
            "travel_time_s": float(self.travel_time_s),
        }
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Trip":
        obj = json.loads(line)
        return cls(
            trip_id=int(obj["trip_id"]),
            driver_id=int(obj["driver_id"]),
            depart_ts=int(obj["depart_ts"]),
            link_ids=obj["links"],
            link_speeds_mps=obj["speeds"],
            travel_time_s=float(obj["travel_time_s"]),
        )

    def same_as(self, other: "Trip") -> bool:
        return (
            self.trip_id == other.trip_id
            and self.driver_id == other.driver_id
            and self.depart_ts == other.depart_ts
            and np.array_equal(self.link_ids, other.link_ids)
            and np.array_equal(self.link_speeds_mps, other.link_speeds_mps)
            and self.travel_time_s == other.travel_time_s
        )


@dataclass
class CoverageTable:
    """Training-trip count per link; ``counts[link_id - 1]``."""

    counts: np.ndarray
    mode: str = "trips"

    @property
    def m(self) -> int:
        return int(self.counts.shape[0])

    def __getitem__(self, link_id: int) -> int:
        return int(self.counts[link_id - 1])

    def of(self, link_ids) -> np.ndarray:
        return self.counts[np.asarray(link_ids, dtype=np.int64) - 1]

    def as_dict(self) -> dict:
        return {i + 1: int(c) for i, c in enumerate(self.counts)}


@dataclass
class TripConfig:
    mean_links: float = 20.0
    noise_sigma: float = 0.2
    start_ts: int = DEFAULT_START_TS
    span_weeks: int = 27
    schedule: TimeBinSchedule = field(default_factory=lambda: DEFAULT_SCHEDULE)
    max_attempts: int = 1000


def generate_network(
    m: int,
    seed: int,
    zipf_exponent: float = 1.1,
    mean_wait_s: float = 8.0,
    k_bins: int = 3,
) -> LinkCatalog:
    """Draw ``m`` links with heavy-tailed popularity.

    Lengths are log-uniform in [50, 2000] m and base speeds uniform in
    [3, 25] m/s.  Popularity ranks ``1..m`` get weight ``rank ** -zipf_exponent``
    and are assigned to link IDs by a random permutation.
    """
    if m < 3:
        raise InvalidArgumentError("need at least 3 links")
    rng = np.random.default_rng(seed)
    length = np.exp(rng.uniform(np.log(50.0), np.log(2000.0), size=m))
    base = rng.uniform(3.0, 25.0, size=m)
    # Congestion level drives how far the peak bins drop below free flow.
    congestion = rng.uniform(0.0, 1.0, size=m)
    profile = np.ones((m, k_bins))
    peak_bins = max(k_bins - 1, 1)
    depth = rng.uniform(0.7, 1.0, size=(m, peak_bins))
    profile[:, :peak_bins] = 1.0 - 0.6 * congestion[:, None] * depth
    if k_bins > 1:
        profile[:, -1] = 1.0 - 0.1 * congestion
    ranks = rng.permutation(m) + 1
    weights = ranks.astype(np.float64) ** -zipf_exponent
    weights /= weights.sum()
    return LinkCatalog(length, base, profile, weights, mean_wait_s=mean_wait_s)


def trip_travel_time(lengths_m, speeds_mps, waits_s) -> float:
    """Ground-truth time: driving time of every link plus every intersection wait."""
    lengths_m = np.asarray(lengths_m, dtype=np.float64)
    speeds_mps = np.asarray(speeds_mps, dtype=np.float64)
    return float(np.sum(lengths_m / speeds_mps) + np.sum(waits_s))


def is_valid_trip(total_length_m: float, travel_time_s: float) -> bool:
    """Outlier bounds: at least 60 s and at most 120 km/h on average."""
    return travel_time_s >= MIN_TRAVEL_TIME_S and total_length_m / travel_time_s <= MAX_MEAN_SPEED_MPS


def _draw_route(rng: np.random.Generator, cdf: np.ndarray, n: int) -> np.ndarray:
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    np.minimum(idx, cdf.size - 1, out=idx)
    # Redraw consecutive repeats; a car does not re-enter the link it is on.
    for j in range(1, n):
        while idx[j] == idx[j - 1]:
            idx[j] = min(int(np.searchsorted(cdf, rng.random(), side="right")), cdf.size - 1)
    return idx + 1


def _one_trip(catalog: LinkCatalog, waits: np.ndarray, cdf: np.ndarray, trip_id: int, drivers: int,
              seed: int, cfg: TripConfig) -> Trip:
    rng = np.random.default_rng([seed, trip_id])
    span = cfg.span_weeks * SECONDS_PER_WEEK
    for _ in range(cfg.max_attempts):
        depart = int(cfg.start_ts + rng.integers(0, span))
        driver = int(rng.integers(1, drivers + 1))
        n = int(rng.geometric(1.0 / cfg.mean_links))
        links = _draw_route(rng, cdf, n) if catalog.m > 1 else np.ones(n, dtype=np.int64)
        col = links - 1
        k = int(cfg.schedule.bin_index(depart))
        noise = np.exp(cfg.noise_sigma * rng.standard_normal(n))
        speeds = np.round(catalog.base_speed_mps[col] * catalog.peak_profile[col, k] * noise, 3)
        wait = rng.exponential(waits[col])
        lengths = catalog.length_m[col]
        total = trip_travel_time(lengths, speeds, wait)
        if is_valid_trip(float(lengths.sum()), total):
            return Trip(trip_id, driver, depart, links, speeds, total)
    raise InvalidArgumentError(f"trip {trip_id}: no valid trip after {cfg.max_attempts} attempts")


def _trip_chunk(args) -> list:
    catalog, ids, drivers, seed, cfg = args
    waits = catalog.wait_means()
    cdf = catalog.sampling_cdf()
    return [_one_trip(catalog, waits, cdf, int(i), drivers, seed, cfg) for i in ids]


def worker_count(requested: int | None = None) -> int:
    cap = int(os.environ.get("RNML_THREADS", "0") or 0)
    n = requested if requested is not None else (cap or 1)
    if cap:
        n = min(n, cap)
    return max(1, n)


def generate_trips(
    catalog: LinkCatalog,
    n: int,
    drivers: int,
    seed: int,
    config: TripConfig | None = None,
    workers: int | None = None,
) -> list[Trip]:
    """Generate ``n`` valid trips with IDs ``0..n-1``.

    Every trip draws from its own stream seeded by ``(seed, trip_id)``, so the
    result does not depend on ``workers``.  Trips that break the outlier
    bounds are redrawn, keeping ``n`` exact.
    """
    if catalog is None or catalog.m == 0:
        raise InvalidArgumentError("empty catalog")
    if n < 1 or drivers < 1:
        raise InvalidArgumentError("need n >= 1 and drivers >= 1")
    cfg = config or TripConfig()
    ids = np.arange(n)
    nw = worker_count(workers)
    if nw == 1:
        return _trip_chunk((catalog, ids, drivers, seed, cfg))
    chunks = np.array_split(ids, nw * 4)
    with ProcessPoolExecutor(max_workers=nw) as pool:
        parts = pool.map(_trip_chunk, [(catalog, c, drivers, seed, cfg) for c in chunks])
        return [t for part in parts for t in part]


def split_dataset(trips: Sequence[Trip], fractions=(25 / 27, 1 / 27, 1 / 27)):
    """Chronological train/valid/test split by departure time (never random)."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise InvalidArgumentError("fractions must be three non-negative numbers summing to 1")
    ordered = sorted(trips, key=lambda t: (t.depart_ts, t.trip_id))
    n = len(ordered)
    n_train = int(round(fr[0] * n))
    n_valid = min(int(round(fr[1] * n)), n - n_train)
    return (
        ordered[:n_train],
        ordered[n_train:n_train + n_valid],
        ordered[n_train + n_valid:],
    )


def coverage_counts(train: Iterable[Trip], m: int, mode: str = "trips") -> CoverageTable:
    """Per-link number of training trips traversing it.

    ``mode="trips"`` counts a trip once however often it revisits a link;
    ``mode="traversals"`` counts every visit.
    """
    if mode not in ("trips", "traversals"):
        raise InvalidArgumentError(f"unknown coverage mode {mode!r}")
    counts = np.zeros(m, dtype=np.int64)
    for trip in train:
        ids = trip.link_ids
        if ids.size and (ids.min() < 1 or ids.max() > m):
            raise DataCorruptionError(f"trip {trip.trip_id} references a link outside [1, {m}]")
        if mode == "trips":
            ids = np.unique(ids)
        np.add.at(counts, ids - 1, 1)
    return CoverageTable(counts, mode)


# --- persistence -----------------------------------------------------------

def write_catalog_csv(catalog: LinkCatalog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for i in range(catalog.m):
            w.writerow([
                i + 1,
                repr(float(catalog.length_m[i])),
                repr(float(catalog.base_speed_mps[i])),
                *(repr(float(x)) for x in catalog.peak_profile[i]),
                repr(float(catalog.popularity[i])),
            ])


def read_catalog_csv(path, mean_wait_s: float = 8.0) -> LinkCatalog:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CATALOG_HEADER:
            raise DataCorruptionError(f"{path}: unexpected catalog header {header}")
        rows = [r for r in reader if r]
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    if not np.array_equal(ids, np.arange(1, len(rows) + 1)):
        raise DataCorruptionError(f"{path}: link IDs must be the contiguous range 1..M")
    data = np.array([[float(x) for x in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), 6)
    return LinkCatalog(data[:, 0], data[:, 1], data[:, 2:5], data[:, 5], mean_wait_s=mean_wait_s)


def write_trips_jsonl(trips: Iterable[Trip], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trip in trips:
            fh.write(trip.to_json())
            fh.write("\n")


def read_trips_jsonl(path) -> list[Trip]:
    trips = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                trips.append(Trip.from_json(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataCorruptionError(f"{path}:{lineno}: {exc}") from exc
    return trips


def write_split(train, valid, test, path) -> None:
    doc = {
        "train": [int(t.trip_id) for t in train],
        "valid": [int(t.trip_id) for t in valid],
        "test": [int(t.trip_id) for t in test],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def read_split(trips: Sequence[Trip], path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    by_id = {t.trip_id: t for t in trips}
    try:
        return tuple([by_id[i] for i in doc[name]] for name in ("train", "valid", "test"))
    except KeyError as exc:
        raise DataCorruptionError(f"{path}: split references unknown trip {exc}") from exc
