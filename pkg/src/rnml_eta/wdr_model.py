"""Wide-Deep-Recurrent travel-time regressor, its ablation and a rule baseline.

Per trip the model sees

* a sequence of link columns ``[link embedding (20); scaled length; scaled speed]``
  consumed by an LSTM whose state at the true length is ``h_T``;
* trip-level features: 5-minute time slice, day of week and driver ID (each
  embedded), plus scaled route length, link count and mean link speed.  The
  wide module is one affine map over these features and the pairwise outer
  products of the three categorical embeddings; the deep module is an MLP
  over the same features without the cross terms.

``y' = output_scale * softplus(MLP([h_w; h_d; h_T])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn_core as nn
from .datagen import LinkCatalog, Trip
from .errors import InvalidArgumentError, NonFiniteError
from .timebins import DEFAULT_SCHEDULE, SLICES_PER_DAY, TimeBinSchedule, day_of_week, time_slice

VARIANTS = ("route-eta", "wdr", "wdr-nolink", "rnml")
N_SCALARS = 3
N_DOW = 7


@dataclass
class ModelConfig:
    n_links: int
    n_drivers: int
    variant: str = "wdr"
    hidden: int = 128
    link_dim: int = 20
    slice_dim: int = 8
    dow_dim: int = 3
    driver_dim: int = 8
    deep_layers: int = 3
    reg_layers: int = 2
    output_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def uses_link_embedding(self) -> bool:
        return self.variant != "wdr-nolink"

    @property
    def seq_features(self) -> int:
        return self.link_dim + 2

    @property
    def cat_dim(self) -> int:
        return self.slice_dim + self.dow_dim + self.driver_dim

    @property
    def cross_dim(self) -> int:
        return self.slice_dim * self.dow_dim + self.slice_dim * self.driver_dim + self.dow_dim * self.driver_dim

    @property
    def wide_in(self) -> int:
        return N_SCALARS + self.cat_dim + self.cross_dim

    @property
    def deep_in(self) -> int:
        return N_SCALARS + self.cat_dim


# --- scaling and speed providers ------------------------------------------

@dataclass
class MinMax:
    low: float
    high: float

    def __call__(self, x):
        span = self.high - self.low
        return (np.asarray(x, dtype=np.float64) - self.low) / (span if span > 0 else 1.0)


@dataclass
class Scalers:
    """Min-max scalers fitted on the training split."""

    link_length: MinMax
    link_speed: MinMax
    route_length: MinMax
    link_count: MinMax
    mean_speed: MinMax

    NAMES = ("link_length", "link_speed", "route_length", "link_count", "mean_speed")

    def to_tensors(self) -> dict:
        return {f"scaler.{n}": np.array([getattr(self, n).low, getattr(self, n).high]) for n in self.NAMES}

    @classmethod
    def from_tensors(cls, tensors) -> "Scalers":
        return cls(*(MinMax(*map(float, tensors[f"scaler.{n}"])) for n in cls.NAMES))


def fit_scalers(train: Sequence[Trip], catalog: LinkCatalog) -> Scalers:
    lengths = catalog.length_m
    speeds = np.concatenate([t.link_speeds_mps for t in train])
    route = np.array([lengths[t.link_ids - 1].sum() for t in train])
    count = np.array([t.n_links for t in train], dtype=np.float64)
    mean_speed = np.array([t.link_speeds_mps.mean() for t in train])
    mm = lambda a: MinMax(float(np.min(a)), float(np.max(a)))  # noqa: E731
    return Scalers(mm(lengths), mm(speeds), mm(route), mm(count), mm(mean_speed))


class ObservedSpeeds:
    """Each trip's own per-link speeds (training-time provider)."""

    name = "observed"

    def speeds(self, trip: Trip) -> np.ndarray:
        return trip.link_speeds_mps


class HistoricalSpeeds:
    """Per-(link, time bin) mean speeds from the training split (inference-time provider)."""

    name = "historical"

    def __init__(self, bin_means: np.ndarray, schedule: TimeBinSchedule = DEFAULT_SCHEDULE):
        self.bin_means = np.asarray(bin_means, dtype=np.float64)
        self.schedule = schedule

    def speeds(self, trip: Trip) -> np.ndarray:
        k = int(self.schedule.bin_index(trip.depart_ts))
        return self.bin_means[trip.link_ids - 1, k]


# --- features --------------------------------------------------------------

@dataclass
class NonSequentialFeatures:
    time_slice: int
    day_of_week: int
    driver_id: int
    scalars: np.ndarray  # route length, link count, mean speed (all scaled)


@dataclass
class TripBatch:
    """Padded batch; all arrays are row-aligned with ``trips``."""

    link_idx: np.ndarray     # (B, T) 0-based link columns, 0 in padding
    seq_scalars: np.ndarray  # (B, T, 2) scaled length and speed, 0 in padding
    lengths: np.ndarray      # (B,)
    slice_idx: np.ndarray
    dow_idx: np.ndarray
    driver_idx: np.ndarray   # 0-based
    scalars: np.ndarray      # (B, 3)
    y: np.ndarray            # (B,) seconds
    trip_ids: np.ndarray

    @property
    def size(self) -> int:
        return int(self.lengths.shape[0])

    def distinct_links(self) -> np.ndarray:
        """Sorted 1-based IDs of the links in this batch."""
        mask = np.arange(self.link_idx.shape[1])[None, :] < self.lengths[:, None]
        return np.unique(self.link_idx[mask]) + 1


def assemble_batch(trips: Sequence[Trip], catalog: LinkCatalog, scalers: Scalers, provider,
                   n_drivers: int | None = None) -> TripBatch:
    if not trips:
        raise InvalidArgumentError("cannot assemble an empty batch")
    bsz = len(trips)
    lengths = np.array([t.n_links for t in trips], dtype=np.int64)
    tmax = int(lengths.max())
    link_idx = np.zeros((bsz, tmax), dtype=np.int64)
    seq = np.zeros((bsz, tmax, 2))
    scal = np.empty((bsz, N_SCALARS))
    for b, trip in enumerate(trips):
        ids = trip.link_ids
        if ids.min() < 1 or ids.max() > catalog.m:
            raise InvalidArgumentError(f"trip {trip.trip_id} references a link not in the catalog")
        n = ids.size
        col = ids - 1
        speeds = provider.speeds(trip)
        link_idx[b, :n] = col
        seq[b, :n, 0] = scalers.link_length(catalog.length_m[col])
        seq[b, :n, 1] = scalers.link_speed(speeds)
        scal[b, 0] = scalers.route_length(catalog.length_m[col].sum())
        scal[b, 1] = scalers.link_count(n)
        scal[b, 2] = scalers.mean_speed(np.mean(speeds))
    ts = np.array([t.depart_ts for t in trips], dtype=np.int64)
    drivers = np.array([t.driver_id for t in trips], dtype=np.int64)
    if drivers.min() < 1 or (n_drivers is not None and drivers.max() > n_drivers):
        raise InvalidArgumentError("driver ID outside the model's driver vocabulary")
    return TripBatch(
        link_idx=link_idx,
        seq_scalars=seq,
        lengths=lengths,
        slice_idx=time_slice(ts),
        dow_idx=day_of_week(ts),
        driver_idx=drivers - 1,
        scalars=scal,
        y=np.array([t.travel_time_s for t in trips], dtype=np.float64),
        trip_ids=np.array([t.trip_id for t in trips], dtype=np.int64),
    )


def build_features(trip: Trip, catalog: LinkCatalog, link_table: np.ndarray, scalers: Scalers,
                   provider=None, ablation: bool = False):
    """Sequential ``(22, T)`` matrix and trip-level features for one trip.

    Rows 0..19 of each column are the link's embedding (zeros under
    ablation), row 20 is the scaled length and row 21 the scaled speed.
    """
    provider = provider or ObservedSpeeds()
    batch = assemble_batch([trip], catalog, scalers, provider)
    n = trip.n_links
    emb = np.zeros((link_table.shape[0], n)) if ablation else nn.embed_lookup(link_table, batch.link_idx[0, :n])
    x = np.vstack([emb, batch.seq_scalars[0, :n].T])
    z = NonSequentialFeatures(int(batch.slice_idx[0]), int(batch.dow_idx[0]), int(trip.driver_id), batch.scalars[0])
    return x, z


# --- parameters ------------------------------------------------------------

def init_params(config: ModelConfig, seed: int) -> nn.Params:
    rng = np.random.default_rng(seed)
    h = config.hidden
    p: nn.Params = {}
    p["link_emb"] = nn.uniform_init(rng, (config.link_dim, config.n_links))
    p["slice_emb"] = nn.uniform_init(rng, (config.slice_dim, SLICES_PER_DAY))
    p["dow_emb"] = nn.uniform_init(rng, (config.dow_dim, N_DOW))
    p["driver_emb"] = nn.uniform_init(rng, (config.driver_dim, config.n_drivers))
    p["wide.W"] = nn.uniform_init(rng, (config.wide_in, h))
    p["wide.b"] = np.zeros(h)
    nn.init_mlp(rng, "deep", [config.deep_in] + [h] * (config.deep_layers + 1), p)
    nn.init_lstm(rng, "lstm", config.seq_features, h, p)
    nn.init_mlp(rng, "reg", [3 * h] + [h] * config.reg_layers + [1], p)
    return p


# --- modules ---------------------------------------------------------------

def categorical_codes(params, slice_idx, dow_idx, driver_idx):
    e_ts = nn.embed_lookup(params["slice_emb"], slice_idx).T
    e_dow = nn.embed_lookup(params["dow_emb"], dow_idx).T
    e_drv = nn.embed_lookup(params["driver_emb"], driver_idx).T
    return e_ts, e_dow, e_drv


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def wide_input(scalars, e_ts, e_dow, e_drv) -> np.ndarray:
    """Raw features, the three embeddings, and their distinct-pair outer products."""
    return np.hstack([scalars, e_ts, e_dow, e_drv, _outer(e_ts, e_dow), _outer(e_ts, e_drv), _outer(e_dow, e_drv)])


def wide_forward(params, scalars, e_ts, e_dow, e_drv):
    x = wide_input(scalars, e_ts, e_dow, e_drv)
    return nn.affine_forward(params["wide.W"], params["wide.b"], x), x


def wide_backward(params, x, e_ts, e_dow, e_drv, dh, grads):
    """Returns gradients for the three embedding codes (and the scalars)."""
    dx, dw, db = nn.affine_backward(params["wide.W"], x, dh)
    nn._accumulate(grads, "wide.W", dw)
    nn._accumulate(grads, "wide.b", db)
    a, b, c = e_ts.shape[1], e_dow.shape[1], e_drv.shape[1]
    bsz = dx.shape[0]
    o = N_SCALARS
    d_sc = dx[:, :o]
    d_ts = dx[:, o:o + a].copy()
    d_dow = dx[:, o + a:o + a + b].copy()
    d_drv = dx[:, o + a + b:o + a + b + c].copy()
    o += a + b + c
    g = dx[:, o:o + a * b].reshape(bsz, a, b)
    d_ts += np.einsum("nij,nj->ni", g, e_dow)
    d_dow += np.einsum("nij,ni->nj", g, e_ts)
    o += a * b
    g = dx[:, o:o + a * c].reshape(bsz, a, c)
    d_ts += np.einsum("nij,nj->ni", g, e_drv)
    d_drv += np.einsum("nij,ni->nj", g, e_ts)
    o += a * c
    g = dx[:, o:o + b * c].reshape(bsz, b, c)
    d_dow += np.einsum("nij,nj->ni", g, e_drv)
    d_drv += np.einsum("nij,ni->nj", g, e_dow)
    return d_sc, d_ts, d_dow, d_drv


def deep_forward(params, scalars, e_ts, e_dow, e_drv):
    x = np.hstack([scalars, e_ts, e_dow, e_drv])
    return nn.mlp_forward(params, "deep", x)


@dataclass
class ForwardCache:
    batch: TripBatch
    e_codes: tuple
    wide_x: np.ndarray
    deep_cache: tuple
    lstm_cache: nn.LstmCache
    reg_cache: tuple
    out_pre: np.ndarray


class WdrModel:
    """Parameters plus everything needed to turn trips into predictions."""

    def __init__(self, config: ModelConfig, params: nn.Params, scalers: Scalers | None = None):
        if config.variant == "route-eta":
            raise InvalidArgumentError("route-eta is not a neural variant; use RouteEta")
        self.config = config
        self.params = params
        self.scalers = scalers

    @classmethod
    def create(cls, config: ModelConfig, seed: int, scalers: Scalers | None = None) -> "WdrModel":
        return cls(config, init_params(config, seed), scalers)

    def sequence_input(self, batch: TripBatch) -> np.ndarray:
        bsz, tmax = batch.link_idx.shape
        x = np.zeros((bsz, tmax, self.config.seq_features))
        if self.config.uses_link_embedding:
            x[:, :, :self.config.link_dim] = self.params["link_emb"].T[batch.link_idx]
            # Padding positions must be exact zeros, not link 1's embedding.
            x[np.arange(tmax)[None, :] >= batch.lengths[:, None]] = 0.0
        x[:, :, self.config.link_dim:] = batch.seq_scalars
        return x

    def forward(self, batch: TripBatch):
        p = self.params
        e_ts, e_dow, e_drv = categorical_codes(p, batch.slice_idx, batch.dow_idx, batch.driver_idx)
        h_w, wide_x = wide_forward(p, batch.scalars, e_ts, e_dow, e_drv)
        h_d, deep_cache = deep_forward(p, batch.scalars, e_ts, e_dow, e_drv)
        _, h_t, lstm_cache = nn.lstm_forward(p, "lstm", self.sequence_input(batch), batch.lengths, return_all=False)
        out, reg_cache = nn.mlp_forward(p, "reg", np.hstack([h_w, h_d, h_t]))
        out = out[:, 0]
        # Floor keeps the output strictly positive where softplus underflows.
        y_pred = np.maximum(self.config.output_scale * nn.softplus(out), np.finfo(np.float64).tiny)
        if not np.all(np.isfinite(y_pred)):
            bad = batch.trip_ids[~np.isfinite(y_pred)]
            raise NonFiniteError(f"non-finite prediction for trips {bad[:5].tolist()}")
        cache = ForwardCache(batch, (e_ts, e_dow, e_drv), wide_x, deep_cache, lstm_cache, reg_cache, out)
        return y_pred, cache

    def predict(self, batch: TripBatch) -> np.ndarray:
        return self.forward(batch)[0]

    def backward(self, cache: ForwardCache, d_pred: np.ndarray) -> nn.Params:
        p, cfg = self.params, self.config
        grads: nn.Params = {}
        h = cfg.hidden
        d_out = nn.softplus_backward(cache.out_pre, cfg.output_scale * np.asarray(d_pred))[:, None]
        d_cat = nn.mlp_backward(p, cache.reg_cache, d_out, grads)
        d_hw, d_hd, d_ht = d_cat[:, :h], d_cat[:, h:2 * h], d_cat[:, 2 * h:]

        x_seq_grad = nn.lstm_backward(p, "lstm", cache.lstm_cache, grads, dh_last=d_ht)
        batch = cache.batch
        g_link = np.zeros_like(p["link_emb"])
        if cfg.uses_link_embedding:
            mask = np.arange(batch.link_idx.shape[1])[None, :] < batch.lengths[:, None]
            nn.embed_backward(x_seq_grad[mask][:, :cfg.link_dim].T, batch.link_idx[mask], cfg.n_links, g_link)
        grads["link_emb"] = g_link

        e_ts, e_dow, e_drv = cache.e_codes
        _, d_ts, d_dow, d_drv = wide_backward(p, cache.wide_x, e_ts, e_dow, e_drv, d_hw, grads)
        d_deep_in = nn.mlp_backward(p, cache.deep_cache, d_hd, grads)
        a, b = cfg.slice_dim, cfg.dow_dim
        d_ts += d_deep_in[:, N_SCALARS:N_SCALARS + a]
        d_dow += d_deep_in[:, N_SCALARS + a:N_SCALARS + a + b]
        d_drv += d_deep_in[:, N_SCALARS + a + b:]
        grads["slice_emb"] = nn.embed_backward(d_ts.T, batch.slice_idx, SLICES_PER_DAY)
        grads["dow_emb"] = nn.embed_backward(d_dow.T, batch.dow_idx, N_DOW)
        grads["driver_emb"] = nn.embed_backward(d_drv.T, batch.driver_idx, cfg.n_drivers)
        return grads

    def to_tensors(self) -> dict:
        out = {f"param.{k}": v for k, v in self.params.items()}
        if self.scalers is not None:
            out.update(self.scalers.to_tensors())
        out["meta.output_scale"] = np.array([self.config.output_scale])
        return out


def predict(model: WdrModel, batch: TripBatch) -> np.ndarray:
    """Travel time in seconds for every trip of ``batch``."""
    return model.predict(batch)


# --- rule baseline ---------------------------------------------------------

class RouteEta:
    """Sum of ``length / historical link speed`` plus mined per-link waits.

    Per-link speeds are the mean observed traversal speeds of the training
    split.  The wait of a link is the mean share of trip residuals
    (``travel time - driving time``) attributed to it, each trip spreading its
    residual evenly over its traversals.  Links unseen in training fall back
    to the global means.
    """

    def __init__(self, catalog: LinkCatalog, speed: np.ndarray, wait: np.ndarray, seen: np.ndarray,
                 global_speed: float, global_wait: float):
        self.catalog = catalog
        self.speed = np.asarray(speed, dtype=np.float64)
        self.wait = np.asarray(wait, dtype=np.float64)
        self.seen = np.asarray(seen, dtype=bool)
        self.global_speed = float(global_speed)
        self.global_wait = float(global_wait)

    @classmethod
    def fit(cls, train: Sequence[Trip], catalog: LinkCatalog) -> "RouteEta":
        m = catalog.m
        links = np.concatenate([t.link_ids for t in train]) - 1
        speeds = np.concatenate([t.link_speeds_mps for t in train])
        count = np.bincount(links, minlength=m).astype(np.float64)
        seen = count > 0
        speed = np.where(seen, np.bincount(links, weights=speeds, minlength=m) / np.maximum(count, 1), np.nan)
        global_speed = math.fsum(speeds) / speeds.size
        v = np.where(seen, speed, global_speed)
        shares = []
        for t in train:
            drive = float(np.sum(catalog.length_m[t.link_ids - 1] / v[t.link_ids - 1]))
            shares.append(np.full(t.n_links, (t.travel_time_s - drive) / t.n_links))
        shares = np.concatenate(shares)
        wait = np.where(seen, np.bincount(links, weights=shares, minlength=m) / np.maximum(count, 1), np.nan)
        return cls(catalog, speed, wait, seen, global_speed, math.fsum(shares) / shares.size)

    def link_speeds(self, link_ids) -> np.ndarray:
        col = np.asarray(link_ids, dtype=np.int64) - 1
        return np.where(self.seen[col], self.speed[col], self.global_speed)

    def link_waits(self, link_ids) -> np.ndarray:
        col = np.asarray(link_ids, dtype=np.int64) - 1
        return np.where(self.seen[col], self.wait[col], self.global_wait)

    def predict_trip(self, trip: Trip) -> float:
        ids = trip.link_ids
        return float(np.sum(self.catalog.length_m[ids - 1] / self.link_speeds(ids)) + np.sum(self.link_waits(ids)))

    def predict(self, trips: Sequence[Trip]) -> np.ndarray:
        return np.array([self.predict_trip(t) for t in trips])

    def to_tensors(self) -> dict:
        return {
            "route.speed": np.nan_to_num(self.speed, nan=0.0),
            "route.wait": np.nan_to_num(self.wait, nan=0.0),
            "route.seen": self.seen.astype(np.float64),
            "route.global": np.array([self.global_speed, self.global_wait]),
        }

    @classmethod
    def from_tensors(cls, tensors, catalog: LinkCatalog) -> "RouteEta":
        seen = tensors["route.seen"] > 0.5
        g = tensors["route.global"]
        return cls(catalog, np.where(seen, tensors["route.speed"], np.nan), np.where(seen, tensors["route.wait"], np.nan),
                   seen, g[0], g[1])


def route_eta(trip: Trip, catalog: LinkCatalog, wait_table: RouteEta) -> float:
    return wait_table.predict_trip(trip)
