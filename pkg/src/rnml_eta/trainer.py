"""Joint optimization of the travel-time regressor and the triangle loss.

Each step computes the MAPE of the batch predictions, samples triangles from
the batch's links, and takes one Adam step on ``(1 - beta) * main + beta * aux``
over all parameters.  The checkpoint with the best validation MAPE is kept.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn_core as nn
from .datagen import CoverageTable, LinkCatalog, Trip, coverage_counts, split_dataset
from .errors import InvalidArgumentError, MissingPrerequisiteError, NonFiniteError
from .evaluator import metrics
from .metric_task import TriangleConfig, sample_triangles, triangle_loss
from .similarity import BinMeans, DifferenceLookup, SpeedHistograms, bin_average_speeds, normalize
from .timebins import DEFAULT_SCHEDULE, TimeBinSchedule
from .wdr_model import (VARIANTS, HistoricalSpeeds, ModelConfig, ObservedSpeeds, RouteEta, Scalers,
                        WdrModel, assemble_batch, fit_scalers)

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "split", "mape", "mae", "rmse", "l_main", "l_aux"]


@dataclass
class TrainConfig:
    variant: str = "rnml"
    batch_size: int = 256
    lr: float = 2e-4
    max_steps: int = 20_000
    beta: float = 0.52
    seed: int = 0
    eval_every: int = 500
    patience: int = 10
    clip_norm: float = 5.0
    hidden: int = 128
    train_speed: str = "observed"
    triangle: TriangleConfig = field(default_factory=TriangleConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown variant {self.variant!r}")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidArgumentError("beta must lie in [0, 1]")
        if self.train_speed not in ("observed", "historical"):
            raise InvalidArgumentError("train_speed must be 'observed' or 'historical'")

    @property
    def effective_beta(self) -> float:
        return self.beta if self.variant == "rnml" else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["triangle"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["triangle"].items()}
        return d


# --- losses and batching ---------------------------------------------------

def mape_loss(y_pred, y) -> float:
    """Mean of ``|y - y'| / y``."""
    y = np.asarray(y, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y.size == 0 or y.shape != y_pred.shape:
        raise InvalidArgumentError("predictions and targets must be non-empty and equally shaped")
    if np.any(y <= 0):
        raise InvalidArgumentError("MAPE needs strictly positive targets")
    return float(np.mean(np.abs(y - y_pred) / y))


def mape_grad(y_pred, y) -> np.ndarray:
    # d|y' - y|/dy' with subgradient 0 at y' == y.
    return np.sign(y_pred - y) / (y * y.size)


def make_batches(lengths, batch_size: int, seed: int, epoch: int, pool_batches: int = 50) -> list[np.ndarray]:
    """Index arrays for one epoch.

    Trips are shuffled, cut into pools of ``pool_batches`` batches, sorted by
    length inside each pool and chunked, so that a batch holds similar
    lengths and little padding.  Full batches are then shuffled; the single
    short batch (if any) comes last.  Order depends only on ``(seed, epoch)``.
    """
    lengths = np.asarray(lengths)
    n = lengths.size
    if n == 0:
        raise InvalidArgumentError("no trips to batch")
    rng = np.random.default_rng([seed, epoch, 0xBA7C])
    perm = rng.permutation(n)
    pool = batch_size * pool_batches
    batches = []
    for s in range(0, n, pool):
        chunk = perm[s:s + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, chunk.size, batch_size))
    full = [b for b in batches if b.size == batch_size]
    partial = [b for b in batches if b.size != batch_size]
    order = rng.permutation(len(full))
    return [full[i] for i in order] + partial


# --- dataset bundle --------------------------------------------------------

@dataclass
class EtaDataset:
    """Splits plus every statistic derived from the training split."""

    catalog: LinkCatalog
    train: list
    valid: list
    test: list
    schedule: TimeBinSchedule = DEFAULT_SCHEDULE
    coverage_mode: str = "trips"
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_trips(cls, catalog: LinkCatalog, trips: Sequence[Trip], fractions=(25 / 27, 1 / 27, 1 / 27), **kw):
        train, valid, test = split_dataset(trips, fractions)
        return cls(catalog, list(train), list(valid), list(test), **kw)

    @property
    def n_drivers(self) -> int:
        return int(max(t.driver_id for t in self.train + self.valid + self.test))

    @property
    def coverage(self) -> CoverageTable:
        if "coverage" not in self._cache:
            self._cache["coverage"] = coverage_counts(self.train, self.catalog.m, self.coverage_mode)
        return self._cache["coverage"]

    @property
    def bin_means(self) -> BinMeans:
        if "bin_means" not in self._cache:
            self._cache["bin_means"] = bin_average_speeds(self.train, self.catalog.m, self.schedule)
        return self._cache["bin_means"]

    @property
    def histograms(self) -> SpeedHistograms:
        if "hist" not in self._cache:
            self._cache["hist"] = normalize(self.bin_means)
        return self._cache["hist"]

    def difference_lookup(self, mode: str = "dense") -> DifferenceLookup:
        key = f"q_{mode}"
        if key not in self._cache:
            self._cache[key] = DifferenceLookup(self.histograms, mode)
        return self._cache[key]

    def historical_provider(self) -> HistoricalSpeeds:
        return HistoricalSpeeds(self.bin_means.means, self.schedule)


# --- training --------------------------------------------------------------

@dataclass
class TrainResult:
    config: TrainConfig
    model: object  # WdrModel or RouteEta
    provider: HistoricalSpeeds | None
    log_rows: list
    best_step: int
    best_valid_mape: float
    steps_run: int
    clip_events: int = 0
    diverged: bool = False


class TrainingDivergedError(NonFiniteError):
    def __init__(self, message: str, result: TrainResult):
        super().__init__(message)
        self.result = result


def model_config_for(config: TrainConfig, data: EtaDataset) -> ModelConfig:
    y = np.array([t.travel_time_s for t in data.train])
    return ModelConfig(
        n_links=data.catalog.m,
        n_drivers=data.n_drivers,
        variant=config.variant,
        hidden=config.hidden,
        output_scale=float(np.mean(y)),
    )


def evaluate_model(model, trips: Sequence[Trip], catalog: LinkCatalog, provider, batch_size: int = 512,
                   n_drivers: int | None = None) -> np.ndarray:
    """Predictions in input order."""
    if isinstance(model, RouteEta):
        return model.predict(trips)
    out = np.empty(len(trips))
    order = np.argsort([t.n_links for t in trips], kind="stable")
    for s in range(0, len(trips), batch_size):
        idx = order[s:s + batch_size]
        batch = assemble_batch([trips[i] for i in idx], catalog, model.scalers, provider, n_drivers)
        out[idx] = model.predict(batch)
    return out


def train(config: TrainConfig, data: EtaDataset, q: DifferenceLookup | None = None,
          log_every: int | None = None) -> TrainResult:
    """Train one variant; returns the best-on-validation model and the log rows."""
    if config.variant == "route-eta":
        model = RouteEta.fit(data.train, data.catalog)
        pred = model.predict(data.valid)
        m = metrics([t.travel_time_s for t in data.valid], pred)
        rows = [{"step": 0, "split": "valid", "mape": m[0], "mae": m[1], "rmse": m[2], "l_main": "", "l_aux": ""}]
        return TrainResult(config, model, None, rows, 0, m[0], 0)

    beta = config.effective_beta
    use_aux = config.variant == "rnml"
    if use_aux and q is None:
        raise MissingPrerequisiteError("variant 'rnml' needs the link difference matrix Q; run `similarity` first")

    catalog = data.catalog
    hist_provider = data.historical_provider()
    train_provider = ObservedSpeeds() if config.train_speed == "observed" else hist_provider
    scalers = fit_scalers(data.train, catalog)
    mcfg = model_config_for(config, data)
    model = WdrModel.create(mcfg, config.seed, scalers)
    adam = nn.AdamState(lr=config.lr)
    tri_rng = np.random.default_rng([config.seed, 0x7A1])
    lengths = np.array([t.n_links for t in data.train])
    y_valid = np.array([t.travel_time_s for t in data.valid])
    eval_every = max(1, config.eval_every)
    log_every = log_every or eval_every

    rows: list = []
    best_params = copy.deepcopy(model.params)
    best_step, best_mape, bad_evals = 0, math.inf, 0
    clip_events = 0
    acc = {"mape": [], "mae": [], "rmse": [], "l_main": [], "l_aux": []}
    step, epoch = 0, 0

    def result(diverged=False):
        final = WdrModel(mcfg, best_params, scalers)
        return TrainResult(config, final, hist_provider, rows, best_step, best_mape, step, clip_events, diverged)

    def validate():
        pred = evaluate_model(model, data.valid, catalog, hist_provider, n_drivers=mcfg.n_drivers)
        m = metrics(y_valid, pred)
        rows.append({"step": step, "split": "valid", "mape": m[0], "mae": m[1], "rmse": m[2], "l_main": m[0], "l_aux": ""})
        return m[0]

    stop = False
    while step < config.max_steps and not stop:
        for idx in make_batches(lengths, config.batch_size, config.seed, epoch):
            batch = assemble_batch([data.train[i] for i in idx], catalog, scalers, train_provider, mcfg.n_drivers)
            try:
                pred, cache = model.forward(batch)
                l_main = mape_loss(pred, batch.y)
                grads = model.backward(cache, (1.0 - beta) * mape_grad(pred, batch.y))
                l_aux = 0.0
                if use_aux:
                    samples = sample_triangles(batch.distinct_links(), q, config.triangle.triangles_per_batch, tri_rng)
                    l_aux, g_aux = triangle_loss(model.params["link_emb"], samples, config.triangle)
                    if beta > 0.0:
                        grads["link_emb"] += beta * g_aux
                total = (1.0 - beta) * l_main + beta * l_aux
                if not math.isfinite(total):
                    raise NonFiniteError(f"loss became {total} at step {step + 1}")
                norm, clipped = nn.clip_by_global_norm(grads, config.clip_norm)
                if clipped:
                    clip_events += 1
                    log.debug("step %d: gradient norm %.3g clipped to %.3g", step + 1, norm, config.clip_norm)
                nn.adam_step(adam, model.params, grads)
            except NonFiniteError as exc:
                log.error("training diverged: %s", exc)
                raise TrainingDivergedError(str(exc), result(diverged=True)) from exc
            step += 1
            m = metrics(batch.y, pred)
            for key, val in zip(("mape", "mae", "rmse", "l_main", "l_aux"), (*m, l_main, l_aux)):
                acc[key].append(val)
            if step % log_every == 0 or step == config.max_steps:
                rows.append({"step": step, "split": "train", **{k: float(np.mean(v)) for k, v in acc.items()}})
                acc = {k: [] for k in acc}
            if step % eval_every == 0 or step == config.max_steps:
                v = validate()
                if v < best_mape:
                    best_mape, best_step, bad_evals = v, step, 0
                    best_params = copy.deepcopy(model.params)
                else:
                    bad_evals += 1
                    if config.patience and bad_evals >= config.patience:
                        log.info("early stop at step %d (best %d)", step, best_step)
                        stop = True
            if step >= config.max_steps or stop:
                break
        epoch += 1
    return result()


# --- persistence -----------------------------------------------------------

def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k]) for k in LOG_HEADER})


def checkpoint_tensors(result: TrainResult) -> dict:
    model = result.model
    tensors = dict(model.to_tensors())
    tensors["meta.variant"] = np.array([float(VARIANTS.index(result.config.variant))])
    if result.provider is not None:
        tensors["provider.bin_means"] = result.provider.bin_means
    return tensors


def save_checkpoint(result: TrainResult, path) -> None:
    nn.save_tensors(checkpoint_tensors(result), path)


def load_checkpoint(path, catalog: LinkCatalog, schedule: TimeBinSchedule = DEFAULT_SCHEDULE):
    """Returns ``(variant, model, provider)``."""
    t = nn.load_tensors(path)
    variant = VARIANTS[int(t["meta.variant"][0])]
    if variant == "route-eta":
        return variant, RouteEta.from_tensors(t, catalog), None
    params = {k[len("param."):]: v for k, v in t.items() if k.startswith("param.")}
    cfg = ModelConfig(
        n_links=params["link_emb"].shape[1],
        n_drivers=params["driver_emb"].shape[1],
        variant=variant,
        hidden=params["wide.b"].shape[0],
        link_dim=params["link_emb"].shape[0],
        slice_dim=params["slice_emb"].shape[0],
        dow_dim=params["dow_emb"].shape[0],
        driver_dim=params["driver_emb"].shape[0],
        deep_layers=nn.mlp_layers(params, "deep") - 1,
        reg_layers=nn.mlp_layers(params, "reg") - 1,
        output_scale=float(t["meta.output_scale"][0]),
    )
    if cfg.n_links != catalog.m:
        raise InvalidArgumentError(f"checkpoint has {cfg.n_links} links, catalog has {catalog.m}")
    model = WdrModel(cfg, params, Scalers.from_tensors(t))
    return variant, model, HistoricalSpeeds(t["provider.bin_means"], schedule)
