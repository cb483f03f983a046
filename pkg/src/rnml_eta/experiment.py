"""Multi-variant, multi-seed comparison on one synthetic dataset.

Every (variant, seed) run stores its test predictions in a cache directory
under a key derived from the dataset settings, the training configuration
and a digest of the package source, so reruns with unchanged code reuse
finished work while any code change invalidates it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import generate_network, generate_trips
from .evaluator import EvalReport, sweep
from .metric_task import embedding_distance
from .trainer import EtaDataset, TrainConfig, evaluate_model, train

log = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
DEFAULT_VARIANTS = ("route-eta", "wdr-nolink", "wdr", "rnml")
DEFAULT_DELTAS = tuple(float(d) for d in range(50, 501, 50)) + (float("inf"),)
# Modules whose code can change a run's predictions.
MODEL_MODULES = ("datagen", "errors", "evaluator", "metric_task", "nn_core", "similarity", "timebins", "trainer",
                 "wdr_model")


def source_digest() -> str:
    """SHA-256 over the modules that determine a run's outcome."""
    h = hashlib.sha256()
    for path in (PACKAGE_DIR / f"{name}.py" for name in MODEL_MODULES):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ExperimentSpec:
    m: int = 2000
    n_trips: int = 50_000
    drivers: int = 200
    data_seed: int = 7
    seeds: tuple = (0, 1, 2)
    variants: tuple = DEFAULT_VARIANTS
    deltas: tuple = DEFAULT_DELTAS
    train: TrainConfig = field(default_factory=TrainConfig)

    def data_dict(self) -> dict:
        return {"m": self.m, "n_trips": self.n_trips, "drivers": self.drivers, "data_seed": self.data_seed}

    def run_config(self, variant: str, seed: int) -> TrainConfig:
        return replace(self.train, variant=variant, seed=seed)

    def run_key(self, variant: str, seed: int, digest: str | None = None) -> str:
        payload = {
            "data": self.data_dict(),
            "train": self.run_config(variant, seed).to_dict(),
            "source": digest or source_digest(),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


def build_dataset(spec: ExperimentSpec) -> EtaDataset:
    catalog = generate_network(spec.m, spec.data_seed)
    trips = generate_trips(catalog, spec.n_trips, spec.drivers, spec.data_seed)
    return EtaDataset.from_trips(catalog, trips)


@dataclass
class RunRecord:
    variant: str
    seed: int
    predictions: np.ndarray
    best_step: int
    best_valid_mape: float
    steps_run: int
    seconds: float
    link_emb: np.ndarray | None = None  # trained table of the neural variants
    cached: bool = False


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: list
    reports: dict  # seed -> EvalReport

    def mape(self, variant: str, delta: float | None = None) -> float:
        """Seed-averaged test MAPE, overall or on one stratum."""
        vals = []
        for report in self.reports.values():
            r = report.variants[variant]
            vals.append(r.mape if delta is None else r.stratum(delta).mape)
        if any(v is None for v in vals):
            return float("nan")
        return float(np.mean(vals))

    def stratum_size(self, delta: float) -> int:
        report = next(iter(self.reports.values()))
        return next(iter(report.variants.values())).stratum(delta).n

    def summary_rows(self) -> list[dict]:
        rows = []
        for variant in self.spec.variants:
            row = {"variant": variant, "overall": self.mape(variant)}
            for d in self.spec.deltas:
                row[d] = self.mape(variant, d)
            rows.append(row)
        return rows


def _cache_path(cache_dir: Path, spec: ExperimentSpec, variant: str, seed: int, digest: str) -> Path:
    return cache_dir / f"{variant}-s{seed}-{spec.run_key(variant, seed, digest)}.npz"


def run_one(spec: ExperimentSpec, data: EtaDataset, variant: str, seed: int, cache_dir=None,
            digest: str | None = None) -> RunRecord:
    digest = digest or source_digest()
    path = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        path = _cache_path(cache_dir, spec, variant, seed, digest)
        if path.exists():
            z = np.load(path)
            emb = z["link_emb"] if "link_emb" in z.files else None
            return RunRecord(variant, seed, z["predictions"], int(z["best_step"]), float(z["best_valid_mape"]),
                             int(z["steps_run"]), float(z["seconds"]), emb, cached=True)
    q = data.difference_lookup() if variant == "rnml" else None
    t0 = time.perf_counter()
    result = train(spec.run_config(variant, seed), data, q)
    pred = evaluate_model(result.model, data.test, data.catalog, result.provider, n_drivers=data.n_drivers)
    seconds = time.perf_counter() - t0
    emb = result.model.params["link_emb"] if hasattr(result.model, "params") else None
    rec = RunRecord(variant, seed, pred, result.best_step, result.best_valid_mape, result.steps_run, seconds, emb)
    log.info("%s seed %d: %d steps, best %d, valid MAPE %.4f, %.0f s", variant, seed, rec.steps_run,
             rec.best_step, rec.best_valid_mape, seconds)
    if path is not None:
        tmp = path.with_suffix(".tmp.npz")
        extra = {} if emb is None else {"link_emb": emb}
        np.savez(tmp, predictions=pred, best_step=rec.best_step, best_valid_mape=rec.best_valid_mape,
                 steps_run=rec.steps_run, seconds=seconds, **extra)
        tmp.replace(path)
    return rec


def run_experiment(spec: ExperimentSpec, cache_dir=None, data: EtaDataset | None = None) -> ExperimentResult:
    data = data or build_dataset(spec)
    digest = source_digest()
    records = [run_one(spec, data, v, s, cache_dir, digest) for s in spec.seeds for v in spec.variants]
    reports: dict[int, EvalReport] = {}
    for seed in spec.seeds:
        preds = {r.variant: r.predictions for r in records if r.seed == seed}
        reports[seed] = sweep(data.test, data.coverage, list(spec.deltas), preds)
    return ExperimentResult(spec, records, reports)


# Four-variant comparison on the 2000-link set.
COMPARISON = ExperimentSpec()
# Embedding geometry after 5k rnml steps on a 1000-link set; a single
# validation pass at the end makes the kept model the final one.
GEOMETRY = ExperimentSpec(m=1000, variants=("rnml",), deltas=(),
                          train=TrainConfig(max_steps=5000, eval_every=5000, patience=0))


def pair_distances(data: EtaDataset, link_emb: np.ndarray, n_pairs: int = 100) -> tuple[float, float]:
    """Mean embedding distance over the ``n_pairs`` smallest-Q and largest-Q link pairs.

    Only links observed in every time bin take part: a link with imputed bins
    has a partly made-up profile, and a link never seen in training keeps its
    random initial embedding.
    """
    hist = data.histograms
    ok = np.flatnonzero(~hist.imputed.any(axis=1))
    q = data.difference_lookup().dense[np.ix_(ok, ok)]
    iu, ju = np.triu_indices(ok.size, k=1)
    vals = q[iu, ju]
    order = np.argsort(vals, kind="stable")

    def mean_dist(sel):
        return float(np.mean([embedding_distance(link_emb, ok[iu[n]] + 1, ok[ju[n]] + 1) for n in sel]))

    return mean_dist(order[:n_pairs]), mean_dist(order[-n_pairs:])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="run the long acceptance experiments and fill the run cache")
    parser.add_argument("--suite", choices=("geometry", "comparison", "all"), default="all")
    parser.add_argument("--cache", type=Path, required=True)
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stdout)
    if ns.suite in ("geometry", "all"):
        data = build_dataset(GEOMETRY)
        res = run_experiment(GEOMETRY, ns.cache, data)
        for r in res.records:
            near, far = pair_distances(data, r.link_emb)
            log.info("geometry seed %d: near %.4f far %.4f", r.seed, near, far)
    if ns.suite in ("comparison", "all"):
        res = run_experiment(COMPARISON, ns.cache)
        for row in res.summary_rows():
            log.info("%s", {k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()})
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
