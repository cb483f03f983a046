"""Accuracy metrics and the coverage-stratified cold-link evaluation.

A test trip belongs to the stratum of threshold ``delta`` when at least a
quarter of its links have a training coverage below ``delta``.  Lower
thresholds select routes dominated by rarely seen (cold) links.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError

COLD_FRACTION = 0.25
REPORT_CSV_HEADER = ["variant", "delta", "n", "mape", "mae", "rmse"]


def metrics(y, y_pred) -> tuple[float, float, float]:
    """``(mape, mae, rmse)``; MAPE is a fraction, MAE and RMSE are in seconds."""
    y = np.asarray(y, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y.size == 0:
        raise InvalidArgumentError("metrics need at least one trip")
    if y.shape != y_pred.shape:
        raise InvalidArgumentError("targets and predictions differ in length")
    if np.any(y <= 0):
        raise InvalidArgumentError("targets must be strictly positive")
    err = np.abs(y - y_pred)
    return float(np.mean(err / y)), float(np.mean(err)), float(np.sqrt(np.mean(err * err)))


def cold_fraction(trip, coverage, delta: float, distinct: bool = False) -> float:
    ids = np.unique(trip.link_ids) if distinct else trip.link_ids
    return float(np.count_nonzero(coverage.of(ids) < delta)) / ids.size


def stratify_mask(trips, coverage, delta: float, distinct: bool = False, fraction: float = COLD_FRACTION) -> np.ndarray:
    """Boolean keep-mask; counts link positions unless ``distinct`` is set."""
    keep = np.zeros(len(trips), dtype=bool)
    for n, trip in enumerate(trips):
        ids = np.unique(trip.link_ids) if distinct else trip.link_ids
        cold = np.count_nonzero(coverage.of(ids) < delta)
        # Integer comparison avoids any rounding at the exact 25% boundary.
        keep[n] = cold * 4 >= ids.size if fraction == COLD_FRACTION else cold >= fraction * ids.size
    return keep


def stratify(trips, coverage, delta: float, distinct: bool = False) -> list:
    mask = stratify_mask(trips, coverage, delta, distinct)
    return [t for t, k in zip(trips, mask) if k]


def parse_deltas(spec: str) -> list[float]:
    """``"50:500:50"`` (inclusive range), ``"50,100,inf"`` or a mix of both."""
    out: list[float] = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            try:
                lo, hi, st = (float(x) for x in part.split(":"))
            except ValueError as exc:
                raise InvalidArgumentError(f"bad delta range {part!r}") from exc
            if st <= 0 or hi < lo:
                raise InvalidArgumentError(f"bad delta range {part!r}")
            n = int(math.floor((hi - lo) / st + 1e-9)) + 1
            out.extend(lo + i * st for i in range(n))
        else:
            try:
                out.append(float(part))
            except ValueError as exc:
                raise InvalidArgumentError(f"bad delta {part!r}") from exc
    return out


@dataclass
class StratumResult:
    delta: float
    n: int
    mape: float | None
    mae: float | None
    rmse: float | None


@dataclass
class VariantReport:
    variant: str
    n: int
    mape: float
    mae: float
    rmse: float
    strata: list = field(default_factory=list)

    def stratum(self, delta: float) -> StratumResult:
        for s in self.strata:
            if s.delta == delta:
                return s
        raise KeyError(delta)


@dataclass
class EvalReport:
    variants: dict = field(default_factory=dict)
    deltas: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(x):
            if x is None:
                return None
            return "inf" if isinstance(x, float) and math.isinf(x) else x

        return {
            "deltas": [num(d) for d in self.deltas],
            "variants": {
                name: {
                    "overall": {"n": r.n, "mape": r.mape, "mae_s": r.mae, "rmse_s": r.rmse},
                    "strata": [
                        {"delta": num(s.delta), "n": s.n, "mape": s.mape, "mae_s": s.mae, "rmse_s": s.rmse}
                        for s in r.strata
                    ],
                }
                for name, r in self.variants.items()
            },
        }

    def csv_rows(self) -> list[list]:
        rows = []
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        for name, r in self.variants.items():
            rows.append([name, "overall", r.n, fmt(r.mape), fmt(r.mae), fmt(r.rmse)])
            for s in r.strata:
                d = "inf" if math.isinf(s.delta) else (str(int(s.delta)) if float(s.delta).is_integer() else repr(s.delta))
                rows.append([name, d, s.n, fmt(s.mape), fmt(s.mae), fmt(s.rmse)])
        return rows

    def write(self, json_path, csv_path=None) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(REPORT_CSV_HEADER)
                w.writerows(self.csv_rows())


def sweep(test_trips: Sequence, coverage, deltas: Sequence[float], predictions: Mapping[str, np.ndarray],
          distinct: bool = False) -> EvalReport:
    """Overall and per-threshold metrics for every variant's predictions.

    Strata without any trip report ``None`` metrics rather than zeros.
    """
    if not test_trips:
        raise InvalidArgumentError("empty test set")
    y = np.array([t.travel_time_s for t in test_trips])
    masks = [stratify_mask(test_trips, coverage, d, distinct) for d in deltas]
    report = EvalReport(deltas=list(deltas))
    for name, pred in predictions.items():
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != y.shape:
            raise InvalidArgumentError(f"{name}: {pred.size} predictions for {y.size} trips")
        overall = metrics(y, pred)
        strata = []
        for d, mask in zip(deltas, masks):
            n = int(mask.sum())
            m = metrics(y[mask], pred[mask]) if n else (None, None, None)
            strata.append(StratumResult(float(d), n, *m))
        report.variants[name] = VariantReport(name, int(y.size), *overall, strata)
    return report
