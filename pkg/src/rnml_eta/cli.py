"""Command-line pipeline: ``gen``, ``similarity``, ``train``, ``eval``, ``sweep``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 missing prerequisite.  Every command writes a manifest (arguments,
effective configuration, seed, library versions and output hashes) next to
its outputs; manifests carry no timestamps so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import load_config, train_config
from .datagen import (generate_network, generate_trips, read_catalog_csv, read_split, read_trips_jsonl,
                      split_dataset, write_catalog_csv, write_split, write_trips_jsonl)
from .errors import ConfigurationError, InvalidArgumentError, MissingPrerequisiteError, RnmlError
from .evaluator import parse_deltas, sweep
from .similarity import DifferenceLookup, read_histograms_csv, speed_histograms, write_histograms_csv, write_q_matrix
from .trainer import (EtaDataset, TrainConfig, evaluate_model, load_checkpoint, save_checkpoint, train,
                      write_log_csv)
from .wdr_model import VARIANTS

log = logging.getLogger("rnml_eta")

CATALOG_FILE = "catalog.csv"
TRIPS_FILE = "trips.jsonl"
SPLIT_FILE = "split.json"
HIST_FILE = "histograms.csv"
CHECKPOINT_FILE = "checkpoint.bin"
TRAIN_LOG_FILE = "train_log.csv"
SWEEP_HEADER = ["param", "value", "n", "mape", "mae", "rmse", "best_step", "valid_mape"]


class UsageError(InvalidArgumentError):
    pass


# --- helpers ---------------------------------------------------------------

def _versions() -> dict:
    return {"rnml_eta": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"cannot write to {path}: {exc.strerror or exc}") from exc
    return path


def write_manifest(out_dir: Path, command: str, args: dict, outputs, config: dict | None = None,
                   seed: int | None = None) -> Path:
    doc = {
        "command": command,
        "args": args,
        "config": config or {},
        "seed": seed,
        "versions": _versions(),
        "outputs": {Path(p).name: _sha256(Path(p)) for p in outputs},
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_data_dir(data_dir, coverage_mode: str = "trips") -> EtaDataset:
    data_dir = Path(data_dir)
    missing = [f for f in (CATALOG_FILE, TRIPS_FILE, SPLIT_FILE) if not (data_dir / f).is_file()]
    if missing:
        raise MissingPrerequisiteError(f"{data_dir} lacks {', '.join(missing)}; run `rnml-eta gen --out-dir {data_dir}`")
    catalog = read_catalog_csv(data_dir / CATALOG_FILE)
    trips = read_trips_jsonl(data_dir / TRIPS_FILE)
    train_, valid, test = read_split(trips, data_dir / SPLIT_FILE)
    return EtaDataset(catalog, train_, valid, test, coverage_mode=coverage_mode)


def load_lookup(data_dir, hist_path=None) -> DifferenceLookup:
    path = Path(hist_path) if hist_path else Path(data_dir) / HIST_FILE
    if not path.is_file():
        raise MissingPrerequisiteError(
            f"variant 'rnml' needs link speed histograms at {path}; run `rnml-eta similarity --data-dir {data_dir}` first")
    return DifferenceLookup(read_histograms_csv(path))


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _args_dict(ns: argparse.Namespace) -> dict:
    return {k: _jsonable(v) for k, v in sorted(vars(ns).items()) if k != "func"}


# --- commands --------------------------------------------------------------

def cmd_gen(ns) -> int:
    if ns.m < 3:
        raise UsageError("need at least 3 links")
    if ns.trips < 1 or ns.drivers < 1:
        raise UsageError("--trips and --drivers must be >= 1")
    out = _prepare_dir(ns.out_dir)
    catalog = generate_network(ns.m, ns.seed)
    trips = generate_trips(catalog, ns.trips, ns.drivers, ns.seed)
    parts = split_dataset(trips)
    paths = [out / CATALOG_FILE, out / TRIPS_FILE, out / SPLIT_FILE]
    write_catalog_csv(catalog, paths[0])
    write_trips_jsonl(trips, paths[1])
    write_split(*parts, paths[2])
    write_manifest(out, "gen", _args_dict(ns), paths, seed=ns.seed)
    print(f"wrote {len(trips)} trips over {catalog.m} links to {out} "
          f"(train {len(parts[0])}, valid {len(parts[1])}, test {len(parts[2])})")
    return 0


def cmd_similarity(ns) -> int:
    data = load_data_dir(ns.data_dir)
    out_path = Path(ns.out) if ns.out else Path(ns.data_dir) / HIST_FILE
    out_dir = _prepare_dir(out_path.parent)
    hist = speed_histograms(data.train, data.catalog.m)
    write_histograms_csv(hist, out_path)
    outputs = [out_path]
    if ns.dump_q:
        q_path = Path(ns.dump_q)
        _prepare_dir(q_path.parent)
        write_q_matrix(DifferenceLookup(hist, "dense").dense, q_path)
        outputs.append(q_path)
    write_manifest(out_dir, "similarity", _args_dict(ns), outputs)
    print(f"wrote speed histograms for {hist.m} links to {out_path}"
          f" ({int(hist.imputed.any(axis=1).sum())} links with imputed bins)")
    return 0


def _effective_config(ns) -> TrainConfig:
    values = load_config(ns.config) if ns.config else {}
    cfg = train_config(values)
    if ns.model is not None:
        cfg = replace(cfg, variant=ns.model)
    if ns.beta is not None:
        if cfg.variant != "rnml":
            raise UsageError("beta requires rnml")
        cfg = replace(cfg, beta=ns.beta)
    if ns.seed is not None:
        cfg = replace(cfg, seed=ns.seed)
    if ns.max_steps is not None:
        cfg = replace(cfg, max_steps=ns.max_steps)
    return cfg


def _train_into(cfg: TrainConfig, data: EtaDataset, data_dir, hist_path, out: Path, ns):
    q = load_lookup(data_dir, hist_path) if cfg.variant == "rnml" else None
    if q is not None and q.m != data.catalog.m:
        raise ConfigurationError(f"histograms cover {q.m} links, catalog has {data.catalog.m}")
    result = train(cfg, data, q)
    ckpt, log_path = out / CHECKPOINT_FILE, out / TRAIN_LOG_FILE
    save_checkpoint(result, ckpt)
    write_log_csv(result.log_rows, log_path)
    write_manifest(out, "train", _args_dict(ns), [ckpt, log_path], cfg.to_dict(), cfg.seed)
    return result


def cmd_train(ns) -> int:
    cfg = _effective_config(ns)
    out = _prepare_dir(ns.out_dir)
    data = load_data_dir(ns.data_dir)
    result = _train_into(cfg, data, ns.data_dir, ns.histograms, out, ns)
    print(f"{cfg.variant}: {result.steps_run} steps, best validation MAPE {result.best_valid_mape:.4f} "
          f"at step {result.best_step}; checkpoint in {out / CHECKPOINT_FILE}")
    return 0


def _unique_name(name: str, taken) -> str:
    if name not in taken:
        return name
    n = 2
    while f"{name}#{n}" in taken:
        n += 1
    return f"{name}#{n}"


def cmd_eval(ns) -> int:
    values = load_config(ns.config) if ns.config else {}
    deltas = parse_deltas(ns.deltas or values.get("eval.deltas", "50:500:50"))
    mode = ns.coverage_mode or values.get("data.coverage_mode", "trips")
    distinct = ns.distinct or values.get("eval.distinct", False)
    out = _prepare_dir(ns.out_dir)
    data = load_data_dir(ns.data_dir, mode)
    preds = {}
    for path in ns.checkpoint:
        if not Path(path).is_file():
            raise MissingPrerequisiteError(f"checkpoint {path} not found; run `rnml-eta train` first")
        variant, model, provider = load_checkpoint(path, data.catalog)
        name = _unique_name(variant, preds)
        preds[name] = evaluate_model(model, data.test, data.catalog, provider, n_drivers=data.n_drivers)
    report = sweep(data.test, data.coverage, deltas, preds, distinct=distinct)
    json_path, csv_path = out / "eval_report.json", out / "eval_report.csv"
    report.write(json_path, csv_path)
    write_manifest(out, "eval", _args_dict(ns), [json_path, csv_path])
    for name, r in report.variants.items():
        print(f"{name}: n={r.n} MAPE {r.mape:.4f} MAE {r.mae:.1f} s RMSE {r.rmse:.1f} s")
    return 0


def cmd_sweep(ns) -> int:
    values = [float(v) for v in ns.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values needs at least one number")
    base = _effective_config(ns)
    if base.variant != "rnml":
        raise UsageError("sweep tunes the auxiliary task and requires model rnml")
    out = _prepare_dir(ns.out_dir)
    data = load_data_dir(ns.data_dir)
    rows = []
    for v in values:
        if ns.param == "beta":
            cfg = replace(base, beta=v)
        else:
            a1, _, a3 = base.triangle.margins
            cfg = replace(base, triangle=replace(base.triangle, margins=(a1, v, a3)))
        run_dir = _prepare_dir(out / f"{ns.param}={v!r}")
        result = _train_into(cfg, data, ns.data_dir, ns.histograms, run_dir, ns)
        pred = evaluate_model(result.model, data.test, data.catalog, result.provider, n_drivers=data.n_drivers)
        r = sweep(data.test, data.coverage, [], {"rnml": pred}).variants["rnml"]
        rows.append([ns.param, repr(v), r.n, repr(r.mape), repr(r.mae), repr(r.rmse), result.best_step,
                     repr(result.best_valid_mape)])
        print(f"{ns.param}={v}: test MAPE {r.mape:.4f}")
    csv_path = out / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    write_manifest(out, "sweep", _args_dict(ns), [csv_path], base.to_dict(), base.seed)
    return 0


# --- parser ----------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--config", type=Path, help="flat key = value file (train.*, model.*, aux.*, data.*)")
    p.add_argument("--model", choices=VARIANTS)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--histograms", type=Path, help="speed histogram CSV (default: DATA_DIR/histograms.csv)")
    p.add_argument("--out-dir", required=True, type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnml-eta", description="Synthetic ETA pipeline with metric-learned link embeddings.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic network and trip set")
    p.add_argument("--m", type=int, required=True, help="number of links")
    p.add_argument("--trips", type=int, required=True)
    p.add_argument("--drivers", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True, type=Path)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("similarity", help="per-link speed histograms from the training split")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--out", type=Path, help="histogram CSV (default: DATA_DIR/histograms.csv)")
    p.add_argument("--dump-q", type=Path, metavar="PATH", help="also write the dense difference matrix")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("train", help="train one model variant")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="overall and coverage-stratified test metrics")
    p.add_argument("--checkpoint", action="append", required=True, type=Path)
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--config", type=Path, help="reads eval.deltas, eval.distinct and data.coverage_mode")
    p.add_argument("--deltas", help="thresholds such as 50:500:50 or 50,100,inf (default 50:500:50)")
    p.add_argument("--distinct", action="store_true", help="count distinct links in the cold-route rule")
    p.add_argument("--coverage-mode", choices=("trips", "traversals"))
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="retrain and evaluate rnml over a list of beta or alpha2 values")
    p.add_argument("--param", choices=("beta", "alpha2"), required=True)
    p.add_argument("--values", required=True, help="comma-separated list")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep, model="rnml")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except RnmlError as exc:
        print(f"rnml-eta {ns.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"rnml-eta {ns.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
