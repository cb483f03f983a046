"""Train the four variants on a small network and compare them.

This is a scaled-down version of the full comparison (smaller network,
narrower model, fewer steps), so the numbers are only indicative.  The
full-size experiment is ``python -m rnml_eta.experiment --cache DIR``.

Run:  python demos/04_train_and_compare.py
"""

# %%
import time
from dataclasses import replace

from rnml_eta.datagen import generate_network, generate_trips
from rnml_eta.evaluator import sweep
from rnml_eta.trainer import EtaDataset, TrainConfig, evaluate_model, train

catalog = generate_network(300, seed=11)
data = EtaDataset.from_trips(catalog, generate_trips(catalog, 12_000, drivers=40, seed=11))
q = data.difference_lookup()
base = TrainConfig(batch_size=64, hidden=32, max_steps=1500, eval_every=250, patience=0, lr=1e-3)

# %% Train
preds = {}
for variant in ("route-eta", "wdr-nolink", "wdr", "rnml"):
    t0 = time.perf_counter()
    res = train(replace(base, variant=variant), data, q if variant == "rnml" else None)
    preds[variant] = evaluate_model(res.model, data.test, catalog, res.provider, n_drivers=data.n_drivers)
    print(f"{variant:>10}: best valid MAPE {res.best_valid_mape:.4f} at step {res.best_step} "
          f"({time.perf_counter() - t0:.0f} s)")

# %% Overall and cold-route test metrics
deltas = [200.0, 300.0, 400.0, float("inf")]
report = sweep(data.test, data.coverage, deltas, preds)
print(f"\n{'variant':>10} " + " ".join(f"{'d=' + format(d, 'g'):>9}" for d in deltas))
for name, r in report.variants.items():
    cells = [f"{s.mape:9.4f}" if s.mape is not None else f"{'-':>9}" for s in r.strata]
    print(f"{name:>10} " + " ".join(cells))
print(f"{'n trips':>10} " + " ".join(f"{s.n:>9}" for s in report.variants['wdr'].strata))
