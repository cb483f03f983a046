"""A synthetic road network and the long tail of link coverage.

Run:  python demos/01_network_and_coverage.py
"""

# %% Build a network and a trip set
import numpy as np

from rnml_eta.datagen import coverage_counts, generate_network, generate_trips
from rnml_eta.evaluator import stratify
from rnml_eta.trainer import EtaDataset

catalog = generate_network(500, seed=7)
trips = generate_trips(catalog, 10_000, drivers=50, seed=7)
data = EtaDataset.from_trips(catalog, trips)
print(f"{catalog.m} links, {len(trips)} trips "
      f"(train {len(data.train)}, valid {len(data.valid)}, test {len(data.test)})")

# %% Trip statistics
n_links = np.array([t.n_links for t in trips])
tt = np.array([t.travel_time_s for t in trips])
print(f"links per trip: mean {n_links.mean():.1f}, max {n_links.max()}")
print(f"travel time: median {np.median(tt):.0f} s, 95th pct {np.percentile(tt, 95):.0f} s")

# %% Coverage: how many training trips touch each link
# Popularity follows a Zipf-like law, so a few links are everywhere and
# most are rarely seen.
cov = coverage_counts(data.train, catalog.m).counts
order = np.argsort(-cov)
print("top-10 links by coverage:", cov[order[:10]].tolist())
print("coverage quantiles (10/50/90%):", np.percentile(cov, [10, 50, 90]).round(1).tolist())
print(f"links never seen in training: {int((cov == 0).sum())}")

# %% Cold routes: a test trip is cold at threshold delta when at least a
# quarter of its links have coverage below delta.
for delta in (25, 50, 100, 200, 400):
    print(f"delta={delta:>3}: {len(stratify(data.test, data.coverage, delta)):>4} of {len(data.test)} test trips")
