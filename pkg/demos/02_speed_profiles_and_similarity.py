"""Per-link speed profiles and the link difference matrix Q.

Every link gets a three-bin profile (morning peak, evening peak, off-peak)
of mean training speeds, scaled into [0, 1] with one global min and max.
Links with close profiles have a small Q and count as similar.

Run:  python demos/02_speed_profiles_and_similarity.py
"""

# %%
import numpy as np

from rnml_eta.datagen import generate_network, generate_trips
from rnml_eta.similarity import DifferenceLookup, speed_histograms
from rnml_eta.trainer import EtaDataset

catalog = generate_network(300, seed=3)
data = EtaDataset.from_trips(catalog, generate_trips(catalog, 8000, drivers=40, seed=3))
hist = speed_histograms(data.train, catalog.m)
print(f"raw speed range used for scaling: [{hist.low:.2f}, {hist.high:.2f}] m/s")
print(f"links with at least one imputed bin: {int(hist.imputed.any(axis=1).sum())}")

# %% A few profiles next to the generator's ground truth (base speed x bin multiplier)
truth = catalog.base_speed_mps[:, None] * catalog.peak_profile
for link in (1, 2, 3):
    est = hist.values[link - 1] * (hist.high - hist.low) + hist.low
    print(f"link {link}: estimated {np.round(est, 2).tolist()}  generator {np.round(truth[link - 1], 2).tolist()}")

# %% Q is a metric over profiles
q = DifferenceLookup(hist, "dense").dense
print(f"Q: {q.shape}, symmetric {np.array_equal(q, q.T)}, zero diagonal {not np.diag(q).any()}, "
      f"max {q.max():.3f} (bound sqrt(3) = {np.sqrt(3):.3f})")

# %% Nearest and farthest neighbours of one link
link = 10
row = q[link - 1].copy()
row[link - 1] = np.inf
near = np.argsort(row)[:3] + 1
row[link - 1] = -np.inf
far = np.argsort(row)[-3:] + 1
show = lambda ids: [(int(i), np.round(hist.values[i - 1], 2).tolist()) for i in ids]  # noqa: E731
print(f"link {link} profile {np.round(hist.values[link - 1], 2).tolist()}")
print("closest:", show(near))
print("farthest:", show(far))
