"""The triangle loss on its own: similar links move together.

Starting from random link embeddings, a few hundred Adam steps on the
auxiliary loss alone are enough to pull the most similar link pairs (small
Q) closer than the least similar ones.

Run:  python demos/03_triangle_loss_geometry.py
"""

# %%
import numpy as np

from rnml_eta import nn_core as nn
from rnml_eta.datagen import generate_network, generate_trips
from rnml_eta.metric_task import TriangleConfig, embedding_distance, sample_triangles, triangle_loss
from rnml_eta.trainer import EtaDataset

catalog = generate_network(200, seed=5)
data = EtaDataset.from_trips(catalog, generate_trips(catalog, 6000, drivers=30, seed=5))
q = data.difference_lookup()
rng = np.random.default_rng(0)
params = {"link_emb": rng.normal(scale=0.1, size=(20, catalog.m))}
adam = nn.AdamState(lr=0.01)
cfg = TriangleConfig()

# %% Pairs to watch
iu, ju = np.triu_indices(catalog.m, k=1)
order = np.argsort(q.dense[iu, ju], kind="stable")
near_pairs, far_pairs = order[:100], order[-100:]


def mean_dist(sel):
    return np.mean([embedding_distance(params["link_emb"], iu[n] + 1, ju[n] + 1) for n in sel])


# %% Optimize
links = np.arange(1, catalog.m + 1)
for step in range(601):
    samples = sample_triangles(links, q, 256, rng)
    loss, grad = triangle_loss(params["link_emb"], samples, cfg)
    if step % 150 == 0:
        print(f"step {step:>3}: L_aux {loss:.4f}  near pairs {mean_dist(near_pairs):.3f}  "
              f"far pairs {mean_dist(far_pairs):.3f}")
    nn.adam_step(adam, params, {"link_emb": grad})
