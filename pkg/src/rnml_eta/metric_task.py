"""Triangle loss over link embeddings.

For three links whose speed-profile differences satisfy
``Q(i, j) < Q(j, k) < Q(i, k)`` the squared distances between their
L2-normalized embeddings should follow the same order, with margins::

    D2(i, j) + a1 < D2(j, k)
    D2(i, j) + a2 < D2(i, k)
    D2(j, k) + a3 < D2(i, k)

Each violated inequality contributes its weighted hinge.  The loss is the
mean over the triangles sampled for a batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TriangleConfig:
    margins: tuple = (0.005, 0.02, 0.005)
    gammas: tuple = (0.3, 0.4, 0.3)
    triangles_per_batch: int = 256

    def __post_init__(self):
        if len(self.margins) != 3 or len(self.gammas) != 3:
            raise InvalidArgumentError("need exactly three margins and three weights")
        if min(self.margins) < 0 or min(self.gammas) < 0:
            raise InvalidArgumentError("margins and weights must be non-negative")
        if self.triangles_per_batch < 0:
            raise InvalidArgumentError("triangles_per_batch must be non-negative")


@dataclass
class TriangleSamples:
    """Relabeled triples (1-based link IDs) with ``q_ij < q_jk < q_ik``."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    q_ij: np.ndarray
    q_jk: np.ndarray
    q_ik: np.ndarray

    def __len__(self) -> int:
        return int(self.i.shape[0])

    @classmethod
    def empty(cls) -> "TriangleSamples":
        e, f = np.zeros(0, dtype=np.int64), np.zeros(0)
        return cls(e, e.copy(), e.copy(), f, f.copy(), f.copy())


def relabel(a, b, c, q_ab, q_bc, q_ac):
    """Canonical labeling of triangles given in arbitrary vertex order.

    The shortest edge is ``(i, j)``, the longest ``(i, k)``, so ``i`` is the
    vertex they share.  Returns ``(i, j, k, q_ij, q_jk, q_ik, strict)`` where
    ``strict`` flags triples whose three Q values are pairwise distinct.
    """
    a, b, c = (np.asarray(x, dtype=np.int64) for x in (a, b, c))
    q = np.stack([np.asarray(q_ab, float), np.asarray(q_bc, float), np.asarray(q_ac, float)], axis=1)
    # Edge e joins verts[e]; the opposite vertex of edge e is opp[e].
    verts = np.stack([np.stack([a, b], 1), np.stack([b, c], 1), np.stack([a, c], 1)], axis=1)
    order = np.argsort(q, axis=1, kind="stable")
    rows = np.arange(q.shape[0])
    short, long_ = order[:, 0], order[:, 2]
    vs, vl = verts[rows, short], verts[rows, long_]
    # Shared vertex of the shortest and longest edge.
    shared_first = (vs[:, 0] == vl[:, 0]) | (vs[:, 0] == vl[:, 1])
    i = np.where(shared_first, vs[:, 0], vs[:, 1])
    j = np.where(shared_first, vs[:, 1], vs[:, 0])
    k = np.where(vl[:, 0] == i, vl[:, 1], vl[:, 0])
    qs = np.take_along_axis(q, order, axis=1)
    strict = (qs[:, 0] < qs[:, 1]) & (qs[:, 1] < qs[:, 2])
    return i, j, k, qs[:, 0], qs[:, 1], qs[:, 2], strict


def sample_triangles(batch_links, q, count: int, rng: np.random.Generator) -> TriangleSamples:
    """Draw ``count`` triangles of distinct links from ``batch_links``.

    ``q`` is a :class:`~rnml_eta.similarity.DifferenceLookup` (or anything with
    a vectorized ``pairs(a, b)`` over 1-based IDs).  Draws with tied Q values
    are discarded; at most ``10 * count`` draws are made in total, so the
    result can be shorter than ``count`` (empty when every Q ties).
    """
    links = np.unique(np.asarray(batch_links, dtype=np.int64))
    n = links.size
    if n < 3 or count <= 0:
        if n < 3:
            log.debug("batch has %d distinct links; skipping auxiliary loss", n)
        return TriangleSamples.empty()
    budget = 10 * count
    parts = []
    got = 0
    while got < count and budget > 0:
        want = min(budget, count - got)
        budget -= want
        a = rng.integers(0, n, size=want)
        # Uniform distinct triple: shift the second and third draws past the
        # earlier picks.
        b = rng.integers(0, n - 1, size=want)
        b += b >= a
        c = rng.integers(0, n - 2, size=want)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        c += c >= lo
        c += c >= hi
        la, lb, lc = links[a], links[b], links[c]
        res = relabel(la, lb, lc, q.pairs(la, lb), q.pairs(lb, lc), q.pairs(la, lc))
        keep = res[-1]
        if keep.any():
            parts.append([r[keep] for r in res[:-1]])
            got += int(keep.sum())
    if not parts:
        return TriangleSamples.empty()
    cols = [np.concatenate([p[t] for p in parts])[:count] for t in range(6)]
    return TriangleSamples(*cols)


def embedding_distance(table: np.ndarray, a: int, b: int) -> float:
    """Euclidean distance between the normalized embeddings of links ``a`` and ``b`` (1-based)."""
    m = table.shape[1]
    if not (1 <= a <= m and 1 <= b <= m):
        raise InvalidArgumentError(f"link IDs must be in [1, {m}]")
    cols, _ = nn.l2_normalize(table[:, [a - 1, b - 1]], axis=0)
    return float(np.linalg.norm(cols[:, 0] - cols[:, 1]))


def hinge_terms(d_ij, d_jk, d_ik, config: TriangleConfig):
    """The three weighted hinge values from squared distances."""
    a1, a2, a3 = config.margins
    g1, g2, g3 = config.gammas
    return (
        g1 * np.maximum(d_ij - d_jk + a1, 0.0),
        g2 * np.maximum(d_ij - d_ik + a2, 0.0),
        g3 * np.maximum(d_jk - d_ik + a3, 0.0),
    )


def triangle_loss_from_sq(d_ij, d_jk, d_ik, config: TriangleConfig) -> float:
    d_ij, d_jk, d_ik = (np.atleast_1d(np.asarray(x, dtype=np.float64)) for x in (d_ij, d_jk, d_ik))
    if d_ij.size == 0:
        return 0.0
    t1, t2, t3 = hinge_terms(d_ij, d_jk, d_ik, config)
    return float(np.mean(t1 + t2 + t3))


def triangle_loss(table: np.ndarray, samples: TriangleSamples, config: TriangleConfig):
    """Mean weighted hinge loss and its gradient w.r.t. ``table``.

    Returns ``(loss, grad)`` where ``grad`` has the table's shape and is
    non-zero only in columns referenced by a sample with an active hinge.
    """
    grad = np.zeros_like(table)
    u = len(samples)
    if u == 0:
        return 0.0, grad
    cols, inv = np.unique(np.concatenate([samples.i, samples.j, samples.k]) - 1, return_inverse=True)
    ii, jj, kk = inv[:u], inv[u:2 * u], inv[2 * u:]
    raw = table[:, cols]
    unit, norms = nn.l2_normalize(raw, axis=0)
    ei, ej, ek = unit[:, ii], unit[:, jj], unit[:, kk]
    dif_ij, dif_jk, dif_ik = ei - ej, ej - ek, ei - ek
    d_ij = np.sum(dif_ij * dif_ij, axis=0)
    d_jk = np.sum(dif_jk * dif_jk, axis=0)
    d_ik = np.sum(dif_ik * dif_ik, axis=0)
    a1, a2, a3 = config.margins
    g1, g2, g3 = config.gammas
    h1 = d_ij - d_jk + a1
    h2 = d_ij - d_ik + a2
    h3 = d_jk - d_ik + a3
    loss = float(np.mean(g1 * np.maximum(h1, 0.0) + g2 * np.maximum(h2, 0.0) + g3 * np.maximum(h3, 0.0)))

    # Hinge subgradient at exactly 0 is 0.
    s1 = g1 * (h1 > 0.0) / u
    s2 = g2 * (h2 > 0.0) / u
    s3 = g3 * (h3 > 0.0) / u
    w_ij = s1 + s2
    w_jk = s3 - s1
    w_ik = -(s2 + s3)
    # d(|x - y|^2) = 2 (x - y) dx - 2 (x - y) dy
    gij = 2.0 * w_ij * dif_ij
    gjk = 2.0 * w_jk * dif_jk
    gik = 2.0 * w_ik * dif_ik
    d_unit = np.zeros_like(unit)
    np.add.at(d_unit.T, ii, (gij + gik).T)
    np.add.at(d_unit.T, jj, (gjk - gij).T)
    np.add.at(d_unit.T, kk, (-gjk - gik).T)
    grad[:, cols] = nn.l2_normalize_backward(raw, norms, d_unit, axis=0)
    return loss, grad


def combined_loss(l_main: float, l_aux: float, beta: float) -> float:
    """``(1 - beta) * main + beta * aux``."""
    if not 0.0 <= beta <= 1.0:
        raise InvalidArgumentError("beta must lie in [0, 1]")
    return (1.0 - beta) * l_main + beta * l_aux
