"""Scalar reference implementations used as test oracles.

Plain ``math`` over Python lists, written independently of the package so
that agreement is evidence rather than a tautology.
"""

import math


def mape(y, y_pred):
    return math.fsum(abs(a - b) / a for a, b in zip(y, y_pred)) / len(y)


def mae(y, y_pred):
    return math.fsum(abs(a - b) for a, b in zip(y, y_pred)) / len(y)


def rmse(y, y_pred):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(y, y_pred)) / len(y))


def l2(u, v):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(u, v)))


def minmax(values):
    lo, hi = min(values), max(values)
    return [(v - lo) / (hi - lo) for v in values]


def triangle_hinge(d_ij, d_jk, d_ik, margins=(0.005, 0.02, 0.005), gammas=(0.3, 0.4, 0.3)):
    a1, a2, a3 = margins
    g1, g2, g3 = gammas
    return (g1 * max(d_ij - d_jk + a1, 0.0) + g2 * max(d_ij - d_ik + a2, 0.0)
            + g3 * max(d_jk - d_ik + a3, 0.0))


def combined(l_main, l_aux, beta):
    return (1.0 - beta) * l_main + beta * l_aux


def slice_of_clock(hour, minute):
    return (hour * 60 + minute) // 5


def cold_kept(coverages, delta):
    cold = sum(1 for c in coverages if c < delta)
    return 4 * cold >= len(coverages)


def traversal_mean(observations):
    """Mean over (link, speed) traversal pairs, keyed by link."""
    sums, counts = {}, {}
    for link, speed in observations:
        sums.setdefault(link, []).append(speed)
        counts[link] = counts.get(link, 0) + 1
    return {k: math.fsum(v) / counts[k] for k, v in sums.items()}


def route_sum(lengths, speeds, waits):
    return math.fsum(l / s for l, s in zip(lengths, speeds)) + math.fsum(waits)


def trip_coverage(trips):
    out = {}
    for trip in trips:
        for link in set(trip):
            out[link] = out.get(link, 0) + 1
    return out


def l2_unit(x):
    n = math.sqrt(math.fsum(v * v for v in x))
    return [v / n for v in x]
