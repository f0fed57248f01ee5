"""Brute-force reference implementations used to check the package.

Nothing here imports the package, so agreement is evidence rather than
tautology.
"""

import itertools
import math
from fractions import Fraction


def ece_bruteforce(pairs, M):
    """ECE by explicit per-point bin assignment with exact fractions where possible."""
    bins = [[] for _ in range(M)]
    for psi, label in pairs:
        b = M - 1
        for j in range(M):
            # bin j is [j/M, (j+1)/M); the last one also takes 1.0
            if psi < (j + 1) / M:
                b = j
                break
        bins[b].append((psi, label))
    n = len(pairs)
    total = 0.0
    for members in bins:
        if not members:
            continue
        acc = sum(l for _, l in members) / len(members)
        conf = math.fsum(p for p, _ in members) / len(members)
        total += len(members) / n * abs(acc - conf)
    return total


def partition_objective(pi, labels, interior):
    """Objective of the bins induced by interior thresholds (half-open bins)."""
    edges = [-math.inf] + list(interior) + [math.inf]
    n = len(pi)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        idx = [i for i, p in enumerate(pi) if lo <= p < hi]
        if not idx:
            return None
        mean = math.fsum(pi[i] for i in idx) / len(idx)
        acc = sum(labels[i] for i in idx) / len(idx)
        total += len(idx) / n * abs(mean - acc)
    return total


def best_partition(pi, labels, m):
    """Exhaustive search over all (m-1)-subsets of distinct-value midpoints."""
    u = sorted(set(pi))
    mids = [(a + b) / 2 for a, b in zip(u[:-1], u[1:])]
    best = None
    for combo in itertools.combinations(mids, m - 1):
        obj = partition_objective(pi, labels, combo)
        if obj is None:
            continue
        if best is None or obj < best[0] - 1e-12:
            best = (obj, combo)
    return best


def f1_bruteforce(means, labels):
    """Max F1 of ``mean >= t`` over every midpoint and both outer sentinels."""
    u = sorted(set(means))
    cands = [u[0] - 1] + [(a + b) / 2 for a, b in zip(u[:-1], u[1:])] + [u[-1] + 1]
    best_t, best_f = None, Fraction(-1)
    for t in cands:
        tp = sum(1 for x, y in zip(means, labels) if x >= t and y == 1)
        fp = sum(1 for x, y in zip(means, labels) if x >= t and y == 0)
        fn = sum(1 for x, y in zip(means, labels) if x < t and y == 1)
        f = Fraction(0) if tp == 0 else Fraction(2 * tp, 2 * tp + fp + fn)
        if f > best_f:
            best_t, best_f = t, f
    return best_t, float(best_f)


# two-sided 95% normal quantile
Z95 = 1.959963984540054


def wilson(p, n, z=Z95):
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    return centre - half, centre + half
