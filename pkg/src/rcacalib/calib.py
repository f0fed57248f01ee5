"""Score combination, threshold optimization and calibration metrics.

COE and RCE means are blended into a single score ``pi`` in [0, 1]. Threshold
fitting partitions the validation ``pi`` values into ``m`` contiguous bins so
that the count-weighted gap between each bin's mean ``pi`` and its accuracy is
minimal. A test case receives a per-bin confidence learned on validation data:
by default the bin's mean ``pi`` (the quantity the objective aligns with the
bin's accuracy), or optionally the bin's raw validation accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import ValidationError

TIE_TOL = 1e-12
CONFIDENCE_RULES = ("mean-score", "accuracy")


def normalize_rce(rce_mean, S: int):
    """Map an RCE mean on the 1..S scale linearly onto [0, 1]."""
    return (np.asarray(rce_mean, dtype=float) - 1.0) / (S - 1)


def _check_scores(coe, rce, S):
    coe = np.asarray(coe, dtype=float)
    rce = np.asarray(rce, dtype=float)
    if S < 2:
        raise ValidationError("RCE scale maximum S must be at least 2")
    if np.any((coe < 0) | (coe > 1)) or np.any(~np.isfinite(coe)):
        raise ValidationError("COE mean must lie in [0, 1]")
    if np.any((rce < 1) | (rce > S)) or np.any(~np.isfinite(rce)):
        raise ValidationError(f"RCE mean must lie in [1, {S}]")
    return coe, rce


def transform_scores(coe, rce, w: float, S: int = 5) -> np.ndarray:
    """Vectorised convex blend ``w * coe + (1 - w) * (rce - 1) / (S - 1)``."""
    if not 0.0 <= w <= 1.0:
        raise ValidationError("blend weight w must lie in [0, 1]")
    coe, rce = _check_scores(coe, rce, S)
    pi = w * coe + (1.0 - w) * normalize_rce(rce, S)
    return np.clip(pi, 0.0, 1.0)


def transform_score(coe_mean: float, rce_mean: float, w: float, S: int = 5) -> float:
    return float(transform_scores(coe_mean, rce_mean, w, S))


# ---------------------------------------------------------------------------
# threshold optimization
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _fenwick_update(tree, i, v):
    n = tree.shape[0] - 1
    i += 1
    while i <= n:
        if v < tree[i]:
            tree[i] = v
        i += i & (-i)


@numba.njit(cache=True)
def _fenwick_prefix_min(tree, i):
    # min over positions 0..i-1
    out = np.inf
    while i > 0:
        if tree[i] < out:
            out = tree[i]
        i -= i & (-i)
    return out


@numba.njit(cache=True)
def _partition_dp(prefix, rank, n_ranks, m, weights, tol):
    """Split groups 0..D-1 into m contiguous ranges minimizing
    sum_i weights[i] * |prefix[end_i] - prefix[start_i]|.

    ``rank`` is the dense rank of each prefix value. Each layer of the DP
    splits the absolute value by the sign of prefix[b] - prefix[a], so both
    halves become prefix-min queries over ranks (Fenwick trees): O(m D log D).
    Returns (cost, cuts) where cuts[i] is the last group of bin i, choosing the
    earliest cut among near-optimal ones at every step.
    """
    D = prefix.shape[0] - 1
    g = np.full((m + 1, D + 1), np.inf)
    for a in range(D):
        g[1, a] = weights[m - 1] * abs(prefix[D] - prefix[a])
    for j in range(2, m + 1):
        wj = weights[m - j]
        lo_tree = np.full(n_ranks + 1, np.inf)   # h - w*P by rank, prefix-min
        hi_tree = np.full(n_ranks + 1, np.inf)   # h + w*P by reversed rank
        for a in range(D - 1, -1, -1):
            e = a + 1
            h = g[j - 1, e]
            if h < np.inf:
                _fenwick_update(lo_tree, rank[e], h - wj * prefix[e])
                _fenwick_update(hi_tree, n_ranks - 1 - rank[e], h + wj * prefix[e])
            if j == m and a != 0:
                continue
            pa = wj * prefix[a]
            r = rank[a]
            below = _fenwick_prefix_min(lo_tree, r) + pa
            above = _fenwick_prefix_min(hi_tree, n_ranks - r) - pa
            g[j, a] = below if below < above else above
    cuts = np.empty(m - 1, np.int64)
    a = 0
    for j in range(m, 1, -1):
        wj = weights[m - j]
        target = g[j, a] + tol
        b = a
        while b < D - j:
            if wj * abs(prefix[b + 1] - prefix[a]) + g[j - 1, b + 1] <= target:
                break
            b += 1
        cuts[m - j] = b
        a = b + 1
    return g[m, 0], cuts


def _groups(pi, labels):
    order = np.argsort(pi, kind="stable")
    ps, ls = pi[order], labels[order]
    values, start, counts = np.unique(ps, return_index=True, return_counts=True)
    resid = np.add.reduceat(ps - ls, start)
    pos = np.add.reduceat(ls, start)
    tot = np.add.reduceat(ps, start)
    return values, counts, resid, pos, tot


def fit_bins(pi, labels, m: int, bin_weights: Optional[Sequence[float]] = None):
    """Optimal ``m``-bin histogram for fixed scores.

    Candidate thresholds are midpoints between consecutive distinct values of
    ``pi``, so no bin is ever empty. Returns
    ``(objective, thresholds, bin_accuracies, bin_mean_scores)`` where
    ``thresholds`` includes the fixed endpoints 0 and 1. Raises
    :class:`ValidationError` when there are fewer distinct values than bins.
    """
    pi = np.asarray(pi, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n = pi.size
    if n == 0:
        raise ValidationError("no validation points")
    if m < 1:
        raise ValidationError("m must be at least 1")
    weights = np.ones(m) if bin_weights is None else np.asarray(bin_weights, dtype=float)
    if weights.shape != (m,):
        raise ValidationError(f"bin_weights must have length {m}")
    values, counts, resid, pos, tot = _groups(pi, labels)
    D = values.size
    if m > D:
        raise ValidationError(
            f"{m} bins need {m - 1} interior thresholds but only {D - 1} candidate "
            f"midpoints exist ({D} distinct scores); use a smaller m")
    prefix = np.concatenate(([0.0], np.cumsum(resid)))
    if m == 1:
        cost, cuts = weights[0] * abs(prefix[-1]), np.empty(0, np.int64)
    else:
        _, rank = np.unique(prefix, return_inverse=True)
        cost, cuts = _partition_dp(prefix, rank.astype(np.int64), int(rank.max()) + 1,
                                   m, weights, TIE_TOL * n)
    thresholds = [0.0] + [0.5 * (values[b] + values[b + 1]) for b in cuts] + [1.0]
    ends = list(cuts + 1) + [D]
    starts = [0] + list(cuts + 1)
    acc, mean = [], []
    for s, e in zip(starts, ends):
        c = counts[s:e].sum()
        acc.append(float(pos[s:e].sum() / c))
        mean.append(float(min(1.0, max(0.0, tot[s:e].sum() / c))))
    return float(cost) / n, tuple(float(t) for t in thresholds), tuple(acc), tuple(mean)


@dataclass(frozen=True)
class CalibrationModel:
    w: float
    thresholds: tuple
    bin_confidences: tuple
    m: int
    S: int = 5
    omega_id: str = "bin-count"
    mode: str = "full"
    confidence: str = "mean-score"
    objective: float = float("nan")
    bin_weights: Optional[tuple] = None

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if len(t) != self.m + 1 or t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise ValidationError(
                "thresholds must be strictly increasing from 0 to 1 with m + 1 entries")
        c = np.asarray(self.bin_confidences, dtype=float)
        if c.shape != (self.m,) or np.any((c < 0) | (c > 1)):
            raise ValidationError("need m bin confidences in [0, 1]")

    @property
    def theta(self) -> dict:
        return {"w": self.w}

    def to_dict(self) -> dict:
        d = {"w": self.w, "thresholds": list(self.thresholds),
             "bin_confidences": list(self.bin_confidences), "m": self.m, "S": self.S,
             "omega": self.omega_id, "mode": self.mode, "confidence": self.confidence,
             "objective": self.objective}
        if self.bin_weights is not None:
            d["bin_weights"] = list(self.bin_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        bw = d.get("bin_weights")
        return cls(w=float(d["w"]), thresholds=tuple(d["thresholds"]),
                   bin_confidences=tuple(d["bin_confidences"]), m=int(d["m"]),
                   S=int(d.get("S", 5)), omega_id=d.get("omega", "bin-count"),
                   mode=d.get("mode", "full"), confidence=d.get("confidence", "mean-score"),
                   objective=float(d.get("objective", float("nan"))),
                   bin_weights=tuple(bw) if bw is not None else None)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CalibrationModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def bin_of(self, pi):
        inner = np.asarray(self.thresholds[1:-1])
        return np.searchsorted(inner, np.asarray(pi, dtype=float), side="right")


def w_grid(step: float) -> np.ndarray:
    steps = round(1.0 / step)
    if steps < 1 or abs(steps * step - 1.0) > 1e-9:
        raise ValidationError("w_grid_step must divide 1 evenly")
    return np.linspace(0.0, 1.0, steps + 1)


def fit_calibration(val, m: int = 5, w_grid_step: float = 0.01, mode: str = "full",
                    S: int = 5, bin_weights: Optional[Sequence[float]] = None,
                    confidence: str = "mean-score") -> CalibrationModel:
    """Fit the blend weight and bin thresholds on validation triples.

    ``val`` is a sequence of ``(coe_mean, rce_mean, label)``. Every ``w`` on the
    grid is tried (only ``w = 0`` in ``"rce-only"`` mode); the lowest objective
    wins, ties going to the smaller ``w`` and then the smaller threshold vector.
    ``bin_weights`` multiplies each bin's count weight, e.g. to emphasize the
    high-confidence end. ``confidence`` selects what each bin reports:
    ``"mean-score"`` (validation mean ``pi``) or ``"accuracy"``.
    """
    if confidence not in CONFIDENCE_RULES:
        raise ValidationError(f"unknown confidence rule {confidence!r}")
    arr = np.asarray(val, dtype=float).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise ValidationError("validation set is empty")
    if m < 2:
        raise ValidationError("m must be at least 2")
    coe, rce, labels = arr[:, 0], arr[:, 1], arr[:, 2]
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    _check_scores(coe, rce, S)
    if mode == "full":
        grid = w_grid(w_grid_step)
    elif mode == "rce-only":
        grid = np.array([0.0])
    else:
        raise ValidationError(f"unknown calibration mode {mode!r}")

    best = None
    for w in grid:
        pi = transform_scores(coe, rce, w, S)
        if np.unique(pi).size < m:
            continue
        obj, thr, acc, mean = fit_bins(pi, labels, m, bin_weights)
        if best is None or obj < best[0] - TIE_TOL:
            best = (obj, float(w), thr, acc if confidence == "accuracy" else mean)
    if best is None:
        raise ValidationError(
            f"no blend weight yields {m} distinct scores; use a smaller m")
    obj, w, thr, conf = best
    return CalibrationModel(w=w, thresholds=thr, bin_confidences=conf, m=m, S=S,
                            mode=mode, confidence=confidence, objective=obj,
                            bin_weights=tuple(bin_weights) if bin_weights is not None else None)


# ---------------------------------------------------------------------------
# confidence assignment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssignedConfidence:
    case_id: str
    pi_value: float
    bin_index: int
    psi: float


def assign_confidence(model: CalibrationModel, coe_mean: float, rce_mean: float,
                      case_id: str = "") -> AssignedConfidence:
    pi = transform_score(coe_mean, rce_mean, model.w, model.S)
    b = int(model.bin_of(pi))
    return AssignedConfidence(case_id, pi, b, float(model.bin_confidences[b]))


def assign_confidences(model: CalibrationModel, coe, rce) -> np.ndarray:
    """Vectorised ``psi`` for arrays of COE and RCE means."""
    pi = transform_scores(coe, rce, model.w, model.S)
    return np.asarray(model.bin_confidences)[model.bin_of(pi)]


def equal_width_bin(psi, M: int):
    """Index of the equal-width bin on [0, 1]; the last bin is closed."""
    edges = np.arange(1, M) / M
    return np.searchsorted(edges, np.asarray(psi, dtype=float), side="right")


def uniform_baseline(coe_mean: float, rce_mean: float, w: float, S: int = 5,
                     mode: str = "combined", M: int = 5,
                     case_id: str = "") -> AssignedConfidence:
    """Linear projection of raw scores to [0, 1], with no fitted binning."""
    if mode == "combined":
        psi = transform_score(coe_mean, rce_mean, w, S)
    elif mode == "rce-only":
        _check_scores(coe_mean, rce_mean, S)
        psi = float(normalize_rce(rce_mean, S))
    else:
        raise ValidationError(f"unknown baseline mode {mode!r}")
    return AssignedConfidence(case_id, psi, int(equal_width_bin(psi, M)), psi)


# ---------------------------------------------------------------------------
# ECE and reliability tables
# ---------------------------------------------------------------------------

def wilson_interval(p: float, n: int, level: float = 0.95):
    """Wilson score interval for a proportion ``p`` observed on ``n`` trials."""
    if not 0.0 < level < 1.0:
        raise ValidationError("band level must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return float(max(0.0, centre - half)), float(min(1.0, centre + half))


@dataclass(frozen=True)
class ReliabilityRow:
    lo: float
    hi: float
    count: int
    mean_conf: Optional[float]
    accuracy: Optional[float]
    band_lo: Optional[float]
    band_hi: Optional[float]

    @property
    def in_band(self) -> Optional[bool]:
        if self.count == 0:
            return None
        return self.band_lo - TIE_TOL <= self.accuracy <= self.band_hi + TIE_TOL


@dataclass(frozen=True)
class ReliabilityTable:
    M: int
    rows: tuple
    band_level: float = 0.95

    @property
    def n(self) -> int:
        return sum(r.count for r in self.rows)


@dataclass(frozen=True)
class EceReport:
    ece: float
    M: int
    n: int
    table: ReliabilityTable = field(repr=False)


def _as_pairs(assigned):
    arr = np.asarray(assigned, dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValidationError("cannot compute calibration metrics on an empty set")
    psi, labels = arr[:, 0], arr[:, 1]
    if np.any((psi < 0) | (psi > 1)) or np.any(~np.isfinite(psi)):
        raise ValidationError("confidences must lie in [0, 1]")
    return psi, labels


def reliability_report(assigned, M: int = 5, band_level: float = 0.95) -> ReliabilityTable:
    """Per-bin counts, mean confidence, accuracy and Wilson bands.

    ``assigned`` is a sequence of ``(psi, label)`` pairs (or an ``(n, 2)`` array).
    The band is centred on the bin's mean confidence: a calibrated bin's accuracy
    should fall inside it.
    """
    if not 0.0 < band_level < 1.0:
        raise ValidationError("band level must lie in (0, 1)")
    if M < 1:
        raise ValidationError("M must be at least 1")
    psi, labels = _as_pairs(assigned)
    idx = equal_width_bin(psi, M)
    rows = []
    for b in range(M):
        mask = idx == b
        c = int(mask.sum())
        lo, hi = b / M, (b + 1) / M
        if c == 0:
            rows.append(ReliabilityRow(lo, hi, 0, None, None, None, None))
            continue
        conf = float(psi[mask].mean())
        acc = float(labels[mask].mean())
        blo, bhi = wilson_interval(conf, c, band_level)
        rows.append(ReliabilityRow(lo, hi, c, conf, acc, blo, bhi))
    return ReliabilityTable(M, tuple(rows), band_level)


def compute_ece(assigned, M: int = 5) -> EceReport:
    """Expected calibration error over ``M`` equal-width bins."""
    table = reliability_report(assigned, M)
    n = table.n
    ece = sum(r.count / n * abs(r.accuracy - r.mean_conf) for r in table.rows if r.count)
    return EceReport(float(ece), M, n, table)
