"""Bipartite matching between predicted and ground-truth instances, and the set loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .heads import PredictionSet
from .scene import GroundTruth

NO_OBJECT_WEIGHT = 0.1


@dataclass
class LossWeights:
    ce: float = 2.0
    bce: float = 5.0
    dice: float = 5.0
    no_object: float = NO_OBJECT_WEIGHT

    def validate(self):
        if min(self.ce, self.bce, self.dice, self.no_object) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class CostMatrix:
    C: np.ndarray
    ce: np.ndarray
    bce: np.ndarray
    dice: np.ndarray
    weights: LossWeights


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    total_cost: float

    @property
    def rows(self) -> np.ndarray:
        return np.array([k for k, _ in self.pairs], dtype=np.int64)

    @property
    def cols(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)


@dataclass
class LossBreakdown:
    ce: nk.Array
    bce: nk.Array
    dice: nk.Array
    total: nk.Array

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("ce", "bce", "dice", "total")}


def dice_cost(m: np.ndarray, g: np.ndarray) -> np.ndarray:
    """1 - 2(m.g + 1)/(|m| + |g| + 1) for every row pair of ``m`` (K,N) and ``g`` (K',N)."""
    m, g = np.atleast_2d(m).astype(np.float64), np.atleast_2d(g).astype(np.float64)
    inter = m @ g.T
    return 1.0 - 2.0 * (inter + 1.0) / (m.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] + 1.0)


def bce_cost(m: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Mean binary cross-entropy over points for every row pair, probabilities clamped."""
    m = np.clip(np.atleast_2d(m), nk.PROB_EPS, 1 - nk.PROB_EPS)
    g = np.atleast_2d(g).astype(np.float64)
    return -(np.log(m) @ g.T + np.log1p(-m) @ (1.0 - g).T) / m.shape[1]


def cost_matrix(pred: PredictionSet, gt: GroundTruth, weights: LossWeights | None = None) -> CostMatrix:
    weights = weights or LossWeights()
    weights.validate()
    if gt.count < 1:
        raise ValueError("cost matrix needs at least one ground-truth instance")
    probs = pred.class_probs.data
    masks = pred.soft_masks.data
    if masks.shape[1] != gt.masks.shape[1]:
        raise nk.ShapeError("prediction and ground truth cover different point counts")
    ce = -probs[:, gt.classes]
    bce = bce_cost(masks, gt.masks)
    dice = dice_cost(masks, gt.masks)
    C = weights.ce * ce + weights.bce * bce + weights.dice * dice
    return CostMatrix(C, ce, bce, dice, weights)


# --- Hungarian -------------------------------------------------------------------


def _solve(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path Hungarian for n rows <= m columns.

    Returns the column of each row and the dual potentials (u, v) with
    u_i + v_j <= cost_ij, equality on the assignment and v_j = 0 on free columns.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) owning column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of[p[j] - 1] = j - 1
    return col_of, u[1:], v[1:]


def _opt_value(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    t = cost.shape[0] > cost.shape[1]
    c = cost.T if t else cost
    cols, _, _ = _solve(c)
    return float(c[np.arange(len(cols)), cols].sum())


def _pairs_total(C: np.ndarray, pairs) -> float:
    return float(sum(C[k, g] for k, g in sorted(pairs)))


def hungarian(C) -> Assignment:
    """Minimum-cost matching of min(K, K') pairs.

    Among optimal matchings the pair list sorted by query index is the
    lexicographically smallest one (query k matched beats k unmatched).
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("cost must be a matrix")
    if np.isnan(C).any():
        raise ValueError("cost matrix contains NaN")
    K, G = C.shape
    if K == 0 or G == 0:
        return Assignment([], 0.0)
    transposed = K > G
    c = C.T if transposed else C
    cols, u, v = _solve(c)
    if transposed:
        match = {int(cols[g]): g for g in range(G)}
    else:
        match = {k: int(cols[k]) for k in range(K)}
    best = _pairs_total(C, match.items())
    tol = 1e-12 * max(1.0, float(np.abs(C).max())) * min(K, G)
    # an edge with positive reduced cost is absent from every optimal matching
    red = c - u[:, None] - v[None, :]
    red = red.T if transposed else red

    fixed: dict[int, int] = {}
    used: set[int] = set()
    for k in range(K):
        if len(used) == G:
            break
        current = match.get(k)
        for g in range(G if current is None else current):
            if g in used or red[k, g] > tol:
                continue
            trial = {**fixed, k: g}
            if _completion_value(C, trial, used | {g}, k) <= best + tol:
                fixed = trial
                used.add(g)
                match = _complete(C, fixed, used, k)
                break
        else:
            if current is not None:
                fixed[k] = current
                used.add(current)
    pairs = sorted(match.items())
    return Assignment(pairs, _pairs_total(C, pairs))


def _rest(C, used: set[int], upto: int) -> tuple[list[int], list[int]]:
    return list(range(upto + 1, C.shape[0])), [g for g in range(C.shape[1]) if g not in used]


def _completion_value(C, fixed: dict[int, int], used: set[int], upto: int) -> float:
    rows, cols = _rest(C, used, upto)
    return _opt_value(C[np.ix_(rows, cols)]) + sum(C[k, g] for k, g in fixed.items())


def _complete(C, fixed: dict[int, int], used: set[int], upto: int) -> dict[int, int]:
    """``fixed`` plus an optimal matching of the queries after ``upto``."""
    rows, cols = _rest(C, used, upto)
    out = dict(fixed)
    if rows and cols:
        sub = C[np.ix_(rows, cols)]
        t = sub.shape[0] > sub.shape[1]
        sel, _, _ = _solve(sub.T if t else sub)
        for a, b in enumerate(sel):
            r, cc = (b, a) if t else (a, b)
            out[rows[r]] = cols[cc]
    return out


# --- loss --------------------------------------------------------------------------


def loss(pred: PredictionSet, gt: GroundTruth, assignment: Assignment, weights: LossWeights | None = None) -> LossBreakdown:
    """Classification loss over all K queries plus BCE and dice over matched pairs.

    Unmatched queries are pushed toward "no object" with weight ``weights.no_object``;
    the assignment is a fixed input, so no gradient flows through the matching.
    """
    weights = weights or LossWeights()
    K, G1 = pred.class_logits.shape
    n = pred.soft_masks.shape[1]
    if gt.masks.shape[1] != n and gt.count:
        raise nk.ShapeError("prediction and ground truth cover different point counts")
    if gt.count > K:
        raise ValueError(f"{gt.count} ground-truth instances exceed K={K} queries")
    rows, cols = assignment.rows, assignment.cols
    target = np.full(K, G1 - 1)
    target[rows] = gt.classes[cols]
    w = np.full(K, weights.no_object)
    w[rows] = 1.0
    onehot = np.zeros((K, G1))
    onehot[np.arange(K), target] = w / K
    picked = nk.clamp_prob(pred.class_probs)
    ce = nk.mul(nk.total(nk.mul(nk.log(picked), onehot)), -1.0)

    zero = nk.Array(0.0)
    if len(rows):
        m = nk.gather_rows(pred.soft_masks, rows)
        g = gt.masks[cols].astype(np.float64)
        mc = nk.clamp_prob(m)
        bce_terms = nk.add(nk.mul(nk.log(mc), g), nk.mul(nk.log(nk.sub(1.0, mc)), 1.0 - g))
        bce = nk.mul(nk.total(bce_terms), -1.0 / (len(rows) * n))
        inter = nk.sum_axis(nk.mul(m, g), 1)
        denom = nk.add(nk.sum_axis(m, 1), g.sum(axis=1, keepdims=True) + 1.0)
        dice_rows = nk.sub(1.0, nk.div(nk.mul(nk.add(inter, 1.0), 2.0), denom))
        dice = nk.mul(nk.total(dice_rows), 1.0 / len(rows))
    else:
        bce, dice = zero, zero
    total = nk.add(nk.add(nk.mul(ce, weights.ce), nk.mul(bce, weights.bce)), nk.mul(dice, weights.dice))
    return LossBreakdown(ce, bce, dice, total)
