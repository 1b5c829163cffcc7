"""Slow, independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def fps_bruteforce(points, J):
    """Greedy FPS recomputing every pairwise distance each round; lowest index on ties."""
    points = [tuple(map(float, p)) for p in points]
    chosen = [0]
    while len(chosen) < J:
        best, best_d = None, -1.0
        for i, p in enumerate(points):
            if i in chosen:
                continue
            d = min(math.dist(p, points[c]) for c in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def assignment_bruteforce(C):
    """Minimum total over all injective maps of the smaller side; returns (total, pairs)."""
    C = np.asarray(C, dtype=float)
    K, G = C.shape
    best, best_pairs = math.inf, None
    if K <= G:
        for perm in itertools.permutations(range(G), K):
            tot = sum(C[k, perm[k]] for k in range(K))
            pairs = list(enumerate(perm))
            if tot < best or (tot == best and pairs < best_pairs):
                best, best_pairs = tot, pairs
    else:
        for perm in itertools.permutations(range(K), G):
            pairs = sorted((perm[g], g) for g in range(G))
            tot = sum(C[k, g] for k, g in pairs)
            if tot < best or (tot == best and pairs < best_pairs):
                best, best_pairs = tot, pairs
    return best, best_pairs


def iou(a, b):
    inter = sum(1 for x, y in zip(a, b) if x and y)
    union = sum(1 for x, y in zip(a, b) if x or y)
    return inter / union if union else 0.0


def labels_bruteforce(preds, gt_classes, gt_masks, thr):
    """TP/FP labels: walk predictions in rank order, try every still-free same-class gt."""
    free = set(range(len(gt_classes)))
    out = []
    for label, mask in preds:
        cands = [(iou(mask, gt_masks[g]), -g) for g in free if gt_classes[g] == label]
        if cands:
            v, neg_g = max(cands)
            if v >= thr:
                free.discard(-neg_g)
                out.append(True)
                continue
        out.append(False)
    return out


def ap_bruteforce(labels_scores, num_gt):
    """Sum over true positives of (1/num_gt) * best precision at any rank at or below it."""
    if num_gt == 0:
        return None if not labels_scores else 0.0
    ranked = sorted(labels_scores, key=lambda t: -t[1])
    prec = []
    tp = 0
    for i, (lab, _) in enumerate(ranked, 1):
        tp += lab
        prec.append(tp / i)
    total = 0.0
    for i, (lab, _) in enumerate(ranked):
        if lab:
            total += max(prec[i:]) / num_gt
    return total


def evaluate_bruteforce(scenes, num_classes, thresholds):
    """scenes: list of (preds[(label, score, mask)], gt_classes, gt_masks). Returns (mean AP, mean AP50, per-class)."""
    per_class = {}
    for c in range(num_classes):
        num_gt = sum(sum(1 for g in gcls if g == c) for _, gcls, _ in scenes)
        if num_gt == 0:
            continue
        aps = []
        for t in thresholds:
            pool = []
            for preds, gcls, gmasks in scenes:
                mine = sorted([p for p in preds if p[0] == c], key=lambda p: -p[1])
                labs = labels_bruteforce([(p[0], p[2]) for p in mine], gcls, gmasks, t)
                pool += [(int(l), p[1]) for l, p in zip(labs, mine)]
            aps.append(ap_bruteforce(pool, num_gt))
        per_class[c] = (sum(aps) / len(aps), aps[0])
    if not per_class:
        return 0.0, 0.0, per_class
    return (
        sum(v[0] for v in per_class.values()) / len(per_class),
        sum(v[1] for v in per_class.values()) / len(per_class),
        per_class,
    )
