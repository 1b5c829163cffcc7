"""Deterministic synthetic evaluation fixtures shared by tests and the golden-file generator."""

import numpy as np

from queryis.heads import InstanceResult
from queryis.scene import GroundTruth


def three_scene_fixture(seed: int = 2024, num_classes: int = 3):
    """Three scenes with noisy, duplicated, misclassified and missing predictions."""
    rng = np.random.default_rng(seed)
    scenes = []
    for n, k in ((60, 3), (80, 4), (50, 2)):
        owner = rng.integers(-1, k, n)
        owner[:k] = np.arange(k)
        masks = np.stack([owner == g for g in range(k)])
        classes = rng.integers(0, num_classes, k)
        preds = []
        for g in range(k):
            for _ in range(int(rng.integers(0, 3))):
                m = masks[g].copy()
                flip = rng.uniform(size=n) < rng.uniform(0.0, 0.3)
                m ^= flip
                if not m.any():
                    continue
                label = int(classes[g]) if rng.uniform() < 0.8 else int(rng.integers(0, num_classes))
                preds.append((label, float(np.round(rng.uniform(0.05, 1.0), 6)), m))
        junk = rng.uniform(size=n) < 0.3
        junk[0] = True
        preds.append((int(rng.integers(0, num_classes)), float(np.round(rng.uniform(0.05, 1.0), 6)), junk))
        scenes.append((preds, classes, masks))
    return scenes


def as_results(scene):
    preds, classes, masks = scene
    res = [InstanceResult(label=l, confidence=s, mask=m, score=s, kept=True) for l, s, m in preds]
    res.sort(key=lambda r: -r.score)
    return res, GroundTruth(classes, masks)
