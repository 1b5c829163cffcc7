"""Class and mask heads, confidence scoring and result assembly (no NMS)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numkit as nk


@dataclass
class PredictionSet:
    class_logits: nk.Array  # (K, G+1), last column is "no object"
    class_probs: nk.Array
    mask_embeddings: nk.Array  # (K, C)
    soft_masks: nk.Array  # (K, N)

    @property
    def K(self) -> int:
        return self.class_logits.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_logits.shape[1] - 1


@dataclass
class InstanceResult:
    label: int
    confidence: float
    mask: np.ndarray  # bool (N,)
    score: float
    kept: bool
    query: int = -1


def init_params(C: int, G: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = nk.init_linear(rng, "heads.cls", C, G + 1)
    p.update(nk.init_mlp(rng, "heads.mask", [C, C, C, C]))
    return p


def predict(QL, F, params: Mapping[str, nk.Array]) -> PredictionSet:
    QL, F = nk.as_array(QL), nk.as_array(F)
    if QL.shape[1] != F.shape[1]:
        raise nk.ShapeError(f"query width {QL.shape[1]} != embedding width {F.shape[1]}")
    logits = nk.linear(QL, params, "heads.cls")
    E = nk.mlp_forward(QL, params, "heads.mask")
    masks = nk.sigmoid(nk.matmul(E, nk.transpose(F)))
    return PredictionSet(logits, nk.softmax_rows(logits), E, masks)


def score(p_k: np.ndarray, m_k: np.ndarray, tau: float = 0.5, query: int = -1) -> InstanceResult:
    p_k = np.asarray(p_k, dtype=np.float64)
    m_k = np.asarray(m_k, dtype=np.float64)
    label = int(np.argmax(p_k[:-1]))
    conf = float(p_k[label])
    b = m_k > tau
    nb = int(b.sum())
    if int(np.argmax(p_k)) == len(p_k) - 1 or nb == 0:
        return InstanceResult(label, conf, b, 0.0, False, query)
    s = conf * float((m_k * b).sum()) / nb
    return InstanceResult(label, conf, b, min(max(s, 0.0), 1.0), True, query)


def assemble(pred: PredictionSet, tau: float = 0.5) -> list[InstanceResult]:
    probs, masks = pred.class_probs.data, pred.soft_masks.data
    results = [score(probs[k], masks[k], tau, k) for k in range(pred.K)]
    kept = [r for r in results if r.kept]
    kept.sort(key=lambda r: (-r.score, r.query))
    return kept


# --- result dump ------------------------------------------------------------------


def _rle(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[0], mask.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


def write_results(results: list[InstanceResult], n: int, path) -> None:
    lines = [f"QISRES1 K={len(results)} N={n}"]
    for r in results:
        lines.append(f"class={r.label} score={r.score!r}")
        lines.append(" ".join(f"{s}:{l}" for s, l in _rle(r.mask)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results(path) -> tuple[list[InstanceResult], int]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "QISRES1":
        raise ValueError(f"{path}:1: bad result header")
    k, n = int(head[1][2:]), int(head[2][2:])
    out = []
    for i in range(k):
        meta = dict(f.split("=", 1) for f in lines[1 + 2 * i].split())
        mask = np.zeros(n, dtype=bool)
        for run in lines[2 + 2 * i].split():
            s, l = map(int, run.split(":"))
            mask[s : s + l] = True
        sc = float(meta["score"])
        out.append(InstanceResult(int(meta["class"]), float("nan"), mask, sc, True))
    return out, n
