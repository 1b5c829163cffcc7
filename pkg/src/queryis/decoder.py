"""Instance query decoder: L pre-norm layers of self-attention, co-attention over S, and FFN."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numkit as nk
from .sampler import fps_indices

QUERY_MODES = ("learned", "nonparam_fps")


@dataclass
class DecoderConfig:
    L: int = 3
    H: int = 4
    K: int = 32
    C: int = 32
    query_mode: str = "learned"
    self_attention: bool = True
    ffn_mult: int = 2

    def validate(self):
        if self.C % self.H:
            raise ValueError(f"C={self.C} is not divisible by H={self.H}")
        if self.L < 0 or self.K < 1 or self.H < 1:
            raise ValueError("need L >= 0, K >= 1, H >= 1")
        if self.query_mode not in QUERY_MODES:
            raise ValueError(f"decoder.query_mode must be one of {QUERY_MODES}")


@dataclass
class QuerySet:
    Q0: nk.Array
    QL: nk.Array
    layers: list[nk.Array] = field(default_factory=list)
    # cross-attention weights per layer, shape (H, K, J)
    attention: list[np.ndarray] = field(default_factory=list)


def _init_attention(rng, prefix: str, C: int) -> dict[str, np.ndarray]:
    p = {}
    for name in ("q", "k", "v", "o"):
        p.update(nk.init_linear(rng, f"{prefix}.{name}", C, C))
    p[f"{prefix}.norm.gamma"] = np.ones(C)
    p[f"{prefix}.norm.beta"] = np.zeros(C)
    return p


def init_params(cfg: DecoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    cfg.validate()
    C = cfg.C
    p = {}
    if cfg.query_mode == "learned":
        p["decoder.query"] = rng.normal(0.0, 1.0, (cfg.K, C))
    for l in range(1, cfg.L + 1):
        pre = f"decoder.layer{l}"
        if cfg.self_attention:
            p.update(_init_attention(rng, f"{pre}.self", C))
        p.update(_init_attention(rng, f"{pre}.cross", C))
        p[f"{pre}.cross.mem_norm.gamma"] = np.ones(C)
        p[f"{pre}.cross.mem_norm.beta"] = np.zeros(C)
        p.update(nk.init_mlp(rng, f"{pre}.ffn", [C, cfg.ffn_mult * C, C]))
        p[f"{pre}.ffn.norm.gamma"] = np.ones(C)
        p[f"{pre}.ffn.norm.beta"] = np.zeros(C)
    return p


def _norm(x, p, prefix):
    return nk.layer_norm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"])


def multihead_attention(x, mem, p: Mapping[str, nk.Array], prefix: str, H: int):
    """softmax(q_h k_h^T / sqrt(C/H)) v_h per head, heads concatenated then projected.

    Returns the output and the attention weights with shape (H, rows of x, rows of mem).
    """
    q = nk.linear(x, p, f"{prefix}.q")
    k = nk.linear(mem, p, f"{prefix}.k")
    v = nk.linear(mem, p, f"{prefix}.v")
    C = q.shape[1]
    d = C // H
    heads, weights = [], []
    for h in range(H):
        qh, kh, vh = (nk.slice_cols(t, h * d, (h + 1) * d) for t in (q, k, v))
        a = nk.softmax_rows(nk.mul(nk.matmul(qh, nk.transpose(kh)), 1.0 / np.sqrt(d)))
        weights.append(a.data)
        heads.append(nk.matmul(a, vh))
    out = nk.linear(nk.concat_cols(heads) if H > 1 else heads[0], p, f"{prefix}.o")
    return out, np.stack(weights)


def decode(Q0, S, cfg: DecoderConfig, params: Mapping[str, nk.Array]) -> QuerySet:
    cfg.validate()
    Q0, S = nk.as_array(Q0), nk.as_array(S)
    if Q0.shape[1] != cfg.C or S.shape[1] != cfg.C:
        raise nk.ShapeError(f"queries {Q0.shape} / representatives {S.shape} do not have C={cfg.C} columns")
    x = Q0
    out = QuerySet(Q0, Q0)
    for l in range(1, cfg.L + 1):
        pre = f"decoder.layer{l}"
        if cfg.self_attention:
            y = _norm(x, params, f"{pre}.self.norm")
            y, _ = multihead_attention(y, y, params, f"{pre}.self", cfg.H)
            x = nk.add(x, y)
        y = _norm(x, params, f"{pre}.cross.norm")
        mem = _norm(S, params, f"{pre}.cross.mem_norm")
        y, w = multihead_attention(y, mem, params, f"{pre}.cross", cfg.H)
        x = nk.add(x, y)
        y = _norm(x, params, f"{pre}.ffn.norm")
        x = nk.add(x, nk.mlp_forward(y, params, f"{pre}.ffn"))
        out.layers.append(x)
        out.attention.append(w)
    out.QL = x
    return out


def init_queries(cfg: DecoderConfig, F, point_coords: np.ndarray, params: Mapping[str, nk.Array]) -> nk.Array:
    """Learned query block, or FPS-sampled rows of F for the non-parametric variant."""
    if cfg.query_mode == "learned":
        return params["decoder.query"]
    F = nk.as_array(F)
    if cfg.K > F.shape[0]:
        raise ValueError(f"nonparam queries need K={cfg.K} <= N={F.shape[0]}")
    return nk.gather_rows(F, fps_indices(point_coords, cfg.K))
