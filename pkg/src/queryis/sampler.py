"""Representative points S for the decoder: learned activation maps (rpg), FPS, random, or none."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numkit as nk

VARIANTS = ("rpg", "random", "fps", "none")


@dataclass
class SamplerConfig:
    J: int = 256
    variant: str = "rpg"
    normalize: bool = False  # divide each activation map by its L1 mass
    positional: bool = True  # add a learned projection of voxel centres to O

    def validate(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"sampler.variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class RepresentativeSet:
    S: nk.Array  # (J, C)
    source: str
    Z: nk.Array | None = None  # (J, M), rpg only
    indices: np.ndarray | None = None  # selected voxel rows for fps/random

    @property
    def J(self) -> int:
        return self.S.shape[0]


def init_params(cfg: SamplerConfig, C: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = nk.init_linear(rng, "sampler.proj", C, C)
    if cfg.positional:
        p.update(nk.init_linear(rng, "sampler.pos", 3, C))
    if cfg.variant == "rpg":
        p.update(nk.init_mlp(rng, "sampler.E", [C, C, cfg.J]))
    return p


def voxel_embeddings(O_raw, centers: np.ndarray, cfg: SamplerConfig, params: Mapping[str, nk.Array]) -> nk.Array:
    """MLP layer on the backbone's decoder-stage output, plus optional positions."""
    O = nk.linear(O_raw, params, "sampler.proj")
    if cfg.positional:
        O = nk.add(O, nk.linear(centers, params, "sampler.pos"))
    return O


def activation_maps(O, params: Mapping[str, nk.Array]) -> nk.Array:
    """Z = sigmoid(E(O))^T, one map over the M voxels per representative point."""
    return nk.transpose(nk.sigmoid(nk.mlp_forward(O, params, "sampler.E")))


def rpg(O, params: Mapping[str, nk.Array] | None = None, normalize: bool = False, Z=None) -> RepresentativeSet:
    """s_j = z_j . O.  Passing ``Z`` directly bypasses the activation network."""
    O = nk.as_array(O)
    if O.shape[0] < 1:
        raise ValueError("rpg needs at least one voxel")
    Z = activation_maps(O, params) if Z is None else nk.as_array(Z)
    if Z.shape[1] != O.shape[0]:
        raise nk.ShapeError(f"activation maps cover {Z.shape[1]} voxels, O has {O.shape[0]}")
    W = nk.div(Z, nk.sum_axis(Z, 1)) if normalize else Z
    return RepresentativeSet(nk.matmul(W, O), "rpg", Z=Z)


def fps_indices(points: np.ndarray, J: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    if J > m:
        raise ValueError(f"cannot pick J={J} from {m} points")
    chosen = np.empty(J, dtype=np.int64)
    dist = np.full(m, np.inf)
    cur = start
    for i in range(J):
        chosen[i] = cur
        d = np.sqrt(((points - points[cur]) ** 2).sum(axis=1))
        np.minimum(dist, d, out=dist)
        dist[cur] = -np.inf
        cur = int(np.argmax(dist))
    return chosen


def fps(points: np.ndarray, O, J: int) -> RepresentativeSet:
    idx = fps_indices(points, J)
    return RepresentativeSet(nk.gather_rows(O, idx), "fps", indices=idx)


def random_indices(m: int, J: int, seed) -> np.ndarray:
    if J > m:
        raise ValueError(f"cannot pick J={J} from {m} voxels")
    return np.random.default_rng(seed).choice(m, size=J, replace=False)


def random_sample(O, J: int, seed) -> RepresentativeSet:
    idx = random_indices(nk.as_array(O).shape[0], J, seed)
    return RepresentativeSet(nk.gather_rows(O, idx), "random", indices=idx)


def sample(O, centers: np.ndarray, cfg: SamplerConfig, params: Mapping[str, nk.Array], seed=0) -> RepresentativeSet:
    cfg.validate()
    if cfg.variant == "rpg":
        return rpg(O, params, cfg.normalize)
    if cfg.variant == "fps":
        return fps(centers, O, cfg.J)
    if cfg.variant == "random":
        return random_sample(O, cfg.J, seed)
    return RepresentativeSet(nk.as_array(O), "none")
