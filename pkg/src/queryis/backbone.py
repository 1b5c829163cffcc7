"""Two-level voxel encoder/decoder standing in for a sparse-conv U-Net.

Pipeline: per-point MLP -> mean-pool to fine voxels -> mean-pool to coarse
voxels -> coarse MLP -> unpool + skip add -> fine MLP -> broadcast back to
points, concatenate with point features -> output MLP.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numkit as nk
from .scene import Scene, VoxelGrid, coarsen


@dataclass
class BackboneConfig:
    C: int = 32
    coarse_factor: int = 4
    o_stage: int = 2  # 1: skip-fused fine voxels, 2: after the fine MLP

    def validate(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.coarse_factor < 2:
            raise ValueError("coarse_factor must be >= 2")
        if self.o_stage not in (1, 2):
            raise ValueError("o_stage must be 1 or 2")


@dataclass
class EmbeddingSet:
    F: nk.Array  # (N, C)
    O: nk.Array  # (M, C)
    voxel_centers: np.ndarray  # (M, 3)

    @property
    def C(self) -> int:
        return self.F.shape[1]


def init_params(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    c = cfg.C
    p = {}
    p.update(nk.init_mlp(rng, "backbone.point", [6, c, c]))
    p.update(nk.init_mlp(rng, "backbone.coarse", [c, c, c]))
    p.update(nk.init_mlp(rng, "backbone.fine", [c, c, c]))
    p.update(nk.init_mlp(rng, "backbone.out", [2 * c, c, c]))
    return p


def extract(scene: Scene, grid: VoxelGrid, cfg: BackboneConfig, params: Mapping[str, nk.Array]) -> EmbeddingSet:
    cfg.validate()
    if len(grid.point_voxel) != scene.n:
        raise ValueError(f"grid covers {len(grid.point_voxel)} points, scene has {scene.n}")
    if params["backbone.point.0.weight"].shape[1] != cfg.C:
        raise ValueError("parameter width does not match BackboneConfig.C")
    coarse_keys, parent = coarsen(grid.keys, cfg.coarse_factor)

    h = nk.relu(nk.mlp_forward(scene.points, params, "backbone.point"))
    fine = nk.segment_mean(h, grid.point_voxel, grid.m)
    coarse = nk.segment_mean(fine, parent, len(coarse_keys))
    coarse = nk.relu(nk.mlp_forward(coarse, params, "backbone.coarse"))
    fused = nk.add(nk.gather_rows(coarse, parent), fine)
    dec = nk.relu(nk.mlp_forward(fused, params, "backbone.fine"))
    O = fused if cfg.o_stage == 1 else dec
    F = nk.mlp_forward(nk.concat_cols([nk.gather_rows(dec, grid.point_voxel), h]), params, "backbone.out")
    return EmbeddingSet(F, O, grid.centers)
