import numpy as np
import pytest

from queryis import engine
from queryis.config import RunConfig
from queryis.scene import GeneratorConfig, generate_scene


def micro_config() -> RunConfig:
    """Tiny model for end-to-end gradient checks: N=32, M<=16, J=6, K=4, C=8, L=1, H=2."""
    cfg = RunConfig()
    cfg.gen = GeneratorConfig(
        min_instances=2, max_instances=2, points_per_instance=(10, 10), floor_points=12,
        room_size=1.6, object_size=(0.3, 0.35), min_gap=0.1, num_classes=2,
    )
    cfg.scene.voxel_size = 0.25
    cfg.backbone.C = cfg.decoder.C = 8
    cfg.backbone.coarse_factor = 2
    cfg.sampler.J = 6
    cfg.decoder.K, cfg.decoder.L, cfg.decoder.H = 4, 1, 2
    return cfg.validate()


def micro_sample(cfg: RunConfig, seed: int = 0) -> engine.Sample:
    for s in range(seed, seed + 200):
        scene, gt = generate_scene(cfg.gen, s)
        sample = engine.prepare(scene, gt, cfg)
        if sample.grid.m <= 16:
            return sample
    raise RuntimeError("no micro scene with M <= 16")


@pytest.fixture
def micro():
    cfg = micro_config()
    return cfg, micro_sample(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
