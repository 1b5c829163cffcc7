"""Model assembly, AdamW training loop, checkpoints and inference."""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import backbone, decoder, heads, matcher, sampler
from . import numkit as nk
from .config import RunConfig, from_json, to_json
from .heads import InstanceResult, PredictionSet
from .scene import GroundTruth, Scene, VoxelGrid, voxelize

log = logging.getLogger(__name__)

MAGIC = b"QISCKPT1"


class TrainingError(RuntimeError):
    pass


@dataclass
class Sample:
    """A scene with its ground truth and cached voxel grid."""

    scene: Scene
    gt: GroundTruth
    grid: VoxelGrid
    name: str = ""


def prepare(scene: Scene, gt: GroundTruth, cfg: RunConfig, name: str = "") -> Sample:
    return Sample(scene, gt, voxelize(scene, cfg.scene.voxel_size), name)


def init_params(cfg: RunConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    cfg.validate()
    rng = np.random.default_rng(cfg.train.seed if seed is None else seed)
    p = {}
    p.update(backbone.init_params(cfg.backbone, rng))
    p.update(sampler.init_params(cfg.sampler, cfg.backbone.C, rng))
    p.update(decoder.init_params(cfg.decoder, rng))
    p.update(heads.init_params(cfg.decoder.C, cfg.gen.num_classes, rng))
    return p


@dataclass
class Forward:
    pred: PredictionSet
    emb: backbone.EmbeddingSet
    reps: sampler.RepresentativeSet
    queries: decoder.QuerySet


def forward(sample: Sample, cfg: RunConfig, params: Mapping[str, nk.Array], seed=0) -> Forward:
    emb = backbone.extract(sample.scene, sample.grid, cfg.backbone, params)
    O = sampler.voxel_embeddings(emb.O, emb.voxel_centers, cfg.sampler, params)
    reps = sampler.sample(O, emb.voxel_centers, cfg.sampler, params, seed)
    Q0 = decoder.init_queries(cfg.decoder, emb.F, sample.scene.xyz, params)
    qs = decoder.decode(Q0, reps.S, cfg.decoder, params)
    pred = heads.predict(qs.QL, emb.F, params)
    return Forward(pred, emb, reps, qs)


def scene_loss(sample: Sample, cfg: RunConfig, params: Mapping[str, nk.Array], seed=0):
    """Forward, match and score one scene; returns (LossBreakdown, Assignment)."""
    if sample.gt.count > cfg.decoder.K:
        raise TrainingError(f"scene {sample.name or '?'} has {sample.gt.count} instances but K={cfg.decoder.K}")
    fw = forward(sample, cfg, params, seed)
    if sample.gt.count:
        assignment = matcher.hungarian(matcher.cost_matrix(fw.pred, sample.gt, cfg.loss).C)
    else:
        assignment = matcher.Assignment([], 0.0)
    return matcher.loss(fw.pred, sample.gt, assignment, cfg.loss), assignment


# --- optimisation -------------------------------------------------------------------


def lr_at(iteration: int, total: int, base: float, power: float = 0.9) -> float:
    """Polynomial decay from ``base`` at 0 to 0 at ``total``."""
    if not 0 <= iteration <= total:
        raise ValueError(f"iteration {iteration} outside [0, {total}]")
    return base * (1.0 - iteration / total) ** power


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.05,
) -> None:
    """In-place AdamW with bias correction and decoupled weight decay."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}; step aborted")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --- checkpoints --------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: RunConfig
    state: AdamState = field(default_factory=AdamState)
    iteration: int = 0


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    chunks = [MAGIC]
    for name in sorted(ckpt.params):
        chunks.append(_record(name, ckpt.params[name]))
    for name in sorted(ckpt.state.m):
        chunks.append(_record(f"adam.m.{name}", ckpt.state.m[name]))
        chunks.append(_record(f"adam.v.{name}", ckpt.state.v[name]))
    chunks.append(_record("adam.step", np.array(ckpt.state.step)))
    chunks.append(_record("meta.iteration", np.array(ckpt.iteration)))
    cfg = np.frombuffer(to_json(ckpt.config).encode("utf-8"), dtype=np.uint8)
    chunks.append(_record("meta.config", cfg))
    Path(path).write_bytes(b"".join(chunks))


def read_records(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a QISCKPT1 checkpoint")
    pos, out = len(MAGIC), {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4 : pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    return out


def load_checkpoint(path) -> Checkpoint:
    rec = read_records(path)
    cfg = from_json(rec.pop("meta.config").astype(np.uint8).tobytes().decode("utf-8"))
    state = AdamState(step=int(rec.pop("adam.step")))
    iteration = int(rec.pop("meta.iteration"))
    params = {}
    for name, arr in rec.items():
        if name.startswith("adam.m."):
            state.m[name[7:]] = arr
        elif name.startswith("adam.v."):
            state.v[name[7:]] = arr
        else:
            params[name] = arr
    return Checkpoint(params, cfg, state, iteration)


def check_compatible(params: Mapping[str, np.ndarray], cfg: RunConfig) -> None:
    expected = init_params(cfg, seed=0)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    bad = sorted(k for k in set(expected) & set(params) if expected[k].shape != params[k].shape)
    if missing or extra or bad:
        raise ValueError(
            "checkpoint does not match config: "
            + "; ".join(f"{label}: {', '.join(v[:5])}" for label, v in (("missing", missing), ("unexpected", extra), ("shape", bad)) if v)
        )


# --- training -----------------------------------------------------------------------


@dataclass
class StepLog:
    iteration: int
    lr: float
    ce: float
    bce: float
    dice: float
    total: float

    def line(self) -> str:
        return f"iter={self.iteration} lr={self.lr!r} ce={self.ce!r} bce={self.bce!r} dice={self.dice!r} total={self.total!r}"


def _scene_grads(sample: Sample, cfg: RunConfig, params, seed):
    tape = nk.Tape()
    lb, _ = scene_loss(sample, cfg, tape.bind(params), seed)
    tape.backward(lb.total)
    return lb.values(), tape.gradients()


def train_step(samples: Sequence[Sample], cfg: RunConfig, params, state: AdamState, iteration: int, pool=None) -> StepLog:
    tc = cfg.train
    seeds = [[tc.seed, iteration, i] for i in range(len(samples))]
    work = lambda a: _scene_grads(a[0], cfg, params, a[1])  # noqa: E731
    outs = list(pool.map(work, zip(samples, seeds)) if pool else map(work, zip(samples, seeds)))
    # reduce in fixed scene order
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    vals = {"ce": 0.0, "bce": 0.0, "dice": 0.0, "total": 0.0}
    for v, g in outs:
        for k in grads:
            grads[k] += g[k]
        for k in vals:
            vals[k] += v[k]
    b = len(samples)
    for g in grads.values():
        g /= b
    clip_global_norm(grads, tc.clip_norm)
    lr = lr_at(iteration, tc.iterations, tc.lr, tc.power)
    adamw_step(params, grads, state, lr, (tc.beta1, tc.beta2), tc.eps, tc.weight_decay)
    return StepLog(iteration, lr, *(vals[k] / b for k in ("ce", "bce", "dice", "total")))


def train(
    samples: Sequence[Sample],
    cfg: RunConfig,
    params: dict[str, np.ndarray] | None = None,
    on_step: Callable[[StepLog, dict], None] | None = None,
    checkpoint_path=None,
) -> tuple[Checkpoint, list[StepLog]]:
    cfg.validate()
    tc = cfg.train
    if not samples:
        raise TrainingError("no training scenes")
    for s in samples:
        if s.gt.count > cfg.decoder.K:
            raise TrainingError(f"scene {s.name or '?'} has {s.gt.count} instances but decoder.K={cfg.decoder.K}")
        if s.scene.num_classes != cfg.gen.num_classes:
            raise TrainingError(f"scene {s.name or '?'} has G={s.scene.num_classes}, config says {cfg.gen.num_classes}")
    params = init_params(cfg) if params is None else {k: v.copy() for k, v in params.items()}
    state = AdamState()
    rng = np.random.default_rng(tc.seed)
    order: list[int] = []
    logs = []
    pool = ThreadPoolExecutor(tc.threads) if tc.threads > 1 else None
    try:
        for it in range(tc.iterations):
            batch = []
            while len(batch) < min(tc.batch_size, len(samples)):
                if not order:
                    order = list(rng.permutation(len(samples)))
                batch.append(samples[order.pop()])
            entry = train_step(batch, cfg, params, state, it, pool)
            logs.append(entry)
            log.debug(entry.line())
            if on_step:
                on_step(entry, params)
            if checkpoint_path and tc.checkpoint_interval and (it + 1) % tc.checkpoint_interval == 0:
                save_checkpoint(Checkpoint(params, cfg, state, it + 1), checkpoint_path)
    finally:
        if pool:
            pool.shutdown()
    return Checkpoint(params, cfg, state, tc.iterations), logs


# --- inference ----------------------------------------------------------------------


def predict(sample: Sample, ckpt: Checkpoint) -> PredictionSet:
    return forward(sample, ckpt.config, nk.constants(ckpt.params), seed=[ckpt.config.train.seed]).pred


def infer(sample: Sample, ckpt: Checkpoint) -> list[InstanceResult]:
    check_compatible(ckpt.params, ckpt.config)
    if sample.scene.num_classes != ckpt.config.gen.num_classes:
        raise ValueError(f"scene has G={sample.scene.num_classes}, checkpoint expects {ckpt.config.gen.num_classes}")
    return heads.assemble(predict(sample, ckpt), ckpt.config.infer.tau)


def infer_many(samples: Sequence[Sample], ckpt: Checkpoint, threads: int = 1) -> list[list[InstanceResult]]:
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda s: infer(s, ckpt), samples))
    return [infer(s, ckpt) for s in samples]
