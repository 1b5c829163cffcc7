"""Scaled-down experiments: overfit, held-out generalization, and the RPG / query-type ablation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

from . import engine
from .config import RunConfig
from .evaluation import EvalReport, evaluate
from .scene import generate_scene

log = logging.getLogger(__name__)

# (row label, overrides) in the order of the ablation table
ABLATION_VARIANTS = (
    ("RPG", {"sampler.variant": "rpg"}),
    ("w/o RPG", {"sampler.variant": "none"}),
    ("Random", {"sampler.variant": "random"}),
    ("FPS", {"sampler.variant": "fps"}),
    ("Non-Params", {"sampler.variant": "rpg", "decoder.query_mode": "nonparam_fps"}),
)


def make_samples(cfg: RunConfig, count: int, seed: int) -> list[engine.Sample]:
    out = []
    for i in range(count):
        s, gt = generate_scene(cfg.gen, seed + i)
        out.append(engine.prepare(s, gt, cfg, f"scene_{seed + i}"))
    return out


def evaluate_samples(samples: Sequence[engine.Sample], ckpt: engine.Checkpoint, threads: int = 1) -> EvalReport:
    results = engine.infer_many(samples, ckpt, threads)
    return evaluate(results, [s.gt for s in samples], ckpt.config.gen.num_classes)


@dataclass
class RunResult:
    report: EvalReport
    logs: list[engine.StepLog]
    ckpt: engine.Checkpoint
    seconds: float


def train_and_eval(train_set, eval_set, cfg: RunConfig) -> RunResult:
    t0 = time.perf_counter()
    ckpt, logs = engine.train(train_set, cfg)
    report = evaluate_samples(eval_set, ckpt, cfg.train.threads)
    return RunResult(report, logs, ckpt, time.perf_counter() - t0)


def overfit_config() -> RunConfig:
    cfg = RunConfig()
    cfg.gen.min_instances, cfg.gen.max_instances = 2, 4
    return cfg


def run_overfit(cfg: RunConfig | None = None, num_scenes: int = 4, data_seed: int = 100) -> RunResult:
    cfg = cfg or overfit_config()
    samples = make_samples(cfg, num_scenes, data_seed)
    return train_and_eval(samples, samples, cfg)


def run_generalization(cfg: RunConfig | None = None, n_train: int = 64, n_test: int = 16, data_seed: int = 1000) -> RunResult:
    cfg = cfg or overfit_config()
    train_set = make_samples(cfg, n_train, data_seed)
    test_set = make_samples(cfg, n_test, data_seed + n_train)
    return train_and_eval(train_set, test_set, cfg)


def ablation_configs(base: RunConfig) -> list[tuple[str, RunConfig]]:
    out = []
    for label, overrides in ABLATION_VARIANTS:
        cfg = base.copy()
        for k, v in overrides.items():
            cfg.set(k, v)
        out.append((label, cfg.validate()))
    return out


def run_ablation(base: RunConfig, train_set, eval_set) -> list[tuple[str, EvalReport]]:
    rows = []
    for label, cfg in ablation_configs(base):
        res = train_and_eval(train_set, eval_set, cfg)
        log.info("%s: AP=%.4f AP50=%.4f (%.0fs)", label, res.report.mean_ap, res.report.mean_ap50, res.seconds)
        rows.append((label, res.report))
    return rows


def format_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    width = max(len(r[0]) for r in rows)
    lines = [f"{'Methods':<{width}}  {'AP':>7}  {'AP50':>7}"]
    for label, rep in rows:
        lines.append(f"{label:<{width}}  {100 * rep.mean_ap:7.2f}  {100 * rep.mean_ap50:7.2f}")
    return "\n".join(lines) + "\n"
