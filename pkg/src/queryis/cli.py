"""Command line: ``queryis [--config F] [--seed N] [--threads N] [--section.key=value ...] <command> ...``.

Commands: gen, train, infer, eval, ablate.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import engine, experiments
from .config import ConfigError, RunConfig, load
from .evaluation import evaluate, write_report
from .heads import write_results
from .scene import SceneFormatError, generate_scene, read_scene, write_scene

log = logging.getLogger("queryis")


class CliError(RuntimeError):
    pass


def _global_flags(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=default, help="key = value config file")
    p.add_argument("--seed", type=int, default=default, help="overrides train.seed (and the first scene seed for gen)")
    p.add_argument("--threads", type=int, default=default, help="scene-level worker threads")
    return p


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the command; the copy on the
    # subcommands must not reset values given before it
    common = _global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="queryis", parents=[_global_flags(None)], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write synthetic scenes")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", type=Path, required=True, help="output directory")

    t = sub.add_parser("train", parents=[common], help="train on a directory of scenes")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--no-eval", action="store_true", help="skip the final training-set evaluation")

    i = sub.add_parser("infer", parents=[common], help="write per-scene instance predictions")
    i.add_argument("--checkpoint", type=Path, required=True)
    i.add_argument("--data", type=Path, required=True)
    i.add_argument("--out", type=Path, required=True, help="output directory")

    e = sub.add_parser("eval", parents=[common], help="infer and score against ground truth")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True, help="metrics file")

    a = sub.add_parser("ablate", parents=[common], help="train and compare the five sampler/query variants")
    a.add_argument("--data", type=Path, required=True, help="training scenes")
    a.add_argument("--eval-data", type=Path, help="held-out scenes (default: the training scenes)")
    a.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull ``--section.key=value`` (or ``--section.key value``) pairs out of argv."""
    rest, overrides = [], []
    it = iter(range(len(argv)))
    for idx in it:
        arg = argv[idx]
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            key, eq, value = arg[2:].partition("=")
            if not eq:
                if idx + 1 >= len(argv):
                    raise ConfigError(f"missing value for --{key}")
                value = argv[idx + 1]
                next(it)
            overrides.append((key, value))
        else:
            rest.append(arg)
    return rest, overrides


def resolve_config(args, overrides) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    for k, v in overrides:
        cfg.set(k, v)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.threads is not None:
        cfg.train.threads = args.threads
    return cfg.validate()


def _scene_files(data: Path) -> list[Path]:
    if not data.is_dir():
        raise CliError(f"data directory not found: {data}")
    files = sorted(data.glob("*.qis"))
    if not files:
        raise CliError(f"no .qis scene files in {data}")
    return files


def load_samples(data: Path, cfg: RunConfig) -> list[engine.Sample]:
    out = []
    for f in _scene_files(data):
        scene, gt = read_scene(f)
        out.append(engine.prepare(scene, gt, cfg, f.stem))
    return out


def _emit_config(cfg: RunConfig, out=None) -> None:
    for line in cfg.dumps().splitlines():
        print(f"# {line}", file=out or sys.stdout)


def cmd_gen(cfg: RunConfig, count: int, out_dir: Path, seed: int) -> list[Path]:
    if count < 0:
        raise CliError("--count must be >= 0")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        scene, _ = generate_scene(cfg.gen, seed + i)
        path = out_dir / f"scene_{i:03d}.qis"
        write_scene(scene, path)
        paths.append(path)
    return paths


def cmd_train(cfg: RunConfig, data: Path, out: Path, final_eval: bool = True) -> engine.Checkpoint:
    samples = load_samples(data, cfg)
    _emit_config(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out.with_suffix(".log"), "w", encoding="utf-8") as logf:
        _emit_config(cfg, logf)

        def on_step(entry, _params):
            line = entry.line()
            print(line)
            print(line, file=logf)

        ckpt, logs = engine.train(samples, cfg, on_step=on_step, checkpoint_path=out)
        if not math.isfinite(logs[-1].total):
            raise CliError(f"non-finite loss at iteration {logs[-1].iteration}")
        engine.save_checkpoint(ckpt, out)
        if final_eval:
            rep = experiments.evaluate_samples(samples, ckpt, cfg.train.threads)
            line = f"final train AP={rep.mean_ap!r} AP50={rep.mean_ap50!r}"
            print(line)
            print(line, file=logf)
    return ckpt


def _load_ckpt(path: Path) -> engine.Checkpoint:
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    return engine.load_checkpoint(path)


def cmd_infer(ckpt_path: Path, data: Path, out_dir: Path, threads: int = 1) -> list[Path]:
    ckpt = _load_ckpt(ckpt_path)
    samples = load_samples(data, ckpt.config)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for s, res in zip(samples, engine.infer_many(samples, ckpt, threads)):
        path = out_dir / f"{s.name}.res"
        write_results(res, s.scene.n, path)
        paths.append(path)
    return paths


def cmd_eval(ckpt_path: Path, data: Path, out: Path, threads: int = 1):
    ckpt = _load_ckpt(ckpt_path)
    samples = load_samples(data, ckpt.config)
    results = engine.infer_many(samples, ckpt, threads)
    report = evaluate(results, [s.gt for s in samples], ckpt.config.gen.num_classes)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    print(f"mean AP={report.mean_ap:.4f} AP50={report.mean_ap50:.4f}")
    return report


def cmd_ablate(cfg: RunConfig, data: Path, eval_data: Path | None, out_dir: Path) -> str:
    train_set = load_samples(data, cfg)
    eval_set = load_samples(eval_data, cfg) if eval_data else train_set
    _emit_config(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = experiments.run_ablation(cfg, train_set, eval_set)
    for i, (label, rep) in enumerate(rows):
        write_report(rep, out_dir / f"variant_{i}.metrics")
    table = experiments.format_table(rows)
    (out_dir / "ablation.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return table


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        rest, overrides = split_overrides(argv)
        args = parser.parse_args(rest)
        cfg = resolve_config(args, overrides)
        threads = cfg.train.threads
        if args.command == "gen":
            seed = args.seed if args.seed is not None else 0
            paths = cmd_gen(cfg, args.count, args.out, seed)
            print(f"wrote {len(paths)} scenes to {args.out}")
        elif args.command == "train":
            cmd_train(cfg, args.data, args.out, not args.no_eval)
        elif args.command == "infer":
            paths = cmd_infer(args.checkpoint, args.data, args.out, threads)
            print(f"wrote {len(paths)} result files to {args.out}")
        elif args.command == "eval":
            rep = cmd_eval(args.checkpoint, args.data, args.out, threads)
            if not all(math.isfinite(v) for v in rep.as_dict().values()):
                raise CliError("non-finite metric")
        elif args.command == "ablate":
            cmd_ablate(cfg, args.data, args.eval_data, args.out)
    except (CliError, ConfigError, SceneFormatError, engine.TrainingError, ValueError, OSError) as e:
        print(f"queryis: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
