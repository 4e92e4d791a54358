"""Command line entry point: ``humancm <subcommand> ...``.

Exit codes: 0 ok, 2 config error, 3 artifact mismatch, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import OrderedDict
from pathlib import Path

import torch

from .config import RunConfig, load_config
from .consistency import (ConsistencyConfig, StudentParams, multi_sample, student_arch, teacher_multi_sample,
                          train_consistency)
from .denoiser import count_evals
from .diffusion import NoiseSchedule, train_teacher
from .errors import ArtifactMismatch, ConfigError, InvalidArgument, InvalidState, NumericalError
from .formats import (Checkpoint, Dataset, SampleSet, load_checkpoint, load_dataset, load_samples, save_checkpoint,
                      save_dataset, save_samples)
from .latent import LatentCodec
from .metrics import MetricReport, bench, build_mm_gt, evaluate
from .motion import generate_synthetic_dataset, stack_tasks

log = logging.getLogger("humancm")

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_NUMERICAL = 0, 2, 3, 4
BENCH_COLUMNS = ["model", "steps", "network_evals", "wall_seconds_median", "ade"]


# --- helpers ---------------------------------------------------------------------------


def _write_loss_csv(path, history) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(history.to_csv())


def _loss_path(out, given) -> Path:
    return Path(given) if given else Path(str(out) + ".loss.csv")


def _codec_header(codec: LatentCodec) -> dict:
    return {"H": codec.H, "F": codec.F, "l": codec.l, "stats": codec.stats()}


def _codec_from(header: dict) -> LatentCodec:
    c = header.get("codec")
    if not c:
        raise InvalidState("checkpoint carries no normalization statistics")
    return LatentCodec.from_stats(c["H"], c["F"], c["l"], c.get("stats"))


def _check_data(ds: Dataset, codec: LatentCodec) -> None:
    tasks = ds.train + ds.test
    if not tasks:
        raise ArtifactMismatch("dataset is empty")
    t = tasks[0]
    if (t.H, t.F) != (codec.H, codec.F):
        raise ArtifactMismatch(f"dataset has H={t.H}, F={t.F}; checkpoint expects H={codec.H}, F={codec.F}")


def _teacher_from(ck: Checkpoint):
    return ck.params["teacher"], NoiseSchedule.from_dict(ck.header["schedule"]), _codec_from(ck.header)


def _student_from(ck: Checkpoint):
    student = StudentParams(ck.params["online"], ck.params["target"])
    return student, NoiseSchedule.from_dict(ck.header["schedule"]), _codec_from(ck.header), \
        ConsistencyConfig(**ck.header["consistency"])


def _fit_codec(cfg: RunConfig, ds: Dataset) -> LatentCodec:
    t = ds.train[0]
    return LatentCodec(t.H, t.F, cfg["codec.l"], residual=cfg["codec.residual"]).fit(ds.train)


# --- subcommands -----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    tasks = generate_synthetic_dataset(cfg.synthetic())
    n_test = cfg["data.n_test"]
    ds = Dataset(tasks[:-n_test], tasks[-n_test:])
    save_dataset(args.out, ds)
    print(f"wrote {len(tasks)} records ({len(ds.train)} train, {len(ds.test)} test) to {args.out}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    cfg = load_config(args.config)
    ds = load_dataset(args.data)
    codec = _fit_codec(cfg, ds)
    y0, c = codec.encode(ds.train)
    arch = cfg.arch()
    if arch.channel_dim != y0.shape[-1]:
        raise ArtifactMismatch(f"config implies {arch.channel_dim} channels, dataset has {y0.shape[-1]}")
    sched = cfg.schedule()
    tcfg = cfg.teacher()
    params, history = train_teacher(y0, c, sched, arch, tcfg, cfg.optim())
    header = {
        "kind": "teacher", "arch": arch.to_dict(), "schedule": sched.to_dict(), "codec": _codec_header(codec),
        "seed": cfg.seed, "epoch": tcfg.epochs,
    }
    save_checkpoint(args.out, Checkpoint(header, OrderedDict(teacher=params)))
    _write_loss_csv(_loss_path(args.out, args.loss_csv), history)
    print(f"teacher loss {history.first:.5f} -> {history.last:.5f}; wrote {args.out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = load_config(args.config)
    ds = load_dataset(args.data)
    teacher, sched, codec = _teacher_from(load_checkpoint(args.teacher, kind="teacher"))
    _check_data(ds, codec)
    y0, c = codec.encode(ds.train)
    arch = student_arch(cfg.arch(), cfg.seed + 1)
    ccfg = cfg.consistency()
    student, history = train_consistency(y0, c, teacher, arch, ccfg, sched, cfg.optim())
    header = {
        "kind": "student", "arch": arch.to_dict(), "schedule": sched.to_dict(), "codec": _codec_header(codec),
        "consistency": ccfg.to_dict(), "seed": cfg.seed, "epoch": ccfg.epochs,
    }
    save_checkpoint(args.out, Checkpoint(header, OrderedDict(online=student.online, target=student.target)))
    _write_loss_csv(_loss_path(args.out, args.loss_csv), history)
    print(f"distillation loss {history.first:.5f} -> {history.last:.5f}; wrote {args.out}")
    return EXIT_OK


def _sampler(ck: Checkpoint, steps: int | None, seed: int):
    """histories (M, H, C) -> samples (M, K, F, C) for either checkpoint kind."""
    if ck.kind == "teacher":
        teacher, sched, codec = _teacher_from(ck)
        steps = steps or sched.N
        return codec, steps, lambda H, K: teacher_multi_sample(teacher, codec.condition(H), K, steps, sched, codec, seed)
    student, sched, codec, ccfg = _student_from(ck)
    if steps not in (None, 1):
        raise InvalidArgument("a student checkpoint samples in exactly one step")
    return codec, 1, lambda H, K: multi_sample(student, codec.condition(H), K, sched, ccfg, codec, seed)


def cmd_sample(args) -> int:
    ck = load_checkpoint(args.checkpoint, kind=args.expect)
    ds = load_dataset(args.data)
    codec, steps, fn = _sampler(ck, args.steps, args.seed)
    _check_data(ds, codec)
    hist, _ = stack_tasks(ds.test)
    with count_evals() as counter:
        t0 = time.perf_counter()
        samples = fn(hist, args.k)
        wall = time.perf_counter() - t0
    save_samples(args.out, SampleSet(samples, codec.H, counter.count, wall))
    log.info("%s sampling: %d items x %d samples, %d steps, %d network evaluations",
             ck.kind, len(hist), args.k, steps, counter.count)
    print(f"network_evals={counter.count}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ss = load_samples(args.samples)
    ds = load_dataset(args.data)
    hist, fut = stack_tasks(ds.test)
    if ss.samples.shape[0] != len(ds.test):
        raise ArtifactMismatch(f"samples cover {ss.samples.shape[0]} items, dataset has {len(ds.test)} test items")
    if ss.samples.shape[2:] != fut.shape[1:] or ss.H != hist.shape[1]:
        raise ArtifactMismatch("sample frames/channels do not match the dataset")
    scores = evaluate(ss.samples, fut, build_mm_gt(hist[:, -1], args.tau))
    report = MetricReport(samples=ss.K, network_evals=ss.network_evals, wall_seconds=ss.wall_seconds, **scores)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        Path(str(args.out) + ".csv").write_text(report.csv(), encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def run_bench(teacher_ck: Checkpoint, student_ck: Checkpoint, ds: Dataset, K: int, repetitions: int,
              items: int, tau: float, teacher_steps=(10, 100), seed: int = 0) -> list[dict]:
    """Teacher rows for each step count plus the one-step student row, timed in this process."""
    torch.set_num_threads(1)
    hist, fut = stack_tasks(ds.test)
    if items:
        hist, fut = hist[:items], fut[:items]
    rows = []
    for ck, steps_list in ((teacher_ck, teacher_steps), (student_ck, (1,))):
        for steps in steps_list:
            N = ck.header["schedule"]["N"]
            if steps > N:
                log.warning("skipping %s steps=%d: schedule has only N=%d", ck.kind, steps, N)
                continue
            codec, steps, fn = _sampler(ck, steps, seed)
            _check_data(ds, codec)
            r = bench(lambda H: fn(H, K), hist, fut, K, repetitions, tau)
            rows.append({"model": ck.kind, "steps": steps, "network_evals": r.network_evals,
                         "wall_seconds_median": r.wall_seconds, "ade": r.ade})
            log.info("bench %s steps=%d evals=%d median=%.4fs ade=%.4f", ck.kind, steps, r.network_evals,
                     r.wall_seconds, r.ade)
    return rows


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    teacher_ck = load_checkpoint(args.teacher, kind="teacher")
    student_ck = load_checkpoint(args.student, kind="student")
    ds = load_dataset(args.data)
    rows = run_bench(teacher_ck, student_ck, ds, cfg["eval.k_samples"], cfg["eval.repetitions"],
                     cfg["eval.bench_items"], cfg["eval.tau"])
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({**row, "wall_seconds_median": f"{row['wall_seconds_median']:.6f}", "ade": f"{row['ade']:.6f}"})
    teacher100 = next((r for r in rows if r["model"] == "teacher" and r["steps"] == 100), None)
    if teacher100 is not None:
        print(f"speedup teacher(100)/student(1): {teacher100['wall_seconds_median'] / rows[-1]['wall_seconds_median']:.1f}x")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="humancm", description="One-step consistency sampling for motion prediction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate the synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train-teacher", help="train the eps-prediction DDIM teacher")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv")
    s.set_defaults(fn=cmd_train_teacher)

    s = sub.add_parser("distill", help="distill a teacher checkpoint into a one-step student")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--teacher", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv")
    s.set_defaults(fn=cmd_distill)

    s = sub.add_parser("sample", help="draw K futures per test item")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--steps", type=int, help="DDIM steps for a teacher checkpoint (default N)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--expect", choices=("teacher", "student"), help="fail unless the checkpoint has this kind")
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("eval", help="score a samples file against the test split")
    s.add_argument("--samples", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="metrics JSON path; a CSV is written next to it")
    s.add_argument("--tau", type=float, default=0.5)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("bench", help="time teacher (10, 100 steps) against the one-step student")
    s.add_argument("--config")
    s.add_argument("--teacher", required=True)
    s.add_argument("--student", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactMismatch, InvalidState, InvalidArgument) as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
