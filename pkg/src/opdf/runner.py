"""End-to-end runs: data, teacher, distillation, checkpoints, metrics, summaries, reports."""

from __future__ import annotations

import json
import os
import statistics
import time
from pathlib import Path
from typing import Sequence

from . import config as cfgmod
from .data import Dataset, csv_dataset, gen_dataset
from .distill import DistillRunResult, MetricsRecord, distill, train_teacher
from .errors import MissingSummary
from .model import Mlp, accuracy, load_checkpoint, save_checkpoint
from .rng import Rng64


def output_root() -> Path:
    return Path(os.environ.get("OPDF_OUT", "runs"))


def default_run_dir(cfg: cfgmod.ExperimentConfig) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return output_root() / f"{cfg.method}-seed{cfg.seed}"


def build_dataset(cfg: cfgmod.ExperimentConfig) -> Dataset:
    rng = Rng64(cfg.seed).child("data")
    task = dict(cfg.task)
    if "csv" in task:
        return csv_dataset(task["csv"], task.get("eval_csv"), float(task.get("eval_fraction", 0.2)), rng)
    return gen_dataset(task, rng)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def write_jsonl(path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(_dumps(row) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_metrics(directory: Path, records: Sequence[MetricsRecord], stem: str = "metrics") -> None:
    """Deterministic fields go to ``<stem>.jsonl``; wall-clock times to ``<stem>_timing.jsonl``."""
    write_jsonl(directory / f"{stem}.jsonl", [r.deterministic_dict() for r in records])
    write_jsonl(directory / f"{stem}_timing.jsonl", [{"epoch": r.epoch, "wall_ms": r.wall_ms} for r in records])


def run_train_teacher(cfg: cfgmod.ExperimentConfig, out_dir=None) -> Path:
    out = Path(out_dir) if out_dir else default_run_dir(cfg).with_name(f"teacher-seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump_config(cfg, out / "config.json")
    data = build_dataset(cfg)
    teacher, records = train_teacher(cfg.teacher, data, cfg.seed)
    save_checkpoint(teacher, out / "teacher")
    write_metrics(out, records)
    summary = {
        "seed": cfg.seed,
        "train_acc": records[-1].train_acc,
        "eval_acc": records[-1].eval_acc,
        "params": teacher.num_params(),
    }
    (out / "summary.json").write_text(_dumps(summary) + "\n", encoding="utf-8")
    return out


def _summary(cfg: cfgmod.ExperimentConfig, res: DistillRunResult, teacher: Mlp, data: Dataset) -> dict:
    last = res.metrics[-1] if res.metrics else None
    return {
        "method": cfg.method,
        "seed": cfg.seed,
        "epochs": len(res.metrics),
        "teacher_eval_acc": accuracy(teacher, data.x_eval, data.y_eval),
        "eval_acc": accuracy(res.student_contracted, data.x_eval, data.y_eval),
        "eval_acc_factored": accuracy(res.student_factored, data.x_eval, data.y_eval),
        "train_acc": last.train_acc if last else accuracy(res.student_contracted, data.x_train, data.y_train),
        "best_epoch": res.best_epoch,
        "best_eval_acc": accuracy(res.student_best, data.x_eval, data.y_eval),
        "params_original": res.original_params,
        "params_train": res.student_factored.num_params(),
        "params_inference": res.student_contracted.num_params(),
        "added_params": res.added_params,
        "matched_pairs": [[s, t] for s, t, _ in res.match.pairs],
        "unmatched_layers": list(res.match.unmatched),
        "equivalence": [
            {"epoch": c.epoch, "max_abs_logit_diff": c.max_abs_logit_diff, "argmax_equal": c.argmax_equal}
            for c in res.checks
        ],
    }


def run_experiment(cfg: cfgmod.ExperimentConfig, out_dir=None, teacher_dir=None) -> Path:
    """Run one configured experiment; returns the run directory."""
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir else default_run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump_config(cfg, out / "config.json")
    data = build_dataset(cfg)
    if teacher_dir is not None:
        teacher = load_checkpoint(Path(teacher_dir))
        teacher_ref = str(teacher_dir)
    else:
        teacher, teacher_records = train_teacher(cfg.teacher, data, cfg.seed)
        save_checkpoint(teacher, out / "teacher")
        write_metrics(out, teacher_records, stem="teacher_metrics")
        teacher_ref = "teacher"
    res = distill(cfg.opdf_config(), teacher, data)
    write_metrics(out, res.metrics)
    save_checkpoint(res.student_factored, out / "student_factored")
    save_checkpoint(res.student_contracted, out / "student_contracted")
    save_checkpoint(res.student_best, out / "student_best")
    summary = _summary(cfg, res, teacher, data)
    summary["teacher"] = teacher_ref
    (out / "summary.json").write_text(_dumps(summary) + "\n", encoding="utf-8")
    (out / "timing.json").write_text(_dumps({"wall_ms": (time.perf_counter() - t0) * 1e3}) + "\n", encoding="utf-8")
    return out


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MissingSummary(f"{run_dir}: no readable summary.json") from exc


def aggregate(run_dirs: Sequence) -> list[dict]:
    """Per-method mean and sample standard deviation of final eval accuracy, sorted by method."""
    if not run_dirs:
        raise MissingSummary("no run directories given")
    groups: dict[str, list[dict]] = {}
    for d in run_dirs:
        s = load_summary(d)
        if "eval_acc" not in s or "method" not in s:
            raise MissingSummary(f"{d}: summary lacks method/eval_acc")
        groups.setdefault(s["method"], []).append(s)
    rows = []
    for method in sorted(groups):
        runs = sorted(groups[method], key=lambda s: s.get("seed", 0))
        accs = [float(s["eval_acc"]) for s in runs]
        rows.append({
            "method": method,
            "runs": len(accs),
            "mean_eval_acc": statistics.fmean(accs),
            "std_eval_acc": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "mean_added_params": statistics.fmean(float(s.get("added_params", 0)) for s in runs),
            "seeds": " ".join(str(s.get("seed")) for s in runs),
        })
    return rows


REPORT_COLUMNS = ("method", "runs", "mean_eval_acc", "std_eval_acc", "mean_added_params", "seeds")


def format_report(rows: Sequence[dict]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append(",".join(
            f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in REPORT_COLUMNS
        ))
    return "\n".join(lines) + "\n"
