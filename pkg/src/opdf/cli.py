"""Command-line interface.

Exit codes: 0 success, 2 configuration/validation error, 3 numerical error.
Failures print one JSON object on a single stderr line.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import mpo, runner
from . import tensor as tn
from .errors import ConfigError, OpdfError
from .rng import Rng64


def _dims(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fmt(values) -> str:
    return ",".join(str(v) for v in values)


# -- tensor ---------------------------------------------------------------


def cmd_tensor_gen(args) -> int:
    rng = Rng64(args.seed).child("tensor")
    shape = args.shape
    if args.rank is not None:
        if len(shape) != 2:
            raise ConfigError("--rank needs a 2-order --shape")
        t = rng.normal((shape[0], args.rank)) @ rng.normal((args.rank, shape[1]))
    else:
        t = rng.normal(shape)
    tn.write_tnsr(args.output, t)
    print(f"wrote\t{args.output}\tshape\t{_fmt(t.shape)}")
    return 0


def cmd_tensor_info(args) -> int:
    t = tn.read_tnsr(args.path)
    print("order\tshape\telements\tfrobenius_norm")
    print(f"{t.ndim}\t{_fmt(t.shape)}\t{t.size}\t{tn.frobenius_norm(t)!r}")
    return 0


# -- mpo ------------------------------------------------------------------


def _plan_from_args(args, rows=None, cols=None) -> mpo.MpoPlan:
    rows = rows if rows is not None else int(np.prod(args.in_dims))
    cols = cols if cols is not None else int(np.prod(args.out_dims))
    return mpo.plan(rows, cols, args.in_dims, args.out_dims, args.max_bond)


def cmd_mpo_plan(args) -> int:
    p = _plan_from_args(args, args.rows, args.cols)
    total = p.rows * p.cols + mpo.added_params(p)
    print("rows\tcols\tin_dims\tout_dims\tbond_dims\toriginal\ttotal\tadded_params")
    print(f"{p.rows}\t{p.cols}\t{_fmt(p.in_dims)}\t{_fmt(p.out_dims)}\t{_fmt(p.bond_dims)}"
          f"\t{p.rows * p.cols}\t{total}\t{mpo.added_params(p)}")
    return 0


def cmd_mpo_decompose(args) -> int:
    w = tn.read_tnsr(args.input)
    if w.ndim != 2:
        raise ConfigError(f"{args.input}: expected a 2-order tensor, got shape {w.shape}")
    p = _plan_from_args(args, *w.shape)
    f = mpo.decompose(w, p, tol=args.tol, normalize=args.normalize)
    mpo.save_bundle(f, args.output)
    print("bundle\tbond_dims\tcentral_index\ttruncation\terror_bound")
    print(f"{args.output}\t{_fmt(f.bond_dims)}\t{f.central_index}"
          f"\t{_fmt(repr(e) for e in f.truncation)}\t{mpo.error_bound(f)!r}")
    return 0


def cmd_mpo_reconstruct(args) -> int:
    f = mpo.load_bundle(args.input)
    w = mpo.reconstruct(f)
    tn.write_tnsr(args.output, w)
    bound = mpo.error_bound(f)
    if args.reference:
        ref = tn.read_tnsr(args.reference)
        if ref.shape != w.shape:
            raise ConfigError(f"reference shape {ref.shape} differs from reconstruction {w.shape}")
        err = tn.frobenius_norm(ref - w)
        rel = err / max(tn.frobenius_norm(ref), np.finfo(float).tiny)
        err_s, rel_s = repr(err), repr(rel)
    else:
        err_s = rel_s = "n/a"
    print("output\tfrobenius_error\trelative_error\terror_bound")
    print(f"{args.output}\t{err_s}\t{rel_s}\t{bound!r}")
    return 0


def parse_matrix_spec(text: str) -> tuple[int, int, tuple[int, ...], tuple[int, ...], int]:
    """``IxJ:in_dims:out_dims[:count]``, e.g. ``768x3072:32,24:64,48:2``."""
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(f"matrix spec {text!r} is not IxJ:in_dims:out_dims[:count]")
    try:
        rows, cols = (int(x) for x in parts[0].lower().split("x"))
        count = int(parts[3]) if len(parts) == 4 else 1
        return rows, cols, _dims(parts[1]), _dims(parts[2]), count
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"matrix spec {text!r} is not IxJ:in_dims:out_dims[:count]") from None


def audit_rows(specs, bond_cap=None) -> list[dict]:
    rows = []
    for text in specs:
        r, c, ins, outs, count = parse_matrix_spec(text)
        p = mpo.plan(r, c, ins, outs, bond_cap)
        added = mpo.added_params(p)
        rows.append({
            "matrix": text, "rows": r, "cols": c, "in_dims": ins, "out_dims": outs,
            "bond_dims": p.bond_dims, "count": count,
            "original": r * c, "total": r * c + added, "added": added,
        })
    return rows


def cmd_mpo_audit(args) -> int:
    rows = audit_rows(args.matrix, args.max_bond)
    print("matrix\trows\tcols\tin_dims\tout_dims\tbond_dims\tcount\toriginal\ttotal\tadded\tratio")
    for r in rows:
        print(f"{r['matrix']}\t{r['rows']}\t{r['cols']}\t{_fmt(r['in_dims'])}\t{_fmt(r['out_dims'])}"
              f"\t{_fmt(r['bond_dims'])}\t{r['count']}\t{r['original']}\t{r['total']}\t{r['added']}"
              f"\t{r['total'] / r['original']:.4f}")
    orig = sum(r["original"] * r["count"] for r in rows)
    total = sum(r["total"] * r["count"] for r in rows)
    print(f"TOTAL\t\t\t\t\t\t{sum(r['count'] for r in rows)}\t{orig}\t{total}\t{total - orig}\t{total / orig:.4f}")
    return 0


# -- experiments ----------------------------------------------------------


def _load_cfg(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.reference_config()
    overrides = list(args.set or [])
    if getattr(args, "method", None):
        overrides.append(f"method={json.dumps(args.method)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return cfgmod.apply_overrides(cfg, overrides) if overrides else cfg


def cmd_train_teacher(args) -> int:
    cfg = _load_cfg(args)
    out = runner.run_train_teacher(cfg, args.output)
    print(f"teacher\t{out}")
    return 0


def cmd_distill(args) -> int:
    base = _load_cfg(args)
    if args.seeds:
        seeds = list(_dims(args.seeds))
        root = Path(args.output) if args.output else runner.output_root()
        for s in seeds:
            cfg = cfgmod.apply_overrides(base, [f"seed={s}"])
            teacher = args.teacher.format(seed=s) if args.teacher else None
            out = runner.run_experiment(cfg, root / f"{cfg.method}-seed{s}", teacher)
            print(f"run\t{out}")
        return 0
    out = runner.run_experiment(base, args.output, args.teacher)
    print(f"run\t{out}")
    return 0


def cmd_report(args) -> int:
    rows = runner.aggregate(args.runs)
    text = runner.format_report(rows)
    sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    means = {r["method"]: r["mean_eval_acc"] for r in rows}
    if "opdf" in means and "vanilla-kd" in means:
        verdict = "yes" if means["opdf"] >= means["vanilla-kd"] else "no"
        print(f"# opdf >= vanilla-kd (not gated): {verdict}")
    return 0


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opdf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tensor", help="TNSR tensor files").add_subparsers(dest="action", required=True)
    g = t.add_parser("gen", help="write a random Gaussian tensor")
    g.add_argument("--shape", type=_dims, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rank", type=int, help="low-rank product of two Gaussian factors (matrices only)")
    g.add_argument("--output", required=True)
    g.set_defaults(func=cmd_tensor_gen)
    i = t.add_parser("info", help="print shape and norm")
    i.add_argument("path")
    i.set_defaults(func=cmd_tensor_info)

    m = sub.add_parser("mpo", help="MPO planning, decomposition, accounting").add_subparsers(dest="action", required=True)

    def dims_flags(p, required=True):
        p.add_argument("--in-dims", type=_dims, required=required)
        p.add_argument("--out-dims", type=_dims, required=required)
        p.add_argument("--max-bond", type=int)

    pp = m.add_parser("plan", help="bond dims and parameter growth")
    dims_flags(pp)
    pp.add_argument("--rows", type=int)
    pp.add_argument("--cols", type=int)
    pp.set_defaults(func=cmd_mpo_plan)
    pd = m.add_parser("decompose", help="factor a TNSR matrix into an MPO bundle")
    pd.add_argument("--input", required=True)
    dims_flags(pd)
    pd.add_argument("--tol", type=float)
    pd.add_argument("--normalize", action="store_true")
    pd.add_argument("--output", required=True)
    pd.set_defaults(func=cmd_mpo_decompose)
    pr = m.add_parser("reconstruct", help="contract a bundle back to a TNSR matrix")
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--reference", help="original matrix, for the reconstruction error")
    pr.set_defaults(func=cmd_mpo_reconstruct)
    pa = m.add_parser("audit", help="parameter inflation for IxJ:in_dims:out_dims[:count] specs")
    pa.add_argument("matrix", nargs="+")
    pa.add_argument("--max-bond", type=int)
    pa.set_defaults(func=cmd_mpo_audit)

    def run_flags(p):
        p.add_argument("--config", help="experiment JSON (default: the reference experiment)")
        p.add_argument("--seed", type=int)
        p.add_argument("--output")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")

    tt = sub.add_parser("train-teacher", help="train and checkpoint a teacher")
    run_flags(tt)
    tt.set_defaults(func=cmd_train_teacher)
    d = sub.add_parser("distill", help="run one experiment (teacher + distillation)")
    run_flags(d)
    d.add_argument("--method", choices=["vanilla-kd", "opdf", "svd-op"])
    d.add_argument("--seeds", help="comma-separated seeds, run sequentially")
    d.add_argument("--teacher", help="teacher checkpoint dir; '{seed}' is substituted with --seeds")
    d.set_defaults(func=cmd_distill)
    r = sub.add_parser("report", help="aggregate run summaries")
    r.add_argument("runs", nargs="+")
    r.add_argument("--csv")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except OpdfError as exc:
        return _fail(exc, exc.exit_code)
    except (ValueError, OSError) as exc:
        return _fail(exc, 2)
    except ArithmeticError as exc:
        return _fail(exc, 3)


def _fail(exc: Exception, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}) + "\n")
    return code

if __name__ == "__main__":
    sys.exit(main())
