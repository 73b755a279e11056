"""Command-line entry point.

Exit codes: 0 success, 1 validation / config / I-O error, 2 a theory check
failed (``verify`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import cot, diagnostics
from .maxmargin import NotSeparableError, pool_dataset, solve_max_margin
from .model import load_checkpoint
from .sequences import EVEN_PAIRS, PARITY_COT, ValidationError, build_dataset, enumerate_sequences
from .training import CONFIG_KEYS, TrainConfig, TrainingDiverged, load_config, load_run, train

log = logging.getLogger("tfdyn")

EXIT_OK, EXIT_ERROR, EXIT_THEORY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for failed checks here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


PRESETS = ("paper_even_pairs", "paper_parity")


def resolve_config_path(name: str):
    """A file path, or the name of a bundled preset (with or without .json)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in PRESETS:
        return resources.files("tfdyn") / "presets" / f"{stem}.json"
    return p


_OVERRIDES = {
    "task": str, "l_max": int, "l0": int, "eta": float, "lambda": float, "t0": int,
    "total_steps": int, "schedule": str, "snapshot_every": int,
}


def _add_overrides(p: argparse.ArgumentParser):
    p.add_argument("--config", help="config JSON path or preset name (paper_even_pairs, paper_parity)")
    for key, typ in _OVERRIDES.items():
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=f"ov_{key}", type=typ, default=None, help=f"override '{key}'")


def config_from_args(args) -> TrainConfig:
    if args.config:
        base = load_config(resolve_config_path(args.config)).to_dict()
    else:
        base = {}
    for key in _OVERRIDES:
        v = getattr(args, f"ov_{key}", None)
        if v is not None:
            base[key] = v
    out = getattr(args, "out_dir", None)
    if out is not None:
        base["out_dir"] = out
    return TrainConfig.from_dict({k: v for k, v in base.items() if k in CONFIG_KEYS})


def _emit(text: str, args, name: str | None = None):
    if getattr(args, "out_dir", None) and name:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text)


def _say(args, msg: str):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


# ------------------------------------------------------------------ commands

def cmd_dataset(args) -> int:
    config = config_from_args(args)
    ds = config.dataset()
    _emit(ds.to_csv(), args, "dataset.csv")
    _say(args, f"dataset {ds.task}: {len(ds)} examples, d={ds.d}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = config_from_args(args)
    traj = train(config, out_dir=config.out_dir, write=config.out_dir is not None)
    last = traj.records[-1]
    where = f" -> {config.out_dir}" if config.out_dir else ""
    _say(args, f"trained {config.task} lambda={config.lam:g} {config.schedule}: "
               f"loss {traj.records[0].loss:.6g} -> {last.loss:.6g} in {last.t} steps{where}")
    for note in traj.notes:
        _say(args, f"note: {note}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = config_from_args(args)
    try:
        lams = [float(x) for x in args.lambdas.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"--lambda: expected comma-separated numbers ({exc})") from exc
    if not lams:
        raise ValidationError("--lambda: no values given")
    root = Path(args.out_dir or "sweep")
    for lam in lams:
        sub = root / f"lambda_{lam:g}"
        cfg = replace(base, lam=lam, out_dir=str(sub))
        traj = train(cfg, out_dir=sub)
        _say(args, f"lambda={lam:g}: final loss {traj.records[-1].loss:.6g} -> {sub}")
    return EXIT_OK


def cmd_verify(args) -> int:
    traj = load_run(args.run_dir)
    want = {k for k in ("phase1", "phase2", "separability", "symmetry") if getattr(args, k) or args.all}
    if not want:
        want = {"phase1", "phase2", "separability", "symmetry"}
    reports = []
    if "phase1" in want:
        reports.append(diagnostics.phase1_report(traj))
    if "symmetry" in want:
        reports.append(diagnostics.symmetry_report(traj))
    if "separability" in want:
        t0 = traj.config.t0
        if t0 not in traj.checkpoints:
            raise ValidationError(f"no checkpoint at t0={t0} in {args.run_dir}")
        reports.append(diagnostics.separability_report(traj.checkpoints[t0], traj.config.dataset(), step=t0))
    if "phase2" in want:
        reports.append(diagnostics.phase2_report(traj))
    ok = all(r.passed for r in reports)
    out = {"run_dir": str(args.run_dir), "passed": ok, "reports": [r.to_json() for r in reports]}
    _emit(json.dumps(out, indent=2, default=float) + "\n", args, "verify.json")
    for r in reports:
        _say(args, f"{r.name}: {'pass' if r.passed else 'FAIL ' + ', '.join(r.failures())}")
    return EXIT_OK if ok else EXIT_THEORY


def _dataset_for_checkpoint(params, task, args):
    if args.config or any(getattr(args, f"ov_{k}") is not None for k in _OVERRIDES):
        cfg = config_from_args(args)
        return build_dataset(cfg.task, l_max=cfg.l_max, l0=cfg.l0)
    D = params.d // 2
    if task == PARITY_COT:
        if D % 2 == 0:
            raise ValidationError(f"cannot infer L0 from d={params.d}; pass --l0")
        return build_dataset(task, l0=(D + 1) // 2)
    return build_dataset(EVEN_PAIRS, l_max=D)


def cmd_maxmargin(args) -> int:
    params, step, task = load_checkpoint(args.checkpoint)
    ds = _dataset_for_checkpoint(params, task, args)
    pooled = pool_dataset(params, ds, step=step)
    try:
        sol = solve_max_margin(pooled, tol=args.tol)
    except NotSeparableError as exc:
        raise ValidationError(f"max-margin solve failed: {exc}") from exc
    _emit(json.dumps(sol.to_json(), indent=2) + "\n", args, "u_star.json")
    _say(args, f"u*: norm {sol.norm:.6g}, margin {sol.margin:.6g}, {len(sol.support)} support points")
    return EXIT_OK


def _cot_sequences(args, default_len: int) -> list[str]:
    if args.sequence:
        return [args.sequence]
    L = args.length if args.length is not None else default_len
    if args.exhaustive and args.mode == "truncated":
        return [s for n in range(2, L + 1) for s in enumerate_sequences(n)]
    return enumerate_sequences(L)


def cmd_cot_infer(args) -> int:
    if args.mode == "truncated":
        if args.ideal:
            comp, cap = cot.IdealComparator(), 10
        else:
            params, _, _ = load_checkpoint(args.checkpoint)
            comp, cap = cot.ModelComparator(params), params.d // 2
        runs = [cot.truncated_cot_infer(comp, s) for s in _cot_sequences(args, cap)]
    else:
        if args.ideal:
            raise ValidationError("--ideal applies to --mode truncated only")
        params, _, _ = load_checkpoint(args.checkpoint)
        l0 = args.l0 if args.l0 is not None else (params.d // 2 + 1) // 2
        seqs = _cot_sequences(args, l0)
        runs = [cot.autoregressive_cot_infer(params, s, l0) for s in seqs]
    rows, acc = cot.evaluate(runs)
    lines = ["sequence,prediction,truth,correct"]
    lines += [f"{r.sequence},{r.prediction},{r.truth},{int(r.correct)}" for r in rows]
    text = "\n".join(lines) + "\n"
    _emit(text, args, "cot_infer.csv")
    wrong = [r.sequence for r in rows if not r.correct]
    summary = f"accuracy {sum(r.correct for r in rows)}/{len(rows)} = {acc:.6f}"
    if wrong:
        summary += f"; failures: {' '.join(wrong)}"
    print(summary)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tfdyn", description="Training dynamics of a one-layer attention model on even pairs / parity.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("dataset", help="dump a dataset as CSV")
    _add_overrides(sp)
    common(sp)
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("train", help="run gradient descent and write metrics/checkpoints")
    _add_overrides(sp)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="train once per lambda value")
    _add_overrides(sp)
    sp.add_argument("--lambdas", "--lambda-list", dest="lambdas", required=True,
                    help="comma-separated lambda values, e.g. 2,10,18")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="check a run directory against the theory")
    sp.add_argument("run_dir")
    for k in ("phase1", "phase2", "separability", "symmetry", "all"):
        sp.add_argument(f"--{k}", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("maxmargin", help="solve for the max-margin separator of a checkpoint's pooled data")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--tol", type=float, default=1e-8)
    _add_overrides(sp)
    common(sp)
    sp.set_defaults(func=cmd_maxmargin)

    sp = sub.add_parser("cot-infer", help="parity by chain-of-thought inference")
    sp.add_argument("--mode", choices=("truncated", "autoregressive"), default="truncated")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--ideal", action="store_true")
    which = sp.add_mutually_exclusive_group()
    which.add_argument("--length", type=int)
    which.add_argument("--sequence")
    sp.add_argument("--exhaustive", action="store_true", help="truncated mode: all lengths 2..L")
    sp.add_argument("--l0", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_cot_infer)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    # `sweep --lambda 2,10,18` is the documented spelling; argparse would read it as the override flag
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "sweep":
        argv = ["--lambdas" if a == "--lambda" else (a.replace("--lambda=", "--lambdas=", 1)
                                                     if a.startswith("--lambda=") else a) for a in argv]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValidationError, ValueError, KeyError, OSError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
