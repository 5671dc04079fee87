"""Command-line front end: ``pbrobust {outcome,robust,bribery,batch,replay}``.

Exit codes: 0 success, 1 refusal (guard or enumeration cap), 2 usage error,
3 input format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import multiprocessing
import os
import statistics
import sys
from fractions import Fraction
from itertools import combinations
from pathlib import Path

from . import __version__
from . import bribery as br
from .core import TieBreak
from .pabulib import PabulibError, read_pabulib
from .robustness import (ABOVE_GRID, NoiseConfig, PConvention, aggregates_csv, curves_csv,
                         default_grid, feature_csvs, feature_table, report_json,
                         run_experiment)
from .rules import Completion, Rule, RuleSpec, run_rule

EXIT_OK, EXIT_REFUSED, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3
DEFAULT_CUTOFF = 120.0


class UsageError(Exception):
    pass


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("PBROBUST_THREADS", "1")))
    except ValueError:
        return 1


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        return x.item()
    return x


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="")


def _manifest(out: Path, command: str, argv: list[str], extra: dict):
    body = {"software": {"name": "pbrobust", "version": __version__},
            "command": command, "argv": argv}
    body.update(extra)
    _write(out / "manifest.json", json.dumps(body, indent=2) + "\n")


# ---------------------------------------------------------------- arguments

def _phi_grid(text: str) -> tuple[Fraction, ...]:
    try:
        return tuple(Fraction(x.strip()) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad phi grid {text!r}") from None


def _rule_list(text: str) -> list[RuleSpec]:
    try:
        return [RuleSpec.parse(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_rule_flags(p: argparse.ArgumentParser):
    p.add_argument("--rule", required=True, choices=[r.value for r in Rule])
    p.add_argument("--tiebreak", default=TieBreak.ORDER.value, choices=[t.value for t in TieBreak])
    p.add_argument("--completion", default=Completion.NONE.value,
                   choices=[c.value for c in Completion])


def _spec(args) -> RuleSpec:
    try:
        return RuleSpec(args.rule, args.tiebreak, args.completion)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _rule_argv(spec: RuleSpec) -> list[str]:
    return ["--rule", spec.rule.value, "--tiebreak", spec.tiebreak.value,
            "--completion", spec.completion.value]


def _noise_config(args) -> NoiseConfig:
    if args.high_res:
        grid, samples = default_grid(Fraction(1, 10_000)), 1000
    else:
        grid, samples = default_grid(), 100
    if args.phi_grid is not None:
        grid = args.phi_grid
    if args.samples is not None:
        samples = args.samples
    try:
        return NoiseConfig(grid, samples, args.seed, PConvention(args.p_convention))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_noise_flags(p: argparse.ArgumentParser):
    p.add_argument("--phi-grid", type=_phi_grid, default=None,
                   help="comma-separated decimals, e.g. 0,0.01,0.02 (default 0..0.25 step 0.01)")
    p.add_argument("--samples", type=int, default=None, help="samples per phi (default 100)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-convention", default=PConvention.EXPECTATION_PRESERVING.value,
                   choices=[c.value for c in PConvention])
    p.add_argument("--high-res", action="store_true",
                   help="grid step 0.0001 with 1000 samples per phi")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $PBROBUST_THREADS or 1)")


def _noise_argv(config: NoiseConfig) -> list[str]:
    return ["--phi-grid", ",".join(str(x) for x in config.phi_grid),
            "--samples", str(config.samples_per_phi), "--seed", str(config.master_seed),
            "--p-convention", config.p_convention.value]


# ----------------------------------------------------------------- commands

def _price_text(info) -> str:
    parts = []
    for key, value in info.items():
        if key == "payments":
            continue
        parts.append(f"{key}={value}")
    return " ".join(parts)


def cmd_outcome(args, out=sys.stdout) -> int:
    spec = _spec(args)
    pb = read_pabulib(args.file)
    outcome = run_rule(pb.instance, spec)
    print(f"rule {spec.label}: {len(outcome.selected)} projects, total cost "
          f"{outcome.total_cost} of {pb.instance.budget}", file=out)
    for step in outcome.trace:
        phase = f"[{step.phase}] " if step.phase else ""
        print(f"{step.step_index + 1:>4}. {step.project_id} {phase}{_price_text(step.price_info)}"
              .rstrip(), file=out)
    if args.json:
        body = {"rule": spec.label, "selected": list(outcome.order),
                "total_cost": outcome.total_cost, "budget": pb.instance.budget,
                "meta": _jsonable(dict(outcome.meta)),
                "trace": [{"step": s.step_index, "project_id": s.project_id, "phase": s.phase,
                           "price_info": _jsonable(dict(s.price_info))} for s in outcome.trace]}
        _write(Path(args.json), json.dumps(body, indent=2) + "\n")
    return EXIT_OK


def cmd_robust(args, out=sys.stdout) -> int:
    spec = _spec(args)
    config = _noise_config(args)
    pb = read_pabulib(args.file)
    threads = args.threads or default_threads()
    report = run_experiment(pb.instance, spec, config, instance_id=Path(args.file).stem,
                            workers=threads)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    _write(dest / "curves.csv", curves_csv(report))
    _write(dest / "aggregates.csv", aggregates_csv(report))
    _write(dest / "report.json", report_json(report))
    argv = ["robust", str(args.file), *_rule_argv(spec), *_noise_argv(config), "--out", str(dest)]
    _manifest(dest, "robust", argv, {"inputs": [str(args.file)], "rule": spec.label,
                                     "noise": config.to_json(), "output_dir": str(dest)})
    threshold = report.threshold
    print(f"50%-winner threshold: {threshold if threshold == ABOVE_GRID else float(threshold)}",
          file=out)
    return EXIT_OK


def cmd_bribery(args, out=sys.stdout) -> int:
    spec = _spec(args)
    pb = read_pabulib(args.file)
    inst = pb.instance
    try:
        inst.project_index(args.target)
        query = br.BriberyQuery(args.target, args.radius, br.Semantics(args.semantics))
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc).strip("'\"")) from None
    solver = args.solver
    if solver == "auto":
        solver = br.pick_solver(inst, spec, query, mode="decide" if args.mode == "decide" else "count")
    try:
        if args.mode == "decide":
            answer = br.decide(inst, spec, query, solver=solver, cap=args.cap)
            print("true" if answer else "false", file=out)
        elif args.mode == "count":
            print(br.count(inst, spec, query, solver=solver, cap=args.cap), file=out)
        else:
            prob = br.funding_probability_exact(inst, spec, query, solver=solver, cap=args.cap)
            print(prob, file=out)
    except br.RefusalError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"solver: {solver}", file=sys.stderr)
    return EXIT_OK


def _rule_probe(conn, instance, spec):
    try:
        run_rule(instance, spec, audit=False)
        conn.send(None)
    except Exception as exc:  # reported back to the parent as a skip reason
        conn.send(f"{type(exc).__name__}: {exc}")
    finally:
        conn.close()


def evaluate_with_cutoff(instance, spec: RuleSpec, cutoff: float) -> str | None:
    """Run the rule once in a child process; returns a skip reason or None."""
    ctx = multiprocessing.get_context("fork")
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_rule_probe, args=(child, instance, spec), daemon=True)
    proc.start()
    child.close()
    ready = parent.poll(cutoff)
    if not ready:
        proc.terminate()
        proc.join()
        return f"timeout: rule exceeded {cutoff:g} s"
    try:
        reason = parent.recv()
    except EOFError:
        reason = "rule evaluation crashed"
    proc.join()
    return reason


def _threshold_cell(threshold) -> str:
    return threshold if threshold == ABOVE_GRID else repr(float(threshold))


def summary_rows(thresholds: dict[str, dict[str, object]], rules: list[str]):
    """Counts of thresholds at most 25%/10%/5% plus mean and median of those at most 25%."""
    rows = []
    for rule in rules:
        values = [float(t) for t in thresholds[rule].values()
                  if t is not None and t != ABOVE_GRID]
        low = [v for v in values if v <= 0.25]
        rows.append({
            "rule": rule,
            "instances": len(thresholds[rule]),
            "le_25": len(low),
            "le_10": sum(v <= 0.10 for v in values),
            "le_5": sum(v <= 0.05 for v in values),
            "mean_le_25": repr(statistics.fmean(low)) if low else "",
            "median_le_25": repr(float(statistics.median(low))) if low else "",
        })
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_batch(args, out=sys.stdout) -> int:
    rules: list[RuleSpec] = args.rules
    config = _noise_config(args)
    threads = args.threads or default_threads()
    src = Path(args.dir)
    if not src.is_dir():
        raise UsageError(f"not a directory: {src}")
    files = sorted(src.glob("*.pb"))
    if not files:
        raise UsageError(f"no .pb files in {src}")
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)

    instances, parse_errors = {}, {}
    for path in files:
        try:
            instances[path.stem] = read_pabulib(path).instance
        except (PabulibError, OSError, UnicodeDecodeError) as exc:
            parse_errors[path.stem] = f"parse error: {exc}"

    labels = [spec.label for spec in rules]
    thresholds = {label: {} for label in labels}
    status_rows, reports = [], []
    for spec in rules:
        for path in files:
            name = path.stem
            reason = parse_errors.get(name)
            if reason is None:
                reason = evaluate_with_cutoff(instances[name], spec, args.cutoff)
            if reason is not None:
                status_rows.append([name, spec.label, "", "skipped", reason])
                print(f"{name} {spec.label}: skipped ({reason})", file=out)
                continue
            report = run_experiment(instances[name], spec, config, instance_id=name,
                                    workers=threads)
            reports.append(report)
            thresholds[spec.label][name] = report.threshold
            status_rows.append([name, spec.label, _threshold_cell(report.threshold), "ok", ""])
            print(f"{name} {spec.label}: threshold {_threshold_cell(report.threshold)}", file=out)

    _write(dest / "thresholds.csv",
           _csv_text(["instance", "rule", "threshold", "status", "reason"], status_rows))
    summary = summary_rows(thresholds, labels)
    header = ["rule", "instances", "le_25", "le_10", "le_5", "mean_le_25", "median_le_25"]
    _write(dest / "summary.csv", _csv_text(header, [[r[h] for h in header] for r in summary]))
    pairs = []
    for a, b in combinations(labels, 2):
        for name in sorted(set(thresholds[a]) & set(thresholds[b])):
            pairs.append([name, a, b, _threshold_cell(thresholds[a][name]),
                          _threshold_cell(thresholds[b][name])])
    _write(dest / "pairwise.csv",
           _csv_text(["instance", "rule_x", "rule_y", "threshold_x", "threshold_y"], pairs))
    inst_rows, proj_rows = feature_table(instances, reports)
    inst_csv, proj_csv = feature_csvs(inst_rows, proj_rows, config.phi_grid)
    _write(dest / "instance_features.csv", inst_csv)
    _write(dest / "project_features.csv", proj_csv)
    argv = ["batch", str(src), "--rules", ",".join(labels), *_noise_argv(config),
            "--cutoff", repr(args.cutoff), "--out", str(dest)]
    _manifest(dest, "batch", argv, {"inputs": [str(p) for p in files], "rules": labels,
                                    "noise": config.to_json(), "cutoff_seconds": args.cutoff,
                                    "output_dir": str(dest)})
    for row in summary:
        print(" ".join(f"{k}={v}" for k, v in row.items()), file=out)
    return EXIT_OK


def cmd_replay(args, out=sys.stdout) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"unreadable manifest: {exc}") from None
    return main(argv, out=out)


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbrobust", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("outcome", help="run one rule and print the selection trace")
    p.add_argument("file")
    _add_rule_flags(p)
    p.add_argument("--json", help="also write the outcome as JSON to this path")
    p.set_defaults(func=cmd_outcome)

    p = sub.add_parser("robust", help="Monte-Carlo funding probabilities under resampling")
    p.add_argument("file")
    _add_rule_flags(p)
    _add_noise_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("bribery", help="exact flip-bribery decision, count or probability")
    p.add_argument("file")
    _add_rule_flags(p)
    p.add_argument("--target", required=True)
    p.add_argument("--radius", type=int, required=True)
    p.add_argument("--mode", default="count", choices=["count", "decide", "prob"])
    p.add_argument("--solver", default="auto", choices=list(br.SOLVERS))
    p.add_argument("--semantics", default=br.Semantics.EXACTLY_R.value,
                   choices=[s.value for s in br.Semantics])
    p.add_argument("--cap", type=int, default=br.DEFAULT_ENUMERATION_CAP,
                   help="largest number of flip sets brute force may enumerate")
    p.set_defaults(func=cmd_bribery)

    p = sub.add_parser("batch", help="thresholds and feature tables for a directory of .pb files")
    p.add_argument("dir")
    p.add_argument("--rules", type=_rule_list, required=True,
                   help="comma-separated rule specs, e.g. greedy-av,mes-cost:add1-greedyav")
    _add_noise_flags(p)
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF,
                   help="per-instance rule time limit in seconds (default 120)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest.json")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args, out=out)
    except UsageError as exc:
        print(f"pbrobust: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except br.RefusalError as exc:
        print(f"pbrobust: refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (PabulibError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"pbrobust: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
