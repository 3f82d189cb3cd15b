"""Command-line front door: run grids, recompute reports, validate configs.

Subcommands:

* ``traineff run <config.json>``       — execute the grid, then summarize
* ``traineff recompute <path>``        — rebuild all report values from a run
  ledger (runs.jsonl) or a fixture-table directory; never re-runs training
* ``traineff validate <config.json>``  — static checks plus telemetry and
  trainer probes, no side effects

Exit codes: 0 success, 1 invalid input, 2 partial failures.  Environment
overrides: TRAINEFF_OUTPUT_DIR, TRAINEFF_SEED, TRAINEFF_DISABLE_NUMBA.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import orchestrator, report


def _load_raw_config(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SystemExit(f"error: config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise SystemExit(f"error: {path}: invalid JSON at line {exc.lineno}: {exc.msg}")


def _apply_overrides(raw: dict, args) -> dict:
    out = dict(raw)
    env_out = os.environ.get("TRAINEFF_OUTPUT_DIR")
    env_seed = os.environ.get("TRAINEFF_SEED")
    if env_out:
        out["output_dir"] = env_out
    if env_seed:
        out["seed"] = int(env_seed)
    if args.output_dir:
        out["output_dir"] = args.output_dir
    if args.seed is not None:
        out["seed"] = args.seed
    if args.deterministic:
        out["deterministic"] = True
    return out


def _parse_config(path: Path, args):
    raw = _apply_overrides(_load_raw_config(path), args)
    cfg, diags = orchestrator.validate_config(raw, base_dir=path.parent)
    if cfg is None:
        for d in diags:
            print(f"{d.level}: {d.field}: {d.message}", file=sys.stderr)
        raise SystemExit(1)
    return cfg


def cmd_run(args) -> int:
    cfg = _parse_config(Path(args.config), args)
    entries = orchestrator.run_grid(cfg, resume=args.resume)
    rpt = orchestrator.summarize(entries)
    report.write_bundle(rpt, cfg.output_dir, config_digest=report.digest_of(args.config))
    statuses = [e["status"] for e in entries]
    print(f"{len(entries)} runs: "
          f"{statuses.count('complete')} complete, "
          f"{statuses.count('degraded')} degraded, "
          f"{statuses.count('failed')} failed")
    for w in rpt.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0 if all(s == "complete" for s in statuses) else 2


def cmd_recompute(args) -> int:
    path = Path(args.path)
    outdir = Path(args.output_dir or os.environ.get("TRAINEFF_OUTPUT_DIR") or "traineff-report")
    if path.is_dir():
        rpt = report.recompute_from_fixtures(path)
        digest = ""
    else:
        entries = orchestrator.load_ledger(path)
        if not entries:
            print("warning: empty ledger, writing empty bundle", file=sys.stderr)
        rpt = orchestrator.summarize(entries)
        digest = report.digest_of(path)
    report.write_bundle(rpt, outdir, config_digest=digest)
    for (arch, task), v in rpt.overall.items():
        print(f"{arch} on {task}: {report.format_eff(v.value)}")
    for e in rpt.ratios:
        print(f"{e.kind} [{e.fixed}] {e.numerator}/{e.denominator} = {e.ratio:.2f}")
    return 0


def cmd_validate(args) -> int:
    path = Path(args.config)
    raw = _apply_overrides(_load_raw_config(path), args)
    cfg, diags = orchestrator.validate_config(raw, base_dir=path.parent)
    if cfg is not None:
        diags = list(diags) + orchestrator.probe_config(cfg)
    errors = [d for d in diags if d.level == "error"]
    for d in diags:
        print(f"{d.level}: {d.field}: {d.message}")
    if not errors:
        print("ok")
        return 0
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traineff",
        description="Training-efficiency measurement harness (accuracy per watt-sum).",
    )
    parser.add_argument("--output-dir", default=None, help="override output directory")
    parser.add_argument("--seed", type=int, default=None, help="override experiment seed")
    parser.add_argument("--deterministic", action="store_true",
                        help="force deterministic trace-replay pacing")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment grid from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--resume", action="store_true",
                       help="skip run_ids already complete in the output ledger")
    p_run.set_defaults(func=cmd_run)

    p_rec = sub.add_parser("recompute", help="recompute the report from a ledger or fixtures")
    p_rec.add_argument("path", help="runs.jsonl ledger file, or a fixture-table directory")
    p_rec.set_defaults(func=cmd_recompute)

    p_val = sub.add_parser("validate", help="validate a config without side effects")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
