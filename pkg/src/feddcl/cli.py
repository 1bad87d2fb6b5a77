"""Command-line front end: run experiments, verify alignment exactness, sweep groups."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .bench import (
    METHOD_FEDDCL,
    RunConfig,
    load_config,
    prepare_partition,
    protocol_config_for,
    run_experiment,
)
from .errors import ConfigError, FeddclError
from .protocol import verify_theorem1
from .rng import RngStream


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "methods", None):
        updates["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["out_dir"] = args.out
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    results = run_experiment(config)
    for method in config.methods:
        res = results[method]
        print(f"method={method} metric={res.metric_kind} final={res.final:.6f} "
              f"snapshots={len(res.snapshots)} seconds={res.wall_seconds:.2f}")
    if config.out_dir:
        print(f"artifacts written to {config.out_dir}")
    return 0


def _cmd_verify_theorem1(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    parts = prepare_partition(config)
    proto = protocol_config_for(parts, config)
    f0_gen = RngStream(config.master_seed).child("f0").generator()
    f0 = f0_gen.standard_normal((parts.n_features, config.m_tilde))
    report = verify_theorem1(parts, f0, proto)
    payload = {
        "max_alignment_residual": report.max_residual,
        "recovered_fit_error": report.fit_error,
        "max_principal_angle_rad": report.max_angle,
        "group_donors": {str(k): v for k, v in sorted(report.group_donors.items())},
        "central_donor": report.central_donor,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "theorem1_report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"report written to {out / 'theorem1_report.json'}")
    return 0


def _cmd_sweep_groups(args) -> int:
    base = _apply_overrides(load_config(args.config), args)
    methods = base.methods if METHOD_FEDDCL in base.methods else (METHOD_FEDDCL,)
    rows = []
    for d in range(1, args.d_max + 1):
        c_i = base.c[0]
        dataset = dict(base.dataset)
        if dataset.get("kind") == "synthetic":
            dataset["n"] = None  # re-derive from the new partition size
        config = dataclasses.replace(base, d=d, c=tuple([c_i] * d),
                                     dataset=dataset, methods=methods, out_dir=None)
        results = run_experiment(config)
        for method in methods:
            rows.append((d, method, results[method].final))
            print(f"d={d} method={method} final={results[method].final:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["d,method,final"]
        lines += [f"{d},{m},{v!r}" for d, m, v in rows]
        (out / "sweep_groups.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"sweep written to {out / 'sweep_groups.csv'}")
    return 0


def _cmd_presets(args) -> int:
    preset_dir = resources.files("feddcl") / "presets"
    names = sorted(p.name for p in preset_dir.iterdir() if p.name.endswith(".json"))
    if args.export:
        target = Path(args.export)
        target.mkdir(parents=True, exist_ok=True)
        for name in names:
            (target / name).write_text((preset_dir / name).read_text(encoding="utf-8"),
                                       encoding="utf-8")
        print(f"exported {len(names)} presets to {target}")
    else:
        for name in names:
            print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feddcl",
        description="Federated data-collaboration learning simulator and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured methods and export histories")
    run.add_argument("--config", required=True, help="path to a JSON run config")
    run.add_argument("--methods", help="comma-separated subset of methods to run")
    run.add_argument("--out", help="output directory for artifacts")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.set_defaults(func=_cmd_run)

    verify = sub.add_parser("verify-theorem1",
                            help="check alignment exactness under common-range linear maps")
    verify.add_argument("--config", required=True)
    verify.add_argument("--out", help="directory for the JSON report")
    verify.add_argument("--seed", type=int, help="override the master seed")
    verify.set_defaults(func=_cmd_verify_theorem1)

    sweep = sub.add_parser("sweep-groups",
                           help="re-run with d = 1..d-max groups and collect finals")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--d-max", type=int, default=10, dest="d_max")
    sweep.add_argument("--out", help="directory for the sweep CSV")
    sweep.add_argument("--seed", type=int, help="override the master seed")
    sweep.set_defaults(func=_cmd_sweep_groups)

    presets = sub.add_parser("presets", help="list or export the bundled preset configs")
    presets.add_argument("--export", help="directory to copy presets into")
    presets.set_defaults(func=_cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FeddclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
