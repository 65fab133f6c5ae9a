"""Command-line entry point: ``gpfgo simulate|run|compare|export-density|train-classifier``.

Errors are reported as a single JSON line on stderr (``{"error": ..., "type": ...}``)
with exit code 2 for configuration problems and 1 for everything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, GpfgoError
from .nlos import dumps_classifier, train, write_labeled_csv
from .sim import ScenarioConfig, load_dataset, simulate, write_dataset


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def cmd_simulate(args):
    cfg = ScenarioConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    out = write_dataset(simulate(cfg), harness.resolve_output(args.output))
    print(json.dumps({"dataset": str(out), "seed": cfg.seed}))


def _load_run_config(path, output=None):
    cfg = harness.RunConfig.load(path)
    if output is not None:
        cfg.output = str(output)
    return cfg


def cmd_run(args):
    cfg = _load_run_config(args.config, args.output)
    report = harness.run(cfg)
    print(json.dumps(report.summary()))


def cmd_compare(args):
    configs = [_load_run_config(p) for p in args.configs]
    for c in configs:
        c.output = None
    out = harness.resolve_output(args.output)
    result = harness.compare(configs, out_dir=out)
    for r in result.reports:
        r.write(out / r.name)
    sys.stdout.write(result.table())


def cmd_export_density(args):
    run_dir = Path(args.run_dir)
    snap_file = run_dir / "gmm_snapshots.txt"
    if not snap_file.is_file():
        raise ConfigError(f"no mixture snapshots in {run_dir} (was it a gmm_* run?)")
    rows = harness.export_density(harness.read_snapshots(snap_file),
                                  (args.r_min, args.r_max), args.points)
    out = Path(args.output) if args.output else run_dir / "density.csv"
    harness.write_density_csv(out, rows)
    print(json.dumps({"density": str(out), "rows": len(rows)}))


def cmd_train_classifier(args):
    scenario = load_dataset(args.scenario)
    rows = []
    harness.run(harness.RunConfig(screening="oracle"), scenario=scenario, feature_log=rows)
    out = harness.resolve_output(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_labeled_csv(out / "features.csv", rows)
    X = [fv.as_array() for _, _, fv, _ in rows]
    y = [int(lab) for _, _, _, lab in rows]
    model = train(X, y)
    (out / "classifier.txt").write_text(dumps_classifier(model))
    print(json.dumps({"classifier": str(out / "classifier.txt"), "samples": len(y)}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpfgo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a scenario dataset")
    s.add_argument("config", help="scenario JSON")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", help="run the estimator on one configuration")
    s.add_argument("config", help="run-config JSON")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="run several configurations and tabulate them")
    s.add_argument("configs", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("export-density", help="mixture densities of a gmm run on a grid")
    s.add_argument("run_dir")
    s.add_argument("-o", "--output")
    s.add_argument("--r-min", type=float, default=-10.0)
    s.add_argument("--r-max", type=float, default=60.0)
    s.add_argument("--points", type=int, default=701)
    s.set_defaults(func=cmd_export_density)

    s = sub.add_parser("train-classifier", help="fit the NLOS baseline on a labelled scenario")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_train_classifier)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ValueError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 2
    except (GpfgoError, OSError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
