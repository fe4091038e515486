"""Command line entry point: ``htmsp generate|run|sweep|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from htmsp import dataset, experiment
from htmsp.errors import ConfigError, HtmError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

MODE_FLAGS = {"single": "single_htm", "multi": "multi_htm", "svm-only": "svm_only"}

log = logging.getLogger("htmsp")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for runtime failures here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="htmsp", description="Spatial pooler video classification experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render the synthetic shape-video dataset")
    g.add_argument("--config", type=Path, help="experiment config; uses its dataset section")
    g.add_argument("--out", type=Path, help="dataset root (overrides dataset.root)")
    g.add_argument("--seed", type=_u64, help="dataset RNG seed")
    g.add_argument("--videos-per-class", type=int)
    g.add_argument("--frames", type=int, help="frames per video")
    g.add_argument("--classes", help="comma-separated subset of " + ",".join(dataset.SHAPES))

    for name, text in (("run", "run one or more trials"), ("sweep", "run a parameter sweep")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", type=Path, required=True)
        s.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=_u64, help="base seed; trial k uses seed + k")
        s.add_argument("--mode", choices=sorted(MODE_FLAGS))
        if name == "run":
            s.add_argument("--backend", choices=("sequential", "parallel"))
            s.add_argument("--trials", type=int)
        else:
            s.add_argument("--backend", choices=("sequential", "parallel"), action="append",
                           help="restrict to one backend (repeatable); default both")

    r = sub.add_parser("report", help="summarize the outputs of run or sweep")
    r.add_argument("--out", type=Path, required=True, help="output directory to read")
    r.add_argument("--json", action="store_true", help="print the raw summary JSON")
    return p


def _load(args) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config)
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode is not None:
        changes["mode"] = MODE_FLAGS[args.mode]
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    if isinstance(args.backend, str):
        changes["backend"] = args.backend
    return cfg.replace(**changes) if changes else cfg


def cmd_generate(args) -> int:
    fields, root = {}, None
    if args.config is not None:
        cfg = experiment.load_config(args.config)
        root = cfg.dataset_root
        if cfg.dataset_spec is not None:
            fields = cfg.dataset_spec.to_dict()
    if args.out is not None:
        root = args.out
    if root is None:
        raise ConfigError("generate needs --out or a --config with dataset.root")
    for key, value in (("rng_seed", args.seed), ("videos_per_class", args.videos_per_class),
                       ("frames_per_video", args.frames)):
        if value is not None:
            fields[key] = value
    if args.classes:
        fields["classes"] = tuple(c.strip() for c in args.classes.split(",") if c.strip())
    spec = dataset.DatasetSpec(**fields)
    records = dataset.build_dataset(spec, root)
    print(f"wrote {len(records)} videos x {spec.frames_per_video} frames to {root}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    reports, summary = experiment.run_trials(cfg)
    for rep in reports:
        print(f"trial {rep.trial} seed {rep.seed}: F1 {rep.f1.f1:.4f}")
    print(f"F1 mean {summary['f1_mean']:.4f} std {summary['f1_std']:.4f} "
          f"({cfg.mode}, {cfg.backend}); outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if cfg.sweep is None:
        raise ConfigError(f"{args.config}: no sweep section")
    backends = tuple(args.backend) if args.backend else ("sequential", "parallel")
    result = experiment.run_sweep(cfg, backends=backends)
    _print_rows(result["rows"])
    failed = [p for p in result["points"] if p["error"]]
    for p in failed:
        print(f"failed: {result['parameter']}={p['value']} {p['backend']}: {p['error']}",
              file=sys.stderr)
    return EXIT_RUNTIME if failed and len(failed) == len(result["points"]) else EXIT_OK


def _fmt(value) -> str:
    if value is None or value == "":
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _print_rows(rows) -> None:
    cols = experiment.SWEEP_CSV_FIELDS
    table = [[_fmt(row.get(c)) for c in cols] for row in rows]
    widths = [max(len(c), *(len(t[i]) for t in table)) if table else len(c)
              for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for t in table:
        print("  ".join(v.ljust(w) for v, w in zip(t, widths)))


def cmd_report(args) -> int:
    out = args.out
    sweep_path, summary_path = out / "sweep_report.json", out / "summary.json"
    if sweep_path.is_file():
        data = json.loads(sweep_path.read_text())
        if args.json:
            print(json.dumps(data, indent=2, sort_keys=True))
        else:
            _print_rows(data["rows"])
            print(f"speedup_kernel non-decreasing: {data['trend']['speedup_kernel_nondecreasing']}")
        return EXIT_OK
    if summary_path.is_file():
        data = json.loads(summary_path.read_text())
        if args.json:
            print(json.dumps(data, indent=2, sort_keys=True))
            return EXIT_OK
        print(f"mode {data['config']['mode']}  backend {data['config']['backend']}  "
              f"trials {data['trials']}")
        print(f"F1 mean {data['f1_mean']:.4f} std {data['f1_std']:.4f}")
        for path in sorted(out.glob("report_*.json")):
            rep = json.loads(path.read_text())
            line = f"  trial {rep['trial']} seed {rep['seed']}: F1 {rep['f1']:.4f}"
            print(line)
        return EXIT_OK
    raise ConfigError(f"{out}: no summary.json or sweep_report.json found")


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"htmsp: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HtmError, OSError, ValueError, ArithmeticError) as exc:
        print(f"htmsp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
