"""Command line: search, gap-probe, retrain, export-plots.

Every command exits 0 on success. Failures print one line of the form
``error[<category>]: <message>`` to stderr and exit with the category code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .autodiff import ContractError, NumericError, ShapeError
from .checkpoint import CheckpointError
from .config import OUTPUT_ROOT_ENV, load
from .data import FormatError
from .discretize import Genotype
from .regularizers import GROUP_PRESETS, ConfigError
from .runner import execute_retrain, execute_search, probe_checkpoint
from .svg import MetricsError, export_plots

EXIT_CODES = {"config": 2, "data": 3, "checkpoint": 4, "numeric": 5, "io": 6, "internal": 70}


def _category(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (FormatError, MetricsError)):
        return "data"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, NumericError):
        return "numeric"
    if isinstance(exc, (ShapeError, ContractError)):
        return "config"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def cmd_search(args) -> int:
    cfg = load(args.config)
    out = Path(args.out) if args.out else cfg.resolved_output_dir()
    paths = execute_search(cfg, out)
    _emit({"kind": "artifacts", "run_id": cfg.run_id, **{k: str(v) for k, v in paths.items()}})
    return 0


def cmd_gap_probe(args) -> int:
    record = probe_checkpoint(args.checkpoint, args.groups, Path(args.export_one_hot) if args.export_one_hot else None)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    _emit(record)
    return 0


def cmd_retrain(args) -> int:
    try:
        text = Path(args.genotype).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read genotype {args.genotype}: {exc}") from exc
    genotype = Genotype.from_json(text)
    cfg = load(args.config)
    out = Path(args.out) if args.out else cfg.resolved_output_dir()
    _emit(execute_retrain(genotype, cfg, out))
    return 0


def cmd_export_plots(args) -> int:
    paths = export_plots(args.metrics, args.out)
    _emit({"kind": "plots", "files": [str(p) for p in paths]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discretenas", description=__doc__.splitlines()[0],
                                epilog=f"Default output root: ${OUTPUT_ROOT_ENV} (else ./runs).")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run an architecture search")
    s.add_argument("--config", required=True, help="run config (JSON)")
    s.add_argument("--out", help="output directory (default: from config or output root)")
    s.set_defaults(func=cmd_search)

    g = sub.add_parser("gap-probe", help="accuracy drop from one-hot discretization of a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--groups", required=True, choices=sorted(GROUP_PRESETS))
    g.add_argument("--out", help="write the gap record to this JSON file")
    g.add_argument("--export-one-hot", help="also save the discretized checkpoint here")
    g.set_defaults(func=cmd_gap_probe)

    r = sub.add_parser("retrain", help="train a genotype from scratch")
    r.add_argument("--genotype", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory for retrain.json")
    r.set_defaults(func=cmd_retrain)

    e = sub.add_parser("export-plots", help="render SVG charts from a metrics stream")
    e.add_argument("--metrics", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_plots)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("error[interrupted]: stopped by user", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001
        cat = _category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        if cat == "internal":
            logging.getLogger(__name__).debug("traceback", exc_info=True)
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
