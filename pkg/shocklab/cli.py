from __future__ import annotations
import argparse
import logging
import os
import sys
from typing import List, Optional, Tuple

from .config import PRESETS, ExperimentConfig, load_config, load_preset
from .errors import ConfigError, ShockLabError
from .pipeline import run_certificates, run_pipeline
from .renderer import emit_plots
from .utils import manifest, write_json


log = logging.getLogger(__name__)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser("shock", description="Viscous shock profile lab")
    p.add_argument("command", choices=["profile", "evolve", "verify", "certify", "plot"])
    p.add_argument("reports", nargs="*", help="report JSON files (plot only; default <out>/report.json)")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--config", help="Path to a JSON/YAML experiment config", default=None)
    source.add_argument("--preset", choices=list(PRESETS), help="Shipped preset (default burgers)", default=None)
    p.add_argument("--out", help="Output directory (overrides config and SHOCKLAB_OUT_DIR)")
    p.add_argument("--ids", help="Comma-separated certificate ids (certify only)")
    p.add_argument("--threads", type=int, help="Worker threads (overrides config and SHOCKLAB_THREADS)")
    p.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging level",
    )
    return p.parse_args(argv)


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else load_preset(args.preset or "burgers")
    if args.out:
        cfg.output.directory = args.out
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {args.threads}")
        cfg.output.threads = args.threads
    return cfg


def _plot(cfg: ExperimentConfig, reports: List[str]) -> Tuple[int, List[str]]:
    out_dir = cfg.output.directory
    reports = reports or [os.path.join(out_dir, "report.json")]
    plot_dir = os.path.join(out_dir, "plots")
    paths = emit_plots(reports, plot_dir)
    if paths:
        path = os.path.join(plot_dir, "manifest.json")
        write_json(path, manifest(cfg.digest(), paths, plot_dir))
        paths.append(path)
    return 0, paths


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        log.info("Running %s for %s (config %s)", args.command, cfg.name, cfg.digest()[:12])
        if args.ids and args.command != "certify":
            raise ConfigError("--ids only applies to the certify command")
        if args.reports and args.command != "plot":
            raise ConfigError(f"unexpected arguments for {args.command}: {args.reports}")
        if args.command == "certify":
            ids = [i.strip() for i in args.ids.split(",") if i.strip()] if args.ids else None
            if ids is not None and not ids:
                raise ConfigError("--ids is empty")
            status, paths = run_certificates(cfg, ids)
        elif args.command == "plot":
            status, paths = _plot(cfg, args.reports)
        else:
            status, paths = run_pipeline(cfg, args.command)
        for p in paths:
            print(f"Wrote {p}")
        return status
    except ShockLabError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
