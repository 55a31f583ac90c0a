"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
Config precedence: ``--set`` / dedicated flags > ``--config`` file > defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, parse_kv_lines
from .dataio import AudioFormatError
from .dsp import ConfigError

log = logging.getLogger("transae_asd")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value run configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="seed for training and synthesis")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transae-asd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus in DCASE layout")
    _common(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("featurize", help="cache log-Mel and phase features")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--cache-dir", type=Path)
    p.add_argument("--machine-type")

    p = sub.add_parser("train", help="train one model for a machine type")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--machine-type", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cache-dir", type=Path)

    p = sub.add_parser("score", help="score the test clips of a machine type")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--machine-type", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cache-dir", type=Path)

    p = sub.add_parser("eval", help="AUC / pAUC / mAUC report, ROC and histogram files")
    _common(p)
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = parse_kv_lines(args.overrides)
    if args.seed is not None:
        overrides.setdefault("seed", str(args.seed))
        overrides.setdefault("synth.seed", str(args.seed))
    return cfg.with_overrides(overrides)


def run(args) -> None:
    cfg = resolve_config(args)
    if args.command == "synth":
        paths = pipeline.cmd_synth(cfg, args.out)
        print(f"wrote {len(paths)} clips under {args.out}")
    elif args.command == "featurize":
        rep = pipeline.cmd_featurize(args.corpus, cfg, args.cache_dir, args.machine_type)
        print(f"features: {rep.computed} computed, {rep.reused} reused; manifest {rep.manifest}")
    elif args.command == "train":
        res = pipeline.cmd_train(args.corpus, args.machine_type, cfg, args.out, args.cache_dir)
        first, last = res.log.records[0], res.log.records[-1]
        print(f"trained {len(res.log.records)} epochs: loss_r {first.loss_r:.4f} -> {last.loss_r:.4f}")
        print(f"checkpoint {res.checkpoint}")
    elif args.command == "score":
        res = pipeline.cmd_score(args.checkpoint, args.corpus, args.machine_type, cfg, args.out, args.cache_dir)
        print(f"scored {len(res.records)} clips -> {res.path}")
        print(f"ID accuracy on normal test windows: {res.normal_accuracy:.4f}")
    elif args.command == "eval":
        res = pipeline.cmd_eval(args.scores, cfg, args.out, plots=not args.no_plots)
        for mtype, mid, metric, value in res.rows:
            if mid == "ALL":
                print(f"{mtype} {metric} {value:.4f}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except (ConfigError, AudioFormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
