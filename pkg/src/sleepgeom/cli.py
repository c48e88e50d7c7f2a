"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import pipeline
from .errors import DataError, NumericalError
from .pipeline import PipelineConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("sleepgeom")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# config fields exposed as flags, with their argparse types
_FLAG_TYPES = {
    "manifest": str, "output_dir": str, "channels": str, "epoch_s": float,
    "wake_margin_min": float, "K": int, "H": float, "hop": int, "max_freq": float,
    "energy_transform": str, "alpha": float, "md_rank": int, "eps_quantile": float,
    "diffusion_time": float, "d_hat": int, "d_tilde": int, "affinity_source": str,
    "affinity_diagonal": float, "codebook_size": int, "kappa": float, "k_hat": int,
    "scheme": str, "folds": int, "embedding_scope": str, "seed": int,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="INI file with pipeline settings")
    g = p.add_argument_group("pipeline settings (override the config file)")
    for name, typ in _FLAG_TYPES.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    g.add_argument("--single-channel", dest="single_channel", action="store_const", const=True,
                   default=None, help="skip fusion and use the first channel's diffusion map")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sleepgeom", description="EEG sleep staging via diffusion geometry and an HMM")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name, help_text in (
        ("features", "synchrosqueezed band features per recording and channel"),
        ("embed", "per-channel diffusion-map coordinates"),
        ("fuse", "two-channel common features and scatter exports"),
        ("train", "fit codebook and HMM on all manifest recordings"),
        ("predict", "decode manifest recordings with a trained model"),
        ("evaluate", "cross-validated staging report"),
        ("export", "write the SST of an epoch range as a binary matrix"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name in ("train", "predict"):
            p.add_argument("--model", help="model JSON path (default OUTPUT/model/hmm.json)")
        if name == "export":
            p.add_argument("--recording", required=True)
            p.add_argument("--channel")
            p.add_argument("--first-epoch", type=int, default=0)
            p.add_argument("--n-epochs", type=int, default=1)
    return parser


def _config(args) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig)
                 if getattr(args, f.name, None) is not None}
    if args.config:
        return PipelineConfig.from_ini(args.config, overrides)
    return PipelineConfig(**overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        cmd = args.command
        if cmd in ("train", "predict"):
            run = getattr(pipeline, f"cmd_{cmd}")(cfg, args.model)
        elif cmd == "export":
            run = pipeline.cmd_export(cfg, args.recording, args.channel, args.first_epoch, args.n_epochs)
        else:
            run = getattr(pipeline, f"cmd_{cmd}")(cfg)
    except DataError as exc:
        print(f"sleepgeom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"sleepgeom: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in run.outputs:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
