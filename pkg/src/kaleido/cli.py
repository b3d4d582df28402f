"""Command-line entry point: ``kaleido {train,sample,profile,baseline,repro}``.

Every config field can be set with ``--section.field VALUE`` (for example
``--train.max_epochs 2000``); top-level fields are ``--seed`` and ``--out``.
Exit codes: 0 success, 1 repro checks failed, 2 config or usage error,
3 numeric divergence, 4 I/O or file-format error.
"""

import argparse
import logging
import sys

from . import __version__
from . import commands as C
from .config import DEFAULTS, load_config_file, parse_value, resolve
from .errors import (
    ConfigError,
    DataFormatError,
    DataRangeError,
    DivergenceError,
    EmptyDatasetError,
    EnumerationLimitError,
    ModelFormatError,
    ShapeError,
)
from .presets import PRESETS, format_checks, get_preset, preset_layer, repro

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

COMMANDS = ("train", "sample", "profile", "baseline", "repro")
MODEL_COMMANDS = ("sample", "profile", "baseline")

log = logging.getLogger("kaleido")


def _field_flags(parser):
    group = parser.add_argument_group("config overrides")
    group.add_argument("--seed", dest="o:seed", metavar="INT", help=f"master seed (default {DEFAULTS['seed']})")
    group.add_argument("--out", dest="o:out", metavar="DIR", help=f"output root (default {DEFAULTS['out']!r})")
    for section, fields in DEFAULTS.items():
        if not isinstance(fields, dict):
            continue
        for key, default in fields.items():
            group.add_argument(
                f"--{section}.{key}", dest=f"o:{section}.{key}", metavar="VALUE",
                help=f"default: {default!r}",
            )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kaleido",
        description="Train self-reconstructing MLPs and sample by iterating them.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "train": "fit a model to a dataset",
        "sample": "run sampling chains from a trained model",
        "profile": "sweeps, corner scan and step metric of a trained model",
        "baseline": "gradient descent on the input of a trained model",
        "repro": "run a named preset end to end and score it",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        if name == "repro":
            p.add_argument("preset", help="one of: " + ", ".join(PRESETS))
        else:
            p.add_argument("--preset", help="start from a preset's config: " + ", ".join(PRESETS))
        if name in MODEL_COMMANDS:
            p.add_argument("--model", help="model.json written by 'train'")
        if name == "profile":
            p.add_argument("--flatness", action="store_true",
                           help="train models on random data and write the corner-loss curve")
        p.add_argument("--config", help="JSON config file or a run manifest to replay")
        _field_flags(p)
    return parser


def flag_layer(args):
    """Collect explicitly given ``--section.field`` flags into a config layer."""
    layer = {}
    for dest, text in vars(args).items():
        if not dest.startswith("o:") or text is None:
            continue
        name = dest[2:]
        if "." in name:
            section, key = name.split(".", 1)
            layer.setdefault(section, {})[key] = parse_value(section, key, text)
        else:
            layer[name] = parse_value(None, name, text)
    return layer


def resolve_args(args):
    preset = args.preset
    pl = preset_layer(preset) if preset else None
    fl = load_config_file(args.config) if args.config else None
    return resolve(pl, fl, flag_layer(args))


def _run(args):
    if args.command == "repro":
        get_preset(args.preset)
    cfg = resolve_args(args)
    if args.command == "train":
        run_dir, report = C.cmd_train(cfg)
        print(f"final_loss={report.final_loss:.6g} converged={str(report.converged).lower()} "
              f"epochs={report.epochs_run}")
    elif args.command == "sample":
        run_dir, trajs = C.cmd_sample(cfg, args.model)
        settled = sum(t.burn_in is not None for t in trajs)
        print(f"chains={len(trajs)} burned_in={settled}")
    elif args.command == "profile":
        run_dir, _ = C.cmd_profile(cfg, args.model, flatness=args.flatness or args.preset == "fig6")
    elif args.command == "baseline":
        run_dir, trajs = C.cmd_baseline(cfg, args.model)
        print(f"chains={len(trajs)}")
    else:
        run_dir, checks = repro(args.preset, cfg)
        print(format_checks(checks))
        print(run_dir)
        return EXIT_OK if all(c.passed for c in checks if c.scored) else EXIT_CHECKS_FAILED
    print(run_dir)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except DivergenceError as exc:
        print(f"kaleido: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, DataFormatError, ModelFormatError) as exc:
        print(f"kaleido: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeError, EnumerationLimitError, EmptyDatasetError, DataRangeError) as exc:
        print(f"kaleido: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
