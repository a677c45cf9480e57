"""Command-line entry point: `vaeq run`, `vaeq sweep`, `vaeq ingest`."""

import argparse
import dataclasses
import json
import sys

from .harness import ExperimentConfig, run_experiment, sweep
from .iqfile import ingest_iq


def _add_config_flags(parser):
    parser.add_argument("--config", help="config file (key=value lines)")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            parser.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                                default=None, metavar="BOOL")
        else:
            parser.add_argument(flag, type=type(f.default), default=None)


def _build_config(args):
    if args.config:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_text(fh.read())
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    return dataclasses.replace(cfg, **overrides)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="vaeq",
                                     description="Blind VAE-based MIMO equalization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment configuration")
    _add_config_flags(p_run)
    p_run.add_argument("--seed", type=int, default=None, help="alias for --base-seed")

    p_sweep = sub.add_parser("sweep", help="run one experiment per value of a config field")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated numeric values")

    p_ingest = sub.add_parser("ingest", help="validate an IQ capture file")
    p_ingest.add_argument("path")
    p_ingest.add_argument("--channels", type=int, default=None)
    p_ingest.add_argument("--sps", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "ingest":
            meta = None
            if args.channels is not None and args.sps is not None:
                meta = {"channels": args.channels, "sps": args.sps}
            seq, bits = ingest_iq(args.path, meta)
            print(json.dumps({
                "channels": seq.n_channels,
                "samples_per_channel": seq.data.shape[1],
                "sps": seq.sps,
                "has_bits": bits is not None,
            }, indent=2))
            return 0

        if args.seed is not None:
            args.base_seed = args.seed
        cfg = _build_config(args)
        if args.command == "run":
            summary = run_experiment(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
        else:
            values = [float(v) for v in args.values.split(",")]
            for s in sweep(cfg, args.axis, values):
                print(json.dumps(s, indent=2, sort_keys=True))
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
