"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file-format error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import CmlabError, ConfigError
from .config import load_config
from .sweep import decode_trace, gen_trace, run_air_sweep, run_ber_sweep

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--scheme", choices=("ttcm", "ldpc"))
    p.add_argument("--ns", dest="n_s", type=int, choices=(21600, 64800))
    p.add_argument("--iters", dest="iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--interleaver-seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def _sweep_flags(p: argparse.ArgumentParser):
    p.add_argument("--snr-start", type=float)
    p.add_argument("--snr-stop", type=float)
    p.add_argument("--snr-step", type=float)
    p.add_argument("--snr-list", help="explicit comma-separated SNR grid in dB")
    p.add_argument("--codewords", type=int)
    p.add_argument("--max-codewords", type=int)
    p.add_argument("--min-errors", type=int)
    p.add_argument("--air-codewords", type=int)
    p.add_argument("--no-early-stop", dest="early_stop", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmlab", description="Coded-modulation BER and AIR simulations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, text in (("ber-sweep", "post-FEC BER waterfall over an SNR grid"),
                       ("air-sweep", "MI, GMI and post-FEC AIRs over an SNR grid")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _sweep_flags(p)

    p = sub.add_parser("gen-trace", help="write synthetic AWGN traces to a trace file")
    _common(p)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("decode-trace", help="decode a trace file and report all metrics")
    _common(p)
    p.add_argument("trace", help="trace file")
    p.add_argument("--realizations", type=int)
    p.add_argument("--target-snr", type=float)
    p.add_argument("--min-errors", type=int)
    return parser


_SKIP = {"command", "config", "snr", "count", "trace"}


def _config_from(args):
    overrides = {k: v for k, v in vars(args).items() if k not in _SKIP}
    return load_config(args.config, **overrides)


def _print_row(row):
    print(
        f"{row['scheme']} snr={row['snr_db']:.3f} dB cw={row['n_codewords']} "
        f"pre={row['pre_fec_ber']:.3e} post={row['post_fec_ber']:.3e} "
        f"mi={row['mi']:.4f} gmi={row['gmi']:.4f} i_sd={row['i_sd']:.4f} i_hd={row['i_hd']:.4f}",
        flush=True,
    )


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config_from(args)
        if args.command == "ber-sweep":
            run_ber_sweep(cfg, _print_row)
        elif args.command == "air-sweep":
            run_air_sweep(cfg, _print_row)
        elif args.command == "gen-trace":
            if not cfg.out:
                raise ConfigError("gen-trace needs --out")
            gen_trace(cfg, args.snr, args.count, cfg.out)
            print(f"wrote {args.count} trace(s) to {cfg.out}")
        else:
            decode_trace(args.trace, cfg.scheme, cfg, _print_row)
    except ConfigError as exc:
        print(f"cmlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CmlabError, OSError, ValueError) as exc:
        print(f"cmlab: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
