"""``dmden <subcommand> --config <path> [--seed S] [--out <path>]``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, NumericError, ParameterError
from . import experiments as ex
from .config import KINDS, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("dmden")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmden", description="Diffusion-denoiser experiments on GMM priors.")
    p.add_argument("kind", choices=KINDS, metavar="subcommand", help=" | ".join(KINDS))
    p.add_argument("--config", required=True, help="plain-text config file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
    p.add_argument("--out", default=None, help="output path (overrides run.out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _default_out(kind: str) -> str:
    return {"train": "model.txt", "generate": "samples.txt"}.get(kind, f"{kind}.csv")


def run(kind: str, cfg) -> None:
    out = cfg.out or _default_out(kind)
    if kind == "train":
        # the checkpoint goes to --out; the loss history next to it
        _, rep = ex.run_train(cfg, checkpoint=out)
        rep.write(Path(out).with_suffix(".history.csv"))
        return
    if kind == "generate":
        _, rep = ex.run_generate(cfg, samples_path=out)
        rep.write(Path(out).with_suffix(".report.csv"))
        return
    drivers = {
        "snr-sweep": ex.run_snr_sweep, "t-sweep": ex.run_t_sweep, "trajectory": ex.run_trajectory,
        "mismatch": ex.run_mismatch, "resample-compare": ex.run_resample_compare,
        "lipschitz": ex.run_lipschitz, "bounds": ex.run_bounds, "bench": ex.run_bench,
    }
    drivers[kind](cfg).write(out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, kind=args.kind, seed=args.seed, out=args.out)
        run(args.kind, cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"dmden: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ArithmeticError) as exc:
        print(f"dmden: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"dmden: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
