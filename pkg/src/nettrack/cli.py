"""Command-line entry point: ``nettrack {simulate,beampattern,pcrb,validate-fim}``.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
Errors are reported as a single ``key=value`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._linalg import PINV_CUTOFF, NumericalError
from .beamform import beampattern
from .harness import BlockError, MODES, fim_validation, genie_run, monte_carlo
from .io import write_beampattern, write_blocks, write_manifest, write_pcrb, write_rmse
from .scenario import ConfigError, load_scenario


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nettrack", description="Networked multi-target tracking with PCRB-optimal beams.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario TOML file")
        sp.add_argument("--out", default=".", help="output directory")

    s = sub.add_parser("simulate", help="closed-loop tracking run(s)")
    common(s)
    s.add_argument("--mode", choices=MODES, default="optimized")
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--genie", action="store_true",
                   help="share beams optimized along the noise-free trajectory across trials")

    b = sub.add_parser("beampattern", help="transmit beampatterns along the noise-free trajectory")
    common(b)
    b.add_argument("--blocks", default="0", help="comma-separated 0-based block indices")
    b.add_argument("--resolution", type=float, default=1.0, help="angle grid step in degrees")
    b.add_argument("--mode", choices=MODES, default="optimized")

    c = sub.add_parser("pcrb", help="PCRB per block along the noise-free trajectory")
    common(c)
    c.add_argument("--mode", choices=MODES, default="optimized")

    v = sub.add_parser("validate-fim", help="closed-form vs general FIM error table")
    common(v)
    v.add_argument("--geometries", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    return p


def _manifest(args, scenario, extra: dict) -> dict:
    sol = scenario.solver
    out = {
        "command": args.command,
        "scenario": str(Path(args.scenario).resolve()),
        "config_sha256": scenario.source_hash,
        "version": __version__,
        "numpy": np.__version__,
        "solver_mode": sol.mode,
        "gap_tol": sol.gap_tol,
        "barrier_factor": sol.barrier_factor,
        "max_outer": sol.max_outer,
        "rank_threshold": sol.rank_threshold,
        "pinv_cutoff": PINV_CUTOFF,
    }
    out.update(extra)
    return out


def _simulate(args, scenario, out: Path) -> dict:
    if args.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    Q = scenario.num_targets
    ref = genie_run(scenario, args.mode)
    res = monte_carlo(scenario, args.trials, args.mode, args.seed, genie=args.genie, reference=ref)
    write_blocks(out / "blocks.csv", res.first, Q)
    write_rmse(out / "rmse.csv", res)
    return {"mode": args.mode, "trials": args.trials, "seed": args.seed, "genie": args.genie}


def _beampattern(args, scenario, out: Path) -> dict:
    try:
        blocks = sorted({int(b) for b in args.blocks.split(",") if b.strip()})
    except ValueError:
        raise ConfigError("blocks", f"not a list of integers: {args.blocks!r}") from None
    if not blocks or blocks[0] < 0 or blocks[-1] >= scenario.num_blocks:
        raise ConfigError("blocks", f"indices must lie in 0..{scenario.num_blocks - 1}")
    if not args.resolution > 0:
        raise ConfigError("resolution", "must be positive")
    run = genie_run(scenario, args.mode, num_blocks=blocks[-1] + 1)
    deg = np.arange(-90.0, 90.0 + 1e-9, args.resolution)
    for n in blocks:
        for k in range(scenario.num_bs):
            g = beampattern(run.plans[n], scenario, k, np.deg2rad(deg))
            write_beampattern(out / f"beampattern_k{k}_n{n}.csv", deg, g)
    return {"mode": args.mode, "blocks": ",".join(map(str, blocks)), "resolution_deg": args.resolution}


def _pcrb(args, scenario, out: Path) -> dict:
    run = genie_run(scenario, args.mode)
    write_pcrb(out / "pcrb.csv", run.delta_x, run.delta_v)
    return {"mode": args.mode}


def _validate(args, scenario, out: Path) -> dict:
    rows = fim_validation(scenario, args.geometries, args.seed)
    with open(out / "fim_validation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "bs", "block", "rel_err"])
        for name, k, blk, err in rows:
            w.writerow([name, k, blk, repr(err)])
    worst = max(r[3] for r in rows)
    return {"geometries": args.geometries, "seed": args.seed, "max_rel_err": worst}


COMMANDS = {"simulate": _simulate, "beampattern": _beampattern, "pcrb": _pcrb, "validate-fim": _validate}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(f"error=usage message={str(exc)!r}", file=sys.stderr)
        return 2
    try:
        path = Path(args.scenario)
        if not path.is_file():
            raise ConfigError("scenario", f"no such file: {path}")
        scenario = load_scenario(path)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        extra = COMMANDS[args.command](args, scenario, out)
        extra["elapsed_s"] = time.perf_counter() - t0
        write_manifest(out / "manifest.txt", _manifest(args, scenario, extra))
    except ConfigError as exc:
        print(f"error=config field={exc.field} message={str(exc)!r}", file=sys.stderr)
        return 2
    except BlockError as exc:
        print(f"error=numerical block={exc.block} message={str(exc.cause)!r}", file=sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"error=numerical block=-1 message={str(exc)!r}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
