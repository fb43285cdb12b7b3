"""Command-line entry point: ``zakofdm {run,sweep,selftest,probe}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channel import ChannelPath, PathSet, draw_tdl_realization, effective_dd_channel, load_tdl_profile
from .estimation import LayoutError
from .harness import ScenarioError, load_config, run_point, scenarios_from_config, sweep
from .ofdm import OfdmConfig
from .selftest import run_all
from .zak import FilterSpec, UnconstrainedChain, UnconstrainedConfig, ZakConfig, ZakOfdmChain

log = logging.getLogger("zakofdm")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override base_seed")
    p.add_argument("--trials", type=int, default=None, help="override trials per point")
    p.add_argument("--out-dir", type=Path, default=None, help="directory for result files")
    p.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zakofdm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every point of a config and print aggregates as JSON")
    p_run.add_argument("config", type=Path)
    _common(p_run)

    p_sweep = sub.add_parser("sweep", help="resumable sweep writing results.csv and manifest.json")
    p_sweep.add_argument("config", type=Path)
    _common(p_sweep)
    p_sweep.add_argument("--resume", action="store_true", help="reuse finished points in --out-dir")

    sub.add_parser("selftest", help="check the transform and modem identities")

    p_probe = sub.add_parser("probe", help="print the effective DD channel of a chain")
    p_probe.add_argument("--waveform", choices=("zak_over_cpofdm", "zak_unconstrained"), default="zak_over_cpofdm")
    p_probe.add_argument("--m", type=int, required=True)
    p_probe.add_argument("--n", type=int, required=True)
    p_probe.add_argument("--bandwidth-hz", type=float, required=True)
    p_probe.add_argument("--cp-s", type=float, default=0.0)
    p_probe.add_argument("--guard-s", type=float, default=0.0)
    p_probe.add_argument("--path", action="append", default=[], metavar="GAIN,DELAY_S,DOPPLER_HZ",
                         help="one channel path (repeatable); gain may be complex, e.g. 0.5+0.5j")
    p_probe.add_argument("--tdl", help="draw paths from a TDL profile name or file instead")
    p_probe.add_argument("--delay-scale-s", type=float, default=None)
    p_probe.add_argument("--nu-max-hz", type=float, default=0.0)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--prune-db", type=float, default=-40.0)
    return parser


def _parse_path(text: str) -> ChannelPath:
    try:
        gain, delay, doppler = text.split(",")
        return ChannelPath(complex(gain.replace(" ", "")), float(delay), float(doppler))
    except ValueError as exc:
        raise ScenarioError(f"--path {text!r}: expected GAIN,DELAY_S,DOPPLER_HZ ({exc})") from None


def _cmd_run(args) -> int:
    cfg, _ = load_config(args.config)
    summary = []
    for sc in scenarios_from_config(cfg):
        sc = replace(sc, base_seed=sc.base_seed if args.seed is None else args.seed,
                     trials=sc.trials if args.trials is None else args.trials)
        for tsnr in sc.tsnr_db:
            rep = run_point(sc, tsnr, threads=args.threads)
            summary.append({"scenario": rep.scenario, "waveform": rep.waveform, "M": rep.m, "N": rep.n,
                            "tsnr_db": rep.tsnr_db, "trials": rep.trials, "mean": rep.mean,
                            "stderr": rep.stderr, "feasibility": rep.feasibility})
    text = json.dumps(summary, indent=2, default=str)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "run.json").write_text(text)
    print(text)
    return 0


def _cmd_sweep(args) -> int:
    out = args.out_dir if args.out_dir is not None else Path("results")
    reports = sweep(args.config, out, seed=args.seed, trials=args.trials, threads=args.threads,
                    resume=args.resume, log=log.info)
    print(f"{len(reports)} points written to {out / 'results.csv'}")
    return 0


def _cmd_selftest(args) -> int:
    ok = True
    for check in run_all():
        status = "PASS" if check.passed else "FAIL"
        print(f"{status}  {check.name}  worst={check.worst:.3e}  tol={check.tol:.0e}")
        ok &= check.passed
    return 0 if ok else 1


def _cmd_probe(args) -> int:
    if args.tdl:
        profile = load_tdl_profile(args.tdl, args.delay_scale_s)
        ps = draw_tdl_realization(profile, args.nu_max_hz, np.random.default_rng(args.seed))
    elif args.path:
        ps = PathSet(tuple(_parse_path(p) for p in args.path))
    else:
        raise ScenarioError("probe: give --path at least once or --tdl")
    mn = args.m * args.n
    if args.waveform == "zak_over_cpofdm":
        ofdm = OfdmConfig.from_cp_duration(mn, args.bandwidth_hz / mn, args.cp_s)
        chain = ZakOfdmChain(ZakConfig(args.m, args.n, ofdm))
    else:
        guard = int(round(args.guard_s * args.bandwidth_hz))
        chain = UnconstrainedChain(UnconstrainedConfig(args.m, args.n, args.bandwidth_hz, guard), FilterSpec())
    taps = effective_dd_channel(ps, chain, prune_db=args.prune_db)
    print("k\tl\tabs\tphase_rad")
    for t in sorted(taps, key=lambda t: (t.k, t.l)):
        print(f"{t.k}\t{t.l}\t{abs(t.value):.6g}\t{math.atan2(t.value.imag, t.value.real):.6f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "selftest": _cmd_selftest, "probe": _cmd_probe}
    try:
        return handlers[args.command](args)
    except (ScenarioError, LayoutError, OSError) as exc:
        print(f"zakofdm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
