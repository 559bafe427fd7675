"""Command-line entry point: ``samglab {sample,energy-maps,verify,ablate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import OUT_ENV, ConfigError, load_config, parse_seeds
from .scoremodel import mixture_hessian


def _flipped_hessian(*args, **kwargs):
    return -mixture_hessian(*args, **kwargs)


FAULTS = {"flip-hessian": _flipped_hessian}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config (defaults built in)")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./samglab-out)")
    common.add_argument("--seeds", help="seed range a..b (inclusive) or a single seed")
    common.add_argument("--threads", type=int, help="concurrent (config, seed) cells")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="samglab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="run every guidance config for every seed")
    sub.add_parser("energy-maps", parents=[common], help="dump per-step energy and omega maps")
    v = sub.add_parser("verify", parents=[common], help="run the numerical verification suite")
    v.add_argument("--only", help=f"comma-separated subset of: {','.join(ex.CHECKS)}")
    v.add_argument("--fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    sub.add_parser("ablate", parents=[common], help="guidance-scale / bounds / kernel ablation")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.out)
        if args.seeds:
            cfg.seeds = parse_seeds(args.seeds)
        if args.threads:
            cfg.threads = args.threads
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "sample":
        summary = ex.cmd_sample(cfg)
        for name, agg in summary.items():
            print(f"{name}: align={agg['alignment_rate']:.4f} "
                  f"dist={agg['mean_distance']:.4f} off={agg['off_manifold_rate']:.4f}")
        return 0

    if args.command == "energy-maps":
        try:
            stats = ex.cmd_energy_maps(cfg)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        min_ratio = float(cfg.energy.get("min_ratio", 5.0))
        print(f"wrote {2 * len(stats.paths)} maps to {out / 'maps'}")
        print(f"late-step energy inside={stats.inside_mean:.6g} outside={stats.outside_mean:.6g} "
              f"ratio={stats.ratio:.6g} (over last {stats.n_late} steps)")
        if stats.ratio == stats.ratio and stats.ratio < min_ratio:
            print(f"FAIL: ratio below {min_ratio}", file=sys.stderr)
            return 1
        return 0

    if args.command == "verify":
        only = [s.strip() for s in args.only.split(",")] if args.only else None
        hess = FAULTS[args.fault] if args.fault else mixture_hessian
        try:
            reports = ex.run_verification(only, params=cfg.verify, hessian_fn=hess)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        ex.write_verify_csv(out / "verify.csv", reports)
        for r in reports:
            status = "PASS" if r.passed else "FAIL"
            print(f"{status} {r.name:<10} tested={r.tested} violations={r.violations} "
                  f"skipped={r.skipped} max_slack={r.max_slack:.3g}")
        return 0 if all(r.passed for r in reports) else 1

    try:
        rows = ex.cmd_ablate(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{'config':<24} {'align':>8} {'dist':>8} {'hi-E dist':>10}  dominated")
    for r in rows:
        print(f"{r.label:<24} {r.alignment_rate:8.4f} {r.mean_distance:8.4f} "
              f"{r.high_energy_distance:10.4f}  {r.dominated_by or '-'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
