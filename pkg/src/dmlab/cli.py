"""Config-driven experiment runner.

Subcommands:
  certify   full certification run -> report.json, directions.csv, manifest.json
  critdim   critical-dimension estimate -> one CSV line on stdout
  diagnose  multi-trial structural diagnostics -> diagnostics.csv, decomposition.csv
  baseline  identity-map gap trials -> gap.csv

Every run writes a manifest (config hash, tool version, seed, timestamps,
output paths) and renders summary figures next to the delimited output.
Replaying a command with the same config and seed reproduces the CSV/JSON
bytes exactly, for any worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, certify as certify_mod, ensemble, normspace, plots, structure
from ._util import canonical_json, fmt17, mix64, ordered_map, write_csv
from .certify import CertifyAbort, CertifyConfig, ConfigError
from .ensemble import NumericalError
from .normspace import NormSpace
from .randsrc import DistributionSpec, RngStream, sample_sphere

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_ASSERT = 3


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _resolve_workers(args) -> int:
    if getattr(args, "workers", None):
        return max(1, args.workers)
    env = os.environ.get("DMLAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"DMLAB_WORKERS must be an integer, got {env!r}") from exc
    return 1


def _space_from_config(entry: dict, base_dir: Path) -> dict:
    """Normalize a space config; max-dot rows may be a CSV path of functionals."""
    if not isinstance(entry, dict) or "family" not in entry:
        raise ConfigError("space config must be an object with a 'family' field")
    entry = dict(entry)
    if entry["family"] == "max-dot" and isinstance(entry.get("rows"), str):
        path = base_dir / entry["rows"]
        try:
            rows = np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read functionals CSV {path}: {exc}") from exc
        entry["rows"] = rows.tolist()
    return entry


def _manifest(command: str, config_obj, seed: int, workers: int, started: str,
              wall_ms: float, outputs: list[str], extra: dict | None = None) -> dict:
    digest = hashlib.sha256(canonical_json(config_obj).encode()).hexdigest()
    man = {
        "command": command,
        "config_sha256": digest,
        "tool_version": __version__,
        "seed": seed,
        "workers": workers,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "wall_ms": wall_ms,
        "outputs": outputs,
    }
    if extra:
        man.update(extra)
    return man


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def cmd_certify(args) -> int:
    started = _now()
    t0 = time.perf_counter()
    raw = _load_json(args.config)
    raw.pop("trials", None)
    if "space" in raw:
        raw["space"] = _space_from_config(raw["space"], Path(args.config).parent)
    if args.seed is not None:
        raw["seed"] = args.seed
    workers = _resolve_workers(args)
    config = CertifyConfig.from_dict(raw)

    report = certify_mod.certify(config, workers=workers)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(canonical_json(report.json_dict()))
    write_csv(out / "directions.csv", ["index", "psi"], report.per_direction)
    thr = config.resolved_thresholds(report.e_g_norm.mean)
    plots.render_oscillation(report.per_direction, report.lam, thr["osc_max"],
                             out / "oscillation.png")
    outputs = ["report.json", "directions.csv", "oscillation.png", "manifest.json"]
    man = _manifest("certify", config.to_dict(), config.seed, workers, started,
                    (time.perf_counter() - t0) * 1000.0, outputs,
                    {"d_mode": report.d_mode, "passed": report.passed})
    (out / "manifest.json").write_text(canonical_json(man))

    if args.assert_flags and not report.passed:
        failed = [k for k, ok in report.flags.items() if not ok]
        print(f"assertion failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def _family_label(space: NormSpace) -> str:
    if space.family == "lp":
        return "linf" if math.isinf(space.p) else f"l{space.p:g}"
    return "max-dot"


def cmd_critdim(args) -> int:
    raw = _load_json(args.config)
    entry = raw.get("space", raw)
    space = NormSpace.from_dict(_space_from_config(entry, Path(args.config).parent))
    gauss = normspace.expected_gauss_norm(space, args.samples, RngStream(args.seed, 0).child(10))
    est = normspace.critical_dimension(space, gauss)
    print("family,n,dstar,stderr,method")
    print(f"{_family_label(space)},{space.n},{fmt17(est.value)},{fmt17(est.stderr)},{gauss.method}")
    return EXIT_OK


def _diagnose_trial(trial: int, cfg: CertifyConfig, space: NormSpace, s: int, r: int,
                    phi_value: float, profile) -> tuple[tuple, list[tuple]]:
    tseed = mix64(cfg.seed, trial)
    troot = RngStream(tseed, 0)
    g = ensemble.draw_gamma(cfg.d, cfg.m, cfg.xspec, troot.child(1))
    dirs = sample_sphere(cfg.d, troot.child(2), size=cfg.probe_dirs)
    rho_rep = ensemble.rho(g)
    h_val = structure.h_sm(g, s, dirs, refine=cfg.h_sm_refine)
    rearr = structure.rearrangement_deviation(g, dirs, profile)
    w2d = structure.pair_w2_diameter(g, dirs) if cfg.probe_dirs >= 2 else 0.0
    diag = (trial, tseed, cfg.d, cfg.m, rho_rep.rho, h_val, rearr, w2d)

    dr = ensemble.draw_D(cfg.n, cfg.m, cfg.zspec, troot.child(3), mode=cfg.d_storage)
    cnorms = structure.column_norms(dr, space)
    dec_rows = []
    for j, u in enumerate(dirs):
        dec = structure.decompose(g, dr, space, u, s, r, phi_value, col_norms=cnorms)
        dec_rows.append((trial, j,
                         normspace.norm(space, dec.clubs),
                         normspace.norm(space, dec.diamonds),
                         normspace.norm(space, dec.hearts),
                         dec.xi, dec.j_outside_count))
    return diag, dec_rows


def cmd_diagnose(args) -> int:
    started = _now()
    t0 = time.perf_counter()
    raw = _load_json(args.config)
    trials = int(raw.pop("trials", 20))
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if "space" in raw:
        raw["space"] = _space_from_config(raw["space"], Path(args.config).parent)
    if args.seed is not None:
        raw["seed"] = args.seed
    workers = _resolve_workers(args)
    cfg = CertifyConfig.from_dict(raw)
    space = NormSpace.from_dict(cfg.space)
    if space.n != cfg.n:
        raise ConfigError("space dimension must equal n")

    root = RngStream(cfg.seed, 0)
    gauss = normspace.expected_gauss_norm(space, cfg.gauss_samples, root.child(10))
    dstar = normspace.critical_dimension(space, gauss).value
    s = cfg.s if cfg.s is not None else structure.default_s(dstar, cfg.m)
    r = cfg.r if cfg.r is not None else structure.default_r(cfg.epsilon, dstar, s)
    phi_value = normspace.phi(space, gauss, r, cfg.m, cfg.phi_scale)
    profile_n = cfg.profile_samples or max(1_000_000, 100 * cfg.m)
    profile = structure.quantile_profile(cfg.xspec, True, cfg.m, profile_n, root.child(6))

    results = ordered_map(
        lambda t: _diagnose_trial(t, cfg, space, s, r, phi_value, profile),
        list(range(trials)), workers)
    diag_rows = [res[0] for res in results]
    dec_rows = [row for res in results for row in res[1]]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "diagnostics.csv",
              ["trial", "seed", "d", "m", "rho", "h_sm", "rearr_dev", "w2_diam"], diag_rows)
    write_csv(out / "decomposition.csv",
              ["trial", "direction", "norm_clubs", "norm_diamonds", "norm_hearts",
               "xi", "j_size"], dec_rows)
    plots.render_diagnostics(diag_rows, out / "diagnostics.png")
    plots.render_decomposition(dec_rows, out / "decomposition.png")
    outputs = ["diagnostics.csv", "decomposition.csv", "diagnostics.png",
               "decomposition.png", "manifest.json"]
    man = _manifest("diagnose", {**cfg.to_dict(), "trials": trials}, cfg.seed, workers,
                    started, (time.perf_counter() - t0) * 1000.0, outputs)
    (out / "manifest.json").write_text(canonical_json(man))
    return EXIT_OK


def cmd_baseline(args) -> int:
    started = _now()
    t0 = time.perf_counter()
    if args.n < 1 or args.m < 1 or args.trials < 1:
        raise ConfigError("n, m, trials must be >= 1")
    if args.space:
        entry = _load_json(args.space)
        space = NormSpace.from_dict(_space_from_config(entry.get("space", entry),
                                                       Path(args.space).parent))
        if space.n != args.n:
            raise ConfigError("space dimension must equal n")
    else:
        space = NormSpace.lp(math.inf, args.n)
    zspec = DistributionSpec(f"{args.zspec}-iid", dim=args.n)
    workers = _resolve_workers(args)

    def one(trial: int) -> tuple:
        tseed = mix64(args.seed, trial)
        gap = certify_mod.baseline_gap(args.n, args.m, space, zspec, RngStream(tseed, 0))
        return (trial, tseed, args.n, args.m, gap)

    rows = ordered_map(one, list(range(args.trials)), workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "gap.csv", ["trial", "seed", "n", "m", "gap"], rows)
    plots.render_gap([r[4] for r in rows], out / "gap.png")
    config_obj = {"n": args.n, "m": args.m, "zspec": zspec.to_dict(),
                  "trials": args.trials, "seed": args.seed,
                  "space": space.to_dict()}
    man = _manifest("baseline", config_obj, args.seed, workers, started,
                    (time.perf_counter() - t0) * 1000.0,
                    ["gap.csv", "gap.png", "manifest.json"])
    (out / "manifest.json").write_text(canonical_json(man))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"dmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cert = sub.add_parser("certify", help="run a full certification")
    p_cert.add_argument("--config", required=True, help="JSON run config")
    p_cert.add_argument("--out", required=True, help="output directory")
    p_cert.add_argument("--seed", type=int, default=None, help="override config seed")
    p_cert.add_argument("--workers", type=int, default=None)
    p_cert.add_argument("--assert", dest="assert_flags", action="store_true",
                        help="exit 3 if any pass flag is false")
    p_cert.set_defaults(func=cmd_certify)

    p_crit = sub.add_parser("critdim", help="estimate the critical dimension")
    p_crit.add_argument("--config", required=True, help="JSON file with a space config")
    p_crit.add_argument("--samples", type=int, default=100_000)
    p_crit.add_argument("--seed", type=int, default=0)
    p_crit.set_defaults(func=cmd_critdim)

    p_diag = sub.add_parser("diagnose", help="multi-trial structural diagnostics")
    p_diag.add_argument("--config", required=True)
    p_diag.add_argument("--out", required=True)
    p_diag.add_argument("--seed", type=int, default=None)
    p_diag.add_argument("--workers", type=int, default=None)
    p_diag.set_defaults(func=cmd_diagnose)

    p_base = sub.add_parser("baseline", help="identity-map gap trials")
    p_base.add_argument("--n", type=int, required=True)
    p_base.add_argument("--m", type=int, required=True)
    p_base.add_argument("--zspec", choices=("rademacher", "gaussian"), default="rademacher")
    p_base.add_argument("--trials", type=int, default=20)
    p_base.add_argument("--seed", type=int, default=0)
    p_base.add_argument("--out", required=True)
    p_base.add_argument("--space", default=None, help="optional JSON space config "
                        "(default: l-infinity of dimension n)")
    p_base.add_argument("--workers", type=int, default=None)
    p_base.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CertifyAbort, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
