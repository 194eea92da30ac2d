"""Command-line entry point: nanolume {g2,lifetime,saturation,antenna,modes}."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, presets
from . import pipeline as PL
from .lsq import FitError

log = logging.getLogger("nanolume")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_ERROR = 2

ANTENNA_KEYS = {"cell_nm", "lateral_nm", "bulk_lateral_nm", "substrate_nm", "air_nm", "pml_cells", "courant",
                "max_steps", "decay", "box_half_cells", "top_gap_cells", "wavelengths_nm", "na", "scene",
                "polarizations", "include_bulk", "include_reference", "bulk_depth_nm", "far_field_csv",
                "rng_seed"}
SCENE_KEYS = {"radius_nm", "height_nm", "n_structure", "n_substrate", "n_background", "dipole_offset_nm"}


# -- config handling -------------------------------------------------------------

def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(command: str, preset: str | None, config_path: str | None) -> dict:
    cfg: dict = {}
    if preset:
        cmd, cfg = presets.get(preset)
        if cmd != command:
            raise PL.ConfigError(f"preset {preset!r} belongs to the {cmd!r} subcommand")
    if config_path:
        with open(config_path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise PL.ConfigError("config file must hold a JSON object")
        cfg = deep_merge(cfg, user)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("NANOLUME_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise PL.ConfigError(f"NANOLUME_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise PL.ConfigError("thread count must be >= 1")
    return n


class Output:
    """Writes files into the output directory with a provenance header."""

    def __init__(self, out_dir, command, cfg, seed):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.dir, os.W_OK):
            raise PL.ConfigError(f"output directory {self.dir} is not writable")
        self.provenance = {"tool": "nanolume", "version": __version__, "command": command,
                           "config_sha256": config_hash(cfg), "seed": int(seed)}
        self.written = []

    @property
    def header(self):
        p = self.provenance
        return [f"nanolume {p['version']} {p['command']}", f"config_sha256 {p['config_sha256']}",
                f"seed {p['seed']}"]

    def path(self, name):
        p = self.dir / name
        self.written.append(p)
        return p

    def json(self, name, payload):
        payload = dict(payload)
        payload["provenance"] = self.provenance
        with open(self.path(name), "w") as fh:
            json.dump(_plain(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv(self, name, columns, rows):
        with open(self.path(name), "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# -- subcommands ------------------------------------------------------------------

def cmd_g2(cfg, seed, threads, out: Output) -> bool:
    from .hbt import write_histogram

    run = PL.run_g2(cfg, seed, threads)
    write_histogram(out.path("g2_histogram.csv"), run.histogram, out.header,
                    extra_meta={"provenance": out.provenance})
    out.written.append(out.dir / "g2_histogram.json")
    rep = run.fit.report("three_level_g2_diluted")
    rep["truth"] = {"pump_rate": run.params.pump_rate, "radiative_rate": run.params.radiative_rate,
                    "shelving_rate": run.params.shelving_rate, "deshelving_rate": run.params.deshelving_rate}
    rep["detected_rate_per_s"] = run.detected_rate_per_s
    out.json("g2_fit.json", rep)
    f = run.fit
    log.info("g2(0) fitted %.3f, max %.3f, converged %s", f.extra["g2_zero"], f.extra["g2_max"], f.converged)
    return bool(f.converged)


def cmd_lifetime(cfg, seed, threads, out: Output) -> bool:
    lr = PL.run_lifetime(cfg, seed, threads)
    out.csv("lifetime_rates.csv", ["power_uw", "dip_rate_per_ns", "dip_rate_err_per_ns", "fit_converged"],
            [(p, r, e, int(run.fit.converged)) for p, r, e, run in zip(lr.powers_uw, lr.dip_rates, lr.dip_errors, lr.runs)])
    rep = lr.fit.report("linear_dip_rate")
    out.json("lifetime_fit.json", rep)
    log.info("lifetime %.3f +- %.3f ns", lr.fit.extra["lifetime_ns"], lr.fit.extra["lifetime_err_ns"])
    ok = lr.fit.converged and all(r.fit.converged for r in lr.runs) and "unphysical" not in lr.fit.flags
    return bool(ok)


def cmd_saturation(cfg, seed, threads, out: Output) -> bool:
    runs = PL.run_saturation(cfg, seed, threads)
    reports = {}
    ok = True
    for name, run in runs.items():
        f = run.fit
        model = f["I_sat"] * run.powers_uw / (run.powers_uw + f["P_sat"])
        out.csv(f"saturation_{name}.csv", ["power_uw", "raw_cps", "background_cps", "net_cps", "fit_cps"],
                [(p, r, b, r - f["bg_slope"] * p, m) for p, r, b, m in
                 zip(run.powers_uw, run.raw_cps, run.background_cps, model)])
        rep = f.report("saturation")
        rep["truth"] = run.truth
        reports[name] = rep
        ok = ok and f.converged
        log.info("%s: I_sat %.4g cps, P_sat %.4g uW", name, f["I_sat"], f["P_sat"])
    payload = {"devices": reports}
    comp = PL.saturation_comparison(runs)
    if comp is not None:
        payload["comparison"] = comp
    out.json("saturation_fit.json", payload)
    return bool(ok)


def _antenna_config(cfg):
    from .fdtd.antenna import AntennaConfig
    from .fdtd.grid import Scene

    unknown = set(cfg) - ANTENNA_KEYS
    if unknown:
        raise PL.ConfigError(f"unknown antenna config keys: {sorted(unknown)}")
    fields = {k: cfg[k] for k in AntennaConfig.__dataclass_fields__ if k in cfg and k != "threads"}
    if "wavelengths_nm" in fields:
        fields["wavelengths_nm"] = tuple(float(x) for x in fields["wavelengths_nm"])
    acfg = AntennaConfig(**fields)
    sc = cfg.get("scene", {})
    bad = set(sc) - SCENE_KEYS
    if bad:
        raise PL.ConfigError(f"unknown scene keys: {sorted(bad)}")
    if "dipole_offset_nm" in sc:
        sc = dict(sc, dipole_offset_nm=tuple(float(v) for v in sc["dipole_offset_nm"]))
    scene = Scene(kind="nanowire", **sc)
    pols = list(cfg.get("polarizations", ["s", "p"]))
    if not pols or set(pols) - {"s", "p"}:
        raise PL.ConfigError("polarizations must be a non-empty subset of ['s', 'p']")
    return acfg, scene, pols


def cmd_antenna(cfg, seed, threads, out: Output) -> bool:
    from dataclasses import replace

    from .fdtd import analysis as A
    from .fdtd import antenna as T
    from .fdtd.grid import InstabilityError
    from .fdtd.io import write_far_field_csv, write_spectrum_csv

    acfg, scene, pols = _antenna_config(cfg)
    acfg = replace(acfg, threads=threads)
    with_ref = bool(cfg.get("include_reference", True))
    ok = True
    report: dict = {"config": acfg.to_dict(), "nanowire": {}}
    try:
        results = {p: T.simulate(scene.with_polarization(p), acfg, with_ref) for p in pols}
        bulk = None
        if cfg.get("include_bulk", True):
            bulk = T.bulk_reference(acfg, float(cfg.get("bulk_depth_nm", 1000.0)), scene.n_substrate)
    except InstabilityError as exc:
        raise RuntimeError(f"FDTD run unstable: {exc}") from exc
    for p, r in results.items():
        write_spectrum_csv(out.path(f"antenna_{p}.csv"), r.wavelengths, r.power.total, r.purcell, r.eta, out.header)
        if cfg.get("far_field_csv", True) and r.far_field is not None:
            write_far_field_csv(out.path(f"far_field_{p}.csv"), r.far_field, out.header)
        ff = r.far_field
        report["nanowire"][p] = {
            "eta": r.eta, "purcell": r.purcell, "steps": r.run.steps, "decayed": r.run.decayed,
            "power_route_mismatch": float(r.power.mismatch().max()),
            "hemisphere_over_plane_flux": ff.upward / ff.plane_flux if ff is not None else None,
            "notes": r.notes,
        }
        ok = ok and r.run.decayed
    lam = results[pols[0]].wavelengths
    report["wavelengths_nm"] = lam
    report["na"] = acfg.na
    report["theta_na_deg"] = A.na_angle_deg(acfg.na)
    if set(pols) == {"s", "p"}:
        pair = {p: results[p] for p in ("s", "p")}
        eta_avg = T.averaged_eta(pair)
        report["nv_average_eta"] = eta_avg
        if with_ref:
            f_avg = T.averaged_purcell(pair)
            report["nv_average_purcell"] = f_avg
            report["predicted_lifetime_ns"] = PL.predicted_lifetime(f_avg)
    if bulk is not None:
        report["bulk"] = {}
        for p, r in bulk.items():
            write_spectrum_csv(out.path(f"bulk_{p}.csv"), r.wavelengths, r.power.total, None, r.eta, out.header)
            report["bulk"][p] = {"eta": r.eta, "steps": r.run.steps, "decayed": r.run.decayed, "notes": r.notes}
            ok = ok and r.run.decayed
        bulk_avg = T.averaged_eta(bulk)
        report["bulk_average_eta"] = bulk_avg
        if "nv_average_eta" in report:
            report["nanowire_to_bulk_ratio"] = report["nv_average_eta"] / bulk_avg if bulk_avg > 0 else None
    out.json("antenna_report.json", report)
    return bool(ok)


def cmd_modes(cfg, seed, threads, out: Output) -> bool:
    from .modes import mode_table

    radii = cfg.get("radii_nm", [50.0, 75.0, 100.0, 125.0, 150.0, 200.0])
    lams = cfg.get("wavelengths_nm", [637.0, 700.0, 780.0])
    rows = mode_table(radii, lams, float(cfg.get("n_core", 2.4)), float(cfg.get("n_clad", 1.0)))
    out.csv("modes.csv", ["a_nm", "lambda_nm", "V", "n_eff"],
            [(r["a_nm"], r["lambda_nm"], r["V"], r["n_eff"]) for r in rows])
    return True


COMMANDS = {"g2": cmd_g2, "lifetime": cmd_lifetime, "saturation": cmd_saturation,
            "antenna": cmd_antenna, "modes": cmd_modes}


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nanolume", description=__doc__)
    ap.add_argument("--version", action="version", version=f"nanolume {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (merged over the preset)")
    common.add_argument("--preset", help="named preset, e.g. fig3a")
    common.add_argument("--seed", type=_u64, help="RNG seed (overrides rng_seed in the config)")
    common.add_argument("--out", default="nanolume_out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: $NANOLUME_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"g2": "simulate and fit an HBT g2 measurement",
             "lifetime": "g2 at several powers and zero-power lifetime extrapolation",
             "saturation": "L-L curve sweep and saturation fit",
             "antenna": "FDTD collection efficiency and Purcell factor",
             "modes": "HE11 effective-index table"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = resolve_threads(args.threads)
        cfg = resolve_config(args.command, args.preset, args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("rng_seed", 0))
        if not 0 <= seed < 2**64:
            raise PL.ConfigError("rng_seed must be an unsigned 64-bit integer")
        cfg = dict(cfg, rng_seed=seed)
        out = Output(args.out, args.command, cfg, seed)
        ok = COMMANDS[args.command](cfg, seed, threads, out)
    except (PL.ConfigError, FitError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"nanolume {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for p in out.written:
        print(p)
    if not ok:
        print(f"nanolume {args.command}: a fit did not converge or a run did not finish cleanly",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
