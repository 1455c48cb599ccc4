"""Command-line entry point: ``oamradcom <command> [options]``.

Every command writes its files into ``--out`` and a ``report.json`` with the
config echo.  Failures print one JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, channel_matrix, fisher_matrix, pcrb, rate_report
from .config import ConfigError, ScenarioConfig, from_dict, preset, read_json, to_dict
from .doppler import DopplerError, TrackerParams, spin_rates, target_spin_rates
from .forward import ForwardModelError, complex_normal, echo_cube
from .imaging import (ImagingError, SearchGrid, estimate_positions, freq_domain_spectrum,
                      mode_domain_spectrum, noise_subspace, sample_covariance)
from .numerics import NumericsError, stft
from .optimizer import InfeasibleError, OptimizerError, build_problem, optimize_weights
from .scene import SceneError, centroid_cartesian, unit_vector

COMMANDS = ("synth", "image", "spin", "pcrb", "rate", "optimize", "sweep")

# checked in order, so subclasses come first
EXIT_CODES = [
    (ConfigError, 2),
    (SceneError, 3),
    (ForwardModelError, 4),
    (NumericsError, 5),
    (ImagingError, 6),
    (DopplerError, 7),
    (AnalysisError, 8),
    (InfeasibleError, 10),
    (OptimizerError, 9),
]


def exit_code(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


@dataclass
class ExperimentReport:
    command: str
    config: dict
    version: str = __version__
    wall_clock: float = 0.0
    trials: list = field(default_factory=list)
    mse: dict = field(default_factory=dict)
    pcrb: dict = field(default_factory=dict)
    rate: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _rngs(sc: ScenarioConfig, trial: int, snr_index: int, n: int = 3):
    """Independent generators for one (trial, SNR) pair, split off the root seed."""
    root = np.random.SeedSequence(sc.seed, spawn_key=(trial, snr_index))
    return [np.random.default_rng(s) for s in root.spawn(n)]


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _write_json(path: Path, payload):
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _grid(sc: ScenarioConfig) -> SearchGrid:
    return SearchGrid(theta_min=sc.bounds.theta_min, theta_max=sc.bounds.theta_max)


def _n_scatterers(sc: ScenarioConfig) -> int:
    return sum(len(t.scatterers) for t in sc.targets)


# ---------------------------------------------------------------------------
# One Monte-Carlo trial
# ---------------------------------------------------------------------------

def run_trial(sc: ScenarioConfig, snr_index: int, trial: int, with_spin: bool = True) -> dict:
    """Image the scene and, optionally, estimate spin rates for one trial."""
    snr = sc.snr_db[snr_index]
    cfg = sc.at_snr(snr)
    rng_img, rng_slow, _ = _rngs(sc, trial, snr_index)
    cube = echo_cube(cfg, sc.targets, snapshots=sc.snapshots, rng=rng_img)
    rep = estimate_positions(cube, cfg, _n_scatterers(sc), _grid(sc), cues=sc.cues())
    rates = [np.nan] * len(rep.estimates)
    target_rates = [np.nan] * len(sc.targets)
    if with_spin:
        slow = echo_cube(cfg, sc.targets, duration=sc.duration, sample_rate=sc.sample_rate,
                         snapshots=1, rng=rng_slow, fluctuating=False)
        pos = [(e.r, e.theta, e.phi) for e in rep.estimates]
        spins = spin_rates(slow, cfg, pos, tracker=TrackerParams())
        rates = [s.estimate.rate for s in spins]
        target_rates = target_spin_rates(spins, [e.target for e in rep.estimates],
                                         len(sc.targets), omega_max=sc.bounds.omega_max)
    return {
        "snr_db": snr, "trial": trial,
        "estimates": [{"r": e.r, "theta": e.theta, "phi": e.phi, "target": e.target,
                       "rate": rates[i]} for i, e in enumerate(rep.estimates)],
        "target_rates": list(target_rates),
        "shortfall": rep.shortfall,
    }


def centroid_errors(sc: ScenarioConfig, result: dict) -> dict:
    """Squared errors of each target's centroid (nearest estimate) and spin rate."""
    out = {}
    for q, tg in enumerate(sc.targets):
        truth = centroid_cartesian(tg, 0.0)
        cands = [e for e in result["estimates"] if e["target"] == q]
        if cands:
            dist = [np.linalg.norm(e["r"] * unit_vector(e["theta"], e["phi"]) - truth)
                    for e in cands]
            e = cands[int(np.argmin(dist))]
            dphi = (e["phi"] - tg.azimuth + np.pi) % (2 * np.pi) - np.pi
            out[(q, "r")] = (e["r"] - tg.range) ** 2
            out[(q, "theta")] = (e["theta"] - tg.elevation) ** 2
            out[(q, "phi")] = dphi ** 2
        else:
            for name in ("r", "theta", "phi"):
                out[(q, name)] = np.nan
        out[(q, "omega")] = (result["target_rates"][q] - tg.spin_rate) ** 2
    return out


def _map_trials(sc: ScenarioConfig, jobs, with_spin: bool, workers: int):
    if workers <= 1:
        return [run_trial(sc, i, t, with_spin) for i, t in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_trial, sc, i, t, with_spin) for i, t in jobs]
        return [f.result() for f in futures]          # trial order, whatever finishes first


def _estimate_rows(results):
    rows = []
    for res in results:
        for k, e in enumerate(res["estimates"]):
            rows.append([res["snr_db"], res["trial"], k, e["target"], repr(float(e["r"])),
                         repr(float(np.rad2deg(e["theta"]))), repr(float(np.rad2deg(e["phi"]))),
                         repr(float(e["rate"]))])
    return rows


ESTIMATE_HEADER = ["snr_db", "trial", "scatterer", "target", "r_m", "theta_deg", "phi_deg",
                   "spin_rate"]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(sc, out: Path, args) -> ExperimentReport:
    cfg = sc.at_snr(sc.snr_db[0])
    rng_img, rng_slow, _ = _rngs(sc, 0, 0)
    cube = echo_cube(cfg, sc.targets, snapshots=sc.snapshots, rng=rng_img)
    slow = echo_cube(cfg, sc.targets, duration=sc.duration, sample_rate=sc.sample_rate,
                     snapshots=1, rng=rng_slow, fluctuating=False)
    np.savez_compressed(out / "echo_snapshots.npz", data=cube.data, times=cube.times)
    np.savez_compressed(out / "echo_slow_time.npz", data=slow.data, times=slow.times)
    return ExperimentReport("synth", to_dict(sc), extra={
        "snapshot_shape": list(cube.data.shape), "slow_time_shape": list(slow.data.shape),
        "mean_power": float(np.mean(np.abs(cube.data) ** 2))})


def _write_spectra(sc, cfg, cube, out: Path, qp: int):
    thetas = np.deg2rad(np.arange(np.ceil(np.rad2deg(sc.bounds.theta_min)),
                                  np.rad2deg(sc.bounds.theta_max) + 1e-9, 1.0))
    phis = np.deg2rad(np.arange(0.0, 360.0, 1.0))
    qn = noise_subspace(sample_covariance(cube, "w", 0), qp)
    spec = mode_domain_spectrum(cfg, qn, 0, thetas, phis)
    _write_csv(out / "spectrum_w.csv", ["w", "theta_deg", "phi_deg", "value"],
               [[0, repr(float(np.rad2deg(a))), repr(float(np.rad2deg(b))),
                 repr(float(spec.values[i, j]))]
                for i, a in enumerate(spec.axis1) for j, b in enumerate(spec.axis2)])
    ranges = np.arange(0.0, np.pi, 0.02)
    qn = noise_subspace(sample_covariance(cube, "u", 0), qp)
    spec = freq_domain_spectrum(cfg, qn, 0, ranges, thetas)
    _write_csv(out / "spectrum_u.csv", ["u", "range_wrapped_m", "theta_deg", "value"],
               [[0, repr(float(a)), repr(float(np.rad2deg(b))), repr(float(spec.values[i, j]))]
                for i, a in enumerate(spec.axis1) for j, b in enumerate(spec.axis2)])


def cmd_image(sc, out: Path, args) -> ExperimentReport:
    results = [run_trial(sc, i, 0, with_spin=False) for i in range(len(sc.snr_db))]
    _write_csv(out / "estimates.csv", ESTIMATE_HEADER, _estimate_rows(results))
    cfg = sc.at_snr(sc.snr_db[0])
    cube = echo_cube(cfg, sc.targets, snapshots=sc.snapshots, rng=_rngs(sc, 0, 0)[0])
    _write_spectra(sc, cfg, cube, out, _n_scatterers(sc))
    return ExperimentReport("image", to_dict(sc), trials=results)


def cmd_spin(sc, out: Path, args) -> ExperimentReport:
    results = [run_trial(sc, i, 0) for i in range(len(sc.snr_db))]
    _write_csv(out / "estimates.csv", ESTIMATE_HEADER, _estimate_rows(results))
    cfg = sc.at_snr(sc.snr_db[0])
    slow = echo_cube(cfg, sc.targets, duration=sc.duration, sample_rate=sc.sample_rate,
                     snapshots=1, rng=_rngs(sc, 0, 0)[1], fluctuating=False)
    u = int(np.nonzero(cfg.modes == 1)[0][0]) if 1 in cfg.modes else 0
    spec = stft(slow.data[u, 0, :, 0], sc.sample_rate, 128, 16)
    keep = np.abs(spec.freqs) <= args.max_freq
    _write_csv(out / f"spectrogram_{u}_0.csv", ["time_s", "freq_hz", "magnitude"],
               [[repr(float(t)), repr(float(f)), repr(float(spec.magnitudes[i, j]))]
                for i, f in enumerate(spec.freqs) if keep[i]
                for j, t in enumerate(spec.times)])
    table = {str(r["snr_db"]): {"rate": r["target_rates"],
                                "rate_over_pi": [v / np.pi for v in r["target_rates"]]}
             for r in results}
    return ExperimentReport("spin", to_dict(sc), trials=results, extra={"spin_rates": table})


def _pcrb_at(sc, snr):
    return pcrb(fisher_matrix(sc.at_snr(snr), sc.targets, sc.fisher_times()))


def cmd_pcrb(sc, out: Path, args) -> ExperimentReport:
    payload = {}
    for snr in sc.snr_db:
        cfg = sc.at_snr(snr)
        fm = fisher_matrix(cfg, sc.targets, sc.fisher_times())
        res = pcrb(fm)
        payload[str(snr)] = {"noise_variance": cfg.noise_variance, "pcrb": res.as_dict(),
                             "sum": float(np.sum(res.values)), "singular": res.singular,
                             "condition": res.condition, "unidentifiable": res.unidentifiable,
                             "fisher": fm.matrix}
    _write_json(out / "pcrb.json", payload)
    return ExperimentReport("pcrb", to_dict(sc), pcrb={k: v["pcrb"] for k, v in payload.items()})


def _rate_at(sc, snr_index):
    cfg = sc.at_snr(sc.snr_db[snr_index])
    h = channel_matrix(cfg, sc.targets[sc.comm.target])
    est = h
    if sc.comm.csi_error > 0:
        rng = _rngs(sc, 0, snr_index)[2]
        est = h + complex_normal(rng, h.shape, sc.comm.csi_error ** 2 * np.mean(np.abs(h) ** 2))
    return rate_report(cfg, h, est)


def cmd_rate(sc, out: Path, args) -> ExperimentReport:
    payload = {}
    for i, snr in enumerate(sc.snr_db):
        rep = _rate_at(sc, i)
        payload[str(snr)] = {"rate": rep.rate, "sinr": rep.sinr}
    _write_json(out / "rate.json", payload)
    return ExperimentReport("rate", to_dict(sc), rate={k: v["rate"] for k, v in payload.items()})


def cmd_optimize(sc, out: Path, args) -> ExperimentReport:
    cfg = sc.at_snr(sc.snr_db[0])
    problem = build_problem(cfg, sc.targets, sc.comm.target, sc.fisher_times())
    baseline = {"objective": float(problem.objective(cfg.weights)[0]),
                "rate": float(problem.rate(cfg.weights)[0])}
    res = optimize_weights(cfg, sc.targets, sc.comm.target, sc.comm.rate_min, sc.comm.grid_n,
                           problem=problem, seed=sc.seed, record=True)
    _write_csv(out / "optimize.csv", ["candidate", "weights", "objective", "rate", "feasible"],
               [[i, " ".join(repr(float(v)) for v in w), repr(obj), repr(rate), int(ok)]
                for i, w, obj, rate, ok in res.history])
    result = {"weights": res.weights, "objective": res.objective, "rate": res.rate,
              "evaluated": res.evaluated, "feasible": res.feasible, "method": res.method,
              "rate_min": sc.comm.rate_min, "grid_n": sc.comm.grid_n, "equal_weights": baseline}
    return ExperimentReport("optimize", to_dict(sc), extra={"optimization": result})


def cmd_sweep(sc, out: Path, args) -> ExperimentReport:
    jobs = [(i, t) for i in range(len(sc.snr_db)) for t in range(sc.trials)]
    results = _map_trials(sc, jobs, not args.no_spin, args.workers)
    _write_csv(out / "estimates.csv", ESTIMATE_HEADER, _estimate_rows(results))
    rows, mse_table, pcrb_table = [], {}, {}
    for i, snr in enumerate(sc.snr_db):
        errs = [centroid_errors(sc, r) for r in results if r["snr_db"] == snr]
        bound = _pcrb_at(sc, snr)
        mse_table[str(snr)], pcrb_table[str(snr)] = {}, {}
        for j, key in enumerate(bound.keys):
            if key[1] == "omega" and args.no_spin:
                continue
            vals = np.array([e[key] for e in errs], dtype=float)
            mse = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else np.nan
            name = f"{key[1]}{key[0]}"
            mse_table[str(snr)][name] = mse
            pcrb_table[str(snr)][name] = float(bound.values[j])
            rows.append([snr, name, repr(mse), repr(float(bound.values[j])),
                         int(np.sum(np.isfinite(vals)))])
    _write_csv(out / "mse_pcrb.csv", ["snr_db", "parameter", "mse", "pcrb", "trials"], rows)
    return ExperimentReport("sweep", to_dict(sc), trials=results, mse=mse_table, pcrb=pcrb_table)


HANDLERS = {"synth": cmd_synth, "image": cmd_image, "spin": cmd_spin, "pcrb": cmd_pcrb,
            "rate": cmd_rate, "optimize": cmd_optimize, "sweep": cmd_sweep}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _parse_list(text: str):
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oamradcom", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="scenario JSON file")
    src.add_argument("--preset", default=None, help="built-in scenario, e.g. paper-sec5")
    p.add_argument("--snr-db", type=_parse_list, help="SNR list in dB, e.g. '5,20'")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--rate-min", type=float)
    p.add_argument("--grid-n", type=int)
    p.add_argument("--workers", type=int, default=1, help="parallel trials for sweep")
    p.add_argument("--no-spin", action="store_true", help="sweep positions only")
    p.add_argument("--max-freq", type=float, default=100.0,
                   help="largest |f| kept in the spectrogram CSV (Hz)")
    return p


def load_scenario(args) -> ScenarioConfig:
    """Config file or preset with command-line overrides applied before validation."""
    if args.config:
        raw = read_json(args.config)
    else:
        raw = preset(args.preset or "paper-sec5")
    if args.snr_db is not None:
        raw["snr_db"] = args.snr_db
    for key in ("trials", "seed", "out"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    comm = dict(raw.get("comm", {}))
    if args.rate_min is not None:
        comm["rate_min"] = args.rate_min
    if args.grid_n is not None:
        comm["grid_n"] = args.grid_n
    if comm:
        raw["comm"] = comm
    return from_dict(raw)


def run(command: str, sc: ScenarioConfig, args=None) -> ExperimentReport:
    """Execute ``command`` and write its files plus ``report.json`` to ``sc.out``."""
    if args is None:
        args = build_parser().parse_args([command])
    out = Path(sc.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report = HANDLERS[command](sc, out, args)
    report.wall_clock = time.perf_counter() - start
    _write_json(out / "report.json", asdict(report))
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args)
        report = run(args.command, sc, args)
    except Exception as exc:  # every failure becomes machine-readable
        code = exit_code(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, InfeasibleError):
            err.update(best_rate=exc.best_rate, gap=exc.gap, best_weights=exc.best_weights)
        print(json.dumps(_jsonable(err)), file=sys.stderr)
        return code
    print(json.dumps({"command": report.command, "out": sc.out,
                      "wall_clock": round(report.wall_clock, 3)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
