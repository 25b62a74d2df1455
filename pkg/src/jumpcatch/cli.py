"""Command-line entry point: ``jumpcatch <scenario> [options]``.

Every run writes its artifacts to the output directory and finishes with
``manifest.json``, which records the configuration hash, the seed, the
library versions and a digest of each artifact.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (SCENARIOS, ConfigError, Params, RunConfig, config_hash, dt_us,
                     dump_params, load_params)
from .engine import (HeterodyneBatch, HeterodyneRecord, IntegrationError, StepSizeError,
                     heterodyne_step_limit, lindblad_series, run_jump_ensemble)
from .ensemble import (FitError, apply_reversal, dwell_times, fit_jump_curves,
                       ideal_catch_tomogram, ideal_reversal, run_catch_ensemble,
                       run_reverse_ensemble, snr_metrics, waiting_time_fit)
from .controller import calibrate_thresholds, iq_classify_array
from .epr import EprError, epr_report, parse_epr_text, write_report
from .models import LEVEL_NAMES, ModelError
from .toy import simulate_sde

log = logging.getLogger("jumpcatch")
ENV_OUT = "JUMPCATCH_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _opt(p: Params, key: str, cast=float, default=None):
    v = p.run.get(key)
    try:
        return default if v is None else cast(v)
    except ValueError as exc:
        raise ConfigError(f"[run] {key}: {exc}") from exc


def _need(p: Params | None, scenario: str) -> Params:
    if p is None:
        raise ConfigError(f"scenario {scenario!r} needs a parameter file")
    return p


# ---------------------------------------------------------------------------
# scenarios; each returns the list of files it wrote


def _jumps(cfg: RunConfig, p: Params, out: Path) -> list:
    model = p.build_model()
    duration = _opt(p, "duration_us", default=100.0)
    if model.kind == "three_level":
        dt = dt_us(cfg, _opt(p, "dt_default_ns", default=1.0))
        psi0 = np.zeros(model.dim, dtype=complex)
        psi0[0] = 1.0
        res = run_jump_ensemble(model, psi0, cfg.n_traj, duration, dt, seed=cfg.seed,
                                sample_every=max(1, int(round(0.01 / dt))))
        with open(out / "populations.csv", "w") as fh:
            fh.write("t_us," + ",".join(f"P_{n}" for n in LEVEL_NAMES[:3]) + "\n")
            for t, row in zip(res.times, res.populations.T):
                fh.write(f"{t:.6f}," + ",".join(f"{x:.9g}" for x in row) + "\n")
        _json({"n_traj": res.n_traj, "mean_clicks": float(res.n_clicks.mean()),
               "mean_first_click_us": float(np.nanmean(res.first_click))},
              out / "clicks.json")
        return ["populations.csv", "clicks.json"]
    dt = dt_us(cfg, 0.5)
    T = model.cavity_params.T_int
    cal = calibrate_thresholds(model, seed=cfg.seed + 7_919, dt=dt)
    K = min(cfg.n_traj, 256)
    batch = HeterodyneBatch(model, K, cfg.seed, dt)
    n_win = int(round(duration / T))
    samples = np.empty((n_win, K), dtype=complex)
    isB = np.empty((n_win, K), dtype=bool)
    prev = np.zeros(K, dtype=bool)
    for w in range(n_win):
        # stored in the decision frame so the thresholds apply directly
        r = cal.thresholds.rotate(batch.advance_window().samples)
        samples[w] = r
        prev = iq_classify_array(r.real, r.imag, prev, cal.thresholds)
        isB[w] = prev
    t = T * np.arange(1, n_win + 1)
    rec = HeterodyneRecord(filtered=np.column_stack([t, samples[:, 0].real, samples[:, 0].imag]))
    rec.to_csv(out / "record.csv", ["B" if b else "notB" for b in isB[:, 0]])
    nb, bb = [], []
    for k in range(K):
        a, b = dwell_times(isB[:, k], T)
        nb.append(a)
        bb.append(b)
    nb, bb = np.concatenate(nb), np.concatenate(bb)
    report = {"n_notB": int(nb.size), "n_B": int(bb.size), "fit": None}
    try:
        f = waiting_time_fit(nb, bb, bin_width=T)
        report["fit"] = {"tau_BG_us": 1 / f.Gamma_BG, "tau_GD_us": 1 / f.Gamma_GD,
                         "weight_BG": f.weight_BG, "tau_B_us": f.tau_B}
    except FitError as exc:
        report["fit_error"] = str(exc)
    _json(report, out / "waiting_times.json")
    return ["record.csv", "waiting_times.json"]


def _catch_common(cfg: RunConfig, p: Params):
    model = p.build_model()
    grid_max = _opt(p, "grid_max_us", default=12.0)
    if model.kind == "three_level":
        dt = dt_us(cfg, _opt(p, "dt_default_ns", default=1.0))
        spacing = _opt(p, "grid_step_us", default=0.1)
        grid = spacing * np.arange(1, int(round(grid_max / spacing)) + 1)
        return model, None, ideal_catch_tomogram(model, grid, cfg.n_traj, dt, seed=cfg.seed)
    dt = dt_us(cfg, 0.5)
    lim = heterodyne_step_limit(model)
    if dt > lim:
        raise StepSizeError(f"dt={dt * 1e3:.4g} ns exceeds the stability limit; "
                            f"use dt_ns <= {lim * 1e3:.4g}")
    # the catch time only matters for the reversal, which reuses the tomogram
    ctrl = p.controller_config(N_off=10 ** 9)
    run = run_catch_ensemble(model, ctrl, cfg.n_traj, grid_max=grid_max, seed=cfg.seed,
                             dt=dt, n_streams=int(_opt(p, "n_streams", int, 256)),
                             calib_streams=int(_opt(p, "calib_streams", int, 256)))
    return model, run, run.tomogram


def _catch(cfg: RunConfig, p: Params, out: Path) -> list:
    _, run, tomo = _catch_common(cfg, p)
    tomo.to_csv(out / "tomogram.csv")
    files = ["tomogram.csv"]
    try:
        fit_jump_curves(tomo).to_json(out / "fit.json")
    except FitError as exc:
        _json({"error": str(exc)}, out / "fit.json")
    files.append("fit.json")
    if run is not None:
        _json({"n_traj": tomo.n_total, "notB_samples": int(run.notB_durations.size),
               "B_samples": int(run.B_durations.size), "simulated_us": run.sim_time},
              out / "run.json")
        files.append("run.json")
    return files


def _reverse(cfg: RunConfig, p: Params, out: Path, notes: dict) -> list:
    settle = _opt(p, "settle_us", default=1.0)
    model = p.build_model()
    rows = []
    if model.kind == "three_level":
        th = _opt(p, "theta_I", default=None)
        ph = _opt(p, "phi_I", default=math.pi / 2)
        t_mid, res = ideal_reversal(model, th, ph, settle)
        rows.append(("catch", res))
    else:
        model, run, _ = _catch_common(cfg, p)
        T = model.cavity_params.T_int
        n_catch = p.controller.get("N_off")
        changes = {}
        if n_catch is None:
            t_c = _opt(p, "dt_catch_us")
            if t_c is None:
                raise ConfigError("reverse needs [controller] N_off or [run] dt_catch_us")
            changes["N_off"] = max(0, int(round(t_c / T)) - p.controller.get("N_on", 1))
        try:
            rev = run_reverse_ensemble(model, p.controller_config(**changes), cfg.n_traj,
                                       settle=settle, run=run)
            rows += [("catch", rev.catch), ("control", rev.control),
                     ("average", rev.reference)]
        except FitError:
            th, ph = p.controller_config(**changes).angles()
            rows.append(("catch", apply_reversal(np.eye(model.atom_dim) * np.nan, model,
                                                 th, ph, settle, n=0)))
    notes["reverse_samples"] = {arm: r.n for arm, r in rows}
    with open(out / "reverse.csv", "w") as fh:
        fh.write("arm,dt_catch_us,theta_I,phi_I,P_G,P_D,n\n")
        for arm, r in rows:
            if r.n == 0:
                continue
            fh.write(f"{arm},{r.dt_catch:.6f},{r.theta_I:.9g},{r.phi_I:.9g},"
                     f"{r.P_G:.9g},{r.P_D:.9g},{r.n}\n")
    return ["reverse.csv"]


def _lindblad(cfg: RunConfig, p: Params, out: Path) -> list:
    model = p.build_model()
    duration = _opt(p, "duration_us", default=10.0)
    n_pts = int(_opt(p, "n_points", int, 201))
    times = np.linspace(0.0, duration, n_pts)
    rho0 = np.zeros((model.dim, model.dim), dtype=complex)
    rho0[0, 0] = 1.0
    rhos = lindblad_series(model, rho0, times)
    W = model.atom_populations_weights()
    pops = np.einsum("li,tii->tl", W, rhos).real
    with open(out / "lindblad.csv", "w") as fh:
        names = LEVEL_NAMES[:pops.shape[1]]
        fh.write("t_us," + ",".join(f"P_{n}" for n in names) + "\n")
        for t, row in zip(times, pops):
            fh.write(f"{t:.6f}," + ",".join(f"{x:.12g}" for x in row) + "\n")
    return ["lindblad.csv"]


def _toy(cfg: RunConfig, p: Params | None, out: Path) -> list:
    p = p or Params("three_level", None)
    Z0 = _opt(p, "Z0", default=0.0)
    kappa = _opt(p, "kappa", default=1.0)
    duration = _opt(p, "duration_us", default=3.0)
    dt = dt_us(cfg, 1.0)
    paths = simulate_sde(Z0, kappa, duration, dt, cfg.n_traj, seed=cfg.seed,
                         sample_every=max(1, int(round(0.01 / dt))))
    paths.to_csv(out / "path.csv")
    zf = paths.Z[:, -1]
    _json({"n_paths": cfg.n_traj, "Z0": Z0, "mean_Z_final": float(zf.mean()),
           "sem_Z_final": float(zf.std(ddof=1) / math.sqrt(zf.size)) if zf.size > 1 else 0.0,
           "fraction_Z_positive": float((zf > 0).mean())}, out / "toy.json")
    return ["path.csv", "toy.json"]


def _snr(cfg: RunConfig, p: Params, out: Path) -> list:
    if p.cavity is None:
        raise ConfigError("snr needs a [cavity] section")
    chi = _opt(p, "chi_BG_MHz")
    # G carries no dispersive shift, so the B-G pull is chi_B by default
    chi = 2 * math.pi * chi if chi is not None else p.cavity.chi_B
    tau_B = _opt(p, "tau_B_us", default=4.2)
    r = snr_metrics(p.cavity, chi, tau_B)
    _json({"SNR": r.snr, "eta_disc": r.eta_disc, "eta_asg": r.eta_asg, "eta_eff": r.eta_eff},
          out / "snr.json")
    return ["snr.json"]


def _epr(cfg: RunConfig, out: Path) -> list:
    if cfg.params_file is None:
        raise ConfigError("epr needs an input file")
    try:
        text = Path(cfg.params_file).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {cfg.params_file}: {exc}") from exc
    write_report(epr_report(*parse_epr_text(text)), out / "epr.json")
    return ["epr.json"]


# ---------------------------------------------------------------------------


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"jumpcatch": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_scenario(cfg: RunConfig) -> list:
    """Run one scenario and write its artifacts plus the manifest."""
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    params = None
    canon = ""
    if cfg.params_file is not None and cfg.scenario != "epr":
        params = load_params(cfg.params_file, cfg.overrides)
        canon = dump_params(params)
    elif cfg.scenario == "epr":
        canon = Path(cfg.params_file).read_text() if cfg.params_file else ""
    s = cfg.scenario
    notes: dict = {}
    if s == "epr":
        files = _epr(cfg, out)
    elif s == "toy":
        files = _toy(cfg, params, out)
    elif s == "reverse":
        files = _reverse(cfg, _need(params, s), out, notes)
    else:
        runner = {"jumps": _jumps, "catch": _catch, "lindblad": _lindblad, "snr": _snr}[s]
        files = runner(cfg, _need(params, s), out)
    manifest = {
        "scenario": s, "seed": cfg.seed, "n_traj": cfg.n_traj, "dt_ns": cfg.dt_ns,
        "overrides": list(cfg.overrides), "config_hash": config_hash(canon),
        "config": canon, "versions": _versions(),
        "artifacts": {f: _digest(out / f) for f in files},
        "notes": notes,
    }
    _json(manifest, out / "manifest.json")
    return files + ["manifest.json"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jumpcatch",
                                 description="Simulate, catch and reverse quantum jumps.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("params_file", nargs="?", help="INI parameter file (EPR text for 'epr')")
    ap.add_argument("-n", "--n-traj", type=int, default=1000)
    ap.add_argument("-s", "--seed", type=int, default=0)
    ap.add_argument("--dt-ns", type=float, default=None)
    ap.add_argument("-o", "--out-dir", default=None,
                    help=f"output directory (default ${ENV_OUT} or the working directory)")
    ap.add_argument("-D", "--set", dest="overrides", action="append", default=[],
                    metavar="SECTION.KEY=VALUE", help="override a parameter")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = args.out_dir or os.environ.get(ENV_OUT) or "."
    try:
        cfg = RunConfig(args.scenario, args.params_file, args.n_traj, args.seed, args.dt_ns,
                        out, args.overrides)
        files = run_scenario(cfg)
    except (ConfigError, EprError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepSizeError, IntegrationError, FitError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("wrote %s", ", ".join(files))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
