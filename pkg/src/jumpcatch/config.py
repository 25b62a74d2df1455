"""INI parameter files.

Frequencies and rates are written as ``<symbol>_MHz`` (the value of
``rate / 2 pi``), times as ``<symbol>_us`` and step sizes in ns.  Five flat
sections are recognised: ``[atom] [cavity] [drives] [controller] [run]``.
A file describes either the bare three-level atom (``model = three_level``
in ``[run]``) or the full cQED system (the default).
"""
from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field

from .controller import ControllerConfig
from .models import (TWO_PI, AtomParams, BichromaticDrive, CavityParams, CoherentDrive,
                     IncoherentDrive, Leakage, ModelError, build_cqed, build_three_level)

SCENARIOS = ("jumps", "catch", "reverse", "lindblad", "toy", "epr", "snr")
LEAK_KEYS = ("gamma_FG", "gamma_FD", "gamma_GF", "gamma_DF")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """What to run and where to put the artifacts."""

    scenario: str
    params_file: str | None = None
    n_traj: int = 1000
    seed: int = 0
    dt_ns: float | None = None
    out_dir: str = "."
    overrides: list = field(default_factory=list)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.dt_ns is not None and not self.dt_ns > 0:
            raise ConfigError("dt_ns must be positive")


@dataclass
class Params:
    """Parsed parameter file.

    ``run`` keeps the raw ``[run]`` entries for scenario-specific options.
    """

    model: str
    atom: AtomParams
    cavity: CavityParams | None = None
    controller: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    def build_model(self):
        if self.model == "three_level":
            variant = "incoherent" if isinstance(self.atom.drive, IncoherentDrive) else "coherent"
            return build_three_level(self.atom, variant)
        return build_cqed(self.atom, self.cavity)

    def controller_config(self, **changes) -> ControllerConfig:
        if self.cavity is None:
            raise ConfigError("the controller needs a [cavity] section for T_int")
        c = dict(self.controller)
        c.update(changes)
        return ControllerConfig(T_int=self.cavity.T_int, **c)


def _mhz(x: float) -> float:
    return TWO_PI * x


def _get(sec, key, cast=float, default=None, required=True):
    if key in sec:
        try:
            return cast(sec[key])
        except ValueError as exc:
            raise ConfigError(f"[{sec.name}] {key}: {exc}") from exc
    if required and default is None:
        raise ConfigError(f"missing parameter [{sec.name}] {key}")
    return default


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    """Apply ``section.key=value`` strings."""
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        lhs, val = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key.strip(), val.strip())


def _parser(text: str, overrides=None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    apply_overrides(cp, overrides)
    for sec in cp.sections():
        if sec not in ("atom", "cavity", "drives", "controller", "run"):
            raise ConfigError(f"unknown section [{sec}]")
    for sec in ("atom", "cavity", "drives", "controller", "run"):
        if not cp.has_section(sec):
            cp.add_section(sec)
    return cp


def parse_params(text: str, overrides=None) -> Params:
    cp = _parser(text, overrides)
    run = dict(cp["run"])
    model = run.get("model", "cqed")
    at, dr = cp["atom"], cp["drives"]
    leak = Leakage(**{k: _mhz(_get(at, k + "_MHz", default=0.0, required=False))
                      for k in LEAK_KEYS})
    try:
        if model == "three_level":
            if "Gamma_BG_MHz" in dr:
                drive = IncoherentDrive(_mhz(_get(dr, "Gamma_BG_MHz")))
            else:
                drive = CoherentDrive(_mhz(_get(dr, "Omega_BG_MHz")))
            atom = AtomParams(
                gamma_B=_mhz(_get(at, "gamma_B_MHz")),
                gamma_D=_mhz(_get(at, "gamma_D_MHz", default=0.0, required=False)),
                drive=drive,
                omega_DG=_mhz(_get(dr, "Omega_DG_MHz")),
                delta_DG=_mhz(_get(dr, "Delta_DG_MHz", default=0.0, required=False)),
                leakage=leak)
            cav = None
        elif model == "cqed":
            drive = BichromaticDrive(_mhz(_get(dr, "Omega_B0_MHz")),
                                     _mhz(_get(dr, "Omega_B1_MHz")),
                                     _mhz(_get(dr, "Delta_B1_MHz")),
                                     _get(dr, "phase_B1", default=0.0, required=False))
            atom = AtomParams.from_coherence_times(
                T1_B=_get(at, "T1_B_us"), T1_D=_get(at, "T1_D_us"),
                T2R_B=_get(at, "T2R_B_us"), T2R_D=_get(at, "T2R_D_us"), drive=drive,
                omega_DG=_mhz(_get(dr, "Omega_DG_MHz")),
                delta_DG=_mhz(_get(dr, "Delta_DG_MHz", default=0.0, required=False)),
                n_th_B=_get(at, "n_th_B", default=0.0, required=False),
                n_th_D=_get(at, "n_th_D", default=0.0, required=False),
                leakage=leak)
            cs = cp["cavity"]
            kf = _get(cs, "kappa_filter_MHz", required=False)
            cav = CavityParams(
                kappa=_mhz(_get(cs, "kappa_MHz")), chi_B=_mhz(_get(cs, "chi_B_MHz")),
                chi_D=_mhz(_get(cs, "chi_D_MHz")), n_bar=_get(cs, "n_bar"),
                eta=_get(cs, "eta"), T_int=_get(cs, "T_int_us"),
                kappa_filter=None if kf is None else _mhz(kf),
                n_max=_get(cs, "n_max", int, required=False),
                n_th_C=_get(cs, "n_th_C", default=0.0, required=False))
        else:
            raise ConfigError(f"unknown model {model!r}")
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    cs = cp["controller"]
    ctrl = {}
    for key, cast in (("N_on", int), ("N_off", int), ("theta_I", float), ("phi_I", float),
                      ("gate_DG_during_off", _bool), ("rearm", _bool)):
        v = _get(cs, key, cast, required=False)
        if v is not None:
            ctrl[key] = v
    return Params(model, atom, cav, ctrl, run)


def load_params(path, overrides=None) -> Params:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_params(text, overrides)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def dump_params(p: Params) -> str:
    """Serialise back to the INI layout; ``parse_params`` inverts this."""
    a = p.atom
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["atom"] = {}
    cp["drives"] = {}
    mhz = 1.0 / TWO_PI
    if p.model == "three_level":
        cp["atom"]["gamma_B_MHz"] = _fmt(a.gamma_B * mhz)
        cp["atom"]["gamma_D_MHz"] = _fmt(a.gamma_D * mhz)
        if isinstance(a.drive, IncoherentDrive):
            cp["drives"]["Gamma_BG_MHz"] = _fmt(a.drive.Gamma_BG * mhz)
        else:
            cp["drives"]["Omega_BG_MHz"] = _fmt(a.drive.omega_BG * mhz)
    else:
        T1B = 1.0 / (a.gamma_B * (2 * a.n_th_B + 1))
        T1D = 1.0 / (a.gamma_D * (2 * a.n_th_D + 1))
        cp["atom"].update({
            "T1_B_us": _fmt(T1B), "T1_D_us": _fmt(T1D),
            "T2R_B_us": _fmt(1.0 / (a.gamma_phi_B + 0.5 / T1B)),
            "T2R_D_us": _fmt(1.0 / (a.gamma_phi_D + 0.5 / T1D)),
            "n_th_B": _fmt(a.n_th_B), "n_th_D": _fmt(a.n_th_D)})
        d = a.drive
        cp["drives"].update({"Omega_B0_MHz": _fmt(d.omega_B0 * mhz),
                             "Omega_B1_MHz": _fmt(d.omega_B1 * mhz),
                             "Delta_B1_MHz": _fmt(d.delta_B1 * mhz),
                             "phase_B1": _fmt(d.phase)})
        c = p.cavity
        cp["cavity"] = {"kappa_MHz": _fmt(c.kappa * mhz), "chi_B_MHz": _fmt(c.chi_B * mhz),
                        "chi_D_MHz": _fmt(c.chi_D * mhz), "n_bar": _fmt(c.n_bar),
                        "eta": _fmt(c.eta), "T_int_us": _fmt(c.T_int),
                        "kappa_filter_MHz": _fmt(c.kappa_filter * mhz),
                        "n_max": _fmt(int(c.n_max)), "n_th_C": _fmt(c.n_th_C)}
    for k in LEAK_KEYS:
        v = getattr(a.leakage, k)
        if v:
            cp["atom"][k + "_MHz"] = _fmt(v * mhz)
    cp["drives"]["Omega_DG_MHz"] = _fmt(a.omega_DG * mhz)
    cp["drives"]["Delta_DG_MHz"] = _fmt(a.delta_DG * mhz)
    cp["controller"] = {k: _fmt(v) for k, v in p.controller.items()}
    cp["run"] = dict(p.run)
    cp["run"]["model"] = p.model
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def dt_us(cfg: RunConfig, default_ns: float) -> float:
    ns = cfg.dt_ns if cfg.dt_ns is not None else default_ns
    if not math.isfinite(ns) or ns <= 0:
        raise ConfigError("dt_ns must be positive")
    return ns * 1e-3
