"""Model builders for the V-shaped three-level atom.

Two families are provided.  ``build_three_level`` gives the bare atom
monitored by ideal photodetection.  ``build_cqed`` couples the atom
(optionally with a catch-all leakage level ``F``) dispersively to a
driven readout cavity and adds thermal, dephasing and leakage jumps.

Units: angular frequencies in rad/us, times in us.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy.stats import poisson

from .core import HilbertSpace, TOL, destroy, is_hermitian, ketbra

G, B, D, F = 0, 1, 2, 3
LEVEL_NAMES = ("G", "B", "D", "F")
TWO_PI = 2.0 * math.pi


class ModelError(ValueError):
    """Invalid physical parameters or model construction request."""


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class CoherentDrive:
    omega_BG: float


@dataclass(frozen=True)
class IncoherentDrive:
    Gamma_BG: float


@dataclass(frozen=True)
class BichromaticDrive:
    """Two-tone drive ``Omega_B0 + Omega_B1 exp(-i (delta_B1 t - phase))``."""

    omega_B0: float
    omega_B1: float
    delta_B1: float
    phase: float = 0.0


DriveKind = Union[CoherentDrive, IncoherentDrive, BichromaticDrive]


@dataclass(frozen=True)
class Leakage:
    """Rates into and out of the catch-all level F.

    ``gamma_FG`` and ``gamma_FD`` feed F from G and D; ``gamma_GF`` and
    ``gamma_DF`` return F to G and D.
    """

    gamma_FG: float = 0.0
    gamma_FD: float = 0.0
    gamma_GF: float = 0.0
    gamma_DF: float = 0.0

    def any(self) -> bool:
        return any(r > 0 for r in (self.gamma_FG, self.gamma_FD, self.gamma_GF, self.gamma_DF))


@dataclass(frozen=True)
class AtomParams:
    """Rates of the three-level atom (rad/us).

    Attributes
    ----------
    gamma_B, gamma_D : float
        Spontaneous decay of B and D towards G.
    drive : CoherentDrive, IncoherentDrive or BichromaticDrive
        How the BG transition is driven.
    omega_DG, delta_DG : float
        Dark Rabi rate and its detuning.
    n_th_B, n_th_D : float
        Thermal occupations of the two transitions.
    gamma_phi_B, gamma_phi_D : float
        Pure dephasing rates.
    leakage : Leakage
    """

    gamma_B: float
    gamma_D: float
    drive: DriveKind
    omega_DG: float = 0.0
    delta_DG: float = 0.0
    n_th_B: float = 0.0
    n_th_D: float = 0.0
    gamma_phi_B: float = 0.0
    gamma_phi_D: float = 0.0
    leakage: Leakage = field(default_factory=Leakage)

    def __post_init__(self):
        rates = dict(gamma_B=self.gamma_B, gamma_D=self.gamma_D,
                     gamma_phi_B=self.gamma_phi_B, gamma_phi_D=self.gamma_phi_D,
                     **{k: getattr(self.leakage, k) for k in
                        ("gamma_FG", "gamma_FD", "gamma_GF", "gamma_DF")})
        if isinstance(self.drive, IncoherentDrive):
            rates["Gamma_BG"] = self.drive.Gamma_BG
        for name, r in rates.items():
            if not (np.isfinite(r) and r >= 0):
                raise ModelError(f"{name} must be a non-negative rate, got {r}")
        for name in ("n_th_B", "n_th_D"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ModelError(f"{name} must lie in [0, 1), got {v}")

    @classmethod
    def from_coherence_times(cls, T1_B, T1_D, T2R_B, T2R_D, drive, omega_DG=0.0,
                             delta_DG=0.0, n_th_B=0.0, n_th_D=0.0,
                             leakage: Leakage | None = None) -> "AtomParams":
        """Map lifetimes and Ramsey times (us) onto model rates.

        The thermalised decay ``gamma (2 n_th + 1)`` reproduces ``1/T1``
        and the dephasing is whatever remains of ``1/T2R`` after the
        lifetime contribution ``1/(2 T1)``.
        """
        gB = 1.0 / (T1_B * (2 * n_th_B + 1))
        gD = 1.0 / (T1_D * (2 * n_th_D + 1))
        phiB = 1.0 / T2R_B - 0.5 / T1_B
        phiD = 1.0 / T2R_D - 0.5 / T1_D
        if phiB < 0 or phiD < 0:
            raise ModelError("T2R exceeds 2*T1; pure dephasing would be negative")
        return cls(gamma_B=gB, gamma_D=gD, drive=drive, omega_DG=omega_DG,
                   delta_DG=delta_DG, n_th_B=n_th_B, n_th_D=n_th_D,
                   gamma_phi_B=phiB, gamma_phi_D=phiD,
                   leakage=leakage or Leakage())


def min_fock_cutoff(n_bar: float, tail: float = 1e-6) -> int:
    """Smallest ``n_max`` whose Poisson(n_bar) tail beyond it is below ``tail``."""
    n = 0
    while poisson.sf(n, n_bar) >= tail:
        n += 1
    return n


@dataclass(frozen=True)
class CavityParams:
    """Readout cavity and detection chain.

    Attributes
    ----------
    kappa : float
        Energy decay rate (rad/us).
    chi_B, chi_D : float
        Dispersive shifts conditioned on B and D (rad/us).
    n_bar : float
        Photon number with the probe on resonance.
    eta : float
        Quantum efficiency of the readout chain.
    T_int : float
        Integration time of one record sample (us).
    kappa_filter : float, optional
        Bandwidth of the amplifier chain; defaults to ``20 kappa``.
    delta_R : float, optional
        Probe detuning; defaults to ``chi_B``.
    n_max : int, optional
        Fock cutoff; defaults to the smallest value with Poisson tail < 1e-6.
    n_th_C : float
        Thermal photon occupation of the cavity bath.
    """

    kappa: float
    chi_B: float
    chi_D: float
    n_bar: float
    eta: float
    T_int: float
    kappa_filter: float | None = None
    delta_R: float | None = None
    n_max: int | None = None
    n_th_C: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ModelError("kappa must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ModelError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.T_int > 0:
            raise ModelError("T_int must be positive")
        if self.n_bar < 0 or self.n_th_C < 0:
            raise ModelError("photon numbers must be non-negative")
        if self.kappa_filter is None:
            object.__setattr__(self, "kappa_filter", 20.0 * self.kappa)
        if self.delta_R is None:
            object.__setattr__(self, "delta_R", self.chi_B)
        needed = min_fock_cutoff(self.n_bar)
        if self.n_max is None:
            object.__setattr__(self, "n_max", needed)
        elif self.n_max < needed:
            raise ModelError(
                f"n_max={self.n_max} truncates the coherent state; need >= {needed}")
        if self.kappa_filter < 5 * self.kappa:
            warnings.warn("kappa_filter is not much larger than kappa", stacklevel=2)


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class DriveTerm:
    """Hermitian drive ``static + sum_k (A_k exp(-i delta_k t) + h.c.)``."""

    name: str
    static: np.ndarray
    oscillating: tuple = ()

    def at(self, t: float) -> np.ndarray:
        h = self.static.copy()
        for a, delta in self.oscillating:
            m = a * np.exp(-1j * delta * t)
            h += m + m.conj().T
        return h


@dataclass(frozen=True)
class Channel:
    """Collapse operator with the rate absorbed into ``op``."""

    label: str
    op: np.ndarray
    monitored: bool = False
    efficiency: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ModelError(f"efficiency of {self.label} outside [0, 1]")


@dataclass(frozen=True)
class ModelSpec:
    """Everything an integrator needs.

    Attributes
    ----------
    space : HilbertSpace
    H0 : numpy.ndarray
        Drive-independent Hermitian part (rotating frame).
    drives : tuple of DriveTerm
        Named drive contributions that can be gated.
    channels : tuple of Channel
    gated_off : frozenset of str
        Names of drives currently switched off.
    kind : str
        ``"three_level"`` or ``"cqed"``.
    atom_params, cavity_params : optional
        The inputs the model was built from.
    """

    space: HilbertSpace
    H0: np.ndarray
    drives: tuple
    channels: tuple
    gated_off: frozenset = frozenset()
    kind: str = "three_level"
    atom_params: AtomParams | None = None
    cavity_params: CavityParams | None = None

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def atom_dim(self) -> int:
        return self.space.factor_dims[0]

    @property
    def level_names(self) -> tuple:
        return LEVEL_NAMES[: self.atom_dim]

    def active_drives(self):
        return [d for d in self.drives if d.name not in self.gated_off]

    @property
    def time_dependent(self) -> bool:
        return any(d.oscillating for d in self.active_drives())

    def static_hamiltonian(self) -> np.ndarray:
        h = self.H0.copy()
        for d in self.active_drives():
            h += d.static
        return h

    def oscillating_terms(self) -> list:
        return [term for d in self.active_drives() for term in d.oscillating]

    def hamiltonian(self, t: float = 0.0) -> np.ndarray:
        h = self.H0.copy()
        for d in self.active_drives():
            h += d.at(t)
        return h

    def damping(self) -> np.ndarray:
        """Sum of ``c^dag c`` over every channel."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for ch in self.channels:
            out += ch.op.conj().T @ ch.op
        return out

    def H_eff(self, t: float = 0.0) -> np.ndarray:
        return self.hamiltonian(t) - 0.5j * self.damping()

    def atom_projector(self, level: str | int) -> np.ndarray:
        idx = self.level_names.index(level) if isinstance(level, str) else int(level)
        p = ketbra(self.atom_dim, idx, idx)
        return self.space.embed(p, 0)

    def atom_populations_weights(self) -> np.ndarray:
        """Rows ``w_a`` such that ``P_a = sum_i w_a[i] |psi_i|^2``."""
        n_cav = self.dim // self.atom_dim
        w = np.zeros((self.atom_dim, self.dim))
        for a in range(self.atom_dim):
            w[a, a * n_cav:(a + 1) * n_cav] = 1.0
        return w

    def cavity_lowering(self) -> np.ndarray:
        if len(self.space.factor_dims) < 2:
            raise ModelError("model has no cavity factor")
        return self.space.embed(destroy(self.space.factor_dims[1]), 1)

    def monitored_channels(self) -> list:
        return [ch for ch in self.channels if ch.monitored]

    def unmonitored_channels(self) -> list:
        return [ch for ch in self.channels if not ch.monitored]

    def channel_rates(self, label: str) -> tuple[float, float]:
        """Split ``c^dag c`` weight of a channel into detected and lost parts."""
        ch = next(c for c in self.channels if c.label == label)
        return ch.efficiency, 1.0 - ch.efficiency

    def drive_gate(self, which: str, on: bool) -> "ModelSpec":
        return drive_gate(self, which, on)


def _drive(name, static, oscillating=()):
    s = np.asarray(static, dtype=complex)
    return DriveTerm(name, s, tuple(oscillating))


def build_three_level(params: AtomParams, variant: str = "coherent") -> ModelSpec:
    """Bare three-level atom monitored by photodetection of both decays.

    Parameters
    ----------
    params : AtomParams
    variant : {"coherent", "incoherent"}
        ``coherent`` requires a ``CoherentDrive``; ``incoherent`` requires an
        ``IncoherentDrive`` and adds the upward channel ``sqrt(Gamma)|B><G|``.
    """
    space = HilbertSpace((3,))
    zero = np.zeros((3, 3), dtype=complex)
    dg = 0.5j * params.omega_DG * (ketbra(3, D, G) - ketbra(3, G, D))
    H0 = -params.delta_DG * ketbra(3, D, D)
    drives = []
    channels = []
    if variant == "coherent":
        if not isinstance(params.drive, CoherentDrive):
            raise ModelError("coherent variant needs a CoherentDrive")
        om = params.drive.omega_BG
        drives.append(_drive("Omega_BG", 0.5j * om * (ketbra(3, B, G) - ketbra(3, G, B))))
        gamma_down = params.gamma_B
    elif variant == "incoherent":
        if not isinstance(params.drive, IncoherentDrive):
            raise ModelError("incoherent variant needs an IncoherentDrive")
        Gam = params.drive.Gamma_BG
        drives.append(_drive("Omega_BG", zero))
        gamma_down = params.gamma_B + Gam
        if Gam > 0:
            channels.append(Channel("BG-pump", np.sqrt(Gam) * ketbra(3, B, G)))
    else:
        raise ModelError(f"unknown variant {variant!r}")
    drives.append(_drive("Omega_DG", dg))
    if gamma_down > 0:
        channels.insert(0, Channel("B-decay", np.sqrt(gamma_down) * ketbra(3, G, B),
                                   monitored=True, efficiency=1.0))
    if params.gamma_D > 0:
        channels.append(Channel("D-decay", np.sqrt(params.gamma_D) * ketbra(3, G, D),
                                monitored=True, efficiency=1.0))
    return ModelSpec(space, np.asarray(H0, dtype=complex), tuple(drives), tuple(channels),
                     kind="three_level", atom_params=params)


def atom_jump_channels(atom: AtomParams, n_levels: int) -> list:
    """Thermal, dephasing and leakage channels on the bare atom (atom-space ops)."""
    a = atom
    spec = [
        ("B-decay", a.gamma_B * (a.n_th_B + 1), G, B),
        ("D-decay", a.gamma_D * (a.n_th_D + 1), G, D),
        ("B-thermal", a.gamma_B * a.n_th_B, B, G),
        ("D-thermal", a.gamma_D * a.n_th_D, D, G),
        ("B-dephase", 2 * a.gamma_phi_B, B, B),
        ("D-dephase", 2 * a.gamma_phi_D, D, D),
    ]
    if n_levels == 4:
        lk = a.leakage
        spec += [
            ("G-to-F", lk.gamma_FG, F, G),
            ("D-to-F", lk.gamma_FD, F, D),
            ("F-to-G", lk.gamma_GF, G, F),
            ("F-to-D", lk.gamma_DF, D, F),
        ]
    return [(label, rate, to, frm) for label, rate, to, frm in spec if rate > 0]


def build_cqed(atom: AtomParams, cav: CavityParams, include_F: bool = True) -> ModelSpec:
    """Atom dispersively coupled to a heterodyne-monitored readout cavity."""
    if not isinstance(atom.drive, BichromaticDrive):
        raise ModelError("cQED model expects a BichromaticDrive")
    if include_F and not atom.leakage.any():
        warnings.warn("F level included with all leakage rates zero", stacklevel=2)
    na = 4 if include_F else 3
    nc = cav.n_max + 1
    space = HilbertSpace((na, nc))
    a = destroy(nc)
    num = a.conj().T @ a
    Ia = np.eye(na, dtype=complex)
    Ic = np.eye(nc, dtype=complex)
    P = lambda k: ketbra(na, k, k)

    H0 = (np.kron(Ia, -cav.delta_R * num)
          + np.kron(cav.chi_B * P(B) + cav.chi_D * P(D), num)
          - atom.delta_DG * np.kron(P(D), Ic))
    dr = atom.drive
    bg = 0.5j * dr.omega_B0 * (ketbra(na, B, G) - ketbra(na, G, B))
    side = np.kron(0.5j * dr.omega_B1 * np.exp(1j * dr.phase) * ketbra(na, B, G), Ic)
    dg = 0.5j * atom.omega_DG * (ketbra(na, D, G) - ketbra(na, G, D))
    probe = 0.5j * cav.kappa * np.sqrt(cav.n_bar) * (a.conj().T - a)
    drives = (
        _drive("probe", np.kron(Ia, probe)),
        _drive("Omega_BG", np.kron(bg, Ic), [(side, dr.delta_B1)]),
        _drive("Omega_DG", np.kron(dg, Ic)),
    )
    A = np.kron(Ia, a)
    channels = [Channel("cavity", np.sqrt(cav.kappa) * A, monitored=True,
                        efficiency=cav.eta)]
    for label, rate, to, frm in atom_jump_channels(atom, na):
        channels.append(Channel(label, np.sqrt(rate) * np.kron(ketbra(na, to, frm), Ic)))
    if cav.n_th_C > 0:
        channels.append(Channel("cavity-thermal-up",
                                np.sqrt(cav.kappa * cav.n_th_C) * A.conj().T))
        channels.append(Channel("cavity-thermal-down",
                                np.sqrt(cav.kappa * cav.n_th_C) * A))
    return ModelSpec(space, H0, drives, tuple(channels), kind="cqed",
                     atom_params=atom, cavity_params=cav)


def drive_gate(model: ModelSpec, which: str, on: bool) -> ModelSpec:
    """Switch a named drive off (``on=False``) or back on."""
    names = {d.name for d in model.drives}
    if which not in names:
        raise ModelError(f"unknown drive {which!r}; available: {sorted(names)}")
    off = set(model.gated_off)
    if on:
        off.discard(which)
    else:
        off.add(which)
    return replace(model, gated_off=frozenset(off))


def check_hermitian(model: ModelSpec, times) -> bool:
    return all(is_hermitian(model.hamiltonian(t), TOL.physical) for t in times)


# ---------------------------------------------------------------------------
# parameter presets (frequencies quoted as f/2pi in MHz, times in us)


def _mhz(f):
    return TWO_PI * f


def measured_parameters(leakage: Leakage | None = None) -> tuple[AtomParams, CavityParams]:
    """Independently characterised device parameters."""
    drive = BichromaticDrive(_mhz(1.20), _mhz(0.60), _mhz(-30.0))
    atom = AtomParams.from_coherence_times(
        T1_B=28.0, T1_D=116.0, T2R_B=18.0, T2R_D=120.0, drive=drive,
        omega_DG=_mhz(0.020), delta_DG=_mhz(-0.275), n_th_B=0.01, n_th_D=0.05,
        leakage=leakage)
    cav = CavityParams(kappa=_mhz(3.62), chi_B=_mhz(-5.08), chi_D=_mhz(-0.33),
                       n_bar=5.0, eta=0.33, T_int=0.26, n_th_C=0.0017)
    return atom, cav


def simulation_parameters(leakage: Leakage | None = None) -> tuple[AtomParams, CavityParams]:
    """Parameter set used for the catch simulations."""
    drive = BichromaticDrive(_mhz(1.20), _mhz(0.60), _mhz(-30.0))
    atom = AtomParams.from_coherence_times(
        T1_B=15.0, T1_D=105.0, T2R_B=18.0, T2R_D=120.0, drive=drive,
        omega_DG=_mhz(0.0216), delta_DG=_mhz(-0.2745), n_th_B=0.01, n_th_D=0.05,
        leakage=leakage)
    cav = CavityParams(kappa=_mhz(3.62), chi_B=_mhz(-5.08), chi_D=_mhz(-0.33),
                       n_bar=5.0, eta=0.33, T_int=0.26, n_th_C=0.0)
    return atom, cav


LEAKAGE_DRIVE_ON = Leakage(gamma_FG=_mhz(0.38e-3), gamma_FD=_mhz(0.38e-3),
                           gamma_GF=_mhz(11.24e-3), gamma_DF=_mhz(11.24e-3))
LEAKAGE_DRIVE_OFF = Leakage(gamma_FG=_mhz(0.217e-3), gamma_FD=_mhz(4.34e-3),
                            gamma_GF=_mhz(11.08e-3), gamma_DF=_mhz(15.88e-3))
