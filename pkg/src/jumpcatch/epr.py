"""Energy-participation quantization of weakly anharmonic circuits.

Everything runs in units with hbar = 1: mode frequencies and junction
energies are angular rates in rad/us.  The I/O layer takes MHz (or an
inductance in nH for a junction) and converts.
"""
from __future__ import annotations

import configparser
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import e as E_CHARGE
from scipy.constants import hbar as HBAR

TWO_PI = 2.0 * math.pi
PHI0_RED = HBAR / (2.0 * E_CHARGE)  # reduced flux quantum (Wb)
LOSS_KINDS = ("cap", "ind", "seam", "rad")


class EprError(ValueError):
    pass


@dataclass
class EprInput:
    """Linear modes, junctions and their participation ratios.

    ``p[m, j]`` is the fraction of mode ``m``'s inductive energy stored in
    junction ``j``; ``S[m, j]`` is the sign of the junction flux.
    """

    modes: list
    junctions: list
    p: np.ndarray
    S: np.ndarray | None = None

    def __post_init__(self):
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        M, J = len(self.modes), len(self.junctions)
        if self.p.shape != (M, J):
            raise EprError(f"participation matrix is {self.p.shape}, expected {(M, J)}")
        self.S = np.ones((M, J)) if self.S is None else np.atleast_2d(np.asarray(self.S, float))
        if self.S.shape != (M, J):
            raise EprError("sign matrix shape differs from the participation matrix")
        if not np.all(np.isin(self.S, (-1.0, 1.0))):
            raise EprError("sign bits must be +1 or -1")
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise EprError("participations must lie in [0, 1]")

    @property
    def omega(self) -> np.ndarray:
        return np.array([w for _, w in self.modes], dtype=float)

    @property
    def E_j(self) -> np.ndarray:
        return np.array([e for _, e in self.junctions], dtype=float)


@dataclass
class HamiltonianReport:
    """Zero-point fluctuations, Kerr matrix and Lamb-dressed frequencies (rad/us)."""

    labels: list
    phi: np.ndarray
    chi: np.ndarray
    alpha: np.ndarray
    lamb: np.ndarray
    dressed: np.ndarray

    def to_dict(self) -> dict:
        mhz = 1.0 / TWO_PI
        return {
            "modes": list(self.labels),
            "phi_zpf": self.phi.tolist(),
            "chi_MHz": (self.chi * mhz).tolist(),
            "alpha_MHz": (self.alpha * mhz).tolist(),
            "lamb_MHz": (self.lamb * mhz).tolist(),
            "dressed_MHz": (self.dressed * mhz).tolist(),
        }


def hamiltonian_from_epr(inp: EprInput) -> HamiltonianReport:
    """Quartic RWA Hamiltonian parameters from participation ratios.

    The Kerr matrix is ``chi_mn = -sum_j w_m w_n p_mj p_nj / (4 E_j)``,
    negative for positive participations.
    """
    Ej = inp.E_j
    if np.any(Ej <= 0):
        raise EprError("junction energies must be positive")
    w = inp.omega
    if np.any(w <= 0):
        raise EprError("mode frequencies must be positive")
    rep = validate_epr(inp)
    if np.any(rep.mode_excess > 1e-12) or np.any(rep.junction_sums > 1 + 1e-12):
        warnings.warn("participation sum rules are violated", stacklevel=2)
    phi = inp.S * np.sqrt(inp.p * w[:, None] / (2.0 * Ej[None, :]))
    wp = inp.p * w[:, None]
    chi = -(wp / (4.0 * Ej)) @ wp.T
    chi = 0.5 * (chi + chi.T)
    alpha = np.diag(chi) / 2.0
    lamb = 0.5 * chi.sum(axis=1)
    return HamiltonianReport([m for m, _ in inp.modes], phi, chi, alpha, lamb, w - lamb)


def nonlinear_coefficients(max_order: int = 6) -> dict:
    """Coefficients ``c_p`` of ``E_J (1 - cos phi - phi**2/2) = -E_J sum c_p phi**p``.

    Reported for completeness; the Kerr matrix uses the quartic term only.
    """
    if max_order < 4:
        raise ValueError("max_order must be at least 4")
    return {p: (-1) ** (p // 2) / math.factorial(p) for p in range(4, max_order + 1, 2)}


@dataclass
class EprValidation:
    """Sum-rule residuals.

    ``junction_residual`` is ``1 - sum_m p_mj`` (zero when the mode set is
    complete); ``mode_excess`` is ``max(0, sum_j p_mj - 1)``; ``orthogonality``
    holds ``sum_m S_mj S_mj' sqrt(p_mj p_mj')`` for ``j != j'``.
    """

    junction_sums: np.ndarray
    junction_residual: np.ndarray
    mode_excess: np.ndarray
    mode_flags: np.ndarray
    orthogonality: np.ndarray

    @property
    def max_orthogonality(self) -> float:
        return float(np.max(np.abs(self.orthogonality))) if self.orthogonality.size else 0.0

    def ok(self, complete: bool = False, tol: float = 1e-9) -> bool:
        good = not self.mode_flags.any() and np.all(self.junction_sums <= 1 + tol)
        if complete:
            good = good and np.all(np.abs(self.junction_residual) <= tol) \
                and self.max_orthogonality <= tol
        return bool(good)


def validate_epr(inp: EprInput) -> EprValidation:
    p, S = inp.p, inp.S
    jsum = p.sum(axis=0)
    msum = p.sum(axis=1)
    excess = np.clip(msum - 1.0, 0.0, None)
    v = S * np.sqrt(p)
    G = v.T @ v
    off = G - np.diag(np.diag(G))
    return EprValidation(jsum, 1.0 - jsum, excess, msum > 1.0 + 1e-12, off)


# ---------------------------------------------------------------------------
# dissipation


@dataclass(frozen=True)
class LossChannel:
    """One loss mechanism.

    For ``seam`` channels ``p`` is the seam participation and ``Q`` the
    seam conductance per unit length; ``rad`` channels ignore ``p``.
    """

    label: str
    kind: str
    p: float
    Q: float

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise EprError(f"unknown loss kind {self.kind!r}")
        if not self.Q > 0:
            raise EprError(f"channel {self.label!r}: Q must be positive")
        if self.p < 0 or (self.kind in ("cap", "ind") and self.p > 1):
            raise EprError(f"channel {self.label!r}: participation out of range")


@dataclass
class DissipationInput:
    channels: list = field(default_factory=list)


def dissipation_budget(inp: DissipationInput) -> tuple[float, float, float]:
    """Return ``(Q_cap, Q_ind, Q_total)``; an empty class gives ``inf``."""
    if not inp.channels:
        raise EprError("need at least one loss channel")
    inv = {k: 0.0 for k in LOSS_KINDS}
    for ch in inp.channels:
        inv[ch.kind] += 1.0 / ch.Q if ch.kind == "rad" else ch.p / ch.Q
    cap = inv["cap"]
    ind = inv["ind"] + inv["seam"]
    tot = cap + ind + inv["rad"]

    def q(x):
        return math.inf if x == 0 else 1.0 / x

    return q(cap), q(ind), q(tot)


# ---------------------------------------------------------------------------
# text input


def ej_from_inductance(L_nH: float) -> float:
    """Josephson energy ``phi0**2 / L`` as an angular rate (rad/us)."""
    if L_nH <= 0:
        raise EprError("inductance must be positive")
    return PHI0_RED ** 2 / (L_nH * 1e-9) / HBAR * 1e-6


def _value(text: str, default_unit: str = "MHz") -> tuple[float, str]:
    parts = text.split()
    if len(parts) not in (1, 2):
        raise EprError(f"cannot parse {text!r}")
    unit = parts[1] if len(parts) == 2 else default_unit
    return float(parts[0]), unit


def parse_epr_text(text: str) -> tuple[EprInput, DissipationInput | None]:
    """Read the sectioned text format.

    ``[modes]`` maps labels to frequencies in MHz; ``[junctions]`` maps
    labels to ``E_J`` in MHz or an inductance with unit ``nH``;
    ``[participations]`` lists one comma-separated row per mode, with a
    leading minus sign encoding a negative sign bit; ``[dissipation]``
    lines read ``label = kind, p, Q``.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    for sec in ("modes", "junctions", "participations"):
        if not cp.has_section(sec):
            raise EprError(f"missing section [{sec}]")
    modes = []
    for k, v in cp.items("modes"):
        f, unit = _value(v)
        if unit != "MHz":
            raise EprError(f"mode {k}: frequency unit must be MHz")
        modes.append((k, TWO_PI * f))
    juncs = []
    for k, v in cp.items("junctions"):
        x, unit = _value(v)
        if unit == "MHz":
            juncs.append((k, TWO_PI * x))
        elif unit == "nH":
            juncs.append((k, ej_from_inductance(x)))
        else:
            raise EprError(f"junction {k}: unit must be MHz or nH")
    rows = dict(cp.items("participations"))
    p, S = [], []
    for label, _ in modes:
        if label not in rows:
            raise EprError(f"no participations for mode {label!r}")
        vals = [float(x) for x in rows[label].split(",")]
        if len(vals) != len(juncs):
            raise EprError(f"mode {label!r}: expected {len(juncs)} participations")
        p.append([abs(x) for x in vals])
        S.append([-1.0 if math.copysign(1.0, x) < 0 else 1.0 for x in vals])
    diss = None
    if cp.has_section("dissipation"):
        chans = []
        for k, v in cp.items("dissipation"):
            parts = [s.strip() for s in v.split(",")]
            if len(parts) != 3:
                raise EprError(f"loss channel {k}: expected 'kind, p, Q'")
            chans.append(LossChannel(k, parts[0], float(parts[1]), float(parts[2])))
        diss = DissipationInput(chans)
    return EprInput(modes, juncs, np.array(p), np.array(S)), diss


def epr_report(inp: EprInput, diss: DissipationInput | None = None) -> dict:
    """JSON-ready summary of the Hamiltonian, the sum rules and the loss budget."""
    h = hamiltonian_from_epr(inp)
    v = validate_epr(inp)
    out = h.to_dict()
    out["validation"] = {
        "junction_residual": v.junction_residual.tolist(),
        "mode_excess": v.mode_excess.tolist(),
        "mode_flags": v.mode_flags.tolist(),
        "max_orthogonality": v.max_orthogonality,
    }
    if diss is not None:
        qc, qi, qt = dissipation_budget(diss)
        out["dissipation"] = {"Q_cap": qc, "Q_ind": qi, "Q_total": qt}
    return out


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
