"""Real-time logic: hysteretic IQ assignment, the catch state machine and
the reversal pulse.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np
from scipy.stats import norm

from .models import B, D, G, ModelSpec

Angle = Union[float, Callable[[float], float]]

ACTIONS = ("none", "gate_DG_off", "fire_catch", "declare_B")
PHASES = ("PrepareB", "MonitorOn", "MonitorOff", "Fired", "Done")


class ControllerError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterThresholds:
    """Decision levels in filtered-record units.

    ``phase`` is the demodulation angle: raw samples are rotated by
    ``exp(-i phase)`` so the B/not-B separation lies along ``+I`` before
    the levels are applied.
    """

    I_B: float
    I_Bbar: float
    Q_B: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.I_Bbar < self.I_B:
            raise ValueError(f"need I_Bbar < I_B, got {self.I_Bbar} >= {self.I_B}")

    def rotate(self, samples):
        """Raw ``I + iQ`` samples in the decision frame."""
        return np.asarray(samples) * np.exp(-1j * self.phase)


def iq_classify(I_rec: float, Q_rec: float, prev: str, thr: FilterThresholds) -> str:
    """Two-point hysteretic assignment, returning ``"B"`` or ``"notB"``."""
    if Q_rec >= thr.Q_B or I_rec > thr.I_B:
        return "B"
    if I_rec < thr.I_Bbar:
        return "notB"
    return prev


def iq_classify_array(I_rec, Q_rec, prev_is_B, thr: FilterThresholds) -> np.ndarray:
    """Vectorised ``iq_classify``; ``True`` means B."""
    I_rec = np.asarray(I_rec)
    Q_rec = np.asarray(Q_rec)
    is_B = (Q_rec >= thr.Q_B) | (I_rec > thr.I_B)
    not_B = ~is_B & (I_rec < thr.I_Bbar)
    return np.where(is_B, True, np.where(not_B, False, prev_is_B))


def classify_stream(samples, thr: FilterThresholds, start: str = "B") -> list:
    """Assignments for a sequence of complex ``I + iQ`` samples."""
    out, prev = [], start
    for s in samples:
        prev = iq_classify(s.real, s.imag, prev, thr)
        out.append(prev)
    return out


@dataclass(frozen=True)
class ControllerConfig:
    """Counter targets and reversal angles.

    ``theta_I`` and ``phi_I`` are either constants or functions of the
    catch time.  With ``rearm`` the controller returns to waiting for B
    after firing instead of stopping.
    """

    T_int: float
    N_on: int
    N_off: int = 0
    theta_I: Angle = math.pi / 2
    phi_I: Angle = math.pi / 2
    gate_DG_during_off: bool = True
    rearm: bool = False
    latency: float = 0.0

    def __post_init__(self):
        if self.N_on < 1 or self.N_off < 0:
            raise ValueError("need N_on >= 1 and N_off >= 0")
        if not self.T_int > 0:
            raise ValueError("T_int must be positive")

    @property
    def dt_catch(self) -> float:
        return (self.N_on + self.N_off) * self.T_int

    def angles(self, dt_catch: float | None = None) -> tuple[float, float]:
        t = self.dt_catch if dt_catch is None else dt_catch
        th = self.theta_I(t) if callable(self.theta_I) else self.theta_I
        ph = self.phi_I(t) if callable(self.phi_I) else self.phi_I
        if not (math.isfinite(th) and math.isfinite(ph)):
            raise ValueError("intervention angles must be finite")
        return float(th), float(ph)


@dataclass(frozen=True)
class ControllerState:
    phase: str = "PrepareB"
    cnt: int = 0
    last_assignment: str = "notB"
    catch_time: float | None = None


def controller_step(state: ControllerState, assignment: str, cfg: ControllerConfig):
    """Advance the monitor-and-catch machine by one record sample.

    Every notB sample after the last B, including the first, adds one to
    the counter, so the catch time is ``cnt * T_int`` measured from the
    end of the last B sample.

    Returns
    -------
    (ControllerState, str)
        New state and one of ``none``, ``gate_DG_off``, ``fire_catch``,
        ``declare_B``.
    """
    if assignment not in ("B", "notB"):
        raise ValueError(f"assignment must be 'B' or 'notB', got {assignment!r}")
    if state.phase == "Done":
        raise ControllerError("controller stepped after Done")
    if state.phase == "Fired":
        if not cfg.rearm:
            return replace(state, phase="Done", last_assignment=assignment), "none"
        state = replace(state, phase="PrepareB")
    if assignment == "B":
        return ControllerState("MonitorOn", 0, "B", None), "declare_B"
    if state.phase == "PrepareB":
        return replace(state, last_assignment="notB"), "none"
    cnt = state.cnt + 1
    total = cfg.N_on + cfg.N_off
    if cnt == total:
        return ControllerState("Fired", cnt, "notB", cnt * cfg.T_int), "fire_catch"
    if cnt == cfg.N_on:
        act = "gate_DG_off" if cfg.gate_DG_during_off else "none"
        return ControllerState("MonitorOff", cnt, "notB", None), act
    return ControllerState(state.phase, cnt, "notB", None), "none"


def run_controller(assignments, cfg: ControllerConfig, state: ControllerState | None = None):
    """Feed a whole assignment stream; returns the list of (index, action)."""
    st = state or ControllerState()
    acts = []
    for i, a in enumerate(assignments):
        if st.phase == "Done":
            break
        st, act = controller_step(st, a, cfg)
        if act != "none":
            acts.append((i, act))
    return st, acts


# ---------------------------------------------------------------------------
# reversal pulse


def gd_pauli(atom_dim: int = 3):
    """``sigma_x, sigma_y, sigma_z`` of the GD manifold with D as the up state."""
    sx = np.zeros((atom_dim, atom_dim), dtype=complex)
    sy = np.zeros_like(sx)
    sz = np.zeros_like(sx)
    sx[G, D] = sx[D, G] = 1.0
    sy[G, D] = 1j
    sy[D, G] = -1j
    sz[D, D] = 1.0
    sz[G, G] = -1.0
    return sx, sy, sz


def intervention_unitary(theta_I: float, phi_I: float, atom_dim: int = 3,
                         n_cav: int = 1) -> np.ndarray:
    """Rotation by ``theta_I`` about the GD equatorial axis at azimuth ``phi_I``.

    Acts as the identity on B, F and the cavity.
    """
    c, s = math.cos(theta_I / 2.0), math.sin(theta_I / 2.0)
    R = np.eye(atom_dim, dtype=complex)
    # exp(-i theta/2 (cos phi sx + sin phi sy)) restricted to span{G, D}
    e = complex(math.cos(phi_I), math.sin(phi_I))
    R[G, G] = c
    R[D, D] = c
    R[G, D] = -1j * s * e
    R[D, G] = -1j * s * e.conjugate()
    return np.kron(R, np.eye(n_cav)) if n_cav > 1 else R


def default_angles(Z: float, X: float) -> tuple[float, float]:
    """Angles that rotate the Bloch vector ``(X, 0, Z)`` onto G."""
    return math.pi - math.atan2(X, Z), math.pi / 2


# ---------------------------------------------------------------------------
# threshold calibration


def pinned_model(model: ModelSpec) -> ModelSpec:
    """Copy of a cQED model with the atom frozen: atom drives and jumps removed."""
    cav_ch = tuple(c for c in model.channels if c.monitored or c.label.startswith("cavity"))
    names = frozenset(d.name for d in model.drives if d.name != "probe")
    return replace(model, channels=cav_ch, gated_off=names)


@dataclass(frozen=True)
class Calibration:
    thresholds: FilterThresholds
    mean_B: complex
    mean_G: complex
    sigma_I: tuple
    sigma_Q: float


def thresholds_from_samples(s_B, s_G, n_sigma_I: float = 1.5,
                            n_sigma_Q: float = 3.0) -> Calibration:
    """Place the decision levels from pinned-state sample clouds.

    The clouds are first rotated so that their mean separation lies
    along ``+I``; the returned means and widths refer to that frame.
    """
    phase = float(np.angle(np.mean(s_B) - np.mean(s_G)))
    s_B = np.asarray(s_B) * np.exp(-1j * phase)
    s_G = np.asarray(s_G) * np.exp(-1j * phase)
    muB, sdB = norm.fit(s_B.real)
    muG, sdG = norm.fit(s_G.real)
    muQ, sdQ = norm.fit(s_G.imag)
    thr = FilterThresholds(I_B=muB - n_sigma_I * sdB, I_Bbar=muG + n_sigma_I * sdG,
                           Q_B=muQ + n_sigma_Q * sdQ, phase=phase)
    return Calibration(thr, complex(muB, s_B.imag.mean()), complex(muG, muQ), (sdB, sdG), sdQ)


def calibrate_thresholds(model: ModelSpec, n_streams: int = 256, n_windows: int = 40,
                         seed: int = 0, dt: float = 5e-4, burn: int = 4) -> Calibration:
    """Simulate the atom pinned in B and in G and fit the record clouds."""
    from .engine import HeterodyneBatch, cavity_steady_amplitudes, coherent_ket

    pm = pinned_model(model)
    cav = model.cavity_params
    na, nc = model.space.factor_dims
    alpha = cavity_steady_amplitudes(cav, na)
    clouds = []
    for j, lev in enumerate((B, G)):
        psi0 = np.kron(np.eye(na)[lev], coherent_ket(alpha[lev], nc))
        batch = HeterodyneBatch(pm, n_streams, seed, dt, first_index=j * n_streams, psi0=psi0)
        out = [batch.advance_window().samples for _ in range(n_windows)]
        clouds.append(np.concatenate(out[burn:]))
    return thresholds_from_samples(*clouds)


def export_decisions(path, records) -> None:
    """Write one JSON object per trajectory.

    Each record needs ``trajectory_id``, ``click_times``, ``catch_time``
    and ``action``.
    """
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({k: r[k] for k in
                                 ("trajectory_id", "click_times", "catch_time", "action")})
                     + "\n")
