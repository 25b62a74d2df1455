"""Stochastic and deterministic integrators.

Photodetection trajectories use the waiting-time (inverse norm) method,
heterodyne trajectories use the linear stochastic Schrodinger equation in
the record followed by renormalisation, and unmonitored channels are
sampled as jumps from the cumulative hazard of the normalised state.  A
Lindblad solver provides the ensemble oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter

from .core import DensityMatrix, destroy, normalize
from .models import ModelError, ModelSpec


class StepSizeError(ValueError):
    """Requested time step violates the stability guard."""


class IntegrationError(RuntimeError):
    """Integrator produced an unphysical result."""


def stream_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for trajectory ``index`` of a run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TrajectoryState:
    """One realisation in flight.

    ``threshold`` is the uniform ``u`` of the photodetection unraveling or
    the unit-exponential hazard target of the heterodyne one.
    """

    ket: np.ndarray
    rng: np.random.Generator
    t: float = 0.0
    log_norm: float = 0.0
    threshold: float = -1.0
    hazard: float = 0.0
    filt: complex = 0j

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.ket, self.ket).real)


@dataclass(frozen=True)
class StochIncrements:
    """Noise consumed by one heterodyne step."""

    dW: np.ndarray
    dZ: complex
    dN: tuple = ()

    @classmethod
    def draw(cls, rng: np.random.Generator, dt: float) -> "StochIncrements":
        n = rng.standard_normal(2)
        return cls(n * math.sqrt(dt), complex(n[0], n[1]) * math.sqrt(dt / 2.0))


@dataclass(frozen=True)
class ClickEvent:
    t: float
    channel: str
    detected: bool = True


@dataclass
class HeterodyneRecord:
    """Raw increments and the filtered samples derived from them."""

    raw: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    filtered: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def to_csv(self, path, assignments=None) -> None:
        rows = self.filtered
        lab = assignments if assignments is not None else [""] * len(rows)
        with open(path, "w") as fh:
            fh.write("t_us,I_rec,Q_rec,assigned_state\n")
            for (t, i, q), a in zip(rows, lab):
                fh.write(f"{t:.6f},{i:.9g},{q:.9g},{a}\n")


# ---------------------------------------------------------------------------
# propagators and guards


def rate_scale(model: ModelSpec, t: float = 0.0) -> float:
    """Largest eigenvalue magnitude of ``H_eff``; sets the step guard."""
    return float(np.abs(np.linalg.eigvals(model.H_eff(t))).max())


def propagator(model: ModelSpec, dt: float, t: float = 0.0) -> np.ndarray:
    """``exp(-i H_eff dt)`` with the Hamiltonian frozen at ``t + dt/2``."""
    return expm(-1j * model.H_eff(t + 0.5 * dt) * dt)


def drive_period_steps(model: ModelSpec, dt: float, max_steps: int = 20000) -> int:
    """Number of steps after which the midpoint phases repeat exactly."""
    deltas = [d for _, d in model.oscillating_terms() if d != 0]
    if not deltas:
        return 1
    for q in range(1, max_steps + 1):
        if all(abs(q * dt * d / (2 * math.pi) - round(q * dt * d / (2 * math.pi))) < 1e-9
               for d in deltas):
            return q
    raise StepSizeError("dt is incommensurate with the drive period")


def _check_dt(dt: float, limit: float, what: str) -> None:
    if not dt > 0:
        raise StepSizeError("dt must be positive")
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.4g} exceeds {what} limit {limit:.4g}; use dt <= {limit:.4g}")


# ---------------------------------------------------------------------------
# no-click evolution


def evolve_noclick_linear(ket, model: ModelSpec, duration: float, dt: float,
                          t0: float = 0.0) -> tuple[np.ndarray, float]:
    """Propagate the unnormalised no-click ket.

    Returns
    -------
    ket : numpy.ndarray
        Unnormalised final state.
    survival : float
        Final squared norm relative to the initial one, the probability of
        no click on any channel.
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    _check_dt(dt, 0.02 / max(rate_scale(model, t0), 1e-300), "no-click")
    psi = np.array(ket, dtype=complex)
    n0 = float(np.vdot(psi, psi).real)
    if duration == 0:
        return psi, 1.0
    n_steps = max(1, int(math.ceil(duration / dt - 1e-9)))
    h = duration / n_steps
    if model.time_dependent:
        for k in range(n_steps):
            psi = propagator(model, h, t0 + k * h) @ psi
    else:
        U = propagator(model, h)
        for _ in range(n_steps):
            psi = U @ psi
    surv = float(np.vdot(psi, psi).real) / n0
    if surv > 1 + 1e-6:
        raise IntegrationError(f"no-click norm grew to {surv:.8f}")
    return psi, surv


def noclick_series(ket, model: ModelSpec, times, dt: float) -> np.ndarray:
    """Unnormalised no-click kets at each of the increasing ``times``."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times must be non-negative and increasing")
    out = np.empty((times.size, len(ket)), dtype=complex)
    psi = np.array(ket, dtype=complex)
    t = 0.0
    for i, ti in enumerate(times):
        if ti > t:
            psi, _ = evolve_noclick_linear(psi, model, ti - t, dt, t0=t)
            t = ti
        out[i] = psi
    return out


# ---------------------------------------------------------------------------
# photodetection unraveling


def _jump_ops(model: ModelSpec):
    return [ch for ch in model.channels]


def _apply_jump(psi: np.ndarray, model: ModelSpec, u: float):
    ops = _jump_ops(model)
    w = np.array([np.vdot(c.op @ psi, c.op @ psi).real for c in ops])
    tot = w.sum()
    if not tot > 0:
        raise IntegrationError("jump requested with zero total rate")
    j = int(np.searchsorted(np.cumsum(w) / tot, u, side="right"))
    j = min(j, len(ops) - 1)
    new, _ = normalize(ops[j].op @ psi)
    return new, ops[j]


def step_jump_unravel(state: TrajectoryState, model: ModelSpec, dt: float,
                      method: str = "waiting", U: np.ndarray | None = None):
    """Advance one photodetection step.

    Parameters
    ----------
    method : {"waiting", "bernoulli"}
        ``waiting`` propagates the unnormalised ket and jumps when its
        squared norm drops below a uniform threshold drawn once per
        inter-jump interval.  ``bernoulli`` renormalises every step and
        jumps with probability ``sum <c^dag c> dt``.

    Returns
    -------
    (TrajectoryState, list of ClickEvent)
    """
    psi, nsq = normalize(state.ket) if method == "bernoulli" else (state.ket, state.norm_sq)
    tot = sum(float(np.vdot(c.op @ psi, c.op @ psi).real) for c in model.channels) / nsq
    if tot * dt >= 0.1:
        raise StepSizeError(f"dt * total jump rate = {tot * dt:.3g} >= 0.1")
    if U is None:
        U = propagator(model, dt, state.t)
    events = []
    rng = state.rng
    if method == "waiting":
        if state.threshold < 0:
            state.threshold = rng.random()
        new = U @ state.ket
        n_new = float(np.vdot(new, new).real)
        log_norm = state.log_norm + math.log(n_new / state.norm_sq)
        if n_new <= state.threshold and tot > 0:
            new, ch = _apply_jump(new, model, rng.random())
            events.append(ClickEvent(state.t + dt, ch.label, ch.monitored))
            threshold = rng.random()
        else:
            threshold = state.threshold
        out = TrajectoryState(new, rng, state.t + dt, log_norm, threshold)
        return out, events
    if method != "bernoulli":
        raise ValueError(f"unknown method {method!r}")
    if rng.random() < tot * dt:
        new, ch = _apply_jump(psi, model, rng.random())
        events.append(ClickEvent(state.t + dt, ch.label, ch.monitored))
    else:
        new, _ = normalize(U @ psi)
    return TrajectoryState(new, rng, state.t + dt, state.log_norm), events


@dataclass
class JumpEnsembleResult:
    """Ensemble averages of a batched photodetection run."""

    times: np.ndarray
    populations: np.ndarray
    n_traj: int
    first_click: np.ndarray
    n_clicks: np.ndarray


def run_jump_ensemble(model: ModelSpec, psi0, n_traj: int, duration: float, dt: float,
                      seed: int = 0, sample_every: int = 1, method: str = "waiting",
                      chunk: int = 1024) -> JumpEnsembleResult:
    """Lockstep photodetection ensemble of a time-independent model.

    Each trajectory owns the generator ``stream_rng(seed, index)`` and
    draws thresholds and channel choices from it in chronological order,
    so results do not depend on how trajectories are batched.
    """
    if model.time_dependent:
        raise ModelError("batched photodetection needs a time-independent model")
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    ops = np.array([c.op for c in model.channels])
    kdag = np.einsum("jab,jac->jbc", ops.conj(), ops)
    tot_max = np.abs(np.linalg.eigvalsh(kdag.sum(0))).max() if len(ops) else 0.0
    if tot_max * dt >= 0.1:
        raise StepSizeError(f"dt * total jump rate = {tot_max * dt:.3g} >= 0.1")
    U = propagator(model, dt)
    UT = np.ascontiguousarray(U.T)
    n_steps = int(round(duration / dt))
    n_samp = n_steps // sample_every + 1
    wts = model.atom_populations_weights()
    rngs = [stream_rng(seed, i) for i in range(n_traj)]
    psi = np.tile(np.asarray(psi0, dtype=complex), (n_traj, 1))
    psi /= np.sqrt(np.einsum("ki,ki->k", psi.conj(), psi).real)[:, None]
    pops = np.zeros((n_samp, wts.shape[0]))
    first = np.full(n_traj, np.nan)
    nclk = np.zeros(n_traj, dtype=np.int64)

    if method == "waiting":
        thr = np.array([r.random() for r in rngs])
    elif method == "bernoulli":
        block = np.zeros((n_traj, chunk))
        ptr = chunk
    else:
        raise ValueError(f"unknown method {method!r}")

    def jump(k, vec, u):
        amps = ops @ vec
        w = np.einsum("ja,ja->j", amps.conj(), amps).real
        j = min(int(np.searchsorted(np.cumsum(w) / w.sum(), u, side="right")), len(w) - 1)
        v = amps[j]
        return v / np.sqrt(np.vdot(v, v).real)

    def record(i):
        nrm = np.einsum("ki,ki->k", psi.conj(), psi).real
        p = (np.abs(psi) ** 2) / nrm[:, None]
        pops[i] = (p @ wts.T).mean(0)

    record(0)
    for s in range(1, n_steps + 1):
        if method == "waiting":
            psi = psi @ UT
            nrm = np.einsum("ki,ki->k", psi.conj(), psi).real
            hit = np.nonzero(nrm <= thr)[0]
            for k in hit:
                psi[k] = jump(k, psi[k], rngs[k].random())
                thr[k] = rngs[k].random()
                nclk[k] += 1
                if np.isnan(first[k]):
                    first[k] = s * dt
        else:
            if ptr == chunk:
                block = np.array([r.random(chunk) for r in rngs])
                ptr = 0
            nrm = np.einsum("ki,ki->k", psi.conj(), psi).real
            rate = np.einsum("ki,jil,kl->k", psi.conj(), kdag, psi).real / nrm
            hit = block[:, ptr] < rate * dt
            ptr += 1
            new = psi @ UT
            for k in np.nonzero(hit)[0]:
                new[k] = jump(k, psi[k], rngs[k].random())
                nclk[k] += 1
                if np.isnan(first[k]):
                    first[k] = s * dt
            psi = new / np.sqrt(np.einsum("ki,ki->k", new.conj(), new).real)[:, None]
        if s % sample_every == 0:
            record(s // sample_every)
    times = np.arange(n_samp) * sample_every * dt
    return JumpEnsembleResult(times, pops, n_traj, first, nclk)


# ---------------------------------------------------------------------------
# Lindblad oracle


def liouvillian(model: ModelSpec, t: float = 0.0, channels=None) -> np.ndarray:
    """Superoperator acting on row-major ``vec(rho)``."""
    H = model.hamiltonian(t)
    d = model.dim
    I = np.eye(d)
    L = -1j * (np.kron(H, I) - np.kron(I, H.T))
    for ch in (model.channels if channels is None else channels):
        c = ch.op if hasattr(ch, "op") else ch
        cdc = c.conj().T @ c
        L += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, I) - 0.5 * np.kron(I, cdc.T)
    return L


def _as_rho(rho0) -> np.ndarray:
    return np.array(rho0.matrix if isinstance(rho0, DensityMatrix) else rho0, dtype=complex)


def evolve_lindblad(model: ModelSpec, rho0, duration: float, dt: float,
                    t0: float = 0.0) -> DensityMatrix:
    """Integrate the master equation over ``duration``.

    Time-independent models with ``dim <= 40`` use the exact matrix
    exponential of the Liouvillian; everything else uses classical RK4
    with step ``dt``.
    """
    rho = _as_rho(DensityMatrix(_as_rho(rho0)))
    d = model.dim
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if not model.time_dependent and d <= 40:
        v = expm(liouvillian(model) * duration) @ rho.ravel()
        rho = v.reshape(d, d)
    else:
        n = max(1, int(math.ceil(duration / dt - 1e-9)))
        h = duration / n

        def f(t, r):
            H = model.hamiltonian(t)
            out = -1j * (H @ r - r @ H)
            for ch in model.channels:
                c = ch.op
                cd = c.conj().T
                out += c @ r @ cd - 0.5 * (cd @ c @ r + r @ cd @ c)
            return out

        t = t0
        for _ in range(n):
            k1 = f(t, rho)
            k2 = f(t + h / 2, rho + h / 2 * k1)
            k3 = f(t + h / 2, rho + h / 2 * k2)
            k4 = f(t + h, rho + h * k3)
            rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
    tr = np.trace(rho).real
    if abs(tr - 1) > 1e-6:
        raise IntegrationError(f"trace drifted to {tr:.9f}; reduce dt")
    rho = 0.5 * (rho + rho.conj().T) / tr
    return DensityMatrix(rho)


def lindblad_series(model: ModelSpec, rho0, times) -> np.ndarray:
    """Exact density matrices of a time-independent model on a uniform grid."""
    times = np.asarray(times, dtype=float)
    if model.time_dependent:
        raise ModelError("lindblad_series needs a time-independent model")
    d = model.dim
    step = np.diff(times)
    if step.size and np.ptp(step) > 1e-9 * max(1.0, abs(step[0])):
        raise ValueError("times must be uniformly spaced")
    P = expm(liouvillian(model) * (step[0] if step.size else 0.0))
    v = _as_rho(rho0).ravel()
    v = expm(liouvillian(model) * times[0]) @ v if times.size and times[0] else v
    out = np.empty((times.size, d, d), dtype=complex)
    for i in range(times.size):
        out[i] = v.reshape(d, d)
        v = P @ v
    return out


# ---------------------------------------------------------------------------
# record filter


def filter_gain(cav) -> float:
    return (cav.eta * cav.kappa / 2.0) ** -0.5


def filter_record(dJ, cav, dt: float, state: complex = 0j):
    """Low-pass and boxcar-average a complex record.

    Parameters
    ----------
    dJ : array_like of complex
        Raw increments, one per step, starting at a window boundary.
    cav : CavityParams
    dt : float
    state : complex
        Filter output ``I + iQ`` before the first increment.

    Returns
    -------
    samples : numpy.ndarray of complex
        One ``I_rec + i Q_rec`` value per ``T_int`` window.
    state : complex
        Filter output after the last increment.
    """
    n_win = cav.T_int / dt
    if abs(n_win - round(n_win)) > 1e-6:
        raise ValueError("T_int is not an integer multiple of dt")
    n_win = int(round(n_win))
    dJ = np.asarray(dJ, dtype=complex)
    if dJ.size % n_win:
        raise ValueError("record length is not a whole number of windows")
    a = math.exp(-cav.kappa_filter * dt / 2.0)
    x = (1 - a) * filter_gain(cav) * dJ / dt
    if math.isinf(cav.kappa_filter):
        y = filter_gain(cav) * dJ / dt
    else:
        y, _ = lfilter([1.0], [1.0, -a], x, zi=[a * state])
    samples = y.reshape(-1, n_win).mean(axis=1)
    return samples, (y[-1] if y.size else state)


# ---------------------------------------------------------------------------
# heterodyne unraveling


KIND_ATOM, KIND_LOWER, KIND_RAISE = 0, 1, 2


def coherent_ket(alpha: complex, n: int) -> np.ndarray:
    """Truncated coherent state on ``n`` Fock levels (renormalised)."""
    k = np.arange(n)
    from scipy.special import gammaln
    logmag = -0.5 * abs(alpha) ** 2 + k * np.log(abs(alpha) + 1e-300) - 0.5 * gammaln(k + 1)
    v = np.exp(logmag) * np.exp(1j * np.angle(alpha) * k)
    if alpha == 0:
        v = np.zeros(n, dtype=complex)
        v[0] = 1.0
    return v / np.linalg.norm(v)


def cavity_steady_amplitudes(cav, atom_dim: int = 4) -> np.ndarray:
    """Coherent amplitude the probe builds up for each atom level."""
    shift = np.zeros(atom_dim)
    shift[1] = cav.chi_B
    shift[2] = cav.chi_D
    eps = 0.5 * cav.kappa * math.sqrt(cav.n_bar)
    return eps / (0.5 * cav.kappa - 1j * (cav.delta_R - shift))


@dataclass
class ChannelTable:
    """Unmonitored channels in the form the kernel consumes."""

    labels: tuple
    kind: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    weights: np.ndarray

    @property
    def total_weights(self) -> np.ndarray:
        return self.weights.sum(axis=0) if len(self.labels) else np.zeros(self.weights.shape[1])


def channel_table(model: ModelSpec) -> ChannelTable:
    """Classify each unmonitored jump of a cQED model.

    Every operator must be an atom matrix unit times the cavity identity
    or a multiple of the cavity ladder operators.  Photon loss of the
    monitored channel at rate ``(1 - eta) kappa`` is appended.
    """
    na, nc = model.space.factor_dims
    d = model.dim
    a = destroy(nc)
    labels, kind, src, dst, rate, wts = [], [], [], [], [], []
    chans = [(ch.label, ch.op) for ch in model.unmonitored_channels()]
    for ch in model.monitored_channels():
        loss = 1.0 - ch.efficiency
        if loss > 0:
            chans.append(("photon-loss", math.sqrt(loss) * ch.op))
    for label, op in chans:
        found = False
        for i in range(na):
            for j in range(na):
                blk = op[i * nc:(i + 1) * nc, j * nc:(j + 1) * nc]
                if np.abs(blk).max() == 0:
                    continue
                r = abs(blk[0, 0]) ** 2
                unit = np.zeros((na, na))
                unit[i, j] = 1.0
                if np.allclose(op, math.sqrt(r) * np.kron(unit, np.eye(nc)), atol=1e-12):
                    labels.append(label)
                    kind.append(KIND_ATOM)
                    src.append(j)
                    dst.append(i)
                    rate.append(r)
                    w = np.zeros(d)
                    w[j * nc:(j + 1) * nc] = r
                    wts.append(w)
                    found = True
                break
            if found:
                break
        if found:
            continue
        for kd, base in ((KIND_LOWER, a), (KIND_RAISE, a.conj().T)):
            full = np.kron(np.eye(na), base)
            r = (np.abs(op).max() / np.abs(full).max()) ** 2
            if np.allclose(op, math.sqrt(r) * full, atol=1e-12 * max(1.0, np.abs(op).max())):
                labels.append(label)
                kind.append(kd)
                src.append(-1)
                dst.append(-1)
                rate.append(r)
                wts.append(r * np.real(np.diag(full.conj().T @ full)))
                found = True
                break
        if not found:
            raise ModelError(f"channel {label!r} has no supported kernel form")
    return ChannelTable(tuple(labels), np.array(kind, dtype=np.int64),
                        np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                        np.array(rate, dtype=float), np.array(wts).reshape(len(labels), d))


def heterodyne_step_limit(model: ModelSpec) -> float:
    cav = model.cavity_params
    at = model.atom_params
    scales = [cav.kappa, abs(cav.chi_B)]
    om = getattr(at.drive, "omega_B0", 0.0)
    if om:
        scales.append(om)
    lim = 0.02 / max(scales)
    for _, d in model.oscillating_terms():
        if d:
            lim = min(lim, 1.0 / (50.0 * abs(d) / (2 * math.pi)))
    return lim


@dataclass
class PropagatorTables:
    """Midpoint propagators over one drive period, transposed for row kets."""

    dt: float
    period: int
    UT: np.ndarray
    UT_gated: np.ndarray | None = None
    blocks: tuple = ()

    def __post_init__(self):
        if not self.blocks:
            self.blocks = _diagonal_blocks(self.UT, self.UT_gated)
        self._parts = [(a, b, np.ascontiguousarray(self.UT[:, a:b, a:b]),
                        None if self.UT_gated is None
                        else np.ascontiguousarray(self.UT_gated[:, a:b, a:b]))
                       for a, b in self.blocks]

    def apply(self, psi, out, k: int, gated_rows=None) -> None:
        """``out = psi @ UT[k]`` blockwise, with gated rows using the gated table."""
        for a, b, T, Tg in self._parts:
            np.matmul(psi[:, a:b], T[k], out=out[:, a:b])
            if gated_rows is not None and gated_rows.size:
                out[gated_rows, a:b] = psi[gated_rows, a:b] @ Tg[k]

    @classmethod
    def build(cls, model: ModelSpec, dt: float, gate: str | None = None) -> "PropagatorTables":
        q = drive_period_steps(model, dt)
        UT = np.empty((q, model.dim, model.dim), dtype=complex)
        for k in range(q):
            UT[k] = _flush(propagator(model, dt, k * dt).T)
        UTg = None
        if gate is not None:
            gm = model.drive_gate(gate, False)
            UTg = np.empty_like(UT)
            for k in range(q):
                UTg[k] = _flush(propagator(gm, dt, k * dt).T)
        return cls(dt, q, UT, UTg)


def _diagonal_blocks(UT, UTg=None) -> tuple:
    """Contiguous diagonal blocks outside of which every table entry is zero."""
    mask = np.any(UT != 0, axis=0)
    if UTg is not None:
        mask |= np.any(UTg != 0, axis=0)
    d = mask.shape[0]
    blocks, start, reach = [], 0, 0
    for i in range(d):
        nz = np.nonzero(mask[i] | mask[:, i])[0]
        reach = max(reach, nz.max() if nz.size else i)
        if reach == i:
            blocks.append((start, i + 1))
            start = i + 1
    return tuple(blocks)


def _flush(m: np.ndarray, floor: float = 1e-20) -> np.ndarray:
    # entries this small are round-off; zeroing them keeps BLAS off subnormals
    m = m.copy()
    m[np.abs(m) < floor] = 0.0
    return m


def step_heterodyne(state: TrajectoryState, model: ModelSpec, dt: float,
                    incr: StochIncrements | None = None,
                    tables: PropagatorTables | None = None, step_index: int | None = None):
    """One heterodyne step of a single trajectory.

    The ket is expected normalised.  ``incr`` supplies the Wiener
    increment; otherwise it is drawn from ``state.rng``.  Jumps of the
    unmonitored channels fire when the accumulated hazard of the
    normalised state reaches ``state.threshold`` (unit exponential).

    Returns
    -------
    (TrajectoryState, dJ, list of ClickEvent)
    """
    cav = model.cavity_params
    if cav is None:
        raise ModelError("heterodyne step needs a cQED model")
    _check_dt(dt, heterodyne_step_limit(model), "heterodyne")
    k = int(round(state.t / dt)) if step_index is None else step_index
    if tables is not None:
        U = tables.UT[k % tables.period].T
    else:
        U = propagator(model, dt, state.t)
    rng = state.rng
    if incr is None:
        incr = StochIncrements.draw(rng, dt)
    c = model.cavity_lowering()
    psi = state.ket
    sk = math.sqrt(cav.eta * cav.kappa)
    cexp = np.vdot(psi, c @ psi) / np.vdot(psi, psi).real
    dJ = sk * cexp * dt + incr.dZ
    if not np.isfinite(dJ):
        raise IntegrationError("non-finite record increment")
    x = sk * np.conj(dJ)
    psi = U @ psi
    cpsi = c @ psi
    psi = psi + x * cpsi + 0.5 * x * x * (c @ cpsi)
    psi, _ = normalize(psi)

    a = math.exp(-cav.kappa_filter * dt / 2.0)
    g = filter_gain(cav)
    filt = a * state.filt + (1 - a) * g * dJ / dt

    tab = channel_table(model)
    thr = state.threshold if state.threshold > 0 else rng.standard_exponential()
    p = np.abs(psi) ** 2
    hazard = state.hazard + float(tab.total_weights @ p) * dt
    events = []
    if len(tab.labels) and hazard >= thr:
        rates = tab.weights @ p
        u = rng.random()
        j = min(int(np.searchsorted(np.cumsum(rates) / rates.sum(), u, side="right")),
                len(rates) - 1)
        psi = _kernel_jump_py(psi, tab, j, model.space.factor_dims)
        events.append(ClickEvent(state.t + dt, tab.labels[j], False))
        hazard = 0.0
        thr = rng.standard_exponential()
    out = TrajectoryState(psi, rng, state.t + dt, state.log_norm, thr, hazard, filt)
    return out, dJ, events


def _kernel_jump_py(psi, tab: ChannelTable, j: int, dims) -> np.ndarray:
    na, nc = dims
    m = psi.reshape(na, nc)
    out = np.zeros_like(m)
    sq = np.sqrt(np.arange(nc))
    if tab.kind[j] == KIND_ATOM:
        out[tab.dst[j]] = m[tab.src[j]]
    elif tab.kind[j] == KIND_LOWER:
        out[:, :-1] = m[:, 1:] * sq[1:]
    else:
        out[:, 1:] = m[:, :-1] * sq[1:]
    v, _ = normalize(out.ravel())
    return v


@nb.njit(cache=True, nogil=True)
def _apply_channel(row, kind, src, dst, na, nc, sqrtn):
    d = na * nc
    tmp = np.zeros(d, dtype=np.complex128)
    if kind == 0:
        for n in range(nc):
            tmp[dst * nc + n] = row[src * nc + n]
    elif kind == 1:
        for a in range(na):
            for n in range(nc - 1):
                tmp[a * nc + n] = sqrtn[n + 1] * row[a * nc + n + 1]
    else:
        for a in range(na):
            for n in range(1, nc):
                tmp[a * nc + n] = sqrtn[n] * row[a * nc + n - 1]
    s = 0.0
    for i in range(d):
        s += tmp[i].real ** 2 + tmp[i].imag ** 2
    s = 1.0 / math.sqrt(s)
    for i in range(d):
        row[i] = tmp[i] * s


@nb.njit(cache=True, nogil=True, fastmath=True)
def _het_kernel(psi, cexp, step, noise, s_in_win, sk, dt, sqrtn, na, nc,
                filt, acc, a_f, gain, wtot, wch, kind, src, dst,
                hazard, thresh, exp_pool, uni_pool, ptr, dJ_out, ev_step, ev_ch, n_ev):
    K = psi.shape[0]
    d = psi.shape[1]
    nch = wch.shape[0]
    sq = math.sqrt(dt / 2.0)
    rates = np.empty(max(nch, 1))
    err = 0
    for k in range(K):
        row = psi[k]
        dJ = sk * cexp[k] * dt + complex(noise[k, s_in_win, 0] * sq,
                                         noise[k, s_in_win, 1] * sq)
        dJ_out[k, s_in_win] = dJ
        x = sk * dJ.conjugate()
        hx = 0.5 * x * x
        # measurement update (I + x c + x^2 c^2 / 2), in place: reads ahead only
        nrm = 0.0
        for a in range(na):
            base = a * nc
            for n in range(nc):
                i = base + n
                v = row[i]
                if n + 1 < nc:
                    v += x * sqrtn[n + 1] * row[i + 1]
                    if n + 2 < nc:
                        v += hx * sqrtn[n + 1] * sqrtn[n + 2] * row[i + 2]
                row[i] = v
                nrm += v.real * v.real + v.imag * v.imag
        sc = 1.0 / math.sqrt(nrm)
        h = 0.0
        ce = 0j
        for a in range(na):
            base = a * nc
            prev = 0j
            for n in range(nc):
                i = base + n
                v = row[i] * sc
                row[i] = v
                h += wtot[i] * (v.real * v.real + v.imag * v.imag)
                if n > 0:
                    ce += prev.conjugate() * sqrtn[n] * v
                prev = v
        fi = a_f * filt[k, 0] + (1.0 - a_f) * gain * dJ.real / dt
        fq = a_f * filt[k, 1] + (1.0 - a_f) * gain * dJ.imag / dt
        filt[k, 0] = fi
        filt[k, 1] = fq
        acc[k, 0] += fi
        acc[k, 1] += fq
        hazard[k] += h * dt
        if nch > 0 and hazard[k] >= thresh[k]:
            p = ptr[k]
            if p >= exp_pool.shape[1]:
                err = 1
                continue
            tot = 0.0
            for j in range(nch):
                r = 0.0
                for i in range(d):
                    v = row[i]
                    r += wch[j, i] * (v.real * v.real + v.imag * v.imag)
                rates[j] = r
                tot += r
            u = uni_pool[k, p] * tot
            cum = 0.0
            jsel = nch - 1
            for j in range(nch):
                cum += rates[j]
                if u < cum:
                    jsel = j
                    break
            _apply_channel(row, kind[jsel], src[jsel], dst[jsel], na, nc, sqrtn)
            ne = n_ev[k]
            if ne < ev_step.shape[1]:
                ev_step[k, ne] = step
                ev_ch[k, ne] = jsel
            n_ev[k] = ne + 1
            hazard[k] = 0.0
            thresh[k] = exp_pool[k, p]
            ptr[k] = p + 1
            ce = 0j
            for a in range(na):
                base = a * nc
                for n in range(nc - 1):
                    ce += row[base + n].conjugate() * sqrtn[n + 1] * row[base + n + 1]
        cexp[k] = ce
    return err


@nb.njit(cache=True, nogil=True)
def _atom_moments(psi, na, nc, rho_out):
    K = psi.shape[0]
    for k in range(K):
        for a in range(na):
            for b in range(na):
                s = 0j
                for n in range(nc):
                    s += complex(psi[k, a * nc + n]) * complex(psi[k, b * nc + n]).conjugate()
                rho_out[k, a, b] = s


@dataclass
class WindowOutput:
    """Per-stream results of one integration window."""

    t_end: float
    samples: np.ndarray
    rho_atom: np.ndarray
    events: list


class HeterodyneBatch:
    """Lockstep heterodyne trajectories of the cQED model.

    Each stream ``i`` draws all its noise from ``stream_rng(seed, i)``
    in window-sized blocks, so its history is independent of how many
    other streams run alongside it.

    Parameters
    ----------
    model : ModelSpec
        cQED model.
    n_streams : int
    seed : int
    dt : float
    gate : str, optional
        Drive that may be switched off per stream (``"Omega_DG"``).
    first_index : int
        Stream numbering offset, so several batches form one ensemble.
    """

    POOL = 160

    def __init__(self, model: ModelSpec, n_streams: int, seed: int, dt: float = 5e-4,
                 gate: str | None = None, first_index: int = 0,
                 tables: PropagatorTables | None = None, psi0=None):
        if model.cavity_params is None:
            raise ModelError("HeterodyneBatch needs a cQED model")
        _check_dt(dt, heterodyne_step_limit(model), "heterodyne")
        cav = model.cavity_params
        n_win = cav.T_int / dt
        if abs(n_win - round(n_win)) > 1e-6:
            raise StepSizeError("T_int is not an integer multiple of dt")
        self.model = model
        self.cav = cav
        self.dt = dt
        self.n_win = int(round(n_win))
        self.K = int(n_streams)
        self.na, self.nc = model.space.factor_dims
        self.tables = tables or PropagatorTables.build(model, dt, gate)
        self.rngs = [stream_rng(seed, first_index + i) for i in range(self.K)]
        self.chan = channel_table(model)
        self.sqrtn = np.sqrt(np.arange(self.nc, dtype=float))
        self.sk = math.sqrt(cav.eta * cav.kappa)
        self.a_f = math.exp(-cav.kappa_filter * dt / 2.0)
        self.gain = filter_gain(cav)
        if psi0 is None:
            alpha = cavity_steady_amplitudes(cav, self.na)
            psi0 = np.kron(np.eye(self.na)[0], coherent_ket(alpha[0], self.nc))
        psi0 = np.asarray(psi0, dtype=complex)
        psi0 = psi0 / np.linalg.norm(psi0)
        self.psi = np.ascontiguousarray(np.tile(psi0, (self.K, 1)))
        self.buf = np.empty_like(self.psi)
        c = destroy(self.nc)
        self.cexp = np.full(self.K, np.vdot(psi0, np.kron(np.eye(self.na), c) @ psi0),
                            dtype=complex)
        self.filt = np.zeros((self.K, 2))
        self.hazard = np.zeros(self.K)
        self.thresh = np.array([r.standard_exponential() for r in self.rngs])
        self.gated = np.zeros(self.K, dtype=bool)
        self.step = 0
        self.last_noise = None
        self.last_dJ = None

    @property
    def t(self) -> float:
        return self.step * self.dt

    def set_gate(self, mask) -> None:
        mask = np.asarray(mask, dtype=bool)
        if mask.any() and self.tables.UT_gated is None:
            raise ModelError("batch was built without a gated propagator table")
        self.gated = mask.copy()

    def replace_streams(self, idx, kets) -> None:
        """Overwrite selected kets (used for state preparation)."""
        c = np.kron(np.eye(self.na), destroy(self.nc))
        for i, v in zip(np.atleast_1d(idx), np.atleast_2d(kets)):
            v = np.asarray(v, dtype=complex)
            v = v / np.linalg.norm(v)
            self.psi[i] = v
            self.cexp[i] = np.vdot(v, c @ v)

    def advance_window(self) -> WindowOutput:
        S = self.n_win
        noise = np.stack([r.standard_normal((S, 2)) for r in self.rngs])
        exp_pool = np.stack([r.standard_exponential(self.POOL) for r in self.rngs])
        uni_pool = np.stack([r.random(self.POOL) for r in self.rngs])
        ptr = np.zeros(self.K, dtype=np.int64)
        acc = np.zeros((self.K, 2))
        dJ = np.empty((self.K, S), dtype=complex)
        ev_step = np.zeros((self.K, self.POOL), dtype=np.int64)
        ev_ch = np.zeros((self.K, self.POOL), dtype=np.int64)
        n_ev = np.zeros(self.K, dtype=np.int64)
        ch = self.chan
        wtot = ch.total_weights
        q = self.tables.period
        gidx = np.nonzero(self.gated)[0]
        for s in range(S):
            k = self.step % q
            self.tables.apply(self.psi, self.buf, k, gidx)
            self.psi, self.buf = self.buf, self.psi
            self.step += 1
            err = _het_kernel(self.psi, self.cexp, self.step, noise, s, self.sk, self.dt,
                              self.sqrtn, self.na, self.nc, self.filt, acc, self.a_f,
                              self.gain, wtot, ch.weights, ch.kind, ch.src, ch.dst,
                              self.hazard, self.thresh, exp_pool, uni_pool, ptr, dJ,
                              ev_step, ev_ch, n_ev)
            if err:
                raise IntegrationError("jump pool exhausted within one window; reduce dt")
        rho = np.empty((self.K, self.na, self.na), dtype=complex)
        _atom_moments(self.psi, self.na, self.nc, rho)
        events = [[(int(ev_step[k, e]) * self.dt, ch.labels[ev_ch[k, e]])
                   for e in range(min(n_ev[k], self.POOL))] for k in range(self.K)]
        self.last_noise = noise
        self.last_dJ = dJ
        samples = (acc[:, 0] + 1j * acc[:, 1]) / S
        return WindowOutput(self.t, samples, rho, events)
