"""Conditional ensembles, fits and efficiency bookkeeping.

A sample starts at a click (an assignment change from B to not-B) and
ends at the next change back to B.  While it lasts, the atom state at
every multiple of ``T_int`` after the click is added to running sums,
which are merged into the ensemble only when the sample terminates.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq, least_squares, minimize
from scipy.special import erfc

from .controller import (Calibration, ControllerConfig, ControllerState, FilterThresholds,
                         calibrate_thresholds, controller_step, default_angles,
                         intervention_unitary, iq_classify_array)
from .engine import HeterodyneBatch, propagator, stream_rng
from .models import B, D, G, ModelError, ModelSpec, atom_jump_channels


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# tomogram bookkeeping


@dataclass
class ConditionalTomogram:
    """Ensemble-averaged GD Bloch vector versus catch time.

    ``rho_mean`` holds the plain average of the atom density matrix over
    the samples that reached each grid point; the Bloch components carry
    the B-population correction of the denominator.
    """

    grid: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    P_BB: np.ndarray
    N_surviving: np.ndarray
    n_total: int
    rho_mean: np.ndarray | None = None

    @classmethod
    def from_sums(cls, grid, rho_sum, counts, n_total) -> "ConditionalTomogram":
        counts = np.asarray(counts)
        with np.errstate(invalid="ignore", divide="ignore"):
            pbb = rho_sum[:, B, B].real
            den = counts - pbb
            Z = (rho_sum[:, D, D].real - rho_sum[:, G, G].real) / den
            gd = rho_sum[:, G, D]
            X = 2 * gd.real / den
            Y = 2 * gd.imag / den
            P = pbb / counts
            rho_mean = rho_sum / counts[:, None, None]
        miss = counts == 0
        for arr in (Z, X, Y, P):
            arr[miss] = np.nan
        rho_mean[miss] = np.nan
        return cls(np.asarray(grid, dtype=float), Z, X, Y, P, counts.astype(np.int64),
                   int(n_total), rho_mean)

    @property
    def valid(self) -> np.ndarray:
        return self.N_surviving > 0

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("dt_catch_us,Z,X,Y,P_BB,N_surviving\n")
            for row in zip(self.grid, self.Z, self.X, self.Y, self.P_BB, self.N_surviving):
                t, z, x, y, p, n = row
                fh.write(f"{t:.6f},{z:.9g},{x:.9g},{y:.9g},{p:.9g},{int(n)}\n")


@dataclass
class CatchRunResult:
    """Everything one monitored ensemble run produces."""

    tomogram: ConditionalTomogram
    notB_durations: np.ndarray
    B_durations: np.ndarray
    control_rho: np.ndarray
    control_n: int
    average_rho: np.ndarray
    average_n: int
    calibration: Calibration | None
    sim_time: float
    n_windows: int
    fire_rho: np.ndarray | None = None
    fire_n: int = 0


def _grid_size(grid_max: float, T: float) -> int:
    return max(1, int(round(grid_max / T)))


def run_catch_ensemble(model: ModelSpec, cfg: ControllerConfig, n_traj: int,
                       grid_max: float = 12.0, seed: int = 0, n_streams: int = 256,
                       dt: float = 5e-4, warmup: float = 5.0,
                       thresholds: FilterThresholds | None = None,
                       control_time: float = 5.0, max_time: float | None = None,
                       progress=None, calib_streams: int = 256) -> CatchRunResult:
    """Monitor a cQED ensemble and build the conditional tomogram.

    Parameters
    ----------
    model : ModelSpec
        cQED model; for the bare three-level model use
        ``ideal_catch_tomogram``.
    cfg : ControllerConfig
        Counter targets.  When ``cfg.gate_DG_during_off`` is set, the Dark
        drive of a stream is switched off after ``N_on`` not-B samples and
        restored at the next B assignment.
    n_traj : int
        Number of terminated samples to collect.
    grid_max : float
        Longest catch time recorded (us).
    control_time : float
        Mean spacing of the random-time control interventions (us).
    max_time : float, optional
        Upper bound on simulated time per stream (us).
    calib_streams : int
        Streams per pinned level in the threshold calibration.
    """
    if model.kind != "cqed":
        raise ModelError("run_catch_ensemble needs a cQED model")
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    cav = model.cavity_params
    T = cav.T_int
    if abs(cfg.T_int - T) > 1e-12:
        raise ValueError("controller cadence differs from the record integration time")
    cal = None
    if thresholds is None:
        cal = calibrate_thresholds(model, n_streams=calib_streams, seed=seed + 7_919, dt=dt)
        thresholds = cal.thresholds
    gate = "Omega_DG" if cfg.gate_DG_during_off else None
    batch = HeterodyneBatch(model, n_streams, seed, dt, gate=gate)
    K = n_streams
    na = batch.na
    M = _grid_size(grid_max, T)
    grid = T * np.arange(1, M + 1)
    rho_hist = np.zeros((K, M, na, na), dtype=complex)
    rho_sum = np.zeros((M, na, na), dtype=complex)
    counts = np.zeros(M, dtype=np.int64)
    states = [ControllerState() for _ in range(K)]
    prev_B = np.zeros(K, dtype=bool)
    valid = np.zeros(K, dtype=bool)
    b_run = np.zeros(K, dtype=np.int64)
    b_valid = np.zeros(K, dtype=bool)
    gated = np.zeros(K, dtype=bool)
    notB_dur, B_dur = [], []
    ctrl_rng = stream_rng(seed, 2 ** 40)
    p_ctrl = 1.0 - math.exp(-T / control_time)
    ctrl_sum = np.zeros((na, na), dtype=complex)
    avg_sum = np.zeros((na, na), dtype=complex)
    fire_sum = np.zeros((na, na), dtype=complex)
    ctrl_n = avg_n = fire_n = 0
    n_total = 0
    n_win = 0
    while n_total < n_traj:
        if max_time is not None and batch.t >= max_time:
            break
        t_start = batch.t
        out = batch.advance_window()
        n_win += 1
        rho = out.rho_atom
        s = thresholds.rotate(out.samples)
        isB = iq_classify_array(s.real, s.imag, prev_B, thresholds)
        live = t_start >= warmup
        marks = ctrl_rng.random(K) < p_ctrl
        if live:
            avg_sum += rho.sum(axis=0)
            avg_n += K
            ctrl_sum += rho[marks].sum(axis=0)
            ctrl_n += int(marks.sum())
        change = False
        for k in range(K):
            a = "B" if isB[k] else "notB"
            old = states[k]
            st, act = controller_step(old, a, cfg)
            states[k] = st
            if act == "declare_B":
                if not prev_B[k]:
                    if valid[k] and old.cnt > 0:
                        L = min(old.cnt, M)
                        rho_sum[:L] += rho_hist[k, :L]
                        counts[:L] += 1
                        n_total += 1
                        notB_dur.append(old.cnt * T)
                    b_run[k] = 0
                    b_valid[k] = live
                    if gated[k]:
                        gated[k] = False
                        change = True
                b_run[k] += 1
            elif a == "notB":
                if prev_B[k]:
                    valid[k] = live
                    if b_valid[k] and b_run[k] > 0:
                        B_dur.append(b_run[k] * T)
                    b_run[k] = 0
                m = st.cnt
                if 1 <= m <= M:
                    rho_hist[k, m - 1] = rho[k]
                if act == "gate_DG_off" and gate is not None:
                    gated[k] = True
                    change = True
                elif act == "fire_catch":
                    # the pulse acts on a forked copy; the stream itself keeps counting
                    states[k] = ControllerState("MonitorOff", st.cnt, "notB")
                    if valid[k]:
                        fire_sum += rho[k]
                        fire_n += 1
            prev_B[k] = isB[k]
        if change:
            batch.set_gate(gated)
        if progress is not None:
            progress(n_win, n_total)
    tomo = ConditionalTomogram.from_sums(grid, rho_sum, counts, n_total)
    return CatchRunResult(tomo, np.array(notB_dur), np.array(B_dur),
                          ctrl_sum / max(ctrl_n, 1), ctrl_n, avg_sum / max(avg_n, 1), avg_n,
                          cal, max(batch.t - warmup, 0.0) * K, n_win,
                          fire_sum / max(fire_n, 1) if fire_n else None, fire_n)


def ideal_catch_tomogram(model: ModelSpec, grid, n_traj: int, dt: float,
                         seed: int = 0, n_batch: int = 2048) -> ConditionalTomogram:
    """Photodetection ensemble of the bare atom, sampled after each click.

    Every trajectory starts in G just after a click.  The grid must be a
    multiple of ``dt``.
    """
    if model.kind != "three_level" or model.time_dependent:
        raise ModelError("ideal_catch_tomogram needs the bare three-level model")
    grid = np.asarray(grid, dtype=float)
    idx = np.rint(grid / dt).astype(np.int64)
    if np.any(np.abs(idx * dt - grid) > 1e-9 * max(1.0, grid.max())) or np.any(idx < 1):
        raise ValueError("grid points must be positive multiples of dt")
    M = grid.size
    d = model.dim
    UT = np.ascontiguousarray(propagator(model, dt).T)
    rho_sum = np.zeros((M, d, d), dtype=complex)
    counts = np.zeros(M, dtype=np.int64)
    n_total = 0
    base = 0
    last = idx.max()
    slot = {int(s): j for j, s in enumerate(idx)}
    while n_total < n_traj:
        K = min(n_batch, n_traj - n_total)
        rngs = [stream_rng(seed, base + i) for i in range(K)]
        base += K
        psi = np.zeros((K, d), dtype=complex)
        psi[:, G] = 1.0
        thr = np.array([r.random() for r in rngs])
        hist = np.zeros((K, M, d, d), dtype=complex)
        reached = np.zeros(K, dtype=np.int64)
        done = np.zeros(K, dtype=bool)
        step = 0
        while not done.all() and step <= last:
            step += 1
            psi = psi @ UT
            nrm = np.einsum("ki,ki->k", psi.conj(), psi).real
            hit = (nrm <= thr) & ~done
            done |= hit
            j = slot.get(step)
            if j is not None:
                live = ~done
                v = psi[live] / np.sqrt(nrm[live])[:, None]
                hist[live, j] = np.einsum("ki,kj->kij", v, v.conj())
                reached[live] = j + 1
        # trajectories that outlive the grid terminate later; their first clicks
        # are still pending but every grid point has been recorded
        for k in range(K):
            L = reached[k]
            rho_sum[:L] += hist[k, :L]
            counts[:L] += 1
        n_total += K
    return ConditionalTomogram.from_sums(grid, rho_sum, counts, n_total)


# ---------------------------------------------------------------------------
# reversal


def atom_settle_map(model: ModelSpec, duration: float) -> np.ndarray:
    """Superoperator of free atomic relaxation (drives off) over ``duration``."""
    at = model.atom_params
    na = model.atom_dim
    ch = []
    for _, rate, to, frm in atom_jump_channels(at, na):
        c = np.zeros((na, na), dtype=complex)
        c[to, frm] = math.sqrt(rate)
        ch.append(c)
    if model.kind == "three_level":
        ch = [c.op for c in model.channels if c.label != "BG-pump"]
    I = np.eye(na)
    L = np.zeros((na * na, na * na), dtype=complex)
    for c in ch:
        cdc = c.conj().T @ c
        L += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, I) - 0.5 * np.kron(I, cdc.T)
    return expm(L * duration)


@dataclass(frozen=True)
class ReversalOutcome:
    """Populations after the pulse and the settling window."""

    dt_catch: float
    theta_I: float
    phi_I: float
    P_G: float
    P_D: float
    P_G_cond: float
    P_D_cond: float
    n: int


def apply_reversal(rho_atom, model: ModelSpec, theta: float, phi: float,
                   settle: float = 1.0, dt_catch: float = float("nan"),
                   n: int = 1) -> ReversalOutcome:
    """Rotate an atom density matrix and let it relax before readout."""
    na = model.atom_dim
    R = intervention_unitary(theta, phi, na)
    r = R @ np.asarray(rho_atom) @ R.conj().T
    r = (atom_settle_map(model, settle) @ r.ravel()).reshape(na, na)
    pg, pd = r[G, G].real, r[D, D].real
    return ReversalOutcome(dt_catch, theta, phi, pg, pd, pg / (pg + pd), pd / (pg + pd), n)


def _z_of(psi) -> float:
    p = np.abs(psi) ** 2
    return float((p[D] - p[G]) / p.sum())


def ideal_reversal(model: ModelSpec, theta: float | None = None, phi: float = math.pi / 2,
                   settle: float = 1.0, dt: float | None = None,
                   t_hi: float | None = None) -> tuple[float, ReversalOutcome]:
    """Catch the bare atom at the numerical mid-flight time and reverse.

    Returns the mid-flight time and the outcome.  ``theta`` defaults to
    the angle that maps the mid-flight Bloch vector onto G.
    """
    at = model.atom_params
    gB = at.gamma_B
    dt = dt if dt is not None else 1.0 / (200.0 * gB)
    psi0 = np.zeros(model.dim, dtype=complex)
    psi0[G] = 1.0
    U = propagator(model, dt)

    def z_at(t):
        n = int(t // dt)
        v = np.linalg.matrix_power(U, n) @ psi0
        v = expm(-1j * model.H_eff() * (t - n * dt)) @ v
        return _z_of(v)

    if t_hi is None:
        t_hi = dt
        while z_at(t_hi) < 0:
            t_hi *= 2
            if t_hi > 1e9 / gB:
                raise ModelError("no mid-flight crossing found")
    t_mid = brentq(z_at, 0.0, t_hi, xtol=1e-12 / gB, rtol=1e-14)
    n = int(t_mid // dt)
    v = np.linalg.matrix_power(U, n) @ psi0
    v = expm(-1j * model.H_eff() * (t_mid - n * dt)) @ v
    v = v / np.linalg.norm(v)
    rho = np.outer(v, v.conj())
    if theta is None:
        X = 2 * rho[G, D].real / (rho[G, G] + rho[D, D]).real
        theta, phi = default_angles(_z_of(v), X)
    return t_mid, apply_reversal(rho, model, theta, phi, settle, t_mid)


@dataclass
class ReverseResult:
    catch: ReversalOutcome
    control: ReversalOutcome
    reference: ReversalOutcome
    control_sigma: float
    run: CatchRunResult | None = None


def run_reverse_ensemble(model: ModelSpec, cfg: ControllerConfig, n_traj: int,
                         settle: float = 1.0, run: CatchRunResult | None = None,
                         **kwargs) -> ReverseResult:
    """Catch-and-reverse with a random-time control arm.

    Because the pulse and the settling map are linear in the atom state,
    forking every caught trajectory and averaging the outcomes equals
    applying them once to the average caught state, which the monitored
    run accumulates at each grid point.  The control arm applies the same
    pulse at random times and is compared with the pulse applied to the
    unconditioned time average.
    """
    if run is None:
        run = run_catch_ensemble(model, cfg, n_traj, **kwargs)
    tomo = run.tomogram
    T = cfg.T_int
    m = cfg.N_on + cfg.N_off
    if m > tomo.grid.size or tomo.N_surviving[m - 1] == 0:
        raise FitError("no caught samples at the requested catch time")
    th, ph = cfg.angles(m * T)
    catch = apply_reversal(tomo.rho_mean[m - 1], model, th, ph, settle, m * T,
                           int(tomo.N_surviving[m - 1]))
    ctrl = apply_reversal(run.control_rho, model, th, ph, settle, float("nan"), run.control_n)
    ref = apply_reversal(run.average_rho, model, th, ph, settle, float("nan"), run.average_n)
    # binomial spread of the control mean, treating the marks as independent
    sig = math.sqrt(max(ctrl.P_G * (1 - ctrl.P_G), 1e-12) / max(run.control_n, 1))
    return ReverseResult(catch, ctrl, ref, sig, run)


# ---------------------------------------------------------------------------
# fits


@dataclass
class WaitingTimeFit:
    """Bi-exponential not-B dwell fit and single-exponential B dwell fit (us)."""

    bins: np.ndarray
    counts: np.ndarray
    Gamma_BG: float
    Gamma_GD: float
    weight_BG: float
    dGamma_BG: float
    dGamma_GD: float
    tau_B: float = float("nan")
    dtau_B: float = float("nan")
    B_bins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    B_counts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual: float = float("nan")


def _binned_exp(edges, rate):
    return np.exp(-rate * edges[:-1]) - np.exp(-rate * edges[1:])


def _edges(x, w):
    """Histogram edges of width ``w``; lattice data sit at bin centres."""
    on_lattice = np.allclose(x / w, np.rint(x / w), rtol=0, atol=1e-6)
    lo = x.min() - 0.5 * w if on_lattice else x.min()
    n_bins = int(np.ceil((x.max() - lo) / w)) + 1
    return lo + w * np.arange(n_bins + 1)


def _default_width(x):
    u = np.unique(x)
    if u.size > 1:
        step = np.min(np.diff(u))
        if np.allclose(u / step, np.rint(u / step), rtol=0, atol=1e-6):
            return float(step)
    return float(np.diff(np.histogram_bin_edges(x, "fd")[:2])[0])


def _mixture_probs(edges, weights, rates):
    # tail mass above the first edge is renormalised so unseen short intervals drop out
    lo = edges[0]
    q = sum(w * _binned_exp(edges, g) / np.exp(-g * lo) for w, g in zip(weights, rates))
    return q / q.sum()


def _binned_mle(edges, counts, unpack, x0):
    """Multinomial maximum likelihood over histogram bins.

    ``unpack`` maps an unconstrained vector to ``(weights, rates)``.
    Returns the optimum, its standard errors from the Fisher information
    and the Pearson residual norm.
    """
    n = counts.sum()

    def probs(v):
        return _mixture_probs(edges, *unpack(v))

    def nll(v):
        q = probs(v)
        return -float(np.sum(counts * np.log(np.maximum(q, 1e-300))))

    res = minimize(nll, x0, method="Nelder-Mead",
                   options=dict(xatol=1e-10, fatol=1e-10, maxiter=20000, maxfev=40000))
    res = minimize(nll, res.x, method="BFGS")
    if not np.isfinite(res.fun):
        raise FitError(f"likelihood fit failed: {res.message}")
    v = res.x
    q = probs(v)
    J = np.empty((q.size, v.size))
    for i in range(v.size):
        h = 1e-6 * max(1.0, abs(v[i]))
        e = np.zeros_like(v)
        e[i] = h
        J[:, i] = (probs(v + e) - probs(v - e)) / (2 * h)
    keep = q > 0
    fisher = n * (J[keep].T / q[keep]) @ J[keep]
    try:
        cov = np.linalg.inv(fisher)
    except np.linalg.LinAlgError:
        cov = np.full((v.size, v.size), np.nan)
    expected = n * q
    resid = float(np.sqrt(np.sum((counts - expected) ** 2 / np.maximum(expected, 1e-12))))
    return v, cov, resid


def waiting_time_fit(notB, B_dwell=None, bin_width: float | None = None,
                     t_min: float = 0.0) -> WaitingTimeFit:
    """Fit dwell-time histograms by binned maximum likelihood.

    ``notB`` durations follow ``p G1 exp(-G1 t) + (1-p) G2 exp(-G2 t)``
    and ``B_dwell`` a single exponential.  Durations that are whole
    multiples of the bin width are binned with the lattice points at the
    bin centres.
    """
    notB = np.asarray(notB, dtype=float)
    notB = notB[notB >= t_min]
    if notB.size < 100:
        raise FitError(f"need at least 100 intervals, got {notB.size}")
    w = bin_width or _default_width(notB)
    edges = _edges(notB, w)
    cnt, _ = np.histogram(notB, edges)

    def unpack2(v):
        p = 1.0 / (1.0 + math.exp(-v[0]))
        return (p, 1.0 - p), (math.exp(v[1]), math.exp(v[2]))

    med = max(np.median(notB) - edges[0], 1e-3)
    x0 = np.array([math.log(0.8 / 0.2), math.log(1.0 / med),
                   math.log(1.0 / max(5 * notB.mean(), 1e-3))])
    v, cov, resid = _binned_mle(edges, cnt, unpack2, x0)
    (p, _), (g1, g2) = unpack2(v)
    d1, d2 = g1 * math.sqrt(max(cov[1, 1], 0.0)), g2 * math.sqrt(max(cov[2, 2], 0.0))
    if g1 < g2:
        p, g1, g2, d1, d2 = 1 - p, g2, g1, d2, d1
    fit = WaitingTimeFit(edges, cnt, g1, g2, p, d1, d2, residual=resid)
    if B_dwell is not None and len(B_dwell) >= 10:
        Bd = np.asarray(B_dwell, dtype=float)
        eb = _edges(Bd, bin_width or _default_width(Bd))
        cb, _ = np.histogram(Bd, eb)

        def unpack1(v):
            return (1.0,), (math.exp(v[0]),)

        vb, cvb, _ = _binned_mle(eb, cb, unpack1,
                                 np.array([-math.log(max(Bd.mean() - eb[0], 1e-6))]))
        fit.tau_B = math.exp(-vb[0])
        fit.dtau_B = fit.tau_B * math.sqrt(max(cvb[0, 0], 0.0))
        fit.B_bins, fit.B_counts = eb, cb
    return fit


@dataclass
class JumpFit:
    """Parameters of ``Z = a + b tanh(t/tau + c)`` and ``X = a' + b' sech(t/tau' + c')``."""

    a: float
    b: float
    c: float
    tau: float
    a2: float
    b2: float
    c2: float
    tau2: float
    errors: dict = field(default_factory=dict)
    residual_Z: float = float("nan")
    residual_X: float = float("nan")
    max_abs_Y: float = float("nan")

    @property
    def t_mid(self) -> float:
        """Zero crossing of the fitted Z curve."""
        r = -self.a / self.b
        if abs(r) >= 1:
            return float("nan")
        return float(self.tau * (math.atanh(r) - self.c))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self) | {"t_mid": self.t_mid}, fh, indent=2, sort_keys=True)


def _lsq(fun, p0, lb, ub, t, y, w):
    res = least_squares(lambda p: (fun(t, *p) - y) * w, p0, bounds=(lb, ub),
                        x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if not res.success:
        raise FitError(f"least squares did not converge: {res.message}")
    J = res.jac
    dof = max(y.size - len(p0), 1)
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.full((len(p0), len(p0)), np.nan)
    return res.x, np.sqrt(np.clip(np.diag(cov), 0, None)), math.sqrt(2 * res.cost)


def tanh_form(t, a, b, c, tau):
    return a + b * np.tanh(t / tau + c)


def sech_form(t, a, b, c, tau):
    return a + b / np.cosh(t / tau + c)


def fit_jump_curves(tomo: ConditionalTomogram, tau0: float = 1.6,
                    weighted: bool = True, t_max: float | None = None) -> JumpFit:
    """Least-squares fit of the two flight curves on the valid grid points."""
    ok = tomo.valid & np.isfinite(tomo.Z) & np.isfinite(tomo.X)
    if t_max is not None:
        ok &= tomo.grid <= t_max
    t = tomo.grid[ok]
    if t.size < 8:
        raise FitError("need at least 8 populated grid points")
    Z, X = tomo.Z[ok], tomo.X[ok]
    w = np.sqrt(tomo.N_surviving[ok]) if weighted else np.ones_like(t)
    w = w / w.max()
    cross = np.nonzero(np.diff(np.sign(Z)) > 0)[0]
    if cross.size:
        i = cross[0]
        t0 = t[i] - Z[i] * (t[i + 1] - t[i]) / (Z[i + 1] - Z[i])
    else:
        t0 = t[np.argmin(np.abs(Z))]
    pz, ez, rz = _lsq(tanh_form, (0.0, 1.0, -t0 / tau0, tau0),
                      (-2, 0, -50, 1e-3), (2, 2, 50, 1e3), t, Z, w)
    i_pk = int(np.argmax(X))
    px, ex, rx = _lsq(sech_form, (0.0, max(X[i_pk], 0.1), -t[i_pk] / tau0, tau0),
                      (-2, 0, -50, 1e-3), (2, 2, 50, 1e3), t, X, w)
    for name, tau in (("tau", pz[3]), ("tau'", px[3])):
        if tau <= 1.001e-3 or tau >= 0.999e3:
            raise FitError(f"{name} ran into its bound")
    Y = tomo.Y[ok]
    errs = dict(zip(("a", "b", "c", "tau"), map(float, ez)))
    errs.update(zip(("a2", "b2", "c2", "tau2"), map(float, ex)))
    return JumpFit(*map(float, pz), *map(float, px), errs, rz, rx,
                   float(np.nanmax(np.abs(Y))) if Y.size else float("nan"))


# ---------------------------------------------------------------------------
# readout efficiency


@dataclass(frozen=True)
class SnrReport:
    snr: float
    eta_disc: float
    eta_asg: float
    eta_eff: float


def snr_value(cav, chi_BG: float) -> float:
    """Pointer separation over noise for the B versus G record clouds."""
    return 0.5 * cav.eta * cav.kappa * cav.T_int * \
        math.cos(math.atan(cav.kappa / (2 * abs(chi_BG)))) ** 2 * cav.n_bar


def snr_metrics(cav, chi_BG: float, tau_B: float) -> SnrReport:
    """Signal-to-noise ratio and the click detection efficiency chain.

    ``eta_asg = exp(-T_int / tau_B)`` is the chance that B survives one
    integration window.
    """
    if not (cav.kappa > 0 and cav.T_int > 0 and tau_B > 0 and chi_BG != 0):
        raise ValueError("parameters must be positive")
    snr = snr_value(cav, chi_BG)
    eta_disc = 0.5 * erfc(-math.sqrt(snr / 2.0))
    eta_asg = math.exp(-cav.T_int / tau_B)
    return SnrReport(snr, eta_disc, eta_asg, eta_disc * eta_asg)


def gd_tomogram_params(rho) -> dict:
    """Invert the GD parametrisation of a three-level density matrix.

    Returns ``N, X_GD, Y_GD, Z_GD`` and the B coherences ``R_BG, I_BG,
    R_BD, I_BD``; the Bloch components are ``nan`` when ``N = 0``.
    """
    r = np.asarray(rho.matrix if hasattr(rho, "matrix") else rho, dtype=complex)
    if r.shape != (3, 3):
        raise ValueError("expected a 3x3 density matrix")
    N = float((r[G, G] + r[D, D]).real)
    out = dict(N=N, R_BG=float(r[G, B].real), I_BG=float(r[G, B].imag),
               R_BD=float(r[D, B].real), I_BD=float(r[D, B].imag))
    if N <= 0:
        out.update(X_GD=float("nan"), Y_GD=float("nan"), Z_GD=float("nan"))
    else:
        out.update(Z_GD=float((r[D, D] - r[G, G]).real / N),
                   X_GD=float(2 * r[G, D].real / N), Y_GD=float(2 * r[G, D].imag / N))
    return out


def rho_from_gd_params(p: dict) -> np.ndarray:
    """Rebuild the density matrix from ``gd_tomogram_params`` output."""
    N = p["N"]
    r = np.zeros((3, 3), dtype=complex)
    r[G, G] = N / 2 * (1 - p["Z_GD"])
    r[D, D] = N / 2 * (1 + p["Z_GD"])
    r[G, D] = N / 2 * (p["X_GD"] + 1j * p["Y_GD"])
    r[D, G] = np.conj(r[G, D])
    r[G, B] = p["R_BG"] + 1j * p["I_BG"]
    r[B, G] = np.conj(r[G, B])
    r[D, B] = p["R_BD"] + 1j * p["I_BD"]
    r[B, D] = np.conj(r[D, B])
    r[B, B] = 1 - N
    return r


def dwell_times(is_B, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Completed run lengths of one assignment stream, ``(not-B, B)`` in us.

    The first and last runs are open-ended and dropped.
    """
    a = np.asarray(is_B, dtype=bool)
    if a.size == 0:
        return np.zeros(0), np.zeros(0)
    edges = np.flatnonzero(np.diff(a.astype(np.int8))) + 1
    bounds = np.concatenate(([0], edges, [a.size]))
    lengths = np.diff(bounds)[1:-1]
    kinds = a[bounds[1:-2]] if lengths.size else np.zeros(0, dtype=bool)
    return lengths[~kinds] * T, lengths[kinds] * T
