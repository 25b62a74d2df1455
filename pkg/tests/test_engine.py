from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumpcatch.controller import pinned_model
from jumpcatch.engine import (HeterodyneBatch, IntegrationError, StepSizeError,
                              StochIncrements, TrajectoryState, cavity_steady_amplitudes,
                              coherent_ket, evolve_lindblad, evolve_noclick_linear,
                              filter_gain, filter_record, lindblad_series, noclick_series,
                              run_jump_ensemble, step_heterodyne, step_jump_unravel,
                              stream_rng)
from jumpcatch.models import (AtomParams, BichromaticDrive, CavityParams, CoherentDrive,
                              build_cqed, build_three_level)

TP = 2 * np.pi


def decay_model(gamma=1.0):
    return build_three_level(AtomParams(gamma_B=gamma, gamma_D=0.0, drive=CoherentDrive(0.0)))


def small_cqed(eta=0.33, n_bar=1.0, atom_rates=True, side=0.0):
    atom = AtomParams(gamma_B=1 / 15 if atom_rates else 0.0,
                      gamma_D=1 / 105 if atom_rates else 0.0,
                      drive=BichromaticDrive(TP * 1.2, side, TP * -30.0),
                      omega_DG=TP * 0.5, gamma_phi_B=0.02 if atom_rates else 0.0)
    cav = CavityParams(kappa=TP * 3.62, chi_B=TP * -5.08, chi_D=TP * -0.33, n_bar=n_bar,
                       eta=eta, T_int=0.26)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_cqed(atom, cav, include_F=False)


def ground_ket(model):
    na, nc = model.space.factor_dims
    alpha = cavity_steady_amplitudes(model.cavity_params, na)
    return np.kron(np.eye(na)[0], coherent_ket(alpha[0], nc))


# -- no-click evolution ----------------------------------------------------


def test_noclick_pure_decay():
    m = decay_model(2.0)
    psi, surv = evolve_noclick_linear([0, 1, 0], m, 0.7, 1e-3)
    assert surv == pytest.approx(math.exp(-1.4), rel=1e-12)
    psi, surv = evolve_noclick_linear([0, 1, 0], m, 0.0, 1e-3)
    assert surv == 1.0 and np.allclose(psi, [0, 1, 0])


def test_noclick_norm_monotone(ideal_model):
    times = np.linspace(0, 6, 61)
    kets = noclick_series([1, 0, 0], ideal_model, times, 5e-5)
    n = np.einsum("ti,ti->t", kets.conj(), kets).real
    assert np.all(np.diff(n) <= 1e-15)
    assert n[0] == 1.0 and n[-1] > 0


def test_noclick_step_guard(ideal_model):
    with pytest.raises(StepSizeError):
        evolve_noclick_linear([1, 0, 0], ideal_model, 1.0, 0.01)


# -- photodetection ----------------------------------------------------------


def test_click_times_exponential():
    res = run_jump_ensemble(decay_model(1.0), [0, 1, 0], 100_000, 14.0, 1e-2, seed=5)
    ft = res.first_click
    assert np.isnan(ft).sum() < 10
    ft = ft[~np.isnan(ft)]
    # clicks land on the step grid: compare distribution functions on the lattice
    steps = np.rint(ft / 1e-2).astype(int)
    grid = np.arange(1, steps.max() + 1)
    ecdf = np.searchsorted(np.sort(steps), grid, side="right") / ft.size
    cdf = 1 - np.exp(-grid * 1e-2)
    assert np.max(np.abs(ecdf - cdf)) < 1.95 / math.sqrt(ft.size)


def test_jump_ensemble_matches_lindblad(ideal_model):
    res = run_jump_ensemble(ideal_model, [1, 0, 0], 10_000, 1.0, 1e-3, seed=3,
                            sample_every=10)
    ref = lindblad_series(ideal_model, np.diag([1, 0, 0]).astype(complex), res.times)
    pl = np.einsum("tii->ti", ref).real
    sig = np.sqrt(np.clip(pl * (1 - pl), 1e-6, None) / res.n_traj)
    assert np.all(np.abs(res.populations - pl) < 5 * sig + 1e-12)


def test_bernoulli_agrees_with_waiting(ideal_model):
    a = run_jump_ensemble(ideal_model, [1, 0, 0], 4000, 1.0, 1e-3, seed=1, sample_every=50)
    b = run_jump_ensemble(ideal_model, [1, 0, 0], 4000, 1.0, 1e-3, seed=2, sample_every=50,
                          method="bernoulli")
    assert np.max(np.abs(a.populations - b.populations)) < 5 * math.sqrt(0.25 * 2 / 4000)


def test_zero_rates_schrodinger():
    m = build_three_level(AtomParams(gamma_B=0.0, gamma_D=0.0, drive=CoherentDrive(1.0)))
    st_ = TrajectoryState(np.array([1, 0, 0], complex), stream_rng(0, 0))
    clicks = []
    for _ in range(1000):
        st_, ev = step_jump_unravel(st_, m, 1e-3)
        clicks += ev
    assert not clicks
    assert abs(st_.ket[1]) ** 2 == pytest.approx(math.sin(0.5) ** 2, rel=1e-9)


def test_jump_step_guard(ideal_model):
    st_ = TrajectoryState(np.array([0, 1, 0], complex), stream_rng(0, 0))
    with pytest.raises(StepSizeError):
        step_jump_unravel(st_, ideal_model, 0.01)


def test_jump_determinism(ideal_model):
    a = run_jump_ensemble(ideal_model, [1, 0, 0], 64, 2.0, 1e-3, seed=9)
    b = run_jump_ensemble(ideal_model, [1, 0, 0], 64, 2.0, 1e-3, seed=9)
    assert np.array_equal(a.populations, b.populations)
    assert np.array_equal(a.first_click, b.first_click, equal_nan=True)


# -- master equation --------------------------------------------------------


def test_lindblad_decay_and_unitarity():
    m = decay_model(3.0)
    r = evolve_lindblad(m, np.diag([0, 1, 0]).astype(complex), 0.4, 1e-3)
    assert r.matrix[1, 1].real == pytest.approx(math.exp(-1.2), rel=1e-10)
    u = build_three_level(AtomParams(gamma_B=0.0, gamma_D=0.0, drive=CoherentDrive(2.0),
                                     omega_DG=0.7))
    psi = np.array([0.6, 0.8j, 0])
    r = evolve_lindblad(u, np.outer(psi, psi.conj()), 3.0, 1e-3)
    assert np.trace(r.matrix @ r.matrix).real == pytest.approx(1.0, abs=1e-8)


def test_lindblad_rk4_trace():
    m = small_cqed(side=TP * 0.6)
    psi = ground_ket(m)
    r = evolve_lindblad(m, np.outer(psi, psi.conj()), 0.1, 5e-4)
    assert np.trace(r.matrix).real == pytest.approx(1.0, abs=1e-8)


# -- heterodyne ---------------------------------------------------------------


def test_batch_kernel_matches_single_step():
    m = small_cqed()
    b = HeterodyneBatch(m, 3, seed=4)
    b.thresh[:] = 1e9
    psi0 = b.psi[0].copy()
    out = b.advance_window()
    assert all(not e for e in out.events)
    for k in range(3):
        st_ = TrajectoryState(psi0.copy(), stream_rng(99, 0), threshold=1e9)
        sq = math.sqrt(b.dt / 2)
        for s in range(b.n_win):
            n = b.last_noise[k, s]
            inc = StochIncrements(n * math.sqrt(b.dt), complex(n[0], n[1]) * sq)
            st_, dJ, ev = step_heterodyne(st_, m, b.dt, inc, b.tables, step_index=s)
            assert not ev
            assert dJ == pytest.approx(b.last_dJ[k, s], abs=1e-9)
        ov = abs(np.vdot(st_.ket, b.psi[k]))
        assert ov == pytest.approx(1.0, abs=1e-9)


def test_filter_matches_kernel():
    m = small_cqed()
    b = HeterodyneBatch(m, 4, seed=2)
    out = b.advance_window()
    for k in range(4):
        s, _ = filter_record(b.last_dJ[k], m.cavity_params, b.dt)
        assert s[0] == pytest.approx(out.samples[k], rel=1e-9)


def test_filter_limits():
    cav = small_cqed().cavity_params
    dt = 5e-4
    n = int(round(cav.T_int / dt))
    alpha = 0.7 - 0.2j
    sk = math.sqrt(cav.eta * cav.kappa)
    dJ = np.full(40 * n, sk * alpha * dt)
    s, _ = filter_record(dJ, cav, dt)
    assert s[-1] == pytest.approx(math.sqrt(2) * alpha, rel=1e-9)
    inf = CavityParams(kappa=cav.kappa, chi_B=cav.chi_B, chi_D=cav.chi_D, n_bar=cav.n_bar,
                       eta=cav.eta, T_int=cav.T_int, kappa_filter=math.inf)
    rng = np.random.default_rng(0)
    z = (rng.normal(size=4000 * n) + 1j * rng.normal(size=4000 * n)) * math.sqrt(dt / 2)
    s, _ = filter_record(z, inf, dt)
    box = filter_gain(inf) * z.reshape(-1, n).sum(1) / cav.T_int
    assert np.allclose(s, box, rtol=1e-12)
    integ = s * cav.T_int / filter_gain(inf)
    assert np.var(integ.real) == pytest.approx(cav.T_int / 2, rel=4 * math.sqrt(2 / 4000))
    with pytest.raises(ValueError):
        filter_record(z[:-1], cav, dt)


def test_pinned_record_statistics():
    m = small_cqed()
    pm = pinned_model(m)
    na, nc = m.space.factor_dims
    cav = m.cavity_params
    alpha = cavity_steady_amplitudes(cav, na)
    psi0 = np.kron(np.eye(na)[1], coherent_ket(alpha[1], nc))
    b = HeterodyneBatch(pm, 64, seed=6, psi0=psi0)
    dJ = np.concatenate([(b.advance_window(), b.last_dJ)[1].ravel() for _ in range(4)])
    dt = b.dt
    sk = math.sqrt(cav.eta * cav.kappa)
    N = dJ.size
    mean = dJ.mean() / dt
    sig = math.sqrt(dt / 2) / dt / math.sqrt(N)
    assert abs(mean.real - sk * alpha[1].real) < 4 * sig
    assert abs(mean.imag - sk * alpha[1].imag) < 4 * sig
    resid = dJ - sk * alpha[1] * dt
    assert np.var(resid.real) == pytest.approx(dt / 2, rel=4 * math.sqrt(2 / N))


def test_heterodyne_ensemble_matches_lindblad():
    m = small_cqed()
    b = HeterodyneBatch(m, 10_000, seed=1)
    for _ in range(4):
        out = b.advance_window()
    p = np.einsum("kaa->ka", out.rho_atom).real
    psi = ground_ket(m)
    r = evolve_lindblad(m, np.outer(psi, psi.conj()), b.t, 5e-4)
    for a in range(3):
        ref = np.trace(r.matrix @ m.atom_projector(a)).real
        assert abs(p[:, a].mean() - ref) < 5 * p[:, a].std() / 100


def test_purity_at_unit_efficiency():
    m = small_cqed(eta=1.0, atom_rates=False)
    b = HeterodyneBatch(m, 4, seed=8)
    assert not b.chan.labels
    # 10^5 steps
    for _ in range(int(math.ceil(1e5 / b.n_win))):
        out = b.advance_window()
        nrm = np.einsum("ki,ki->k", b.psi.conj(), b.psi).real
        assert np.all(np.abs(nrm - 1) < 1e-8)
    assert all(not e for e in out.events)


def test_heterodyne_determinism():
    m = small_cqed(side=TP * 0.6)
    runs = []
    for _ in range(2):
        b = HeterodyneBatch(m, 8, seed=12)
        runs.append([b.advance_window() for _ in range(3)])
    for x, y in zip(*runs):
        assert np.array_equal(x.samples, y.samples)
        assert x.events == y.events


def test_stream_independent_of_batch_size():
    m = small_cqed()
    a = HeterodyneBatch(m, 2, seed=5).advance_window()
    b = HeterodyneBatch(m, 1, seed=5, first_index=1).advance_window()
    assert a.samples[1] == pytest.approx(b.samples[0], rel=1e-12)


def test_heterodyne_step_guard():
    m = small_cqed()
    with pytest.raises(StepSizeError):
        HeterodyneBatch(m, 1, seed=0, dt=2e-3)
    with pytest.raises(StepSizeError):
        HeterodyneBatch(m, 1, seed=0, dt=3e-4)


def test_nonfinite_record_rejected():
    m = small_cqed()
    st_ = TrajectoryState(ground_ket(m), stream_rng(0, 0))
    bad = StochIncrements(np.zeros(2), complex(np.nan, 0))
    with pytest.raises(IntegrationError):
        step_heterodyne(st_, m, 5e-4, bad)


@given(st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_noclick_hazard_is_log_norm(gamma, t):
    psi, surv = evolve_noclick_linear([0, 1, 0], decay_model(gamma), t, 1e-3)
    assert -math.log(surv) == pytest.approx(gamma * t, rel=1e-9, abs=1e-12)
