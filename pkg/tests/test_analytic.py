from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from jumpcatch.analytic import (ThreeLevelRates, adiabatic_noclick, bloch_from_wdg,
                                bloch_jump_approx, completion_probability,
                                long_time_asymptote, t_mid, t_on_from_wdg, wdg, wdg_rhs)

TP = 2 * np.pi


def quiet(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ThreeLevelRates(**kw)


# the ideal-model rates sit outside the strong-monitoring regime and warn
FIG = quiet(Omega_BG=TP * 1.2, Omega_DG=TP * 0.02, gamma_B=TP * 9.0)


def test_t_mid_figure_value():
    assert t_mid(FIG) == pytest.approx(4.3, rel=0.03)


def test_wdg_initial_and_zero_drive():
    inc = quiet(Omega_BG=0.1, Omega_DG=1e-3, gamma_B=1.0, Gamma_BG=0.05)
    assert wdg(0.0, FIG) == 0.0
    assert wdg(0.0, inc, "incoherent") == 0.0
    zero = quiet(Omega_BG=0.1, Omega_DG=0.0, gamma_B=1.0)
    assert np.all(wdg(np.linspace(0, 100, 5), zero) == 0)


def test_t_mid_is_root_of_wdg():
    r = quiet(Omega_BG=0.1, Omega_DG=1e-5, gamma_B=1.0)
    root = brentq(lambda t: wdg(t, r) - 1.0, 0.0, 1e4, xtol=1e-12)
    assert abs(root - t_mid(r)) < 1e-9


@given(st.floats(-50, 50))
def test_bloch_unit_norm(logw):
    Z, X, Y = bloch_from_wdg(np.sign(logw) * np.exp(abs(logw) / 5) if logw else 0.0)
    assert Z * Z + X * X + Y * Y == pytest.approx(1.0, abs=1e-14)


def test_bloch_special_points():
    assert bloch_from_wdg(1.0) == pytest.approx((0, 1, 0))
    assert bloch_from_wdg(0.0) == pytest.approx((-1, 0, 0))
    assert bloch_from_wdg(np.inf) == pytest.approx((1, 0, 0))


def test_coherent_ode():
    t = np.logspace(-2, np.log10(8.0), 40)
    h = 1e-6 * t
    fd = (wdg(t + h, FIG) - wdg(t - h, FIG)) / (2 * h)
    rhs = wdg_rhs(wdg(t, FIG), FIG)
    assert np.max(np.abs(fd / rhs - 1)) < 1e-6


def test_incoherent_ode_both_sides_of_pole():
    r = quiet(Omega_BG=0.1, Omega_DG=0.01, gamma_B=1.0, Gamma_BG=0.05)
    V = r.V()
    t_pole = 2 * np.log(V * V) / ((V - 1 / V) * r.Omega_DG)
    for t in np.concatenate([np.linspace(0.2, 0.9, 8), np.linspace(1.1, 3.0, 8)]) * t_pole:
        h = 1e-6 * t
        fd = (wdg(t + h, r, "incoherent") - wdg(t - h, r, "incoherent")) / (2 * h)
        rhs = wdg_rhs(wdg(t, r, "incoherent"), r, "incoherent")
        assert fd / rhs == pytest.approx(1.0, rel=1e-5)
    assert wdg(1e6, r, "incoherent") == pytest.approx(-V, rel=1e-9)


def test_underdamped_rejected():
    r = quiet(Omega_BG=0.1, Omega_DG=0.1, gamma_B=1.0, Gamma_BG=0.05)
    with pytest.raises(ValueError):
        wdg(1.0, r, "incoherent")


def test_t_mid_errors():
    with pytest.raises(ValueError):
        t_mid(quiet(Omega_BG=0.1, Omega_DG=0.0, gamma_B=1.0))
    with pytest.raises(ValueError):
        t_mid(FIG, "drive_off", w_on=1.5)


def test_incoherent_converges_to_coherent():
    for ratio in (200.0, 1000.0):
        om_dg = 1e-4
        gam = ratio * om_dg
        r = quiet(Omega_BG=np.sqrt(gam), Omega_DG=om_dg, gamma_B=1.0, Gamma_BG=gam)
        assert t_mid(r, "incoherent") == pytest.approx(t_mid(r), rel=0.01)


def test_drive_off_is_total_time():
    w_on = 0.3
    t_on = t_on_from_wdg(w_on, FIG)
    assert wdg(t_on, FIG) == pytest.approx(w_on, rel=1e-12)
    tot = t_mid(FIG, "drive_off", w_on=w_on)
    assert isinstance(tot, float)
    assert tot == pytest.approx(t_on + np.log(w_on ** -2) / (2 * FIG.growth_rate()))


def test_jump_approx_examples():
    tm = t_mid(FIG)
    assert bloch_jump_approx(tm, FIG) == pytest.approx((0, 1, 0))
    assert bloch_jump_approx(1e4, FIG) == pytest.approx((1, 0, 0))
    assert bloch_jump_approx(0.0, FIG)[0] == pytest.approx(np.tanh(-2.197), abs=2e-4)
    assert bloch_jump_approx(0.0, FIG)[0] == pytest.approx(-0.9757, abs=2e-4)


def test_long_time_asymptote():
    assert long_time_asymptote(0.0, 1.0) == (1.0, 0.0, 0.0)
    assert long_time_asymptote(0.5, 1.0) == pytest.approx((0, -1, 0))
    Z, X, _ = long_time_asymptote(TP * 0.02, 1 / 0.99)
    assert X == pytest.approx(-0.25, abs=0.01)
    r = quiet(Omega_BG=0.1, Omega_DG=0.01, gamma_B=1.0, Gamma_BG=0.05)
    lim = bloch_from_wdg(-r.V())
    assert lim[:2] == pytest.approx(long_time_asymptote(0.01, 0.05)[:2], abs=1e-12)
    with pytest.raises(ValueError):
        long_time_asymptote(1.0, 1.0)


def test_adiabatic_examples():
    cg, cd, Z, X, Y = adiabatic_noclick(0.0, 0.99, 0.01, 3.0)
    assert (cg, cd) == pytest.approx((0.99, 0.01))
    cg, cd, Z, X, Y = adiabatic_noclick(1e3, 0.99, 0.01, 3.0)
    assert (cg, cd, Z, X, Y) == pytest.approx((0, 1, 1, 0, 0), abs=1e-12)
    assert adiabatic_noclick(5.0, 1.0, 0.0, 3.0)[2] == -1.0
    t = np.linspace(0, 10, 11)
    Z = adiabatic_noclick(t, 0.8, 0.2, 2.0)[2]
    assert np.allclose(Z, np.tanh(t / 2.0 + np.arctanh(-0.6)))


@given(st.floats(0.0, 1.0), st.floats(0.01, 10.0))
def test_adiabatic_monotone(pd, tau):
    t = np.linspace(0, 5 * tau, 30)
    cg, cd, *_ = adiabatic_noclick(t, 1.0 - pd, pd, tau)
    assert np.all(cg + cd <= 1 + 1e-12)
    if pd > 0:
        assert np.all(np.diff(cg) <= 1e-15) and np.all(np.diff(cd) >= -1e-15)


def test_completion_probability():
    assert completion_probability(2.0, 2.0, (0.3, 0.4), 1.0) == pytest.approx(1.0)
    assert completion_probability(1e3, 1.0, (0.5, 0.5), 1.0) == pytest.approx(0.5)
    assert completion_probability(1e3, 1.0, (0.5, 0.0), 1.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        completion_probability(1.0, 2.0, (0.5, 0.5), 1.0)
    with pytest.raises(ValueError):
        completion_probability(3.0, 2.0, (0.0, 0.0), 1.0)


def test_regime_warning():
    with pytest.warns(UserWarning):
        ThreeLevelRates(Omega_BG=1.0, Omega_DG=0.5, gamma_B=1.0)
