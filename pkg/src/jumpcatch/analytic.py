"""Closed-form no-click dynamics of the three-level atom.

These expressions hold in the strong-monitoring regime where the bright
level can be eliminated adiabatically.  They serve as oracles for the
stochastic integrators.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ThreeLevelRates:
    """Drive and decay rates of the bare atom (rad/us).

    ``Gamma_BG`` is only needed for the incoherent-drive formulas.
    """

    Omega_BG: float
    Omega_DG: float
    gamma_B: float
    Gamma_BG: float | None = None

    def __post_init__(self):
        if self.Omega_BG > 0 and self.gamma_B > 0 and self.Omega_DG > 0:
            zeno = self.Omega_BG ** 2 / self.gamma_B
            if zeno / self.Omega_DG < 10 or self.gamma_B / zeno < 10:
                warnings.warn("rates are outside the strong-monitoring regime",
                              stacklevel=2)

    @property
    def tau_BG(self) -> float:
        """Mean time between clicks, ``gamma_B / Omega_BG**2`` (us)."""
        return self.gamma_B / self.Omega_BG ** 2

    def growth_rate(self, variant: str = "coherent") -> float:
        """Exponential growth rate of ``W_DG`` once the drive is off."""
        if variant == "coherent":
            return self.Omega_BG ** 2 / (2.0 * self.gamma_B)
        if variant == "incoherent":
            return self._gamma() / 2.0
        raise ValueError(f"unknown variant {variant!r}")

    def _gamma(self) -> float:
        if self.Gamma_BG is None:
            raise ValueError("incoherent formulas need Gamma_BG")
        return self.Gamma_BG

    def V(self) -> float:
        g = self._gamma()
        if g < 2 * self.Omega_DG:
            raise ValueError("Gamma_BG < 2 Omega_DG: underdamped regime not covered")
        x = g / (2.0 * self.Omega_DG)
        return x + np.sqrt(x * x - 1.0)


def wdg(t, rates: ThreeLevelRates, variant: str = "coherent"):
    """Amplitude ratio ``c_D / c_G`` after a no-click interval ``t``.

    For the incoherent drive the ratio diverges at a finite time and then
    continues on the negative branch towards ``-V``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if rates.Omega_DG == 0:
        return np.zeros_like(t)[()]
    if variant == "coherent":
        r = rates.growth_rate("coherent")
        return (rates.Omega_DG / (2.0 * r) * np.expm1(r * t))[()]
    if variant == "incoherent":
        V = rates.V()
        # written with exp(-a t) so the late-time branch cannot overflow
        e = np.exp(-(V - 1.0 / V) * rates.Omega_DG * t / 2.0)
        den = V * e - 1.0 / V
        with np.errstate(divide="ignore", invalid="ignore"):
            w = (1.0 - e) / den
        return np.where(den == 0, np.inf, w)[()]
    raise ValueError(f"unknown variant {variant!r}")


def wdg_rhs(W, rates: ThreeLevelRates, variant: str = "coherent"):
    """Right-hand side of the equation of motion for ``W_DG``."""
    W = np.asarray(W, dtype=float)
    if variant == "coherent":
        return rates.growth_rate("coherent") * W + rates.Omega_DG / 2.0
    return rates._gamma() / 2.0 * W + rates.Omega_DG / 2.0 * (1.0 + W * W)


def bloch_from_wdg(W):
    """Map the amplitude ratio onto the GD Bloch vector ``(Z, X, Y)``."""
    W = np.asarray(W, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = W * W
        Z = np.where(np.isinf(W), 1.0, (s - 1.0) / (s + 1.0))
        X = np.where(np.isinf(W), 0.0, 2.0 * W / (s + 1.0))
    return Z[()], X[()], np.zeros_like(Z)[()]


def t_on_from_wdg(W_on: float, rates: ThreeLevelRates, variant: str = "coherent") -> float:
    """Invert ``wdg`` on its first (positive) branch."""
    if variant == "coherent":
        r = rates.growth_rate("coherent")
        return float(np.log1p(2.0 * r * W_on / rates.Omega_DG) / r)
    V = rates.V()
    E = (1.0 + W_on * V) / (1.0 + W_on / V)
    return float(2.0 * np.log(E) / ((V - 1.0 / V) * rates.Omega_DG))


def t_mid(rates: ThreeLevelRates, variant: str = "coherent", w_on: float | None = None,
          base: str = "coherent") -> float:
    """Mid-flight time of the jump (us).

    Parameters
    ----------
    variant : {"coherent", "incoherent", "drive_off"}
        ``drive_off`` assumes the Dark drive was switched off when the
        ratio reached ``w_on`` and returns the total time from the click.
    base : {"coherent", "incoherent"}
        Drive type whose growth rate applies after switch-off.
    """
    if variant == "drive_off":
        if w_on is None or not 0.0 < w_on < 1.0:
            raise ValueError("drive_off needs 0 < w_on < 1")
        r = rates.growth_rate(base)
        return float(t_on_from_wdg(w_on, rates, base) + np.log(w_on ** -2) / (2.0 * r))
    if rates.Omega_DG <= 0:
        raise ValueError("mid-flight time is undefined without a Dark drive")
    if variant == "coherent":
        r = rates.growth_rate("coherent")
        return float(np.log(2.0 * r / rates.Omega_DG + 1.0) / r)
    if variant == "incoherent":
        V = rates.V()
        return float(2.0 / ((V - 1.0 / V) * rates.Omega_DG)
                     * np.log((V + 1.0) / (1.0 / V + 1.0)))
    raise ValueError(f"unknown variant {variant!r}")


def bloch_jump_approx(dt_catch, rates: ThreeLevelRates):
    """Strong-monitoring tanh/sech flight centred on the mid-flight time."""
    r = rates.growth_rate("coherent")
    arg = r * (np.asarray(dt_catch, dtype=float) - t_mid(rates, "coherent"))
    Z = np.tanh(arg)
    e = np.exp(-np.abs(arg))
    X = 2.0 * e / (1.0 + e * e)  # sech without overflow
    return Z[()], X[()], np.zeros_like(Z)[()]


def long_time_asymptote(Omega_DG: float, Gamma_BG: float) -> tuple[float, float, float]:
    """Bloch vector the incoherently driven no-click state settles to."""
    if Gamma_BG <= 0 or Gamma_BG < 2 * Omega_DG:
        raise ValueError("need Gamma_BG >= 2 Omega_DG and Gamma_BG > 0")
    ratio = Omega_DG / Gamma_BG
    return float(np.sqrt(1.0 - 4.0 * ratio ** 2)), float(-2.0 * ratio), 0.0


def adiabatic_noclick(t, p_G: float, p_D: float, tau: float):
    """No-click flow of a GD superposition with the Dark drive off.

    Parameters
    ----------
    t : float or array
        Time since preparation (us).
    p_G, p_D : float
        Initial G and D populations.
    tau : float
        Amplitude decay time of ``c_G``; for a coherent drive this is
        ``2 gamma_B / Omega_BG**2``.

    Returns
    -------
    tuple
        ``(C_G^2, C_D^2, Z, X, Y)`` with populations normalised within the
        GD manifold.
    """
    if p_G < 0 or p_D < 0 or p_G + p_D > 1 + 1e-12:
        raise ValueError("need p_G, p_D >= 0 and p_G + p_D <= 1")
    if p_G + p_D == 0:
        raise ValueError("the GD manifold is empty")
    if tau <= 0:
        raise ValueError("tau must be positive")
    t = np.asarray(t, dtype=float)
    if p_D == 0:
        cg = np.ones_like(t)
        cd = np.zeros_like(t)
    else:
        g = np.exp(2.0 * t / tau)
        den = p_G + p_D * g
        cg = p_G / den
        cd = p_D * g / den
    Z = cd - cg
    X = 2.0 * np.sqrt(cg * cd)
    return cg[()], cd[()], Z[()], X[()], np.zeros_like(Z)[()]


def completion_probability(dt_catch, dt_on: float, state_at_on, rate: float):
    """Probability that a flight reaching ``dt_on`` survives to ``dt_catch``.

    Parameters
    ----------
    state_at_on : (c_G, c_D)
        Unnormalised amplitudes at the switch-off time.
    rate : float
        Population no-click decay rate of ``G`` (``Omega_BG**2/gamma_B``
        or ``Gamma_BG``).
    """
    cG, cD = state_at_on
    nrm = abs(cG) ** 2 + abs(cD) ** 2
    if nrm <= 0:
        raise ValueError("zero-norm state")
    dt = np.asarray(dt_catch, dtype=float) - dt_on
    if np.any(dt < 0):
        raise ValueError("dt_catch must not precede dt_on")
    return (abs(cD) ** 2 / nrm + abs(cG) ** 2 / nrm * np.exp(-rate * dt))[()]
