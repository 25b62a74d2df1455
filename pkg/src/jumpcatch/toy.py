"""Flying-spin homodyne toy model.

A qubit on the ``X > 0`` half of the Bloch circle is probed by a stream
of ancilla spins, each rotated by ``+-epsilon`` depending on the qubit
pole.  In the hyperbolic angle ``zeta`` (with ``cos(theta) = tanh(zeta)``)
every outcome shifts the state by a constant, so the discrete walk and
its diffusive limit are both simple to integrate exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .engine import StepSizeError


@dataclass(frozen=True)
class ToyState:
    """Qubit polar angle with its hyperbolic twin.

    Parameters
    ----------
    theta : float
        Polar angle in ``[0, pi]``; ``Z = cos(theta)``.
    zeta : float
        ``artanh(cos(theta))``; infinite at the poles.
    epsilon : float
        Per-step interaction strength, ``|epsilon| < pi/2``.
    kappa : float
        Measurement rate (1/us).
    """

    theta: float
    zeta: float
    epsilon: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError("theta must lie in [0, pi]")
        if abs(self.epsilon) >= math.pi / 2:
            raise ValueError("|epsilon| must be below pi/2")
        if math.isfinite(self.zeta) and abs(math.cos(self.theta) - math.tanh(self.zeta)) > 1e-10:
            raise ValueError("cos(theta) and tanh(zeta) disagree")

    @classmethod
    def from_theta(cls, theta: float, epsilon: float = 0.0, kappa: float = 1.0) -> "ToyState":
        return cls(theta, _zeta_of_theta(theta), epsilon, kappa)

    @classmethod
    def from_zeta(cls, zeta: float, epsilon: float = 0.0, kappa: float = 1.0) -> "ToyState":
        return cls(_theta_of_zeta(zeta), zeta, epsilon, kappa)

    @property
    def Z(self) -> float:
        return math.tanh(self.zeta) if math.isfinite(self.zeta) else math.copysign(1.0, self.zeta)


def _zeta_of_theta(theta: float) -> float:
    if theta == 0.0:
        return math.inf
    if theta == math.pi:
        return -math.inf
    # tan(theta/2) = exp(-zeta)
    return -math.log(math.tan(theta / 2.0))


def _theta_of_zeta(zeta: float) -> float:
    if zeta == math.inf:
        return 0.0
    if zeta == -math.inf:
        return math.pi
    return 2.0 * math.atan(math.exp(-zeta))


def xi_of(epsilon: float) -> float:
    """Hyperbolic step size, ``tanh(xi) = sin(epsilon)``."""
    return math.atanh(math.sin(epsilon))


def outcome_probability(theta: float, epsilon: float, r: int) -> float:
    """Probability of ancilla outcome ``r = +-1``."""
    if r not in (1, -1):
        raise ValueError("r must be +1 or -1")
    if not 0.0 <= theta <= math.pi or abs(epsilon) >= math.pi / 2:
        raise ValueError("need 0 <= theta <= pi and |epsilon| < pi/2")
    return 0.5 * (1.0 - r * math.sin(epsilon) * math.cos(theta))


def discrete_update(state: ToyState, r: int, form: str = "hyperbolic") -> ToyState:
    """Back-action of one ancilla outcome.

    The circular form multiplies ``tan(theta/2)`` by ``tan((pi/2 + r eps)/2)``;
    the hyperbolic form shifts ``zeta`` by ``-r xi``.  Poles are fixed points.
    """
    if r not in (1, -1):
        raise ValueError("r must be +1 or -1")
    eps = state.epsilon
    if form == "circular":
        if state.theta in (0.0, math.pi):
            return state
        t = math.tan(state.theta / 2.0) * math.tan((math.pi / 2 + r * eps) / 2.0)
        th = 2.0 * math.atan(t)
        return replace(state, theta=th, zeta=_zeta_of_theta(th))
    if form == "hyperbolic":
        if not math.isfinite(state.zeta):
            return state
        z = state.zeta - r * xi_of(eps)
        return replace(state, theta=_theta_of_zeta(z), zeta=z)
    raise ValueError(f"unknown form {form!r}")


def sde_step(Z: float, dt: float, kappa: float, rng, scheme: str = "zeta") -> tuple[float, float]:
    """One step of the diffusive limit, returning ``(Z', dJ)``.

    ``dZ = -sqrt(kappa)(1 - Z**2) dW`` with the record increment
    ``dJ = -sqrt(kappa) Z dt + dW`` sharing the same ``dW``.  The default
    scheme integrates ``zeta = artanh(Z)``, where the noise is additive
    and ``Z`` cannot leave ``[-1, 1]``; ``scheme="direct"`` applies Euler in
    ``Z`` and refuses steps that overshoot.
    """
    if abs(Z) > 1.0:
        raise ValueError("|Z| must not exceed 1")
    if dt <= 0 or kappa < 0:
        raise ValueError("need dt > 0 and kappa >= 0")
    if kappa * dt > 0.1:
        raise StepSizeError(f"kappa*dt = {kappa * dt:.3g} is too large")
    dW = rng.normal(0.0, math.sqrt(dt))
    dJ = -math.sqrt(kappa) * Z * dt + dW
    if abs(Z) == 1.0:
        return Z, dJ
    if scheme == "zeta":
        return math.tanh(math.atanh(Z) - math.sqrt(kappa) * dJ), dJ
    if scheme == "direct":
        Zn = Z - math.sqrt(kappa) * (1.0 - Z * Z) * dW
        over = abs(Zn) - 1.0
        if over > 1e-9:
            raise StepSizeError(f"step overshoots |Z| = 1 by {over:.3g}; reduce dt")
        return (math.copysign(1.0, Zn) if over > 0 else Zn), dJ
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class ToyPaths:
    """Sampled ``Z`` and integrated record ``J`` for a batch of paths."""

    t: np.ndarray
    Z: np.ndarray
    J: np.ndarray

    def to_csv(self, path, index: int = 0) -> None:
        with open(path, "w") as fh:
            fh.write("t,Z,J\n")
            for t, z, j in zip(self.t, self.Z[index], self.J[index]):
                fh.write(f"{t:.9g},{z:.12g},{j:.12g}\n")


def _path_rngs(seed: int, n: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(n)]


def _chunks(rngs, n: int, draw, size: int = 512):
    """Per-path draws in blocks of steps, so memory stays bounded."""
    for k0 in range(0, n, size):
        m = min(size, n - k0)
        yield k0, np.stack([draw(r, m) for r in rngs])


def _start(Z0: float, n_paths: int) -> np.ndarray:
    if abs(Z0) > 1:
        raise ValueError("|Z0| must not exceed 1")
    return np.full(n_paths, math.atanh(Z0) if abs(Z0) < 1 else math.copysign(np.inf, Z0))


def simulate_sde(Z0: float, kappa: float, duration: float, dt: float, n_paths: int,
                 seed: int = 0, sample_every: int = 1) -> ToyPaths:
    """Vectorised ``sde_step`` over independent paths (zeta scheme)."""
    if kappa * dt > 0.1:
        raise StepSizeError(f"kappa*dt = {kappa * dt:.3g} is too large")
    n = int(round(duration / dt))
    rngs = _path_rngs(seed, n_paths)
    zeta = _start(Z0, n_paths)
    J = np.zeros(n_paths)
    sk = math.sqrt(kappa)
    sd = math.sqrt(dt)
    ts, Zs, Js = [0.0], [np.tanh(zeta)], [J.copy()]
    for k0, noise in _chunks(rngs, n, lambda r, m: r.normal(0.0, sd, m)):
        for i in range(noise.shape[1]):
            dJ = -sk * np.tanh(zeta) * dt + noise[:, i]
            J += dJ
            # infinite zeta stays put: the poles absorb
            zeta = zeta - sk * dJ
            k = k0 + i + 1
            if k % sample_every == 0 or k == n:
                ts.append(k * dt)
                Zs.append(np.tanh(zeta))
                Js.append(J.copy())
    return ToyPaths(np.array(ts), np.array(Zs).T, np.array(Js).T)


def simulate_chain(Z0: float, kappa: float, duration: float, dt: float, n_paths: int,
                   seed: int = 0, sample_every: int = 1) -> ToyPaths:
    """Discrete flying-spin chain with ``epsilon = sqrt(kappa dt)``.

    Each outcome contributes ``r sqrt(dt)`` to the record.
    """
    eps = math.sqrt(kappa * dt)
    if eps >= math.pi / 2:
        raise StepSizeError("kappa*dt too large for the discrete chain")
    xi = xi_of(eps)
    se = math.sin(eps)
    sd = math.sqrt(dt)
    n = int(round(duration / dt))
    rngs = _path_rngs(seed, n_paths)
    zeta = _start(Z0, n_paths)
    J = np.zeros(n_paths)
    ts, Zs, Js = [0.0], [np.tanh(zeta)], [J.copy()]
    for k0, u in _chunks(rngs, n, lambda r, m: r.random(m)):
        for i in range(u.shape[1]):
            r = np.where(u[:, i] < 0.5 * (1.0 - se * np.tanh(zeta)), 1.0, -1.0)
            zeta = zeta - r * xi
            J += r * sd
            k = k0 + i + 1
            if k % sample_every == 0 or k == n:
                ts.append(k * dt)
                Zs.append(np.tanh(zeta))
                Js.append(J.copy())
    return ToyPaths(np.array(ts), np.array(Zs).T, np.array(Js).T)


def exact_z_cdf(z, Z0: float, t: float, kappa: float):
    """Distribution function of ``Z(t)`` in the diffusive limit.

    Conditioned on the pole ``s = +-1`` (probability ``(1 + s Z0)/2``) the
    record is Gaussian with mean ``-s sqrt(kappa) t`` and variance ``t``,
    and ``zeta(t) = zeta0 - sqrt(kappa) J``.
    """
    z = np.asarray(z, dtype=float)
    z0 = math.atanh(Z0)
    sk = math.sqrt(kappa)
    with np.errstate(divide="ignore"):
        j = (z0 - np.arctanh(np.clip(z, -1, 1))) / sk
    st = math.sqrt(t)
    out = 0.0
    for s in (1.0, -1.0):
        out = out + 0.5 * (1 + s * Z0) * norm.sf(j, loc=-s * sk * t, scale=st)
    return out
