"""Physical parameters, the Ohmic bath and its correlation functions.

Units: energies in meV, times in ps, angular frequencies in rad/ps, with
hbar = 0.6582119569 meV ps carried explicitly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import integrate

from .errors import DomainError, QuadratureFailure

__all__ = [
    "HBAR",
    "PhysParams",
    "spectral_density",
    "q_prime",
    "q_double_prime",
    "q_prime_unit",
    "q_double_prime_unit",
    "q_quadrature",
    "franck_condon",
]

HBAR = 0.6582119569  # meV ps

_SERIES_X = 1e-4


class HighTemperatureWarning(UserWarning):
    """Raised when delta / kT exceeds the high-temperature validity bound."""


@dataclass(frozen=True)
class PhysParams:
    """Physical inputs of the dual-coupling model.

    Parameters
    ----------
    kT : float
        Thermal energy in meV.
    delta : float
        Bare tunnelling energy in meV.
    omega_c : float
        Bath cutoff energy hbar*omega_c in meV.
    gamma : float
        Dimensionless diagonal coupling.
    zeta : float
        Ratio of non-diagonal to diagonal coupling.
    """

    kT: float = 26.0
    delta: float = 1.0
    omega_c: float = 100.0
    gamma: float = 0.0
    zeta: float = 0.0
    hbar: float = HBAR

    def __post_init__(self):
        for name in ("kT", "delta", "omega_c", "gamma", "zeta"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise DomainError(f"{name} must be a finite number, got {v!r}")
        if self.kT <= 0 or self.delta <= 0 or self.omega_c <= 0:
            raise DomainError("kT, delta and omega_c must be positive")
        if self.gamma < 0 or self.zeta < 0:
            raise DomainError("gamma and zeta must be nonnegative")
        if self.hbar != HBAR:
            raise DomainError("hbar is fixed")
        if self.delta / self.kT > 0.2:
            warnings.warn(
                f"delta/kT = {self.delta / self.kT:.3g} > 0.2: outside the "
                "high-temperature regime", HighTemperatureWarning, stacklevel=3)

    def replace(self, **changes) -> "PhysParams":
        d = {k: getattr(self, k) for k in ("kT", "delta", "omega_c", "gamma", "zeta")}
        d.update(changes)
        return PhysParams(**d)

    @property
    def mu(self) -> float:
        """hbar / (2 pi kT) in ps."""
        return self.hbar / (2.0 * math.pi * self.kT)

    @property
    def beta_hbar(self) -> float:
        """hbar / kT in ps."""
        return self.hbar / self.kT

    @property
    def delta_freq(self) -> float:
        return self.delta / self.hbar

    @property
    def omega_c_freq(self) -> float:
        return self.omega_c / self.hbar

    @property
    def zeta_factor(self) -> float:
        """1 + zeta**2."""
        return 1.0 + self.zeta * self.zeta


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise DomainError("time must be finite and nonnegative")
    return t


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def spectral_density(params: PhysParams, omega):
    """Ohmic spectral density gamma * hbar * omega * exp(-omega / omega_c) in meV."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise DomainError("omega must be finite and nonnegative")
    val = params.gamma * params.hbar * w * np.exp(-w / params.omega_c_freq)
    return _out(val, omega)


def q_prime_unit(params: PhysParams, t):
    """Q'(t) per unit coupling: arctan(omega_c t)."""
    tt = _check_t(t)
    return _out(np.arctan(params.omega_c_freq * tt), t)


def _log_sinhc(x):
    # ln(sinh(x)/x) for x >= 0
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < _SERIES_X
    xs = x[small]
    out[small] = xs * xs / 6.0 - xs**4 / 180.0
    xl = x[~small]
    out[~small] = xl + np.log1p(-np.exp(-2.0 * xl)) - np.log(2.0 * xl)
    return out


def q_double_prime_unit(params: PhysParams, t):
    """Q''(t) per unit coupling: ln(1 + omega_c^2 t^2)/2 + ln[sinh(x)/x], x = pi t / (beta hbar)."""
    tt = _check_t(t)
    x = np.pi * tt / params.beta_hbar
    val = 0.5 * np.log1p((params.omega_c_freq * tt) ** 2) + _log_sinhc(x)
    return _out(val, t)


def q_prime(params: PhysParams, t):
    """Imaginary-part bath correlation Q'(t) = gamma * arctan(omega_c t)."""
    tt = _check_t(t)
    return _out(params.gamma * np.asarray(q_prime_unit(params, tt)), t)


def q_double_prime(params: PhysParams, t, beta_sign: float = 1.0):
    """Real-part bath correlation Q''(t).

    ``beta_sign=-1`` evaluates the closed form with beta -> -beta, which
    leaves it unchanged since ln[sinh(x)/x] is even in x.
    """
    tt = _check_t(t)
    x = beta_sign * np.pi * tt / params.beta_hbar
    ax = np.abs(x)
    # sinh(x)/x is even; the moderate range is evaluated with the signed argument
    mid = (ax >= _SERIES_X) & (ax < 20.0)
    lsc = _log_sinhc(ax)
    lsc[mid] = np.log(np.sinh(x[mid]) / x[mid])
    val = 0.5 * np.log1p((params.omega_c_freq * tt) ** 2) + lsc
    return _out(params.gamma * val, t)


def _quad(f, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err, info = integrate.quad(f, a, b, full_output=1, epsabs=1e-12,
                                            epsrel=1e-12, limit=2000, **kw)[:3]
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(str(exc)) from None
    if info["neval"] > 10**6 or not math.isfinite(val):
        raise QuadratureFailure("quadrature budget exceeded")
    return val, err


def q_quadrature(params: PhysParams, t: float) -> tuple[float, float]:
    """Evaluate Q' and Q'' from their frequency integrals.

    Q'  = (1/hbar) int J(w)/w^2 sin(wt) dw
    Q'' = (1/hbar) int J(w)/w^2 (1 - cos wt) coth(beta hbar w / 2) dw

    The occupation part coth - 1 is integrated with the bare Ohmic density
    (no exponential cutoff); that is the split under which the closed forms
    are exact. The vacuum part is integrated on [0, 50 omega_c].

    Returns
    -------
    (q1, q2) : tuple of float
    """
    t = float(_check_t(t))
    if t == 0.0 or params.gamma == 0.0:
        return 0.0, 0.0
    wc = params.omega_c_freq
    bh = params.beta_hbar
    top = 50.0 * wc
    # split point below which the integrands are not oscillatory
    w1 = min(top, 2.0 * np.pi / t)
    errs = 0.0

    def sinc_part(w):
        return np.exp(-w / wc) * (np.sin(w * t) / w if w > 0 else t)

    q1, e = _quad(sinc_part, 0.0, w1)
    errs += e
    if w1 < top:
        v, e = _quad(lambda w: np.exp(-w / wc) / w, w1, top, weight="sin", wvar=t)
        q1 += v
        errs += e

    def vac_low(w):
        return np.exp(-w / wc) * (2.0 * np.sin(0.5 * w * t) ** 2 / w if w > 0 else 0.0)

    q2v, e = _quad(vac_low, 0.0, w1)
    errs += e
    if w1 < top:
        a, e1 = _quad(lambda w: np.exp(-w / wc) / w, w1, top)
        b, e2 = _quad(lambda w: np.exp(-w / wc) / w, w1, top, weight="cos", wvar=t)
        q2v += a - b
        errs += e1 + e2

    # thermal part: 2 (1 - cos wt) / (w (e^{bh w} - 1)), decays like e^{-bh w}
    wth = 60.0 / bh

    def th(w):
        if w == 0.0:
            return 0.0
        return 4.0 * np.sin(0.5 * w * t) ** 2 / (w * np.expm1(bh * w))

    if w1 >= wth:
        q2t, e = _quad(th, 0.0, wth)
    else:
        q2t, e = _quad(th, 0.0, w1)
        base, e1 = _quad(lambda w: 2.0 / (w * np.expm1(bh * w)), w1, wth)
        osc, e2 = _quad(lambda w: 2.0 / (w * np.expm1(bh * w)), w1, wth, weight="cos", wvar=t)
        q2t += base - osc
        e += e1 + e2
    errs += e
    if errs > 1e-9:
        raise QuadratureFailure(f"estimated error {errs:.2e} above tolerance")
    g = params.gamma
    return g * q1, g * (q2v + q2t)


def franck_condon(params: PhysParams,
                  exponent_mode: Literal["paper", "rederived"] = "rederived") -> float:
    """Franck-Condon factor B = (pi mu omega_c)^(-gamma [1 + zeta^2]).

    ``paper`` mode omits the (1 + zeta^2) enhancement of the exponent.
    """
    base = math.pi * params.mu * params.omega_c_freq
    if base <= 1.0:
        warnings.warn("pi mu omega_c <= 1: Franck-Condon factor exceeds 1", stacklevel=2)
    if exponent_mode == "paper":
        expo = params.gamma
    elif exponent_mode == "rederived":
        expo = params.gamma * params.zeta_factor
    else:
        raise DomainError(f"unknown exponent_mode {exponent_mode!r}")
    return base ** (-expo)
