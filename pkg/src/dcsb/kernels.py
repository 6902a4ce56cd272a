"""NIBA self-energies of the dual-coupling model.

Conventions
-----------
All kernels are built from one bath transform

    F(lam) = mu * a(g) * Gamma(g + mu lam) / Gamma(1 - g + mu lam),
    a(g)   = cos(pi g) Gamma(1 - 2g) = pi / (2 sin(pi g) Gamma(2g)),

the Laplace transform of the cosine branch c(t) = cos(pi g) (2 sinh(t/2mu))^(-2g)
of the bath factor. The sine branch transforms to tan(pi g) F(lam). In the
high-temperature mode F is replaced by its second-order expansion in mu*lam,

    F(lam) ~ mu nu / (g + x) * [1 + Lambda x + (Theta/2) x^2 / (1 + x)],  x = mu lam,

where the 1/(1+x) regulator keeps F bounded as lam -> infinity without
changing the expansion through second order.

With K = kernel_factor / 2 (1 for ``calibrated``, 1/2 for ``paper_literal``)

    Sigma_DC(lam) = K { (B^2 Delta^2 / 2) [ (F(lam+ie) + F(lam-ie)) / (1+z^2)^2
                                          - i tan(pi g) (F(lam+ie) - F(lam-ie)) / (1+z^2) ]
                        + I Delta^2 lam / (lam^2 + e^2) }

and the time-domain kernel is its exact Laplace pair

    Sigma_DC(t) = 2K (Delta^2/2) [ I cos(e t) + B^2 c(t) cos(e t) / (1+z^2)^2
                                              - B^2 s(t) sin(e t) / (1+z^2) ].

Functions accept Python/numpy complex scalars or mpmath numbers for lam; the
latter keeps the arithmetic in multiprecision for contour inversion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, asdict
from typing import Any

import mpmath
import numpy as np

from . import specfun
from .bath import PhysParams, franck_condon, q_double_prime_unit, q_prime_unit
from .errors import DomainError

__all__ = [
    "KernelConfig",
    "KernelScalars",
    "kernel_scalars",
    "epsilon_zeta",
    "i_term",
    "nu_coeff",
    "lambda_coeff",
    "theta_coeff",
    "theta_printed",
    "f_exact",
    "f_high_t",
    "bath_transform",
    "sigma_dc_laplace",
    "sigma_sb_laplace",
    "sigma_nn_laplace",
    "sigma_laplace",
    "sigma_dc_time",
    "omega_ib",
]

VARIANTS = ("DC", "SB", "NN", "IB")
F_MODES = ("exact", "high_t")
KERNEL_SCALES = ("calibrated", "paper_literal")
GAMMA_EFF_MODES = ("scaled", "literal")
EXPONENT_MODES = ("paper", "rederived")
TIME_BATHS = ("cutoff", "scaling")

# |g - 1/2| below this is treated as the tan(pi g) singularity
_HALF_TOL = 1e-9


@dataclass(frozen=True)
class KernelConfig:
    """Model variant and resolution of each normalisation choice.

    Parameters
    ----------
    variant : {'DC', 'SB', 'NN', 'IB'}
    f_mode : {'exact', 'high_t'}
        Gamma-function bath transform or its second-order high-T expansion.
    kernel_scale : {'calibrated', 'paper_literal'}
        Overall factor 2 or 1 on the time-domain prefactor Delta^2/2.
        ``calibrated`` makes the decoupled limit oscillate at exactly Delta.
    gamma_eff_mode : {'scaled', 'literal'}
        Coupling inside the bath transform: gamma*sqrt(1+zeta^2) or gamma.
    exponent_mode : {'paper', 'rederived'}
        Franck-Condon exponent, forwarded to :func:`franck_condon`.
    time_bath : {'cutoff', 'scaling'}
        Branch functions used by :func:`sigma_dc_time`: the finite-cutoff
        closed forms of Q', Q'' or their scaling form, which is the exact
        Laplace pair of the exact-mode transform.
    """

    variant: str = "DC"
    f_mode: str = "high_t"
    kernel_scale: str = "calibrated"
    gamma_eff_mode: str = "scaled"
    exponent_mode: str = "rederived"
    time_bath: str = "cutoff"

    def __post_init__(self):
        for name, allowed in (("variant", VARIANTS), ("f_mode", F_MODES),
                              ("kernel_scale", KERNEL_SCALES),
                              ("gamma_eff_mode", GAMMA_EFF_MODES),
                              ("exponent_mode", EXPONENT_MODES),
                              ("time_bath", TIME_BATHS)):
            if getattr(self, name) not in allowed:
                raise DomainError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def replace(self, **changes) -> "KernelConfig":
        d = asdict(self)
        d.update(changes)
        return KernelConfig(**d)

    @classmethod
    def exact_consistent(cls, **changes) -> "KernelConfig":
        """Exact-f transform with the scaling-form time kernel (an exact Laplace pair)."""
        d = dict(f_mode="exact", time_bath="scaling")
        d.update(changes)
        return cls(**d)

    def to_dict(self) -> dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class KernelScalars:
    """Scalar building blocks of the kernels at one parameter point."""

    eps_zeta: float       # rad/ps
    i_term: float
    fc: float             # Franck-Condon factor B
    nu: float
    lambda_coeff: float
    theta_coeff: float
    gamma_eff: float      # gamma * sqrt(1 + zeta^2)
    gamma_c: float        # coupling used inside the bath transform
    mu: float             # ps
    delta_freq: float     # rad/ps
    zeta_factor: float    # 1 + zeta^2
    kernel_factor: float  # 2 (calibrated) or 1 (paper_literal)
    tan_pg: float         # tan(pi gamma_c); 0 when zeta = 0

    @property
    def half_scale(self) -> float:
        return 0.5 * self.kernel_factor


def epsilon_zeta(params: PhysParams) -> float:
    """Induced level shift zeta Delta / (2 (1 + zeta^2)) in rad/ps."""
    return params.zeta * params.delta_freq / (2.0 * params.zeta_factor)


def i_term(params: PhysParams, fc: float) -> float:
    """Constant kernel weight (1-2B)/(1+z^2)^2 - 2(1-B)/(1+z^2) + 1.

    Evaluated in the algebraically equivalent form z^2 (2B + z^2) / (1+z^2)^2,
    which vanishes exactly at zeta = 0.
    """
    if not (0.0 < fc <= 1.0):
        raise DomainError("Franck-Condon factor must lie in (0, 1]")
    z2 = params.zeta ** 2
    return z2 * (2.0 * fc + z2) / (1.0 + z2) ** 2


def _check_g(g: float) -> None:
    if not (0.0 <= g < 1.0):
        raise DomainError(f"bath exponent g = {g} outside [0, 1)")


def _a_factor(g: float) -> float:
    # cos(pi g) Gamma(1 - 2g), written so that g = 1/2 is regular
    if g == 0.0:
        return 1.0
    if g < 0.25:
        return math.cos(math.pi * g) * specfun.gamma(1.0 - 2.0 * g).real
    return math.pi / (2.0 * math.sin(math.pi * g) * specfun.gamma(2.0 * g).real)


def nu_coeff(g: float) -> float:
    """nu = cos(pi g) Gamma(1+g) Gamma(1-2g) / Gamma(1-g)."""
    _check_g(g)
    return _a_factor(g) * (specfun.gamma(1.0 + g) / specfun.gamma(1.0 - g)).real


def lambda_coeff(g: float) -> float:
    """Lambda = psi0(1+g) - psi0(1-g)."""
    _check_g(g)
    return specfun.digamma(1.0 + g) - specfun.digamma(1.0 - g)


def theta_coeff(g: float) -> float:
    """Second-order coefficient Lambda^2 + psi1(1+g) - psi1(1-g).

    Gamma(1+g+x)/Gamma(1-g+x) / [Gamma(1+g)/Gamma(1-g)] = 1 + Lambda x + Theta x^2/2 + O(x^3).
    """
    lam = lambda_coeff(g)
    return lam * lam + specfun.trigamma(1.0 + g) - specfun.trigamma(1.0 - g)


def theta_printed(g: float) -> float:
    """The printed combination psi0(1-g)^2 - 2 psi0(1-g) psi0(1+g) - psi0(1+g)^2 + psi1(1+g).

    Kept for comparison only; it does not vanish at g = 0 and is not the
    Taylor coefficient of the gamma ratio.
    """
    _check_g(g)
    a = specfun.digamma(1.0 - g)
    b = specfun.digamma(1.0 + g)
    return a * a - 2.0 * a * b - b * b + specfun.trigamma(1.0 + g)


def _gamma_c(params: PhysParams, mode: str) -> float:
    if mode == "scaled":
        return params.gamma * math.sqrt(params.zeta_factor)
    if mode == "literal":
        return params.gamma
    raise DomainError(f"unknown gamma_eff_mode {mode!r}")


def kernel_scalars(params: PhysParams, config: KernelConfig) -> KernelScalars:
    """Collect the scalar coefficients for ``params`` under ``config``."""
    g = _gamma_c(params, config.gamma_eff_mode)
    _check_g(g)
    fc = franck_condon(params, config.exponent_mode)
    if params.zeta > 0.0:
        if abs(g - 0.5) < _HALF_TOL:
            raise DomainError("tan(pi g) is singular at g = 1/2 when zeta > 0")
        tan_pg = math.tan(math.pi * g)
    else:
        tan_pg = 0.0
    return KernelScalars(
        eps_zeta=epsilon_zeta(params),
        i_term=i_term(params, fc),
        fc=fc,
        nu=nu_coeff(g),
        lambda_coeff=lambda_coeff(g),
        theta_coeff=theta_coeff(g),
        gamma_eff=params.gamma * math.sqrt(params.zeta_factor),
        gamma_c=g,
        mu=params.mu,
        delta_freq=params.delta_freq,
        zeta_factor=params.zeta_factor,
        kernel_factor=2.0 if config.kernel_scale == "calibrated" else 1.0,
        tan_pg=tan_pg,
    )


def _is_mp(z: Any) -> bool:
    return isinstance(z, (mpmath.mpc, mpmath.mpf))


def _gratio(a, b):
    # Gamma(a) / Gamma(b) in the arithmetic of the argument
    if _is_mp(a):
        return mpmath.exp(mpmath.loggamma(a) - mpmath.loggamma(b))
    return specfun.gamma_ratio(a, b)


def f_exact(params: PhysParams, gamma_eff: float, lam, form: str = "normalized"):
    """Exact bath transform in ps.

    Parameters
    ----------
    gamma_eff : float
        Coupling g entering the gamma functions.
    lam : complex or mpmath number
        Laplace variable in rad/ps.
    form : {'normalized', 'printed'}
        ``normalized`` returns mu cos(pi g) Gamma(1-2g) Gamma(g+x)/Gamma(1-g+x),
        the transform whose high-T expansion has coefficients nu, Lambda, Theta.
        ``printed`` returns mu Gamma(g+x) / [(g+x) Gamma(1-g+x)].
    """
    g = float(gamma_eff)
    _check_g(g)
    mu = params.mu
    x = mu * lam
    if form == "printed":
        return mu * _gratio(g + x, 1.0 - g + x) / (g + x)
    if form != "normalized":
        raise DomainError(f"unknown form {form!r}")
    if g == 0.0:
        return 1.0 / lam
    return mu * _a_factor(g) * _gratio(g + x, 1.0 - g + x)


def high_t_parts(g: float, mu: float, nu: float, lam_c: float, theta: float):
    """Ascending coefficients (num, den) in x = mu*lam of the regularised high-T F.

    F = num(x) / den(x); for g = 0 the expansion is exact and reduces to mu / x.
    """
    if g == 0.0:
        return np.array([mu]), np.array([0.0, 1.0])
    num = mu * nu * np.array([1.0, 1.0 + lam_c, lam_c + 0.5 * theta])
    den = np.array([g, 1.0 + g, 1.0])
    return num, den


def _horner(c, x):
    s = 0.0
    for a in c[::-1]:
        s = s * x + float(a)
    return s


def f_high_t(params: PhysParams, gamma_for_coeffs: float, lam, regularized: bool = True):
    """High-temperature expansion of the bath transform in ps.

    ``regularized=False`` returns the bare quadratic
    mu nu / (g + x) (1 + Lambda x + Theta x^2 / 2); the default divides the
    quadratic term by (1 + x), identical through O(x^2) and bounded at
    large |lam|.
    """
    g = float(gamma_for_coeffs)
    mu = params.mu
    x = mu * lam
    nu, lc, th = nu_coeff(g), lambda_coeff(g), theta_coeff(g)
    if not regularized:
        return mu * nu / (g + x) * (1.0 + lc * x + 0.5 * th * x * x)
    num, den = high_t_parts(g, mu, nu, lc, th)
    return _horner(num, x) / _horner(den, x)


def bath_transform(sc: KernelScalars, f_mode: str, lam):
    """F(lam) for precomputed scalars."""
    if f_mode == "high_t":
        num, den = high_t_parts(sc.gamma_c, sc.mu, sc.nu, sc.lambda_coeff, sc.theta_coeff)
        x = sc.mu * lam
        return _horner(num, x) / _horner(den, x)
    g = sc.gamma_c
    if g == 0.0:
        return 1.0 / lam
    x = sc.mu * lam
    return sc.mu * _a_factor(g) * _gratio(g + x, 1.0 - g + x)


def sigma_dc_laplace(params: PhysParams, config: KernelConfig, lam):
    """Dual-coupling self-energy Sigma_DC(lam) in rad/ps."""
    sc = kernel_scalars(params, config)
    return _sigma_dc_from(sc, config.f_mode, lam)


def _sigma_dc_from(sc: KernelScalars, f_mode: str, lam):
    d2 = sc.delta_freq ** 2
    b2 = sc.fc ** 2
    e = sc.eps_zeta
    z2 = sc.zeta_factor
    if e == 0.0:
        return sc.half_scale * b2 * d2 * bath_transform(sc, f_mode, lam) / (z2 * z2)
    ie = mpmath.mpc(0, e) if _is_mp(lam) else 1j * e
    fp = bath_transform(sc, f_mode, lam + ie)
    fm = bath_transform(sc, f_mode, lam - ie)
    bath = 0.5 * b2 * d2 * ((fp + fm) / (z2 * z2) - 1j * sc.tan_pg * (fp - fm) / z2)
    static = sc.i_term * d2 * lam / (lam * lam + e * e)
    return sc.half_scale * (bath + static)


def sigma_sb_laplace(params: PhysParams, config: KernelConfig, lam):
    """Spin-boson self-energy: Sigma_DC with zeta forced to 0."""
    return sigma_dc_laplace(params.replace(zeta=0.0), config, lam)


def sigma_nn_laplace(params: PhysParams, config: KernelConfig, lam):
    """Spin-boson self-energy with the nearest-neighbour-blip correction.

    Sigma_NN = K [ A F(lam) + A / (lam + A F(lam)) ],  A = (B Delta)^2,
    i.e. the correction Dt^2 / (lam + Dt^2 L[cosh phi](lam)) with the dressed
    tunnelling Dt = B Delta and L[cosh phi] = F.
    """
    if params.zeta != 0.0:
        raise DomainError("the NN variant is defined for zeta = 0 only")
    sc = kernel_scalars(params, config)
    return _sigma_nn_from(sc, config.f_mode, lam)


def _sigma_nn_from(sc: KernelScalars, f_mode: str, lam):
    a = (sc.fc * sc.delta_freq) ** 2
    af = a * bath_transform(sc, f_mode, lam)
    return sc.half_scale * (af + a / (lam + af))


def sigma_laplace(params: PhysParams, config: KernelConfig, lam):
    """Dispatch on ``config.variant``."""
    v = config.variant
    if v == "DC":
        return sigma_dc_laplace(params, config, lam)
    if v == "SB":
        return sigma_sb_laplace(params, config, lam)
    if v == "NN":
        return sigma_nn_laplace(params, config, lam)
    raise DomainError("the IB variant exposes only the renormalisation omega_ib")


def sigma_evaluator(params: PhysParams, config: KernelConfig):
    """Return lam -> Sigma(lam) with scalars precomputed (for repeated calls)."""
    v = config.variant
    if v == "IB":
        raise DomainError("the IB variant exposes only the renormalisation omega_ib")
    if v == "NN":
        if params.zeta != 0.0:
            raise DomainError("the NN variant is defined for zeta = 0 only")
        sc = kernel_scalars(params, config)
        return lambda lam: _sigma_nn_from(sc, config.f_mode, lam)
    if v == "SB":
        params = params.replace(zeta=0.0)
    sc = kernel_scalars(params, config)
    return lambda lam: _sigma_dc_from(sc, config.f_mode, lam)


def branch_functions(params: PhysParams, config: KernelConfig, t):
    """Real branch functions (c(t), s(t)) of the bath factor.

    ``cutoff``: c + i s = exp(-2g Q''_1(t) + 2i g Q'_1(t)) with the unit-coupling
    closed forms. ``scaling``: c + i s = exp(i pi g) (2 sinh(t / 2mu))^(-2g),
    singular as t^(-2g) at the origin.
    """
    g = _gamma_c(params, config.gamma_eff_mode)
    t = np.asarray(t, dtype=float)
    if config.time_bath == "cutoff":
        amp = np.exp(-2.0 * g * np.asarray(q_double_prime_unit(params, t)))
        ph = 2.0 * g * np.asarray(q_prime_unit(params, t))
        return amp * np.cos(ph), amp * np.sin(ph)
    if g == 0.0:
        return np.ones_like(t), np.zeros_like(t)
    with np.errstate(divide="ignore"):
        y = t / (2.0 * params.mu)
        # log(2 sinh y) = y + log(1 - e^{-2y})
        log2s = y + np.log(-np.expm1(-2.0 * y))
        amp = np.exp(-2.0 * g * log2s)
    return math.cos(math.pi * g) * amp, math.sin(math.pi * g) * amp


def sigma_dc_time(params: PhysParams, config: KernelConfig, t):
    """Time-domain dual-coupling kernel Sigma_DC(t) in rad/ps^2.

    kernel_factor (Delta^2/2) [ I cos(e t) + B^2 c(t) cos(e t)/(1+z^2)^2
                                - B^2 s(t) sin(e t)/(1+z^2) ]
    """
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0) or np.any(~np.isfinite(tt)):
        raise DomainError("time must be finite and nonnegative")
    if config.variant == "SB":
        params = params.replace(zeta=0.0)
    elif config.variant not in ("DC",):
        raise DomainError("time-domain kernel is provided for the DC and SB variants")
    sc = kernel_scalars(params, config)
    c, s = branch_functions(params, config, tt)
    e = sc.eps_zeta
    z2 = sc.zeta_factor
    b2 = sc.fc ** 2
    val = sc.kernel_factor * 0.5 * sc.delta_freq ** 2 * (
        sc.i_term * np.cos(e * tt) + b2 * c * np.cos(e * tt) / (z2 * z2)
        - b2 * s * np.sin(e * tt) / z2)
    return float(val) if np.ndim(t) == 0 else val


def omega_ib(params: PhysParams) -> float:
    """Tunnelling renormalisation of the independent-boson limit in meV:
    zeta^2 (2/pi) gamma hbar omega_c."""
    return params.zeta ** 2 * (2.0 / math.pi) * params.gamma * params.omega_c
