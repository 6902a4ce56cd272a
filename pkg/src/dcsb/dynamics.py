"""Spin-polarisation dynamics from <sigma_z(lam)> = 1 / (lam + Sigma(lam)).

Three independent reconstructions of <sigma_z(t)> are provided:

* pole-residue expansion of the rational high-T form,
* fixed-Talbot contour inversion (multiprecision, any f-mode),
* trapezoidal stepping of the memory-kernel equation in the time domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import roots_jacobi, roots_legendre

from .bath import PhysParams
from .errors import (ContourFailure, DegeneratePole, DomainError, ImaginaryLeak,
                     InvariantViolation, NoBracket,
                     RootFindingFailure, StepTooLarge)
from .kernels import (KernelConfig, KernelScalars, branch_functions,
                      high_t_parts, kernel_scalars, sigma_evaluator)

__all__ = [
    "RationalKernel",
    "PoleSet",
    "Trace",
    "Mode",
    "CoherenceReport",
    "build_rational",
    "find_poles",
    "poles_for",
    "refine_poles_exact",
    "reconstruct_time",
    "reconstruct_exact",
    "invert_talbot",
    "talbot_inverse",
    "solve_volterra",
    "coherence_report",
    "track_modes",
    "track_modes_path",
    "ModeState",
    "transition_scan",
    "has_coherent_pair",
]

RESIDUE_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class RationalKernel:
    """<sigma_z(lam)> = D(lam) / N(lam) with N = lam D + Sigma_num.

    Coefficients are real and ascending; D is monic.
    """

    num_coeffs: np.ndarray
    den_coeffs: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.num_coeffs, dtype=float)
        d = np.asarray(self.den_coeffs, dtype=float)
        object.__setattr__(self, "num_coeffs", n)
        object.__setattr__(self, "den_coeffs", d)
        if n[-1] == 0.0:
            raise InvariantViolation("leading numerator coefficient vanishes")
        if len(n) != len(d) + 1:
            raise InvariantViolation("deg N must equal deg D + 1")

    def __call__(self, lam):
        """Evaluate D(lam) / N(lam)."""
        return P.polyval(lam, self.den_coeffs) / P.polyval(lam, self.num_coeffs)

    def sigma(self, lam):
        """Self-energy N/D - lam implied by the rational form."""
        return P.polyval(lam, self.num_coeffs) / P.polyval(lam, self.den_coeffs) - lam

    @property
    def degree(self) -> int:
        return len(self.num_coeffs) - 1


@dataclass
class PoleSet:
    """Poles lam_i (rad/ps) and residues of <sigma_z(lam)>.

    ``flags`` collects per-pole notes (e.g. non-converged refinement);
    ``missing_weight`` is 1 - sum(residues).
    """

    poles: np.ndarray
    residues: np.ndarray
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=complex)
        self.residues = np.asarray(self.residues, dtype=complex)

    @property
    def missing_weight(self) -> float:
        return float(abs(1.0 - np.sum(self.residues)))

    def validate(self, sum_tol: float | None = 1e-8, stab_tol: float = 1e-10) -> "PoleSet":
        p, r = self.poles, self.residues
        if np.any(p.real > stab_tol):
            raise InvariantViolation(f"unstable pole with Re = {p.real.max():.3e}")
        for lam, res in zip(p, r):
            if lam.imag != 0.0:
                j = np.flatnonzero((p == np.conj(lam)))
                if j.size != 1 or r[j[0]] != np.conj(res):
                    raise InvariantViolation("pole set is not closed under conjugation")
        if sum_tol is not None and self.missing_weight > sum_tol:
            raise InvariantViolation(f"residues sum to {np.sum(r).real:.12g}")
        return self


@dataclass(frozen=True)
class Trace:
    """Uniformly or arbitrarily sampled <sigma_z(t)>."""

    times: np.ndarray
    values: np.ndarray
    method: str
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.method not in ("pole_residue", "talbot", "volterra"):
            raise DomainError(f"unknown method {self.method!r}")
        if t.shape != v.shape or t.ndim != 1 or t.size == 0:
            raise DomainError("times and values must be equal-length 1-d arrays")
        if np.any(np.diff(t) <= 0):
            raise DomainError("times must be strictly ascending")
        if t[0] == 0.0 and abs(v[0] - 1.0) > 1e-6:
            raise InvariantViolation(f"<sigma_z(0)> = {v[0]!r}, expected 1")
        if np.any(~np.isfinite(v)) or np.any(np.abs(v) > 1.05):
            raise InvariantViolation("|<sigma_z>| exceeds the 1.05 band")


@dataclass(frozen=True)
class Mode:
    tau_phi: float          # ps; math.inf for an undamped mode
    freq: float             # rad/ps
    residue_magnitude: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.tau_phi)


@dataclass(frozen=True)
class CoherenceReport:
    modes: list
    relaxation_rates: list

    def coherent(self, floor: float = RESIDUE_FLOOR) -> list:
        return [m for m in self.modes if m.residue_magnitude > floor]

    def longest(self, floor: float = 1e-3) -> Mode | None:
        c = self.coherent(floor)
        return max(c, key=lambda m: m.tau_phi) if c else None

    def dominant(self, floor: float = 1e-3) -> Mode | None:
        c = self.coherent(floor)
        return c[0] if c else None


# ---------------------------------------------------------------------------
# rational form

def _effective(params: PhysParams, config: KernelConfig) -> PhysParams:
    if config.variant == "SB":
        return params.replace(zeta=0.0)
    if config.variant == "NN" and params.zeta != 0.0:
        raise DomainError("the NN variant is defined for zeta = 0 only")
    if config.variant == "IB":
        raise DomainError("the IB variant has no self-energy")
    return params


def _compose(coeffs_x: np.ndarray, mu: float, shift: complex) -> np.ndarray:
    # p(x) with x = mu (lam + shift), returned ascending in lam
    out = np.zeros(len(coeffs_x), dtype=complex)
    lin = np.array([mu * shift, mu], dtype=complex)
    power = np.array([1.0 + 0j])
    for c in coeffs_x:
        out[: len(power)] += c * power
        power = P.polymul(power, lin)
    return out


def build_rational(params: PhysParams, config: KernelConfig) -> RationalKernel:
    """Rational form of <sigma_z(lam)> in the high-T f-mode.

    Raises
    ------
    DomainError
        If ``config.f_mode`` is not ``high_t``.
    """
    if config.f_mode != "high_t":
        raise DomainError("the rational form requires f_mode = 'high_t'")
    params = _effective(params, config)
    sc = kernel_scalars(params, config)
    return _rational_from(sc, config.variant)


def _rational_from(sc: KernelScalars, variant: str) -> RationalKernel:
    k = sc.half_scale
    d2 = sc.delta_freq ** 2
    b2 = sc.fc ** 2
    nx, dx = high_t_parts(sc.gamma_c, sc.mu, sc.nu, sc.lambda_coeff, sc.theta_coeff)
    lam = np.array([0.0, 1.0])
    e = sc.eps_zeta
    z2 = sc.zeta_factor
    if variant == "NN":
        a = b2 * d2
        n, d = _compose(nx, sc.mu, 0.0), _compose(dx, sc.mu, 0.0)
        inner = P.polyadd(P.polymul(lam, d), a * n)
        den = P.polymul(d, inner)
        snum = k * P.polyadd(a * P.polymul(n, inner), a * P.polymul(d, d))
    elif e == 0.0:
        den = _compose(dx, sc.mu, 0.0)
        snum = k * b2 * d2 * _compose(nx, sc.mu, 0.0) / (z2 * z2)
    elif sc.gamma_c == 0.0:
        # F = 1/lam exactly: Sigma = K Delta^2 (B^2/(1+z^2)^2 + I) lam / (lam^2 + e^2)
        den = np.array([e * e, 0.0, 1.0])
        snum = k * d2 * (b2 / (z2 * z2) + sc.i_term) * lam
    else:
        npl, dpl = _compose(nx, sc.mu, 1j * e), _compose(dx, sc.mu, 1j * e)
        nmi, dmi = _compose(nx, sc.mu, -1j * e), _compose(dx, sc.mu, -1j * e)
        quad = np.array([e * e, 0.0, 1.0])
        dd = P.polymul(dpl, dmi)
        den = P.polymul(dd, quad)
        cross_p = P.polyadd(P.polymul(npl, dmi), P.polymul(nmi, dpl))
        cross_m = P.polysub(P.polymul(npl, dmi), P.polymul(nmi, dpl))
        bath = 0.5 * b2 * d2 * P.polysub(cross_p / (z2 * z2), 1j * sc.tan_pg * cross_m / z2)
        snum = k * P.polyadd(P.polymul(bath, quad), sc.i_term * d2 * P.polymul(lam, dd))
    num = P.polyadd(P.polymul(lam, den), snum)
    num, den = np.asarray(num, dtype=complex), np.asarray(den, dtype=complex)
    scale = np.max(np.abs(num))
    if np.max(np.abs(num.imag)) > 1e-10 * scale or np.max(np.abs(den.imag)) > 1e-10 * np.max(np.abs(den)):
        raise InvariantViolation("rational coefficients are not real")
    num, den = num.real, den.real
    lead = den[-1]
    return RationalKernel(num / lead, den / lead)


# ---------------------------------------------------------------------------
# poles

def _polish(coeffs: np.ndarray, dcoeffs: np.ndarray, z: complex, steps: int = 8) -> tuple[complex, float]:
    for _ in range(steps):
        f = P.polyval(z, coeffs)
        fp = P.polyval(z, dcoeffs)
        if fp == 0:
            break
        dz = f / fp
        z = z - dz
        if abs(dz) <= 1e-16 * max(1.0, abs(z)):
            break
    f = P.polyval(z, coeffs)
    fp = P.polyval(z, dcoeffs)
    return z, abs(f / fp) if fp != 0 else math.inf


def _polish_mp(coeffs: np.ndarray, z: complex, dps: int = 40) -> tuple[complex, float]:
    # Newton in extended precision for clustered roots where double stalls
    with mpmath.workdps(dps):
        c = [mpmath.mpf(float(x)) for x in coeffs[::-1]]
        zz = mpmath.mpc(z)
        for _ in range(60):
            f, fp = mpmath.polyval(c, zz, derivative=True)
            if fp == 0:
                break
            dz = f / fp
            zz -= dz
            if abs(dz) <= mpmath.mpf(10) ** (-dps + 5) * max(1, abs(zz)):
                break
        f, fp = mpmath.polyval(c, zz, derivative=True)
        return complex(zz), float(abs(f / fp)) if fp != 0 else math.inf


def _residue_mp(n: np.ndarray, d: np.ndarray, z: complex, dps: int = 40) -> complex:
    with mpmath.workdps(dps):
        cn = [mpmath.mpf(float(x)) for x in n[::-1]]
        cd = [mpmath.mpf(float(x)) for x in d[::-1]]
        _, fp = mpmath.polyval(cn, mpmath.mpc(z), derivative=True)
        return complex(mpmath.polyval(cd, mpmath.mpc(z)) / fp)


def _roots_double(n: np.ndarray, dn: np.ndarray) -> tuple[list, list, bool]:
    raw = P.polyroots(n)
    uppers, reals = [], []
    hard = False

    def polish(z):
        nonlocal hard
        z1, resid = _polish(n, dn, z)
        if resid > 1e-12 * max(1.0, abs(z1)):
            z1, resid = _polish_mp(n, z1)
            hard = True
        if resid > 1e-10 * max(1.0, abs(z1)):
            raise RootFindingFailure(f"root {z1} not polished (residual {resid:.2e})")
        return z1

    for z in raw:
        z = polish(complex(z))
        if abs(z.imag) <= 1e-9 * max(1.0, abs(z)):
            reals.append(complex(polish(complex(z.real, 0.0)).real, 0.0))
        elif z.imag > 0:
            uppers.append(z)
    if len(raw) - len(reals) != 2 * len(uppers):
        raise RootFindingFailure("roots are not closed under conjugation")
    return reals, uppers, hard


def _roots_mp(n: np.ndarray, dps: int = 50) -> tuple[list, list]:
    with mpmath.workdps(dps):
        c = [mpmath.mpf(float(x)) for x in n[::-1]]
        try:
            roots = mpmath.polyroots(c, maxsteps=400, extraprec=2 * dps)
        except mpmath.libmp.NoConvergence:
            raise RootFindingFailure("extended-precision root finding did not converge") from None
        reals, uppers = [], []
        for r in roots:
            f, fp = mpmath.polyval(c, r, derivative=True)
            if fp == 0:
                raise DegeneratePole(f"repeated root at {complex(r)}")
            if abs(f / fp) > 1e-12 * max(1, abs(r)):
                raise RootFindingFailure(f"root {complex(r)} not polished")
            if abs(mpmath.im(r)) <= mpmath.mpf(10) ** (-dps + 15) * max(1, abs(r)):
                reals.append(complex(float(mpmath.re(r)), 0.0))
            elif mpmath.im(r) > 0:
                uppers.append(complex(r))
    if len(roots) - len(reals) != 2 * len(uppers):
        raise RootFindingFailure("roots are not closed under conjugation")
    return reals, uppers


def find_poles(rk: RationalKernel, validate: bool = True) -> PoleSet:
    """All roots of N with residues D/N'.

    Roots come from the companion-matrix eigenvalues and are polished by
    Newton steps. When a root cluster defeats double precision (a near
    double root, or a pair whose imaginary part is below the eigenvalue
    noise), all roots are recomputed in extended precision with
    ``mpmath.polyroots``. Conjugate pairs are symmetrised exactly.
    """
    n, d = rk.num_coeffs, rk.den_coeffs
    dn = P.polyder(n)
    try:
        reals, uppers, hard = _roots_double(n, dn)
    except RootFindingFailure:
        reals, uppers = _roots_mp(n)
        hard = True
    poles = np.array(reals + uppers + [np.conj(z) for z in uppers], dtype=complex)
    if poles.size > 1:
        diff = np.abs(poles[:, None] - poles[None, :])
        np.fill_diagonal(diff, np.inf)
        if diff.min() < 1e-8:
            raise DegeneratePole(f"two poles closer than 1e-8 ({diff.min():.2e})")
    if hard:
        res = np.array([_residue_mp(n, d, z) for z in poles], dtype=complex)
    else:
        res = P.polyval(poles, d) / P.polyval(poles, dn)
    nr = len(reals)
    res[:nr] = res[:nr].real
    nu = len(uppers)
    res[nr + nu:] = np.conj(res[nr:nr + nu])
    ps = PoleSet(poles, res)
    if validate:
        ps.validate()
    return ps


def poles_for(params: PhysParams, config: KernelConfig) -> PoleSet:
    """Convenience: rational high-T poles for ``params`` (f_mode forced to high_t)."""
    return find_poles(build_rational(params, config.replace(f_mode="high_t")))


def refine_poles_exact(params: PhysParams, config: KernelConfig, seeds: PoleSet,
                       max_iter: int = 100) -> PoleSet:
    """Newton refinement of seeds on g(lam) = lam + Sigma_exact(lam).

    Derivatives use a central difference with step 1e-6 rad/ps. Seeds that do
    not converge in ``max_iter`` steps are kept and flagged, as are seeds
    that land on a root already claimed by a smaller seed. The returned set
    is not checked for unit residue sum (the exact transform has infinitely
    many poles; ``missing_weight`` reports the deficit).
    """
    if config.f_mode != "exact":
        raise DomainError("refine_poles_exact requires f_mode = 'exact'")
    params = _effective(params, config)
    sig = sigma_evaluator(params, config)
    h = 1e-6

    def g(z):
        return z + sig(z)

    def gp(z):
        return (g(z + h) - g(z - h)) / (2 * h)

    out_p, out_r, flags = [], [], []
    # seeds nearest the origin first, so each physical seed claims its own root
    for z0 in sorted(seeds.poles, key=abs):
        if z0.imag < 0:
            continue
        z = complex(z0)
        ok = False
        try:
            for _ in range(max_iter):
                dz = g(z) / gp(z)
                z = z - dz
                if z.imag < 0 and z0.imag == 0:
                    z = complex(z.real, 0.0)
                if abs(dz) <= 1e-12 * max(1.0, abs(z)):
                    ok = True
                    break
        except (ZeroDivisionError, ArithmeticError, ValueError):
            ok = False
        if not ok:
            flags.append(("NoConvergence", complex(z0)))
            z = complex(z0)
            res = complex("nan")
        else:
            if abs(z.imag) <= 1e-9 * max(1.0, abs(z)):
                z = complex(z.real, 0.0)
            elif z.imag < 0:
                z = z.conjugate()  # g is real-analytic: the conjugate is a root too
            res = 1.0 / gp(z)
            if z.imag == 0:
                res = complex(res.real, 0.0)
        if any(abs(z - q) < 1e-8 * max(1.0, abs(z)) for q in out_p):
            flags.append(("Duplicate", complex(z0)))
            continue
        out_p.append(z)
        out_r.append(res)
    uppers = [(p, r) for p, r in zip(out_p, out_r) if p.imag > 0]
    poles = out_p + [np.conj(p) for p, _ in uppers]
    residues = out_r + [np.conj(r) for _, r in uppers]
    ps = PoleSet(np.array(poles), np.array(residues), flags)
    good = np.isfinite(ps.residues)
    if np.any(ps.poles[good].real > 1e-10):
        raise InvariantViolation("refined pole in the right half-plane")
    return ps


# ---------------------------------------------------------------------------
# time reconstruction

def reconstruct_time(ps: PoleSet, grid: Sequence[float]) -> Trace:
    """<sigma_z(t)> = sum_i res_i exp(lam_i t)."""
    t = np.asarray(grid, dtype=float)
    vals, leak = _pole_sum(ps, t)
    return Trace(t, vals, "pole_residue", {"max_imag": leak})


def _pole_sum(ps: PoleSet, t: np.ndarray) -> tuple[np.ndarray, float]:
    ok = np.isfinite(ps.residues)
    vals = np.zeros(t.shape, dtype=complex)
    for l, r in zip(ps.poles[ok], ps.residues[ok]):
        vals += r * np.exp(l * t)
    leak = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    if leak > 1e-8:
        raise ImaginaryLeak(f"imaginary part {leak:.2e} in pole-residue sum")
    return vals.real, leak


def reconstruct_exact(params: PhysParams, config: KernelConfig, ps: PoleSet,
                      grid: Sequence[float], tol: float = 1e-8) -> Trace:
    """Exact-mode trace from refined poles, with Talbot values at early times.

    A refined pole set lacks the fast poles of the Gamma-function transform
    (|Re lam| of order g/mu), so its sum is short of unit weight near t = 0.
    Grid points are inverted by Talbot until two consecutive points agree
    with the pole sum within ``tol``; the pole sum is used from there on.
    """
    if config.f_mode != "exact":
        raise DomainError("reconstruct_exact requires f_mode = 'exact'")
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise DomainError("grid must be strictly ascending")
    vals, leak = _pole_sum(ps, t)
    f_mp, f_dbl = _laplace_function(params, config)
    fb = _probe_frequency(f_dbl, 4.0 * params.delta_freq + 1.0)
    agree, n_talbot = 0, 0
    for i, ti in enumerate(t):
        v, _ = talbot_inverse(f_mp, [ti], freq_bound=fb)
        n_talbot += 1
        agree = agree + 1 if abs(v[0] - vals[i]) <= tol else 0
        vals[i] = v[0]
        if agree == 2:
            break
    t_switch = float(t[n_talbot - 1])
    return Trace(t, vals, "pole_residue",
                 {"max_imag": leak, "talbot_points": n_talbot, "talbot_until": t_switch})


def _probe_frequency(fun: Callable[[complex], complex], wmax: float, n: int = 4001) -> float:
    # largest omega of a significant local maximum of |F(i omega)|
    w = np.linspace(wmax / n, wmax, n)
    vals = np.empty(n)
    for i, x in enumerate(w):
        try:
            vals[i] = abs(complex(fun(1j * x)))
        except (ZeroDivisionError, ArithmeticError, ValueError):
            vals[i] = np.inf
    vals[~np.isfinite(vals)] = 1e300
    top = vals.max()
    peaks = np.flatnonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])) + 1
    peaks = [i for i in peaks if vals[i] > 1e-4 * top]
    return float(w[max(peaks)]) if peaks else 0.0


def _laplace_function(params: PhysParams, config: KernelConfig):
    """Return (F_mp, F_double) for <sigma_z(lam)>; rational form in high-T mode."""
    if config.f_mode == "high_t":
        rk = build_rational(params, config)
        nd = [mpmath.mpf(float(c)) for c in rk.num_coeffs[::-1]]
        dd = [mpmath.mpf(float(c)) for c in rk.den_coeffs[::-1]]

        def f_mp(lam):
            return mpmath.polyval(dd, lam) / mpmath.polyval(nd, lam)

        return f_mp, rk
    params = _effective(params, config)
    sig = sigma_evaluator(params, config)

    def f_mp(lam):
        return 1 / (lam + sig(lam))

    return f_mp, (lambda lam: 1.0 / (lam + sig(lam)))


def talbot_inverse(f_mp: Callable, times: Sequence[float], m: int = 64,
                   freq_bound: float = 0.0) -> tuple[np.ndarray, int]:
    """Fixed-Talbot inverse Laplace transform of an mpmath-callable ``f_mp``.

    The contour lam(th) = r th (cot th + i), 0 < th < pi, uses
    r = max(2M/(5t), freq_bound) so that poles with |Im lam| up to
    ``freq_bound`` lie inside it. M starts at ``m``, is doubled while
    2M/5 < r t, and again on evaluation failure, up to 512 nodes. The
    working precision grows with r t to absorb the exp(r t) cancellation.
    The value at t = 0 is the initial-value limit lam f(lam), lam -> inf.

    Returns
    -------
    values : ndarray
    max_nodes : int
    """
    t_arr = np.asarray(times, dtype=float)
    if np.any(t_arr < 0) or np.any(~np.isfinite(t_arr)):
        raise DomainError("times must be finite and nonnegative")
    out = np.empty_like(t_arr)
    used = 0
    for i, t in enumerate(t_arr):
        if t == 0.0:
            with mpmath.workdps(40):
                big = mpmath.mpf(10) ** 24
                out[i] = float(mpmath.re(big * f_mp(mpmath.mpc(big, 0))))
            continue
        mm = m
        while 0.4 * mm < freq_bound * t and mm < 512:
            mm *= 2
        while True:
            try:
                out[i] = _talbot_point(f_mp, float(t), mm, freq_bound)
                break
            except (ZeroDivisionError, ArithmeticError, ValueError, ContourFailure):
                if mm >= 512:
                    raise ContourFailure(f"contour evaluation failed at t = {t}") from None
                mm *= 2
        used = max(used, mm)
    return out, used


def invert_talbot(params: PhysParams, config: KernelConfig, grid: Sequence[float],
                  m: int = 64, freq_bound: float | None = None) -> Trace:
    """Fixed-Talbot inversion of 1/(lam + Sigma(lam)) in multiprecision.

    In high-T mode the transform is evaluated through its rational form; in
    exact mode through the Gamma-function kernel. Unless ``freq_bound`` is
    given, the highest significant peak of |F(i omega)| sets the minimum
    contour size (see ``talbot_inverse``).
    """
    f_mp, f_dbl = _laplace_function(params, config)
    if freq_bound is None:
        wmax = 4.0 * params.delta_freq + 1.0
        freq_bound = _probe_frequency(f_dbl, wmax)
    vals, used = talbot_inverse(f_mp, grid, m=m, freq_bound=freq_bound)
    return Trace(grid, vals, "talbot", {"max_nodes": used, "freq_bound": freq_bound})


def _talbot_point(f_mp, t: float, m: int, r_min: float) -> float:
    r = max(0.4 * m / t, r_min)
    dps = max(30, int(r * t / math.log(10)) + 20)
    with mpmath.workdps(dps):
        tt = mpmath.mpf(t)
        rr = mpmath.mpf(r)
        fr = f_mp(mpmath.mpc(rr, 0))
        acc = 0.5 * mpmath.exp(rr * tt) * fr
        for k in range(1, m):
            th = mpmath.pi * k / m
            cot = mpmath.cot(th)
            lam = rr * th * mpmath.mpc(cot, 1)
            sg = th + (th * cot - 1) * cot
            val = f_mp(lam)
            if not mpmath.isfinite(val):
                raise ContourFailure("non-finite transform on contour")
            acc += (mpmath.exp(tt * lam) * val * mpmath.mpc(1, sg)).real
        res = rr / m * acc
        return float(mpmath.re(res))


# ---------------------------------------------------------------------------
# memory-kernel equation

def _kernel_integral(params: PhysParams, config: KernelConfig, t: np.ndarray) -> np.ndarray:
    # K(t) = int_0^t Sigma(u) du on the uniform grid t
    params = _effective(params, config)
    sc = kernel_scalars(params, config)
    pre = sc.kernel_factor * 0.5 * sc.delta_freq ** 2
    e = sc.eps_zeta
    z2 = sc.zeta_factor
    b2 = sc.fc ** 2
    if e == 0.0:
        static = sc.i_term * t
    else:
        static = sc.i_term * np.sin(e * t) / e
    h = t[1] - t[0]

    def bath(u):
        c, s = branch_functions(params, config, u)
        return b2 * (c * np.cos(e * u) / (z2 * z2) - s * np.sin(e * u) / z2)

    xg, wg = roots_legendre(12)
    a = t[:-1][:, None]
    nodes = a + 0.5 * h * (xg[None, :] + 1.0)
    cells = 0.5 * h * (bath(nodes.ravel()).reshape(nodes.shape) @ wg)
    g = sc.gamma_c
    if config.time_bath == "scaling" and g > 0.0:
        # first cell: integrand ~ u^(-2g) phi(u); Gauss-Jacobi on the weight
        xj, wj = roots_jacobi(16, 0.0, -2.0 * g)
        u = 0.5 * h * (xj + 1.0)
        phi = bath(u) * u ** (2.0 * g)
        cells[0] = (0.5 * h) ** (1.0 - 2.0 * g) * np.dot(wj, phi)
    kb = np.concatenate(([0.0], np.cumsum(cells)))
    return pre * (static + kb)


def solve_volterra(params: PhysParams, config: KernelConfig, grid: Sequence[float]) -> Trace:
    """Trapezoidal stepping of d sigma/dt = -int_0^t Sigma(t-s) sigma(s) ds.

    The equation is used in its once-integrated form
    sigma(t) = 1 - int_0^t K(t-s) sigma(s) ds with K = int Sigma, which is
    well defined for the integrable t^(-2g) singularity of the scaling kernel.
    K is built by Gauss quadrature per cell, and the convolution uses the
    trapezoidal rule (explicit, since K(0) = 0).
    """
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
        raise DomainError("grid must start at 0 with at least two points")
    h = t[1] - t[0]
    if not np.allclose(np.diff(t), h, rtol=1e-9, atol=0):
        raise DomainError("grid must be uniform")
    params_e = _effective(params, config)
    hmax = min(0.05 / params_e.delta_freq, 0.2 * params_e.beta_hbar)
    if h > hmax * (1 + 1e-12):
        raise StepTooLarge(f"step {h:.4g} ps exceeds {hmax:.4g} ps")
    if config.variant not in ("DC", "SB"):
        raise DomainError("the time-domain solver supports the DC and SB variants")
    k = _kernel_integral(params, config, t)
    n = t.size
    sig = np.empty(n)
    sig[0] = 1.0
    krev = k[::-1].copy()  # krev[i] = k[n-1-i]
    for i in range(1, n):
        # sum_{j=1}^{i-1} k[i-j] sig[j]
        conv = np.dot(krev[n - i: n - 1], sig[1:i]) if i > 1 else 0.0
        sig[i] = 1.0 - h * (0.5 * k[i] * sig[0] + conv)
    return Trace(t, sig, "volterra", {"h": h})


# ---------------------------------------------------------------------------
# coherence analysis

def coherence_report(ps: PoleSet) -> CoherenceReport:
    """Coherence times 1/|Re lam| and frequencies |Im lam| of conjugate pairs."""
    modes, rates = [], []
    for lam, res in zip(ps.poles, ps.residues):
        if not np.isfinite(res):
            continue
        if lam.imag > 0:
            re = abs(float(lam.real))
            tau = math.inf if re < 1e-12 else 1.0 / re
            modes.append(Mode(tau, float(lam.imag), float(abs(res))))
        elif lam.imag == 0:
            rates.append(float(abs(lam.real)))
    modes.sort(key=lambda m: (-m.residue_magnitude, m.freq))
    return CoherenceReport(modes, sorted(rates))


def has_coherent_pair(ps: PoleSet, floor: float = RESIDUE_FLOOR) -> bool:
    return any(lam.imag != 0 and abs(res) > floor for lam, res in zip(ps.poles, ps.residues))


def _upper_and_real(ps: PoleSet):
    sel = ps.poles.imag >= 0
    return ps.poles[sel], ps.residues[sel]


def _seed_modes(ps: PoleSet) -> list:
    up = [lam for lam in ps.poles if lam.imag > 0 and abs(lam.real) <= 0.05 * lam.imag]
    up.sort(key=lambda z: -z.imag)
    return up


@dataclass
class ModeState:
    """Continuation state of one labelled mode.

    While coherent the mode is its upper-half-plane pole. When the pair
    reaches the real axis the mode is overdamped and owns the two real
    daughter poles of the split. A pair can re-form only from daughters of
    overdamped modes (the oscillatory sector conserves its poles); a
    daughter that merges with any other pole is absorbed.
    """

    pole: complex | None
    residue: complex | None
    daughters: tuple = ()
    first_death: float | None = None
    last_death: float | None = None

    @property
    def alive(self) -> bool:
        return bool(self.pole is not None and abs(self.residue) > RESIDUE_FLOOR)


def _ambiguous(d: np.ndarray, order: np.ndarray) -> bool:
    return len(order) > 1 and d[order[1]] < 2.0 * d[order[0]]


def _step_modes(states: dict, cand: np.ndarray, cres: np.ndarray, g: float,
                fine: bool) -> dict | None:
    # one continuation step; None asks the caller for a smaller step
    new = {}
    hits = {}  # candidate index -> list of (mode, daughter)
    for i, st in states.items():
        if st.pole is not None:
            d = np.abs(cand - st.pole)
            order = np.argsort(d)
            j = order[0]
            if not fine and (_ambiguous(d, order) or cand[j].imag == 0):
                return None
            if cand[j].imag > 0:
                new[i] = ModeState(cand[j], cres[j], (), st.first_death, st.last_death)
            else:
                reals = order[cand[order].imag == 0][:2]
                fd = g if st.first_death is None else st.first_death
                new[i] = ModeState(None, None, tuple(cand[reals]), fd, g)
        else:
            new[i] = ModeState(None, None, (), st.first_death, st.last_death)
            for z in st.daughters:
                d = np.abs(cand - z)
                order = np.argsort(d)
                j = order[0]
                if not fine and (_ambiguous(d, order) or cand[j].imag > 0):
                    return None
                hits.setdefault(j, []).append(i)
    # revivals first, so that real hits cannot overwrite a revived mode
    for j, owners in sorted(hits.items(), key=lambda kv: cand[kv[0]].imag == 0):
        if cand[j].imag == 0:
            owners = [i for i in owners if new[i].pole is None]
            for i in owners:
                st = new[i]
                if cand[j] not in st.daughters:
                    new[i] = ModeState(None, None, st.daughters + (cand[j],),
                                       st.first_death, st.last_death)
        elif len(owners) >= 2:
            win = max(owners, key=lambda i: (new[i].last_death, -i))
            st = new[win]
            new[win] = ModeState(cand[j], cres[j], (), st.first_death, st.last_death)
            for i in owners:
                if i != win and new[i].pole is None:
                    new[i] = ModeState(None, None, new[i].daughters, new[i].first_death,
                                       new[i].last_death)
        # a daughter hitting a complex pole alone has merged with a
        # non-sector pole: it is dropped
    return new


def track_modes_path(params: PhysParams, config: KernelConfig, gammas: Sequence[float],
                     gamma_seed: float = 1e-6, step: float = 2e-3,
                     min_step: float = 1e-7) -> list:
    """Follow the oscillatory modes through ascending couplings ``gammas``.

    Modes are labelled at ``gamma_seed`` by descending frequency among the
    nearly undamped upper-half-plane poles (1 = highest) and continued by
    nearest-neighbour matching in the closed upper half-plane. The step is
    halved down to ``min_step`` whenever a match is ambiguous or a pole
    crosses between the real axis and the upper half-plane, so splits and
    collisions are resolved locally.

    Returns
    -------
    list of dict
        For each entry of ``gammas``, mode index -> ModeState.
    """
    gammas = [float(g) for g in gammas]
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise DomainError("gammas must be ascending")
    cfg = config.replace(f_mode="high_t")
    g0 = min(gamma_seed, gammas[0]) if gammas else gamma_seed
    ps = find_poles(build_rational(params.replace(gamma=g0), cfg))
    res_of = dict(zip(ps.poles, ps.residues))
    states = {i + 1: ModeState(lam, res_of[lam]) for i, lam in enumerate(_seed_modes(ps))}
    g = g0
    h = step
    out = []
    for target in gammas:
        while g < target:
            g_next = min(target, g + h)
            try:
                # residues diverge next to a split, so the unit-sum check is skipped
                ps = find_poles(build_rational(params.replace(gamma=g_next), cfg),
                                validate=False)
            except DegeneratePole:
                h *= 0.618
                continue
            cand, cres = _upper_and_real(ps)
            new = _step_modes(states, cand, cres, g_next, fine=h <= min_step)
            if new is None:
                h *= 0.5
                continue
            states = new
            g = g_next
            h = min(step, 2.0 * h)
        out.append(dict(states))
    return out


def track_modes(params: PhysParams, config: KernelConfig, gamma: float, **kw) -> dict:
    """Mode states at a single coupling (see ``track_modes_path``)."""
    return track_modes_path(params, config, [gamma], **kw)[0]


def transition_scan(params_template: PhysParams, config: KernelConfig,
                    gamma_range: tuple[float, float], mode: int | None = None,
                    tol: float = 1e-4) -> float:
    """Bisection for the coherent-incoherent transition coupling.

    With ``mode=None`` the predicate is "some conjugate pole pair with
    residue magnitude > 1e-6 exists". With an integer the predicate is
    "tracked mode ``mode`` is coherent at gamma". A mode that is overdamped
    only inside a window and re-forms above it is not a transition; such
    windows show up in ``ModeState.first_death``.

    Raises
    ------
    NoBracket
        If the predicate has the same value at both ends of the range.
    """
    lo, hi = map(float, gamma_range)
    if not 0.0 <= lo < hi:
        raise DomainError("gamma_range must satisfy 0 <= lo < hi")
    cfg = config.replace(f_mode="high_t")

    def pred(g):
        p = params_template.replace(gamma=g)
        if mode is None:
            return has_coherent_pair(find_poles(build_rational(p, cfg)))
        st = track_modes(p, cfg, g).get(mode)
        return st is not None and st.alive

    plo, phi = pred(lo), pred(hi)
    if plo == phi:
        raise NoBracket(f"predicate is {plo} at both ends of [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid) == plo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
