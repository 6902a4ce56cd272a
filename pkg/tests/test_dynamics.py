import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcsb import dynamics
from dcsb.bath import PhysParams
from dcsb.errors import (DegeneratePole, DomainError, ImaginaryLeak, InvariantViolation,
                         NoBracket, StepTooLarge)
from dcsb.dynamics import (CoherenceReport, PoleSet, RationalKernel, Trace, build_rational,
                           coherence_report, find_poles, has_coherent_pair, invert_talbot,
                           poles_for, reconstruct_exact, reconstruct_time, refine_poles_exact, solve_volterra,
                           talbot_inverse, track_modes, track_modes_path, transition_scan)
from dcsb.kernels import KernelConfig, sigma_dc_laplace, sigma_laplace

P0 = PhysParams()
DELTA = P0.delta_freq
PDC = PhysParams(gamma=0.1, zeta=0.1)
CAL = KernelConfig()


# ---------------------------------------------------------------------------
# rational form

def test_free_rational_form():
    rk = build_rational(P0, CAL)
    assert np.allclose(rk.num_coeffs, [DELTA ** 2, 0.0, 1.0], rtol=0, atol=1e-15)
    assert np.allclose(rk.den_coeffs, [0.0, 1.0], atol=1e-15)
    assert rk.degree == 2


def test_degree_drops_without_offdiagonal_coupling():
    assert build_rational(PhysParams(gamma=0.1), CAL).degree == 3
    assert build_rational(PDC, CAL).degree == 7


@pytest.mark.parametrize("params", [PDC, PhysParams(gamma=0.1), PhysParams(gamma=0.3, zeta=0.2),
                                    PhysParams(gamma=0.0, zeta=0.1), PhysParams(gamma=0.45, zeta=0.05)])
@pytest.mark.parametrize("cfg", [CAL, KernelConfig(kernel_scale="paper_literal", exponent_mode="paper")])
def test_rational_identity(params, cfg):
    rk = build_rational(params, cfg)
    rng = np.random.default_rng(11)
    lams = rng.uniform(-3, 3, 20) + 1j * rng.uniform(-3, 3, 20)
    for lam in lams:
        direct = 1.0 / (lam + sigma_dc_laplace(params, cfg, lam))
        assert abs(rk(lam) - direct) <= 1e-10 * abs(direct)


def test_nn_rational_identity():
    cfg = CAL.replace(variant="NN")
    rk = build_rational(PhysParams(gamma=0.1), cfg)
    for lam in (0.3 + 1j, -2 + 0.5j, 4.0):
        direct = 1.0 / (lam + sigma_laplace(PhysParams(gamma=0.1), cfg, lam))
        assert abs(rk(lam) - direct) <= 1e-10 * abs(direct)


def test_rational_requires_high_t():
    with pytest.raises(DomainError):
        build_rational(PDC, CAL.replace(f_mode="exact"))
    with pytest.raises(DomainError):
        build_rational(PDC, CAL.replace(variant="NN"))


def test_rational_kernel_invariants():
    with pytest.raises(InvariantViolation):
        RationalKernel([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(InvariantViolation):
        RationalKernel([1.0, 2.0, 0.0], [0.0, 1.0])


# ---------------------------------------------------------------------------
# poles

def test_free_poles():
    ps = find_poles(RationalKernel([DELTA ** 2, 0.0, 1.0], [0.0, 1.0]))
    order = np.argsort(ps.poles.imag)
    assert np.allclose(ps.poles[order], [-1j * DELTA, 1j * DELTA], atol=1e-14)
    assert np.allclose(ps.residues, 0.5, atol=1e-14)


def test_partial_fractions():
    a, b, c = 1.0, 3.0, 2.0
    ps = find_poles(RationalKernel([a * b, a + b, 1.0], [c, 1.0]))
    got = dict(zip(np.round(ps.poles.real, 12), ps.residues.real))
    assert got[-a] == pytest.approx((c - a) / (b - a), abs=1e-13)
    assert got[-b] == pytest.approx((c - b) / (a - b), abs=1e-13)


def test_degenerate_pole_reported():
    with pytest.raises(DegeneratePole):
        find_poles(RationalKernel([1.0, 2.0, 1.0], [1.5, 1.0]))


@pytest.mark.parametrize("z", [1e-12, 1e-300])
def test_unresolvable_offdiagonal_pair(z):
    # for vanishing zeta the poles near +-i eps_zeta cannot be separated
    with pytest.raises(DegeneratePole):
        poles_for(PhysParams(gamma=0.1, zeta=z), CAL)


def test_dc_reference_point_has_coherent_pair():
    ps = poles_for(PDC, CAL)
    assert has_coherent_pair(ps)
    assert ps.missing_weight < 1e-8
    n = build_rational(PDC, CAL).num_coeffs
    npoly = np.polynomial.Polynomial(n)
    for lam in ps.poles:
        assert abs(npoly(lam) / npoly.deriv()(lam)) <= 1e-12 * max(1.0, abs(lam))


def test_poleset_validation():
    with pytest.raises(InvariantViolation):
        PoleSet([0.1], [1.0]).validate()
    with pytest.raises(InvariantViolation):
        PoleSet([-1 + 1j], [1.0]).validate()
    with pytest.raises(InvariantViolation):
        PoleSet([-1.0, -2.0], [0.7, 0.7]).validate()
    PoleSet([-1 + 1j, -1 - 1j], [0.5 + 0.1j, 0.5 - 0.1j]).validate()


@pytest.mark.parametrize("g", np.linspace(0.0, 0.5, 20))
@pytest.mark.parametrize("z", np.linspace(0.0, 0.2, 5))
def test_stability_and_normalization_grid(g, z):
    ps = poles_for(PhysParams(gamma=float(g), zeta=float(z)), CAL)
    assert np.all(ps.poles.real <= 1e-10)
    assert ps.missing_weight <= 1e-8


@pytest.mark.parametrize("g", [0.05, 0.1, 0.3, 0.5])
def test_nn_stability(g):
    ps = poles_for(PhysParams(gamma=g), CAL.replace(variant="NN"))
    assert np.all(ps.poles.real <= 1e-10) and ps.missing_weight <= 1e-8


# ---------------------------------------------------------------------------
# exact refinement

def test_refine_free():
    cfg = CAL.replace(f_mode="exact")
    ps = refine_poles_exact(P0, cfg, poles_for(P0, CAL))
    assert np.allclose(np.sort_complex(ps.poles), [-1j * DELTA, 1j * DELTA], atol=1e-10)


@pytest.mark.parametrize("params", [PhysParams(gamma=0.1), PDC])
def test_refine_drift_small(params):
    seeds = poles_for(params, CAL)
    ps = refine_poles_exact(params, CAL.replace(f_mode="exact"), seeds)
    # seeds with mu|lam| near 1 belong to the regularising denominator of the
    # high-T form; they have no exact counterpart and are flagged, not merged
    for _, z0 in ps.flags:
        assert params.mu * abs(z0) > 0.5
    for lam in ps.poles:
        seed = seeds.poles[np.argmin(np.abs(seeds.poles - lam))]
        assert abs(lam - seed) < 0.05 * abs(seed)
    ps.validate(sum_tol=1e-3)


def test_refine_requires_exact():
    with pytest.raises(DomainError):
        refine_poles_exact(PDC, CAL, poles_for(PDC, CAL))


def test_refine_flags_nonconvergence():
    seeds = PoleSet([-1e6 + 0j], [1.0])
    ps = refine_poles_exact(PhysParams(gamma=0.1), CAL.replace(f_mode="exact"), seeds, max_iter=1)
    assert ps.flags and ps.flags[0][0] == "NoConvergence"


# ---------------------------------------------------------------------------
# time traces

def test_reconstruct_cos():
    t = np.linspace(0, 50, 501)
    tr = reconstruct_time(PoleSet([1j * DELTA, -1j * DELTA], [0.5, 0.5]), t)
    assert np.max(np.abs(tr.values - np.cos(DELTA * t))) <= 1e-12
    assert tr.method == "pole_residue"


def test_reconstruct_exponential():
    t = np.linspace(0, 10, 101)
    tr = reconstruct_time(PoleSet([-0.7], [1.0]), t)
    assert np.allclose(tr.values, np.exp(-0.7 * t), rtol=1e-14)


def test_reconstruct_origin_and_leak():
    ps = poles_for(PDC, CAL)
    assert reconstruct_time(ps, [0.0]).values[0] == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ImaginaryLeak):
        reconstruct_time(PoleSet([1j], [0.5]), [1.0])


def test_trace_invariants():
    with pytest.raises(InvariantViolation):
        Trace([0.0, 1.0], [0.9, 0.5], "talbot")
    with pytest.raises(InvariantViolation):
        Trace([0.0, 1.0], [1.0, 1.2], "talbot")
    with pytest.raises(DomainError):
        Trace([0.0, 1.0], [1.0, 0.5], "euler")


def test_talbot_known_pairs():
    t = np.linspace(0, 20, 41)
    v, _ = talbot_inverse(lambda s: s / (s * s + 1), t, freq_bound=1.0)
    assert np.max(np.abs(v - np.cos(t))) <= 1e-8
    v, _ = talbot_inverse(lambda s: 1 / (s + 1), t)
    assert np.max(np.abs(v - np.exp(-t))) <= 1e-10


@pytest.mark.parametrize("params", [PDC, PhysParams(gamma=0.3, zeta=0.05)])
def test_talbot_matches_pole_residue(params):
    t = np.linspace(0, 200, 21)
    a = reconstruct_time(poles_for(params, CAL), t).values
    b = invert_talbot(params, CAL, t).values
    assert np.max(np.abs(a - b)) <= 1e-6


def test_exact_pole_sum_misses_fast_poles():
    cfg = CAL.replace(f_mode="exact")
    ps = refine_poles_exact(PDC, cfg, poles_for(PDC, CAL))
    assert 1e-7 < ps.missing_weight < 1e-4
    with pytest.raises(InvariantViolation):
        reconstruct_time(ps, [0.0, 1.0])
    t = np.linspace(0, 100, 201)
    tr = reconstruct_exact(PDC, cfg, ps, t)
    assert tr.values[0] == pytest.approx(1.0, abs=1e-10)
    assert tr.meta["talbot_until"] <= 2.0
    sel = [0, 1, 2, 50, 200]
    ref = invert_talbot(PDC, cfg, t[sel]).values
    assert np.max(np.abs(tr.values[sel] - ref)) <= 1e-8
    with pytest.raises(DomainError):
        reconstruct_exact(PDC, CAL, ps, t)


def _grid(t_max, h):
    n = int(round(t_max / h))
    return np.arange(n + 1) * h


def test_volterra_free_limit():
    h = min(0.01 / DELTA, 0.2 * P0.beta_hbar)
    t = _grid(4 * math.pi / DELTA, h)
    tr = solve_volterra(P0, CAL, t)
    assert np.max(np.abs(tr.values - np.cos(DELTA * t))) <= 1e-4


def test_volterra_zero_kernel(monkeypatch):
    monkeypatch.setattr(dynamics, "_kernel_integral", lambda p, c, t: np.zeros_like(t))
    tr = solve_volterra(PDC, CAL, _grid(1.0, 0.005))
    assert np.all(tr.values == 1.0)


def test_volterra_step_guard():
    with pytest.raises(StepTooLarge):
        solve_volterra(PDC, CAL, _grid(1.0, 0.01))
    with pytest.raises(DomainError):
        solve_volterra(PDC, CAL, [0.0, 0.001, 0.003])
    with pytest.raises(DomainError):
        solve_volterra(PhysParams(gamma=0.1), CAL.replace(variant="NN"), _grid(1.0, 0.005))


def test_volterra_second_order_free():
    t_max = 10.0
    errs = []
    for h in (0.005, 0.0025):
        t = _grid(t_max, h)
        errs.append(np.max(np.abs(solve_volterra(P0, CAL, t).values - np.cos(DELTA * t))))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


@pytest.mark.parametrize("g", [0.1, 0.3])
def test_volterra_order_with_endpoint_singularity(g):
    # the t^(-2g) kernel singularity limits the trapezoid rule to order 2 - 2g
    p = PhysParams(gamma=g)
    cfg = KernelConfig.exact_consistent()
    ts = np.array([1.0, 2.0, 5.0])
    ref = invert_talbot(p, cfg, ts).values
    errs = []
    for h in (0.005, 0.0025, 0.00125):
        t = _grid(5.0, h)
        v = solve_volterra(p, cfg, t).values
        errs.append(np.max(np.abs(v[np.round(ts / h).astype(int)] - ref)))
    order = math.log2(errs[1] / errs[2])
    assert order >= 2 - 2 * g - 0.15


def test_volterra_matches_exact_talbot():
    cfg = KernelConfig.exact_consistent()
    t = _grid(50.0, 0.005)
    v = solve_volterra(PDC, cfg, t)
    idx = np.arange(0, t.size, 1000)
    tb = invert_talbot(PDC, cfg, t[idx])
    assert np.max(np.abs(v.values[idx] - tb.values)) <= 5e-3
    # in practice the agreement is far tighter
    assert np.max(np.abs(v.values[idx] - tb.values)) <= 1e-4


# ---------------------------------------------------------------------------
# coherence

def test_coherence_free_mode_is_undamped():
    rep = coherence_report(PoleSet([1j * DELTA, -1j * DELTA], [0.5, 0.5]))
    assert len(rep.modes) == 1
    m = rep.modes[0]
    assert m.infinite and m.freq == pytest.approx(DELTA)


def test_coherence_arithmetic():
    rep = coherence_report(PoleSet([-0.01 + 0.5j, -0.01 - 0.5j, -2.0], [0.3, 0.3, 0.4]))
    m = rep.modes[0]
    assert m.tau_phi == pytest.approx(100.0) and m.freq == pytest.approx(0.5)
    assert rep.relaxation_rates == [2.0]


def test_coherence_sorted_by_residue():
    ps = poles_for(PhysParams(gamma=0.1), CAL.replace(variant="NN"))
    rep = coherence_report(ps)
    mags = [m.residue_magnitude for m in rep.modes]
    assert mags == sorted(mags, reverse=True)
    assert all(m.tau_phi > 0 and m.freq > 0 for m in rep.modes)
    assert isinstance(rep, CoherenceReport)


def test_nn_has_two_frequencies():
    rep = coherence_report(poles_for(PhysParams(gamma=0.1), CAL.replace(variant="NN")))
    freqs = [m.freq for m in rep.coherent(1e-4)]
    assert len(freqs) >= 2 and max(freqs) > 10 * min(freqs)


# ---------------------------------------------------------------------------
# mode tracking and transitions

def test_tracking_labels_and_continuity():
    path = track_modes_path(PDC, CAL, [1e-3, 0.05, 0.1])
    assert set(path[0]) == {1, 2}
    ps = poles_for(PDC, CAL)
    m2 = path[-1][2]
    assert m2.alive and np.min(np.abs(ps.poles - m2.pole)) < 1e-9


def test_tracking_first_death_of_mode_1():
    st = track_modes(PDC, CAL, 0.05)[1]
    assert not st.alive and 0.0115 < st.first_death < 0.0122


def test_tracking_rejects_descending():
    with pytest.raises(DomainError):
        track_modes_path(PDC, CAL, [0.2, 0.1])


def test_transition_sb():
    g = transition_scan(P0, CAL.replace(variant="SB"), (0.001, 0.05))
    assert 0.007 <= g <= 0.017


def test_transition_no_bracket_incoherent_sb():
    with pytest.raises(NoBracket):
        transition_scan(P0, CAL.replace(variant="SB"), (0.3, 0.5))


def test_transition_no_bracket_dc():
    with pytest.raises(NoBracket):
        transition_scan(PhysParams(zeta=0.1), CAL, (1e-3, 0.5))


def test_transition_domain():
    with pytest.raises(DomainError):
        transition_scan(P0, CAL, (0.2, 0.1))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.49), st.one_of(st.just(0.0), st.floats(1e-6, 0.2)))
def test_pole_set_invariants_property(g, z):
    ps = poles_for(PhysParams(gamma=g, zeta=z), CAL)
    assert np.all(ps.poles.real <= 1e-10)
    assert ps.missing_weight <= 1e-8
    up = ps.poles[ps.poles.imag > 0]
    for lam in up:
        assert np.min(np.abs(ps.poles - np.conj(lam))) == 0.0
