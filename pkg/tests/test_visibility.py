import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import roots_legendre

from magdephase import constants, visibility
from magdephase.beamline import COIL_GEOMETRY, MAGNET_PERMANENT_GEOMETRY
from magdephase.errors import ConvergenceError
from magdephase.species import (
    C60_ROTOR, CS_380, RB_BEAM, TEMPO_BEAM, Composite, Diamagnetic, Discrete, Empirical, Gaussian, Hyperfine,
    Magnetized, NuclearSpin, Rotor, SpeciesModel, builtin_manifold, builtin_species, velocity_pdf,
)
from magdephase.visibility import (
    PhaseContext, current_scaling, induced_phase, phase_shift, predict, predict_signed, rotational_inner,
    sweep_curve, velocity_average_exp, velocity_average_sinc, visibility_composite, visibility_hyperfine,
    visibility_one_sided, visibility_rotational,
)

D = 266e-9
CS = builtin_species("cs133")
RB87 = builtin_species("rb87")
TEMPO = builtin_species("tempo")
C60 = builtin_species("c60", velocity=Gaussian(190.0, 40.0))


def panel_oracle(dist, g, v_hi, omega=0.0, panels=400, order=10, refine=1, breaks=()):
    """Composite Gauss-Legendre in v-space of pdf(v) g(v) over [v_lo, v_hi].

    Panels are uniform in v, merged with (for an oscillating g(v) = f(omega / v^2))
    edges equally spaced in 1/v^2 so each panel holds at most a quarter period.
    Below v_lo the neglected piece is bounded by pdf v^3 / (2 omega), far
    below the test tolerances.
    """
    x, w = roots_legendre(order)
    v_lo = 0.0
    edges = np.linspace(0.0, v_hi, refine * panels + 1)
    if omega != 0.0:
        v_lo = max(0.5, math.sqrt(abs(omega) / (0.5 * math.pi * 2e5)))
        n = refine * (int(abs(omega) * (v_lo ** -2 - v_hi ** -2) / (0.5 * math.pi)) + 1)
        edges = np.union1d(edges[edges > v_lo], np.linspace(v_hi ** -2, v_lo ** -2, n + 1) ** -0.5)
    edges = np.union1d(edges, [b for b in breaks if v_lo < b < v_hi])
    a, b = edges[:-1, None], edges[1:, None]
    v = 0.5 * (b - a) * x + 0.5 * (a + b)
    return np.sum(0.5 * (b - a) * w * velocity_pdf(dist, v) * g(v))


def ctx_for(species, c_perm=0.0, c_ind=0.0, c0=0.0, geometry=COIL_GEOMETRY, amplitude=None):
    return PhaseContext(geometry, species, c_perm, c_ind, c0, amplitude)


def test_phase_shift_value():
    mu = constants.muB / 4
    m = 132.905 * constants.amu
    phi = phase_shift(mu, 10.3e-4, 290.0, m, D)
    ref = (2 * math.pi / D) * mu * 10.3e-4 / (m * 290.0 ** 2)
    assert phi == pytest.approx(ref, rel=1e-14)
    assert phi == pytest.approx(3.04, abs=0.005)
    assert phase_shift(mu, 10.3e-4, 580.0, m, D) == pytest.approx(phi / 4, rel=1e-14)


def test_phase_shift_rejects_bad_input():
    with pytest.raises(ValueError):
        phase_shift(1e-24, 1e-3, 0.0, 1e-25, D)
    with pytest.raises(ValueError):
        induced_phase(1e-9, 1e-3, -1.0, D)


def test_induced_phase_mass_free():
    phi = induced_phase(-7.4e-9, -0.1, 190.0, D)
    assert phi == pytest.approx(2 * math.pi / D * -7.4e-9 / constants.mu0 * -0.1 / 190.0 ** 2, rel=1e-14)


@pytest.mark.parametrize("omega", [1e4, 3.3e6, 4.4e6, 2.5e7])
def test_exp_average_matches_v_space_oracle(omega):
    got = velocity_average_exp(CS_380, [omega])[0]
    ref_re = panel_oracle(CS_380, lambda v: np.cos(omega / v ** 2), CS_380.v_cut, omega)
    ref_im = panel_oracle(CS_380, lambda v: np.sin(omega / v ** 2), CS_380.v_cut, omega)
    assert abs(got - complex(ref_re, ref_im)) < 1e-8


def test_exp_average_doubling_nodes():
    omega = 3.3e6
    coarse = panel_oracle(CS_380, lambda v: np.cos(omega / v ** 2), CS_380.v_cut, omega)
    fine = panel_oracle(CS_380, lambda v: np.cos(omega / v ** 2), CS_380.v_cut, omega, refine=2)
    assert abs(fine - coarse) < 1e-6
    assert abs(velocity_average_exp(CS_380, [omega], imag=False)[0].real - fine) < 1e-8


def test_exp_average_tighter_tolerance_stable(monkeypatch):
    omegas = [5e5, 3.3e6, 1.2e7]
    base = velocity_average_exp(CS_380, omegas)
    monkeypatch.setattr(visibility, "REL_TOL", 1e-11)
    monkeypatch.setattr(visibility, "ABS_TOL", 1e-13)
    tight = velocity_average_exp(CS_380, omegas)
    assert np.max(np.abs(tight - base)) < 1e-6


def test_exp_average_conjugate_symmetry():
    a = velocity_average_exp(RB_BEAM, [2e6, -2e6])
    assert a[1] == pytest.approx(np.conj(a[0]), abs=1e-14)


def test_sinc_average_matches_oracle():
    omega = 4e6
    got = velocity_average_sinc(CS_380, [omega])[0]
    ref = panel_oracle(CS_380, lambda v: np.sinc(omega / v ** 2 / np.pi), CS_380.v_cut, omega)
    assert abs(got - ref) < 1e-8


def test_sinc_identity_1000_draws():
    rng = np.random.default_rng(20)
    a = rng.uniform(-0.5, 0.5, 1000)
    R = rng.integers(1, 400, 1000)
    err = max(abs(rotational_inner(x, int(r), "numeric") - rotational_inner(x, int(r), "closed")) for x, r in zip(a, R))
    assert err < 1e-9


def test_rotational_inner_special_values():
    assert rotational_inner(math.pi / 10, 10) == pytest.approx(0.0, abs=1e-15)
    assert rotational_inner(0.0, 5) == 1.0
    M = np.arange(-3, 4)
    assert rotational_inner(0.7, 3, "discrete") == pytest.approx(np.mean(np.cos(0.7 * M)), abs=1e-15)
    with pytest.raises(ValueError):
        rotational_inner(0.1, 0)


@pytest.mark.parametrize("species,geometry", [(CS, COIL_GEOMETRY), (RB87, COIL_GEOMETRY),
                                               (TEMPO, MAGNET_PERMANENT_GEOMETRY), (C60, MAGNET_PERMANENT_GEOMETRY)])
def test_zero_c_is_unity(species, geometry):
    assert predict(ctx_for(species, geometry=geometry)) == pytest.approx(1.0, abs=1e-12)


def test_zero_c_composite_and_diamagnetic():
    c70 = builtin_species("c70", velocity=Gaussian(190, 40), chi_m=-7.4e-9)
    c69 = builtin_species("c69c13", velocity=Gaussian(190, 40), chi_m=-7.4e-9)
    assert predict(ctx_for(c70)) == pytest.approx(1.0, abs=1e-12)
    assert predict(ctx_for(c69)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 3000.0), st.floats(-1e3, 1e3), st.floats(-10.0, 10.0))
def test_one_sided_single_velocity_invariance(v, c, mu_eff):
    sp = SpeciesModel("x", 100 * constants.amu, Magnetized(mu_eff), Discrete((v,)))
    assert abs(visibility_one_sided(ctx_for(sp, c)) - 1.0) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-5, 2e-2))
def test_symmetric_sign_invariance(c):
    assert visibility_hyperfine(ctx_for(CS, c)) == pytest.approx(visibility_hyperfine(ctx_for(CS, -c)), abs=1e-12)


def test_rotational_sign_invariance():
    assert visibility_rotational(ctx_for(C60, -0.1)) == pytest.approx(visibility_rotational(ctx_for(C60, 0.1)), abs=1e-12)


def test_rb87_three_velocity_enumeration():
    v = np.array([250.0, 410.0, 700.0])
    w = np.array([0.2, 0.5, 0.3])
    sp = RB87.with_velocity(Discrete(tuple(v), tuple(w)))
    C = 2.7e-3
    mus = np.array([s.mu_z for s in builtin_manifold("rb87").states]) * constants.muB
    total = 0.0
    for vi, wi in zip(v, w):
        for mu in mus:
            total += wi * math.cos(2 * math.pi / D * mu * C / (sp.mass * vi ** 2)) / len(mus)
    assert visibility_hyperfine(ctx_for(sp, C)) == pytest.approx(abs(total), abs=1e-12)


@pytest.mark.parametrize("iso,frac", [("cs133", 0.125), ("rb85", 1 / 6), ("rb87", 0.25)])
def test_large_c_asymptote(iso, frac):
    sp = builtin_species(iso)
    vals = [visibility_hyperfine(ctx_for(sp, c)) for c in (0.05, 0.1)]
    assert all(abs(v - frac) < 0.005 for v in vals)


def test_c0_adds_to_permanent():
    a = visibility_hyperfine(ctx_for(CS, 3e-3, c0=1e-3))
    b = visibility_hyperfine(ctx_for(CS, 4e-3))
    assert a == pytest.approx(b, abs=1e-14)


def test_composite_single_part_reductions():
    c = 2e-3
    assert visibility_composite(ctx_for(TEMPO, c)) == pytest.approx(visibility_one_sided(ctx_for(TEMPO, c)), abs=1e-12)
    assert visibility_composite(ctx_for(CS, c)) == pytest.approx(visibility_hyperfine(ctx_for(CS, c)), abs=1e-10)


def test_composite_enumeration_discrete():
    v = np.array([150.0, 200.0, 260.0])
    w = np.array([0.3, 0.4, 0.3])
    chi, mu_nuc = -7.4e-9, 0.702
    sp = SpeciesModel("c69c13", 841 * constants.amu, Composite((Diamagnetic(chi), NuclearSpin(mu_nuc))),
                      Discrete(tuple(v), tuple(w)))
    cp, ci = -0.3, -0.05
    total = 0.0
    for vi, wi in zip(v, w):
        phi_i = induced_phase(chi, ci, vi, D)
        for s in (1, -1):
            phi_n = phase_shift(s * mu_nuc * constants.muN, cp, vi, sp.mass, D)
            total += wi * 0.5 * np.exp(1j * (phi_i + phi_n))
    assert visibility_composite(ctx_for(sp, cp, ci)) == pytest.approx(abs(total), abs=1e-12)


def test_composite_not_above_diamagnetic_alone():
    g = Gaussian(190, 40)
    c70 = SpeciesModel("c70", 840 * constants.amu, Diamagnetic(-7.4e-9), g)
    c69 = SpeciesModel("c69", 841 * constants.amu, Composite((Diamagnetic(-7.4e-9), NuclearSpin())), g)
    for cp, ci in ((-2e-3, -2e-6), (-0.08, -0.003), (-0.55, -0.11)):
        assert visibility_composite(ctx_for(c69, cp, ci)) <= visibility_one_sided(ctx_for(c70, cp, ci)) + 1e-9


def test_rotational_matches_velocity_oracle():
    ctx = ctx_for(C60, -0.08, geometry=MAGNET_PERMANENT_GEOMETRY)
    R = C60.response.level()
    a = 2 * math.pi / D * C60_ROTOR.g_xx * constants.muN * -0.08 / C60.mass
    ref = panel_oracle(C60.velocity, lambda v: np.sinc(a * R / v ** 2 / np.pi), C60.velocity.v_cut, a * R)
    assert visibility_rotational(ctx) == pytest.approx(abs(ref), abs=1e-9)


def test_rotational_discrete_m_close_to_continuous():
    sp = C60.with_response(Rotor(C60_ROTOR, R_max=40, m_mode="discrete"))
    sc = C60.with_response(Rotor(C60_ROTOR, R_max=40))
    c = -0.01
    assert visibility_rotational(ctx_for(sp, c)) == pytest.approx(visibility_rotational(ctx_for(sc, c)), abs=0.03)


def test_rotational_boltzmann_close_to_rmax():
    sb = C60.with_response(Rotor(C60_ROTOR, averaging="boltzmann"))
    c = -0.01
    assert visibility_rotational(ctx_for(sb, c)) == pytest.approx(visibility_rotational(ctx_for(C60, c)), abs=0.05)


def test_rotational_requires_spherical_rotor():
    with pytest.raises(TypeError):
        visibility_rotational(ctx_for(CS, 1e-3))


def test_signed_is_smooth_through_zero():
    # the signed average changes sign where the visibility touches zero
    cs = np.linspace(1e-3, 3e-3, 41)
    s = np.array([predict_signed(ctx_for(CS, c)) for c in cs])
    assert np.all(np.abs(np.diff(s, 2)) < 0.05)
    np.testing.assert_allclose(np.abs(s), [predict(ctx_for(CS, c)) for c in cs], atol=1e-15)


def test_amplitude_weighting():
    amp = lambda v: 2.0
    assert predict(ctx_for(CS, 0.0, amplitude=amp)) == 1.0  # clipped
    a = velocity_average_exp(CS_380, [3e6], amplitude=amp)[0]
    b = velocity_average_exp(CS_380, [3e6])[0]
    assert a == pytest.approx(2 * b, abs=1e-12)


def test_empirical_distribution_average():
    emp = Empirical((100.0, 300.0, 500.0), (0.4, 0.6))
    om = 2e6
    got = velocity_average_exp(emp, [om])[0]
    ref = panel_oracle(emp, lambda v: np.exp(1j * om / v ** 2), 500.0, om, breaks=emp.edges)
    assert abs(got - ref) < 1e-8


def test_model_dispatch_errors():
    with pytest.raises(ValueError):
        predict(ctx_for(CS, 1e-3), "nonsense")
    sp = SpeciesModel("x", 1e-25, Magnetized(0.1), None)
    with pytest.raises(ValueError):
        predict(ctx_for(sp, 1e-3))


def test_sweep_curve_current_scaling_and_threads():
    c_of = current_scaling(1.029e-3)
    I = np.linspace(0, 2, 9)
    a = sweep_curve(CS, I, c_of, COIL_GEOMETRY, c0=3.84e-5)
    b = sweep_curve(CS, I, c_of, COIL_GEOMETRY, c0=3.84e-5, threads=3)
    np.testing.assert_array_equal(a.v_over_v0, b.v_over_v0)
    np.testing.assert_allclose(a.c_permanent, 1.029e-3 * I)
    assert np.all((a.v_over_v0 >= 0) & (a.v_over_v0 <= 1))


def test_quadrature_failure_raises(monkeypatch):
    monkeypatch.setattr(visibility, "_LIMIT", 1)
    with pytest.raises(ConvergenceError):
        velocity_average_exp(CS_380, [5e7])
