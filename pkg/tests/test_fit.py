from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magdephase import constants
from magdephase.beamline import COIL_GEOMETRY, MAGNET_PERMANENT_GEOMETRY
from magdephase.errors import ConvergenceError, DataError
from magdephase.fit import (
    Dataset, FringeScan, ModelSpec, TabulatedModel, direct_model, fit_fringe, fit_visibility_params,
    normalize_to_asymptote,
)
from magdephase.species import builtin_manifold, builtin_species
from magdephase.visibility import current_scaling

D = 266e-9
C1 = 1.0293755e-3  # coil C-factor at 1 A, T m


def fringe(n=60, A=300.0, B=1000.0, phase=0.4, span=3.0, dark=0.0):
    x = np.linspace(0.0, span * D, n)
    return x, B + A * np.sin(2 * np.pi * x / D + phase) + dark


# -- fringe fits -------------------------------------------------------------

@pytest.mark.parametrize("robust", [True, False])
def test_noiseless_fringe_exact(robust):
    x, y = fringe()
    r = fit_fringe(FringeScan(x, y), robust=robust)
    assert r.amplitude == pytest.approx(300.0, rel=1e-9)
    assert r.offset == pytest.approx(1000.0, rel=1e-9)
    assert r.phase == pytest.approx(0.4, abs=1e-9)
    assert r.visibility == pytest.approx(0.3, rel=1e-9)
    assert r.converged and not r.clamped


def test_bisquare_equals_ols_without_outliers():
    x, y = fringe(n=80, phase=-1.2)
    a = fit_fringe(FringeScan(x, y), robust=True)
    b = fit_fringe(FringeScan(x, y), robust=False)
    for k in ("offset", "amplitude", "phase", "visibility"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-8, abs=1e-12)


def test_bisquare_rejects_outliers():
    rng = np.random.default_rng(7)
    x, y = fringe(n=100)
    y = y + rng.normal(0, 5, y.size)
    idx = rng.choice(y.size, 5, replace=False)
    y[idx] += 3000.0
    r = fit_fringe(FringeScan(x, y))
    assert r.amplitude == pytest.approx(300.0, rel=0.02)
    assert np.all(r.weights[idx] < 0.05)


def test_dark_rate_invariance():
    x, y = fringe(dark=0.0)
    a = fit_fringe(FringeScan(x, y))
    b = fit_fringe(FringeScan(x, y + 250.0, dark_rate=250.0))
    assert b.visibility == pytest.approx(a.visibility, rel=1e-9)
    c = fit_fringe(FringeScan(x, y + 250.0))
    assert c.visibility < a.visibility


def test_flat_scan_zero_visibility():
    x = np.linspace(0, 3 * D, 40)
    r = fit_fringe(FringeScan(x, np.full(40, 500.0)))
    assert r.visibility == pytest.approx(0.0, abs=1e-12)


def test_visibility_clamped():
    x, y = fringe(A=300.0, B=100.0)
    r = fit_fringe(FringeScan(x, np.maximum(y, 0.0)), robust=False)
    assert r.visibility == 1.0 and r.clamped


def test_fringe_stderr_scales_with_noise():
    rng = np.random.default_rng(3)
    x, y = fringe(n=200)
    lo = fit_fringe(FringeScan(x, y + rng.normal(0, 2, y.size)), robust=False)
    hi = fit_fringe(FringeScan(x, y + rng.normal(0, 20, y.size)), robust=False)
    assert hi.stderr["amplitude"] > 5 * lo.stderr["amplitude"]
    assert lo.stderr["amplitude"] == pytest.approx(2 * np.sqrt(2 / 200), rel=0.3)


@pytest.mark.parametrize("kwargs", [dict(n=5), dict(span=0.5)])
def test_fringe_scan_too_small(kwargs):
    x, y = fringe(**kwargs)
    with pytest.raises(DataError):
        fit_fringe(FringeScan(x, y))


def test_fringe_scan_validation():
    with pytest.raises(DataError):
        FringeScan(np.arange(3.0), np.array([1.0, -1.0, 2.0]))
    with pytest.raises(DataError):
        FringeScan(np.arange(3.0), np.arange(4.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2 * np.pi), st.floats(0.05, 0.95), st.floats(10.0, 1e5))
def test_fringe_recovers_any_phase_and_contrast(phase, vis, B):
    x, y = fringe(n=48, A=vis * B, B=B, phase=phase)
    r = fit_fringe(FringeScan(x, y))
    assert r.visibility == pytest.approx(vis, rel=1e-7)
    assert np.angle(np.exp(1j * (r.phase - phase))) == pytest.approx(0.0, abs=1e-7)


# -- normalization ---------------------------------------------------------

def test_normalize_to_asymptote():
    x = np.linspace(0, 4.5, 46)
    v = np.full(x.size, 0.2 * 0.125)
    v[:10] = np.linspace(0.2, 0.05, 10)
    V0, norm = normalize_to_asymptote(Dataset(x, v, np.full(x.size, 0.01)), builtin_manifold("cs133"), (4.0, 4.5))
    assert V0 == pytest.approx(0.2, rel=1e-12)
    np.testing.assert_allclose(norm.visibility, v / 0.2)
    np.testing.assert_allclose(norm.sigma, 0.01 / 0.2)


def test_normalize_errors():
    d = Dataset(np.array([1.0, 2.0]), np.array([0.1, 0.1]), np.array([0.01, 0.01]))
    with pytest.raises(DataError):
        normalize_to_asymptote(d, 16, (3.0, 4.0))
    d0 = Dataset(np.array([1.0, 2.0]), np.array([0.0, 0.0]), np.array([0.01, 0.01]))
    with pytest.raises(DataError):
        normalize_to_asymptote(d0, 16, (0.0, 4.0))


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.array([1.0, 2.0]), np.array([0.1, 0.1]), np.array([0.01, 0.0]))
    with pytest.raises(DataError):
        Dataset(np.array([1.0, 2.0]), np.array([0.1]), np.array([0.01]))


# -- visibility-parameter fits -----------------------------------------------

CS_SPEC = ModelSpec(builtin_species("cs133"), COIL_GEOMETRY, current_scaling(C1), C0_gradient=0.4 * constants.GAUSS)
CURRENTS = np.round(np.arange(0.0, 4.51, 0.1), 2)


@pytest.fixture(scope="module")
def cs_table():
    return TabulatedModel(CS_SPEC, 2.0 * 5.0 * C1)


def test_table_matches_direct(cs_table):
    t = np.random.default_rng(1).uniform(0, 4.6 * C1, 60)
    assert np.max(np.abs(cs_table(t) - np.abs(cs_table.exact(t)))) < 1e-7
    direct = direct_model(CS_SPEC, CURRENTS, {})
    tab = cs_table(cs_table.argument(CURRENTS * C1, 0 * CURRENTS, {"C0_gradient": 0.4 * constants.GAUSS}))
    np.testing.assert_allclose(tab, direct, atol=1e-7)


def test_cs_round_trip(cs_table):
    truth = direct_model(CS_SPEC, CURRENTS, {})
    rng = np.random.default_rng(10)
    start = replace(CS_SPEC, C0_gradient=0.0)
    for _ in range(5):
        d = Dataset(CURRENTS, truth + rng.normal(0, 0.01, CURRENTS.size), np.full(CURRENTS.size, 0.01))
        r = fit_visibility_params(d, start, ("C0_gradient",), table=cs_table)
        g, e = r.values["C0_gradient"], r.stderr["C0_gradient"]
        assert abs(g - 4e-5) <= 4 * e
        assert r.reduced_chi2 < 2.5


def test_noiseless_round_trip_exact(cs_table):
    truth = direct_model(CS_SPEC, CURRENTS, {})
    d = Dataset(CURRENTS, truth, np.full(CURRENTS.size, 0.01))
    r = fit_visibility_params(d, replace(CS_SPEC, C0_gradient=0.0), ("C0_gradient",), table=cs_table)
    assert r.values["C0_gradient"] == pytest.approx(4e-5, rel=1e-4)
    assert r.chi2 < 1e-6


def test_methods_agree(cs_table):
    truth = direct_model(CS_SPEC, CURRENTS, {})
    rng = np.random.default_rng(11)
    d = Dataset(CURRENTS, 0.3 * truth + rng.normal(0, 0.003, CURRENTS.size), np.full(CURRENTS.size, 0.003))
    spec = replace(CS_SPEC, C0_gradient=0.0)
    a = fit_visibility_params(d, spec, ("C0_gradient", "V0"), table=cs_table)
    b = fit_visibility_params(d, spec, ("C0_gradient", "V0"), method="gauss-newton", table=cs_table)
    for k in ("C0_gradient", "V0"):
        assert a.values[k] == pytest.approx(b.values[k], rel=1e-4)
        assert a.stderr[k] == pytest.approx(b.stderr[k], rel=1e-3)
    assert a.values["V0"] == pytest.approx(0.3, rel=0.03)
    assert a.covariance.shape == (2, 2)


def test_chi2_history_non_increasing(cs_table):
    truth = direct_model(CS_SPEC, CURRENTS, {})
    d = Dataset(CURRENTS, truth + np.random.default_rng(12).normal(0, 0.01, CURRENTS.size),
                np.full(CURRENTS.size, 0.01))
    r = fit_visibility_params(d, replace(CS_SPEC, C0_gradient=0.0), ("C0_gradient",), table=cs_table)
    h = np.array(r.chi2_history)
    assert len(h) > 2 and np.all(np.diff(h) <= 1e-12 * h[:-1])
    assert h[-1] == pytest.approx(r.chi2, rel=1e-9)


def test_zero_free_parameters():
    x = CURRENTS[:8]
    truth = direct_model(CS_SPEC, x, {})
    d = Dataset(x, truth + 0.01, np.full(x.size, 0.01))
    r = fit_visibility_params(d, CS_SPEC, ())
    assert r.values == {} and r.dof == x.size
    # the tabulated model is accurate to 1e-7 in V, i.e. 1e-5 of each 0.01 residual
    assert r.chi2 == pytest.approx(x.size, rel=1e-4)


def test_fit_rejects_bad_requests():
    x = CURRENTS[:5]
    d = Dataset(x, np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        fit_visibility_params(d, CS_SPEC, ("gravity",))
    with pytest.raises(ValueError):
        fit_visibility_params(d, CS_SPEC, ("V0",), method="simplex")
    with pytest.raises(DataError):
        fit_visibility_params(Dataset(x[:1], np.ones(1), np.ones(1)), CS_SPEC, ("V0",))


def test_parameter_at_bound_raises(cs_table):
    d = Dataset(CURRENTS, np.full(CURRENTS.size, 5.0), np.full(CURRENTS.size, 0.01))
    with pytest.raises(ConvergenceError):
        fit_visibility_params(d, CS_SPEC, ("V0",), table=cs_table, bounds={"V0": (0.0, 2.0)},
                              method="gauss-newton")


def _tempo_c(dist):
    # a smooth stand-in for the magnet C-factor, T m
    return -2.4e-3 * (0.08 / dist) ** 2.2, 0.0


def test_tempo_round_trip():
    spec = ModelSpec(builtin_species("tempo"), MAGNET_PERMANENT_GEOMETRY, _tempo_c)
    dist = np.array([0.005, 0.0075, 0.01, 0.0125, 0.015, 0.02, 0.03, 0.04, 0.06, 0.08])
    truth = direct_model(spec, dist, {})
    rng = np.random.default_rng(13)
    d = Dataset(dist, truth + rng.normal(0, 0.01, dist.size), np.full(dist.size, 0.01))
    r = fit_visibility_params(d, spec, ("mu_eff",))
    assert abs(r.values["mu_eff"] - 0.1) <= 3 * r.stderr["mu_eff"]
    assert r.values["mu_eff"] == pytest.approx(0.1, rel=0.05)


def test_diamagnetic_chi_fit():
    sp = builtin_species("c70", velocity=builtin_species("tempo").velocity, chi_m=-7.4e-9)
    spec = ModelSpec(sp, MAGNET_PERMANENT_GEOMETRY, lambda d: (0.0, -0.1 * (0.01 / d) ** 3))
    dist = np.linspace(0.003, 0.02, 12)
    truth = direct_model(spec, dist, {})
    d = Dataset(dist, truth, np.full(dist.size, 0.005))
    r = fit_visibility_params(d, spec, ("chi_m",), initial={"chi_m": -5e-9})
    assert r.values["chi_m"] == pytest.approx(-7.4e-9, rel=1e-3)
