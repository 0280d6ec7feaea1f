import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import g_entropy, holevo_gaussian_ideal_detector, holevo_gaussian_trusted_heterodyne
from scipy import constants

from qhrx import cvqkd as qk
from qhrx.errors import CutoffError, FitError, PhysicalityError

TABLE = qk.QkdParams()
QPSK = qk.psk(4)
GAUSS = qk.gaussian_modulation()


# -- constellations -------------------------------------------------------


@pytest.mark.parametrize("name", ["QPSK", "8-PSK", "16-PCS-QAM", "64-PCS-QAM"])
@pytest.mark.parametrize("nu", [0.0, 1.3])
def test_constellation_normalization(name, nu):
    c = qk.constellation_by_name(name, nu)
    assert c.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    assert c.mean_energy == pytest.approx(1.0, abs=1e-12)
    assert abs(np.sum(c.probabilities * c.symbols)) < 1e-12


def test_constellation_errors():
    with pytest.raises(ValueError):
        qk.constellation_by_name("7-QAM")
    with pytest.raises(ValueError):
        qk.pcs_qam(12, 0.0)
    with pytest.raises(ValueError):
        qk.Constellation("bad", np.array([1.0, 1.0]), np.array([0.5, 0.5]))


def test_params_validation():
    for kw in (dict(eta=0.0), dict(t=1.5), dict(v_a=-1.0), dict(beta=2.0)):
        with pytest.raises(ValueError):
            qk.QkdParams(**kw)


# -- link and estimation --------------------------------------------------


def test_va_from_power():
    e_ph = constants.h * constants.c / 1550e-9
    assert e_ph == pytest.approx(1.282e-19, rel=1e-3)
    assert qk.va_from_power(7.37e-12) == pytest.approx(0.46, rel=2e-3)
    assert qk.va_from_power(0.0) == 0.0
    assert qk.va_from_power(1e-12, symbol_rate=500e6) == pytest.approx(qk.va_from_power(1e-12) / 2)


def test_expected_moments():
    assert qk.expected_covariance(TABLE) == pytest.approx(math.sqrt(0.55 * 0.73 / 2) * 0.46)
    assert qk.expected_covariance(TABLE) == pytest.approx(0.2061, abs=5e-5)
    assert qk.expected_bob_variance(TABLE) == pytest.approx(1 + 0.029 + 0.20075 * (0.46 + 0.015))


def test_noiseless_inversion_exact():
    t, xi = qk.invert_moments(qk.expected_covariance(TABLE), qk.expected_bob_variance(TABLE), 0.46, 0.55, 0.029)
    assert t == pytest.approx(0.73, abs=1e-12)
    assert xi == pytest.approx(0.015, abs=1e-12)


def test_inversion_rejects_nonpositive_covariance():
    with pytest.raises(FitError):
        qk.invert_moments(0.0, 1.1, 0.46, 0.55, 0.029)


def test_lossless_link_bob_variance():
    p = qk.QkdParams(eta=1.0, v_el=0.0, t=1.0, xi_a=0.0, v_a=1.0)
    _, bob = qk.simulate_link(GAUSS, p, 400_000, seed=0)
    assert np.var(bob) / 2 == pytest.approx(1 + 1.0 / 2, rel=0.01)


def test_table_link_bob_variance():
    alice, bob = qk.simulate_link(QPSK, TABLE, 250_000, seed=1)
    est = qk.estimate_parameters(alice, bob, 0.46, 0.55, 0.029)
    assert est.v_b == pytest.approx(1.124, abs=0.005)
    assert np.mean(np.abs(alice) ** 2) / 2 == pytest.approx(0.46, rel=1e-12)


def test_link_is_seed_deterministic():
    a = qk.simulate_link(QPSK, TABLE, 1000, seed=3)
    b = qk.simulate_link(QPSK, TABLE, 1000, seed=3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_estimation_unbiased_over_seeds():
    t_hat = []
    for seed in range(100):
        alice, bob = qk.simulate_link(QPSK, TABLE, 250_000, seed=seed)
        t_hat.append(qk.estimate_parameters(alice, bob, 0.46, 0.55, 0.029, n_boot=2).t_hat)
    t_hat = np.array(t_hat)
    assert abs(t_hat.mean() - 0.73) < 2 * t_hat.std(ddof=1) / math.sqrt(t_hat.size)


def test_bootstrap_sigma_matches_seed_spread():
    alice, bob = qk.simulate_link(QPSK, TABLE, 250_000, seed=200)
    est = qk.estimate_parameters(alice, bob, 0.46, 0.55, 0.029)
    spread = np.std([qk.estimate_parameters(*qk.simulate_link(QPSK, TABLE, 250_000, seed=s), 0.46, 0.55, 0.029, n_boot=2).t_hat for s in range(30)], ddof=1)
    assert est.t_sigma == pytest.approx(spread, rel=0.4)


def test_estimation_warns_on_short_record():
    alice, bob = qk.simulate_link(QPSK, TABLE, 5000, seed=4)
    with pytest.warns(UserWarning):
        qk.estimate_parameters(alice, bob, 0.46, 0.55, 0.029)


def test_bob_variance_below_shot_noise_rejected():
    with pytest.raises(PhysicalityError):
        qk.EstimationResult(0.2, 0.9, 0.7, 0.0)


# -- mutual information ---------------------------------------------------


def test_iab_gaussian_value():
    assert qk.snr(TABLE) == pytest.approx(0.0895, abs=1e-4)
    assert qk.iab(QPSK, TABLE) == pytest.approx(0.1236, abs=1e-4)
    assert qk.iab(QPSK, TABLE.replace(t=0.0)) == 0.0


def test_iab_numeric_qpsk_near_capacity():
    ratio = qk.iab(QPSK, TABLE, "numeric", n_samples=1_000_000) / qk.iab(QPSK, TABLE)
    assert 0.95 <= ratio <= 1.0


def test_iab_numeric_bpsk_against_quadrature():
    # Binary input on one quadrature: I = 1 - E[log2(1 + exp(-2 a y))], y ~ N(a, 1).
    bpsk = qk.Constellation("BPSK", np.array([1.0, -1.0]), np.array([0.5, 0.5]))
    params = qk.QkdParams(eta=1.0, v_el=0.0, t=1.0, xi_a=0.0, v_a=0.5)
    a = math.sqrt(2 * qk.snr(params))
    y = np.linspace(a - 12, a + 12, 20001)
    pdf = np.exp(-((y - a) ** 2) / 2) / math.sqrt(2 * math.pi)
    ref = 1 - np.trapezoid(pdf * np.logaddexp(0, -2 * a * y) / math.log(2), y)
    assert qk.iab(bpsk, params, "numeric", n_samples=2_000_000) == pytest.approx(ref, rel=0.01)


# -- Fock description -----------------------------------------------------


def test_mean_state_vacuum_and_pure():
    vac = qk.Constellation("vac", np.array([0.0]), np.array([1.0]))
    rho = qk.mean_state_fock(vac, 0.46, 40)
    assert rho[0, 0] == pytest.approx(1.0) and np.allclose(rho[1:, :], 0)
    single = qk.coherent_state(0.5 + 0.2j, 40)
    rho1 = np.outer(single, single.conj())
    assert np.trace(rho1 @ rho1).real == pytest.approx(1.0, abs=1e-12)


def test_mean_state_qpsk_structure():
    rho = qk.mean_state_fock(QPSK, 0.46, 60)
    n = np.arange(60)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(rho, rho.conj().T)
    assert np.sum(n * np.diag(rho).real) == pytest.approx(0.23, abs=1e-9)
    off_block = (n[:, None] - n[None, :]) % 4 != 0
    assert np.max(np.abs(rho[off_block])) < 1e-12


def test_cutoff_errors():
    with pytest.raises(CutoffError):
        qk.mean_state_fock(QPSK, 0.46, 5)
    # A rare +-10 pair carries |alpha|^2 = 23 at V_A = 0.46: cutoff 40 clips its Poisson tail.
    sparse = qk.Constellation("sparse", np.array([10.0, -10.0, 0.0]), np.array([0.005, 0.005, 0.99]))
    with pytest.raises(CutoffError):
        qk.mean_state_fock(sparse, 0.46, 40)


@pytest.mark.parametrize("n_bar", [0.05, 0.23, 1.0])
def test_thermal_effective_z(n_bar):
    rho = qk.mean_state_fock(GAUSS, 2 * n_bar, 60)
    assert qk.effective_z(rho) == pytest.approx(2 * math.sqrt(n_bar * (n_bar + 1)), abs=1e-6)


def test_effective_z_vacuum_and_qpsk_penalty():
    assert qk.effective_z(np.diag([1.0] + [0.0] * 39)) == 0.0
    z = qk.effective_z(qk.mean_state_fock(QPSK, 0.46))
    assert z < 2 * math.sqrt(0.23 * 1.23)


def test_effective_z_rejects_unphysical():
    with pytest.raises(PhysicalityError):
        qk.effective_z(np.diag([0.5, 0.2]))
    with pytest.raises(PhysicalityError):
        qk.effective_z(np.array([[0.5, 0.3], [0.1, 0.5]]))


@pytest.mark.parametrize("method", ["trace", "corrected"])
def test_z_cutoff_convergence(method):
    z40 = qk.correlation_z(QPSK, TABLE, method, cutoff=40)[0]
    z80 = qk.correlation_z(QPSK, TABLE, method, cutoff=80)[0]
    assert abs(z40 - z80) < 1e-8


def test_z_correction_values():
    z, z_tr, _ = qk.correlation_z(QPSK, TABLE)
    assert z_tr == pytest.approx(1.04505, abs=1e-5)
    assert z < z_tr < qk.gaussian_z(0.46)
    assert qk.z_correction_weight(GAUSS, 0.46) == 0.0
    assert qk.correlation_z(GAUSS, TABLE)[0] == qk.gaussian_z(0.46)


# -- Gaussian calculus ----------------------------------------------------


def tmsv(r):
    c, s = math.cosh(2 * r), math.sinh(2 * r)
    z = np.diag([1.0, -1.0])
    return np.block([[c * np.eye(2), s * z], [s * z, c * np.eye(2)]])


def test_symplectic_examples():
    np.testing.assert_allclose(qk.symplectic_eigenvalues(np.eye(4)), [1, 1])
    np.testing.assert_allclose(qk.symplectic_eigenvalues(3.0 * np.eye(2)), [3.0])
    np.testing.assert_allclose(qk.symplectic_eigenvalues(tmsv(0.8)), [1, 1], atol=1e-9)
    with pytest.raises(ValueError):
        qk.symplectic_eigenvalues(np.array([[1.0, 0.2], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(1.0, 5.0), st.floats(-np.pi, np.pi))
def test_symplectic_spectrum_invariant_under_symplectic_maps(r, v, phi):
    rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    sq = np.diag([math.exp(r), math.exp(-r)])
    s = np.kron(np.eye(2), sq @ rot)
    g = np.diag([v, v, 1.0, 1.0])
    np.testing.assert_allclose(qk.symplectic_eigenvalues(s @ g @ s.T), qk.symplectic_eigenvalues(g), rtol=1e-8)


def test_entropy_kernel():
    assert qk.entropy_g(1.0) == pytest.approx(2.0)
    assert qk.entropy_g(0.0) == 0.0
    assert qk.GaussianState(tmsv(0.5)).entropy() == pytest.approx(0.0, abs=1e-9)
    assert qk.GaussianState(3.0 * np.eye(2)).entropy() == pytest.approx(g_entropy(1.0))


def test_pure_lossless_channel_leaks_nothing():
    p = qk.QkdParams(eta=1.0, v_el=0.0, t=1.0, xi_a=0.0, v_a=0.46)
    assert qk.holevo_bound(p, qk.gaussian_z(0.46)) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("v_a,t,xi", [(0.46, 0.73, 0.015), (2.0, 0.3, 0.05), (5.0, 0.1, 0.01), (0.1, 0.95, 0.0)])
def test_holevo_matches_ideal_detector_oracle(v_a, t, xi):
    p = qk.QkdParams(eta=1.0, v_el=0.0, t=t, xi_a=xi, v_a=v_a)
    assert qk.holevo_bound(p, qk.gaussian_z(v_a)) == pytest.approx(holevo_gaussian_ideal_detector(v_a, t, xi), abs=1e-4)


@pytest.mark.parametrize("v_a,t,xi,eta,v_el", [(0.46, 0.73, 0.015, 0.55, 0.029), (3.0, 0.2, 0.03, 0.7, 0.1), (1.0, 0.9, 0.0, 0.9, 0.0)])
def test_holevo_matches_trusted_heterodyne_oracle(v_a, t, xi, eta, v_el):
    p = qk.QkdParams(eta=eta, v_el=v_el, t=t, xi_a=xi, v_a=v_a)
    ref = holevo_gaussian_trusted_heterodyne(v_a, t, xi, eta, v_el)
    assert qk.holevo_bound(p, qk.gaussian_z(v_a)) == pytest.approx(ref, abs=1e-4)


def test_holevo_clamps_superphysical_z():
    with pytest.warns(UserWarning):
        chi = qk.holevo_bound(TABLE, 10.0)
    assert chi == pytest.approx(qk.holevo_bound(TABLE, qk.gaussian_z(0.46)))


def test_holevo_rejects_untrusted_noise_without_loss():
    with pytest.raises(PhysicalityError):
        qk.holevo_bound(TABLE.replace(eta=1.0), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 1.0), st.floats(0.0, 0.1), st.floats(0.3, 0.99), st.floats(0.0, 0.2))
def test_holevo_nonnegative_and_physical(v_a, t, xi, eta, v_el):
    p = qk.QkdParams(eta=eta, v_el=v_el, t=t, xi_a=xi, v_a=v_a)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert qk.holevo_bound(p, qk.gaussian_z(v_a)) >= 0


# -- key rate -------------------------------------------------------------


def test_qpsk_table_rate():
    rep = qk.skr(QPSK, TABLE)
    assert rep.skr_per_symbol == pytest.approx(0.013, rel=0.2)
    assert rep.skr_bits_per_second == pytest.approx(3.2e6, rel=0.2)
    assert rep.skr_per_symbol == pytest.approx(max(0.0, 0.95 * rep.i_ab - rep.chi_be))
    assert rep.skr_bits_per_second == pytest.approx(rep.skr_per_symbol * 250e6)


def test_zero_reconciliation_gives_zero_rate():
    rep = qk.skr(QPSK, TABLE.replace(beta=0.0))
    assert rep.chi_be > 0 and rep.skr_per_symbol == 0.0


def test_gaussian_beats_qpsk():
    assert qk.skr(GAUSS, TABLE).skr_per_symbol > qk.skr(QPSK, TABLE).skr_per_symbol


def test_optimized_va_dominates_fixed():
    va, rep = qk.optimize_va(QPSK, TABLE)
    assert 0.01 <= va <= 10
    assert rep.skr_per_symbol >= qk.skr(QPSK, TABLE).skr_per_symbol


def test_golden_max_on_parabola():
    x, fx = qk.golden_max(lambda v: -((v - 1.3) ** 2), -5, 5, tol=1e-8)
    assert x == pytest.approx(1.3, abs=1e-6) and fx == pytest.approx(0.0, abs=1e-10)


def test_curve_ordering_at_operating_point():
    names = ["Gaussian", "64-PCS-QAM", "16-PCS-QAM", "8-PSK", "QPSK"]
    rows = qk.skr_curve(names, TABLE, [0.3], nu_grid=np.linspace(0, 4, 8))
    rate = {r["constellation"]: r["skr_sym"] for r in rows}
    vals = [rate[n] for n in names]
    assert all(a >= b - 1e-6 for a, b in zip(vals, vals[1:]))
    assert set(rows[0]) >= set(qk.CURVE_COLUMNS)


def test_curve_rejects_empty_grid():
    with pytest.raises(ValueError):
        qk.skr_curve(["QPSK"], TABLE, [])
