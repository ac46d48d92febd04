import math

import numpy as np
import pytest
from conftest import closed_form_samples
from hypothesis import given
from hypothesis import strategies as st

from starweyl import direct, inverse, ode
from starweyl.graph_model import SpectralSamplingPlan, sample_rho

LOG60 = SpectralSamplingPlan("log-uniform", 60, delta=0.1, alpha_range=(0.0, 2.0))


def ok(results):
    return [r for r in results if isinstance(r, inverse.RecoveredPotential)]


# --- step 1 --------------------------------------------------------------------


def test_zero_potential_endpoint_coefficients_vanish():
    samples = closed_form_samples([1, 1, 1], sample_rho(LOG60), direct.diag_plus_successor_mask(3))
    for i in (1, 2, 3):
        ep = inverse.recover_endpoint_coeffs(samples, [1, 1, 1], i, 5, 0)
        assert np.max(np.abs(ep.g)) < 1e-6
        assert all(np.max(np.abs(v)) < 1e-6 for v in ep.s.values())


def test_endpoint_g0_matches_phi_at_zero(ex1_graph, ex1_samples):
    ep = inverse.recover_endpoint_coeffs(ex1_samples, ex1_graph.lengths, 6, 9, 0)
    e6 = ex1_graph.edge(6)
    assert abs(ep.g[0] - (ode.phi(e6, 0.0, e6.length)[0].real - 1)) < 1e-3


def test_one_point_short_is_underdetermined():
    N = 5
    rho = sample_rho(SpectralSamplingPlan("log-uniform", 3 * (N + 1) - 1))
    samples = closed_form_samples([1, 1, 1], rho)
    with pytest.raises(inverse.UnderdeterminedError, match="need at least"):
        inverse.recover_endpoint_coeffs(samples, [1, 1, 1], 1, N, 0)
    rho = sample_rho(SpectralSamplingPlan("log-uniform", 3 * (N + 1)))
    inverse.recover_endpoint_coeffs(closed_form_samples([1, 1, 1], rho), [1, 1, 1], 1, N, 0)


def test_all_rows_gate_is_exact():
    M, N = 9, 9
    L = np.linspace(1.0, 1.8, M)
    need = math.ceil((M + 1) * (N + 1) / (M - 1))
    assert need == 13
    rho = sample_rho(SpectralSamplingPlan("log-uniform", need))
    samples = closed_form_samples(L, rho)
    inverse.recover_endpoint_coeffs(samples, L, 1, N, M - 2)
    with pytest.raises(inverse.UnderdeterminedError, match="= 13"):
        inverse.recover_endpoint_coeffs(samples[:-1], L, 1, N, M - 2)


@given(M=st.integers(2, 40), N=st.integers(0, 30))
def test_min_points_formula(M, N):
    assert inverse.min_points(M, N, 0) == 3 * (N + 1)
    assert inverse.min_points(M, N, M - 2) == math.ceil((M + 1) * (N + 1) / (M - 1))


def test_missing_entries_for_Mk():
    samples = closed_form_samples([1, 1, 1, 1], sample_rho(LOG60), direct.diag_plus_successor_mask(4))
    with pytest.raises(inverse.InverseError, match="not present"):
        inverse.recover_endpoint_coeffs(samples, [1, 1, 1, 1], 1, 5, 1)


# --- step 2 --------------------------------------------------------------------


def test_free_spectra_on_pi_interval():
    z = np.zeros(6)
    sp = inverse.extract_spectra(z, z, math.pi, 10.2)
    np.testing.assert_allclose(sp.mu, np.arange(1, 11), atol=1e-10)
    np.testing.assert_allclose(sp.nu, np.arange(1, 11) - 0.5, atol=1e-10)


def test_edge6_spectra_against_reference_eigenvalues(ex1_graph, ex1_samples):
    ep = inverse.recover_endpoint_coeffs(ex1_samples, ex1_graph.lengths, 6, 9, 0)
    sp = inverse.extract_spectra(ep.g, ep.s[6], ex1_graph.lengths[5], 300.0, edge=6, drop_above=200)
    lam = sp.mu**2
    for n, ref in [(1, 11.3620710), (11, 994.949630), (51, 21223.885873), (101, 83214.803222)]:
        assert lam[n - 1] == pytest.approx(ref, rel=1e-3)
    for n, ref in [(1, 10.21124734), (11, 908.123578)]:
        assert sp.nu[n - 1] ** 2 == pytest.approx(ref, rel=1e-3)


def test_interlacing_violation_is_reported():
    nu = np.array([0.5, 1.5, 2.5])
    mu = np.array([1.0, 1.2, 3.0])
    with pytest.raises(inverse.SpectraError, match=r"\[2"):
        inverse.check_interlacing(nu, mu, drop_above=20)
    nu2, mu2, dropped = inverse.check_interlacing(nu, mu, drop_above=1)
    assert list(nu2) == [0.5] and list(mu2) == [1.0] and dropped == 4


# --- steps 3-4 -------------------------------------------------------------------


def test_t_coeffs_free():
    t0, _ = inverse.solve_t_coeffs(np.arange(1.0, 16.0), math.pi, 6)
    assert np.max(np.abs(t0)) < 1e-12


def test_t_coeffs_constant_one():
    k = np.arange(1, 31)
    mu = np.sqrt((k * np.pi) ** 2 + 1)
    t0, _ = inverse.solve_t_coeffs(mu, 1.0, 9)
    rho = np.linspace(1.5, 40, 20)
    w = np.sqrt(rho**2 - 1)
    np.testing.assert_allclose(inverse.T_at_zero(t0, 1.0, rho), -np.sin(w) / w, atol=1e-4)


def test_t_coeffs_edge6(ex1_graph, ex1_results):
    e6 = ex1_graph.edge(6)
    t0, _ = inverse.solve_t_coeffs(ex1_results[5].spectra.mu, e6.length, 9)
    rho = np.linspace(1, 50, 100)
    err = np.abs(inverse.T_at_zero(t0, e6.length, rho) - ode.T(e6, rho, 0.0)[0].real)
    assert err.max() < 1e-3


def test_t_coeffs_need_enough_roots():
    with pytest.raises(inverse.InverseError):
        inverse.solve_t_coeffs([1.0, 2.0], 1.0, 5)


def test_free_multipliers():
    nu = np.arange(1, 9) - 0.5
    beta = inverse.compute_multipliers(np.zeros(5), nu, math.pi).beta
    assert beta[0] == pytest.approx(-0.5, abs=1e-13)
    np.testing.assert_allclose(beta, (-1.0) ** np.arange(1, 9) * nu, atol=1e-12)


def test_vanishing_multiplier():
    # T(rho, 0) = -sin(rho pi)/rho vanishes at integers: a mu mistaken for a nu
    with pytest.raises(inverse.InverseError, match="vanishing"):
        inverse.compute_multipliers(np.zeros(3), [1.0], math.pi)


def test_edge6_multipliers_link_the_two_solutions(ex1_graph, ex1_results):
    e6 = ex1_graph.edge(6)
    rp = ex1_results[5]
    x = np.linspace(0, e6.length, 201)
    for b, nu in zip(rp.multipliers.beta, rp.spectra.nu):
        diff = b * ode.T(e6, nu, x)[0] - ode.phi(e6, nu, x)[0]
        assert np.abs(diff).max() < 1e-2


# --- step 5 ------------------------------------------------------------------------


def test_interior_free():
    k = np.arange(1, 31)
    nu = (k - 0.5) * np.pi / 1.3
    beta = (-1.0) ** k * nu
    g, t, flags = inverse.solve_interior(nu, beta, 1.3, 8, np.linspace(0.013, 1.287, 50))
    assert np.max(np.abs(g[:, 0])) < 1e-10 and not flags.any()


def test_interior_constant_one():
    k = np.arange(1, 41)
    w = (k - 0.5) * np.pi
    nu = np.sqrt(w * w + 1)
    beta = (-1.0) ** k * w
    x = np.linspace(0.0, 1.0, 101)
    g, _, _ = inverse.solve_interior(nu, beta, 1.0, 8, x)
    assert np.max(np.abs(g[:, 0] - (np.cosh(x) - 1))) < 1e-3


# --- step 6 ------------------------------------------------------------------------


def test_q_from_zero_g0():
    x = np.linspace(0, 1, 101)
    assert np.max(np.abs(inverse.recover_potential(x, np.zeros_like(x)).q)) == 0


def test_q_from_cosh():
    x = np.linspace(0, 1, 101)
    q = inverse.recover_potential(x, np.cosh(x) - 1).q
    assert np.max(np.abs(q[1:-1] - 1)) < 1e-4
    assert np.max(np.abs(q[[0, -1]] - 1)) < 1e-2


def test_denominator_degeneracy():
    x = np.linspace(0, 1, 21)
    g0 = -np.ones_like(x)
    with pytest.raises(inverse.InverseError, match="denominator"):
        inverse.recover_potential(x, g0)


def test_too_few_points():
    with pytest.raises(inverse.InverseError):
        inverse.recover_potential(np.linspace(0, 1, 8), np.zeros(8))


def test_q_from_zero_s0():
    x = np.linspace(0, 1, 101)
    assert np.max(np.abs(inverse.recover_potential_from_s0(x, np.zeros_like(x)).q)) < 1e-12


def test_q_from_s0_constant_one():
    x = np.linspace(0, 1, 101)
    s0 = np.zeros_like(x)
    s0[1:] = 3 * (np.sinh(x[1:]) / x[1:] - 1)
    q = inverse.recover_potential_from_s0(x, s0).q
    assert np.max(np.abs(q[1:-1] - 1)) < 1e-3


def test_two_recovery_formulas_agree_on_edge2(ex1_graph):
    from starweyl import nsbf
    e2 = ex1_graph.edge(2)
    x = np.linspace(0, e2.length, 101)
    # near x = 0 the high orders are unidentifiable; accept the truncated SVD there
    cg = nsbf.fit_coefficients(e2, 12, "phi", x[1:], max_cond=np.inf)
    cs = nsbf.fit_coefficients(e2, 12, "S", x[1:], max_cond=np.inf)
    g0 = np.concatenate([[0.0], cg.g[:, 0]])
    s0 = np.concatenate([[0.0], cs.s[:, 0]])
    truth = e2.q_at(x)
    qa = inverse.recover_potential(x, g0).q
    qb = inverse.recover_potential_from_s0(x, s0).q
    ea, eb = np.abs(qa - truth).max(), np.abs(qb - truth).max()
    assert np.abs(qa - qb).max() <= 2 * max(ea, eb)


# --- pipeline ------------------------------------------------------------------------


def test_zero_potential_pipeline(zero3):
    samples = closed_form_samples([1, 1, 1], sample_rho(LOG60), direct.diag_plus_successor_mask(3))
    res = inverse.run_inverse_pipeline(samples, zero3.lengths, inverse.InverseConfig(N=9))
    assert len(ok(res)) == 3
    for rp in res:
        assert np.max(np.abs(rp.q)) < 1e-4


def test_three_edge_roundtrip(three_results):
    assert len(ok(three_results)) == 3
    for rp in three_results:
        assert rp.error_metrics()["sup_rel"] <= 0.05


def test_example1_q6(ex1_results):
    rp = ex1_results[5]
    m = rp.error_metrics()
    assert m["sup_rel"] <= 0.06
    assert m["argmax_x"] < 0.1 * rp.x[-1]


def test_interlacing_and_left_end_on_every_edge(ex1_results, three_results):
    for rp in list(ex1_results) + list(three_results):
        nu, mu = rp.spectra.nu, rp.spectra.mu
        K = min(nu.size, mu.size)
        assert np.all(nu[:K] < mu[:K]) and np.all(mu[:K - 1] < nu[1:K])
        assert abs(rp.g0[0]) < 1e-3


def test_noise_changes_little(zero3):
    samples = closed_form_samples([1, 1, 1], sample_rho(LOG60), direct.diag_plus_successor_mask(3))
    rng = np.random.default_rng(7)
    noisy = [direct.WeylSample(s.rho, s.entries * (1 + rng.uniform(-1e-8, 1e-8, s.entries.shape)), s.mask)
             for s in samples]
    cfg = inverse.InverseConfig(N=9)
    a = inverse.run_inverse_pipeline(samples, zero3.lengths, cfg)
    b = inverse.run_inverse_pipeline(noisy, zero3.lengths, cfg)
    for x, y in zip(a, b):
        assert np.max(np.abs(x.q - y.q)) < 1e-3


def test_threads_do_not_change_results(three_graph, three_samples, three_results):
    res = inverse.run_inverse_pipeline(three_samples, three_graph.lengths, inverse.InverseConfig(N=9, threads=3))
    for x, y in zip(three_results, res):
        np.testing.assert_array_equal(x.g0, y.g0)
        np.testing.assert_array_equal(x.q, y.q)


def test_failures_stay_on_their_edge(three_graph, three_samples):
    cfg = inverse.InverseConfig(N=9, rho_max=2.0)
    res = inverse.run_inverse_pipeline(three_samples, three_graph.lengths, cfg)
    assert all(isinstance(r, inverse.EdgeFailure) for r in res)
    assert [r.edge for r in res] == [1, 2, 3]


def test_saddle_sweep_improves_with_Mk(saddle_sweep):
    errs = {mk: rp.error_metrics()["sup_abs"] for mk, rp in saddle_sweep.items()}
    assert all(np.isfinite(v) for v in errs.values())
    assert errs[7] <= errs[0], errs
