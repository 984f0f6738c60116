import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cgclatency.distributions import (
    CgfModel,
    DomainError,
    GammaTerm,
    GaussianTerm,
    LatticeTerm,
    UnsupportedOperationError,
    cgf_eval,
    exact_gamma_cdf,
    exact_gamma_sf,
    exact_negbin_pmf,
    negbin_support,
    sample_term,
)
from cgclatency.model import ModelKind, build_continuous_cgf, build_lattice_cgf, named_constants, preset

shapes = st.floats(0.2, 20.0)
rates = st.floats(0.05, 50.0)
fail_probs = st.floats(0.0, 0.6)


# -- cgf_eval ----------------------------------------------------------------


def test_gamma_cumulants_at_zero():
    assert cgf_eval(CgfModel(gamma_terms=[GammaTerm(2, 1)]), 0.0) == pytest.approx((0.0, 2.0, 2.0, 4.0))


def test_geometric_mean_at_zero():
    K, K1, _, _ = cgf_eval(CgfModel(lattice_terms=[LatticeTerm(1, 0.5, 1.0)]), 0.0)
    assert K == pytest.approx(0.0, abs=1e-15)
    assert K1 == pytest.approx(2.0)


def test_gaussian_cgf():
    K, K1, K2, K3 = cgf_eval(CgfModel(gaussian_terms=[GaussianTerm(1.5, 0.25)]), 2.0)
    assert (K, K1, K2, K3) == pytest.approx((1.5 * 2 + 0.125 * 4, 1.5 + 0.5, 0.25, 0.0))


def test_fig4_mean_matches_closed_form_constant():
    sc = preset("fig4")
    nc = named_constants(sc, 1.1)
    cont = build_continuous_cgf(sc, 1.1, ModelKind.ET)
    lat = build_lattice_cgf(sc, ModelKind.ET, 1.1)
    assert cgf_eval(cont, 0.0)[1] == pytest.approx(nc.theta, rel=1e-12)
    assert cgf_eval(lat, 0.0)[1] == pytest.approx(nc.vartheta * sc.t_u, rel=1e-12)


def test_outside_domain_raises():
    with pytest.raises(DomainError):
        cgf_eval(CgfModel(gamma_terms=[GammaTerm(2, 1)]), 1.0)
    with pytest.raises(DomainError):
        cgf_eval(CgfModel(lattice_terms=[LatticeTerm(1, 0.5, 1.0)]), math.log(2.0) + 1e-3)


def test_invalid_terms_raise():
    with pytest.raises(DomainError):
        GammaTerm(0.0, 1.0)
    with pytest.raises(DomainError):
        GammaTerm(1.0, -1.0)
    with pytest.raises(DomainError):
        LatticeTerm(1, 1.0, 1.0)
    with pytest.raises(DomainError):
        LatticeTerm(0, 0.1, 1.0)


@given(shapes, rates, fail_probs, st.integers(1, 30), st.floats(0.0, 1.0))
def test_cgf_strictly_convex(a, b, e, n, frac):
    m = CgfModel(gamma_terms=[GammaTerm(a, b)], lattice_terms=[LatticeTerm(n, max(e, 1e-3), 0.01)])
    s = -5.0 + frac * (m.s_max - 1e-6 + 5.0)
    assert cgf_eval(m, s)[2] > 0


@given(st.lists(st.tuples(shapes, rates), min_size=1, max_size=4),
       st.lists(st.tuples(st.integers(1, 20), fail_probs), min_size=0, max_size=3))
def test_cumulants_at_zero_are_sums_of_term_cumulants(gammas, lattices):
    gt = [GammaTerm(a, b) for a, b in gammas]
    lt = [LatticeTerm(n, e, 0.005) for n, e in lattices]
    _, K1, K2, K3 = cgf_eval(CgfModel(gamma_terms=gt, lattice_terms=lt), 0.0)
    terms = gt + lt
    assert K1 == pytest.approx(sum(t.mean for t in terms), rel=1e-12)
    assert K2 == pytest.approx(sum(t.variance for t in terms), rel=1e-12)
    assert K3 == pytest.approx(sum(t.third_cumulant for t in terms), rel=1e-10)


@given(st.integers(1, 10), st.floats(0.01, 0.6), st.floats(-2.0, 0.2))
def test_lattice_derivatives_match_finite_differences(n, e, s):
    m = CgfModel(lattice_terms=[LatticeTerm(n, e, 1.0)])
    s = min(s, 0.9 * m.s_max)
    h = 1e-6
    K, K1, K2, _ = cgf_eval(m, s)
    assert K1 == pytest.approx((cgf_eval(m, s + h)[0] - cgf_eval(m, s - h)[0]) / (2 * h), rel=1e-5)
    assert K2 == pytest.approx((cgf_eval(m, s + h)[1] - cgf_eval(m, s - h)[1]) / (2 * h), rel=1e-5)


# -- exact laws --------------------------------------------------------------


def test_exponential_median():
    assert exact_gamma_cdf(1, 1, math.log(2)) == pytest.approx(0.5, abs=1e-15)


def test_gamma8_at_mean_frozen():
    # regularised incomplete gamma P(8, 8) evaluated with mpmath at 30 digits
    assert exact_gamma_cdf(8, 1, 8.0) == pytest.approx(0.547039190513005514, abs=1e-14)


def test_gamma_cdf_support_boundary():
    assert exact_gamma_cdf(2, 1, 0.0) == 0.0
    assert exact_gamma_cdf(2, 1, -3.0) == 0.0
    assert exact_gamma_sf(2, 1, -1.0) == 1.0


@given(shapes, rates, st.floats(1e-3, 50.0))
def test_gamma_cdf_plus_sf_is_one(a, b, x):
    assert exact_gamma_cdf(a, b, x) + exact_gamma_sf(a, b, x) == pytest.approx(1.0, abs=1e-12)


def test_negbin_small_cases():
    assert exact_negbin_pmf(LatticeTerm(1, 0.5, 1.0), 1) == pytest.approx(0.5)
    assert exact_negbin_pmf(LatticeTerm(2, 0.1, 1.0), 2) == pytest.approx(0.81)
    assert exact_negbin_pmf(LatticeTerm(2, 0.1, 1.0), 1) == 0.0


def test_negbin_matches_geometric_convolution():
    geo = np.zeros(80)
    geo[1:] = 0.7 * 0.3 ** np.arange(79)
    conv = np.convolve(np.convolve(geo, geo), geo)
    term = LatticeTerm(3, 0.3, 1.0)
    ks = np.arange(3, 40)
    np.testing.assert_allclose(exact_negbin_pmf(term, ks), conv[ks], rtol=1e-12)
    # frozen: C(4, 2) 0.7^3 0.3^2
    assert exact_negbin_pmf(term, 5) == pytest.approx(0.18522, rel=1e-12)


def test_negbin_large_k_does_not_overflow():
    p = exact_negbin_pmf(LatticeTerm(500, 0.4, 1.0), np.array([1500, 3000]))
    assert np.all(np.isfinite(p)) and np.all(p >= 0)


@given(st.integers(1, 60), st.floats(0.0, 0.8))
def test_negbin_support_mass(n, e):
    term = LatticeTerm(n, e, 1.0)
    assert exact_negbin_pmf(term, negbin_support(term)).sum() == pytest.approx(1.0, abs=1e-9)


# -- samplers ----------------------------------------------------------------


def test_gamma_sample_mean(rng):
    x = sample_term(GammaTerm(2, 1), rng, 10**6)
    assert abs(x.mean() - 2.0) <= 3 * math.sqrt(2 / 10**6)


def test_samplers_match_exact_laws(rng):
    n = 10**6
    bound = 3 * math.sqrt(math.log(2) / (2 * n))
    g = GammaTerm(1.5, 4.0)
    ks = stats.kstest(sample_term(g, rng, n), lambda x: exact_gamma_cdf(g.shape, g.rate, x)).statistic
    assert ks <= bound
    term = LatticeTerm(4, 0.2, 0.5)
    counts = np.round(sample_term(term, rng, n) / term.spacing).astype(int)
    support = negbin_support(term)
    emp = np.cumsum(np.bincount(counts, minlength=support[-1] + 1)[support]) / n
    exact = np.cumsum(exact_negbin_pmf(term, support))
    assert np.max(np.abs(emp - exact)) <= bound


def test_fig4_compression_time_mean(rng):
    from cgclatency.model import continuous_terms

    ct = continuous_terms(preset("fig4"), 1.1)
    x = sample_term(ct.compression, rng, 10**6)
    # n_ET zeta_c(1.1) / chi_RA with zeta_c(1.1) = e^3.85 - e^3.5
    assert x.mean() == pytest.approx(0.023282768188926, rel=0.01)


def test_error_free_lattice_is_deterministic(rng):
    x = sample_term(LatticeTerm(3, 0.0, 0.01), rng, 100)
    np.testing.assert_array_equal(x, 0.03)


def test_gaussian_term_cannot_be_sampled(rng):
    with pytest.raises(UnsupportedOperationError):
        sample_term(GaussianTerm(0, 1), rng, 3)


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_samplers_are_seed_deterministic(seed):
    a = sample_term(GammaTerm(2, 3), np.random.default_rng(seed), 5)
    b = sample_term(GammaTerm(2, 3), np.random.default_rng(seed), 5)
    np.testing.assert_array_equal(a, b)
