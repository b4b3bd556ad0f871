import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakyguide import transform_radial
from leakyguide.eigensolver import assemble_galerkin
from leakyguide.perturbation import (RateParams, compare_with_galerkin, empirical_n0, first_order_eigen_discrepancy,
                                     rate_sums, mu_seq, perturbation_series, sigma_rate, subordination_constant,
                                     tau_rate)


def test_mu_sequence():
    np.testing.assert_array_equal(mu_seq([1, 2, 3, 10]), [1, 2, 5, 82])


def test_rate_parameter_checks():
    with pytest.raises(ValueError):
        RateParams(omega_exp=0.0, gamma_sep=1.0).check()
    with pytest.raises(ValueError):
        RateParams(gamma_sep=0.0).check()
    RateParams().check(need_tau=True)


def test_rate_branches():
    assert sigma_rate(0.0, 2.0, 10.0) == pytest.approx(10.0**-1 * math.log(10 * math.e))
    assert sigma_rate(2.0, 2.0, 10.0) == pytest.approx(1e-2)
    assert tau_rate(0.0, 2.0, 10.0) == pytest.approx(1e-2)
    assert tau_rate(3.0, 2.0, 10.0) == pytest.approx(1e-4)


def test_rate_sums_brute_force():
    ls = rate_sums(RateParams(), [3, 7])
    for n, s1 in zip((3, 7), ls.S1):
        m = np.arange(1, 200001)
        m = m[m != n]
        ref = np.sum(1.0 / np.abs(mu_seq(m) - mu_seq(n)))
        # the automatic cutoff guarantees a truncated tail below 1%
        assert ref * 0.99 <= s1 <= ref


@settings(max_examples=20, deadline=None)
@given(w=st.one_of(st.floats(0.0, 1.0), st.floats(1.25, 3.0)))
def test_rate_sums_ratios_bounded(w):
    # just above w = 1 the constant behaves like zeta(w) and the ratio settles only for very large n
    ls = rate_sums(RateParams(omega_exp=w), [10, 20, 40, 80])
    assert np.all(ls.ratio1 < 5) and np.all(ls.ratio2 < 5)
    assert ls.ratio1[-1] < 1.25 * ls.ratio1[0] and ls.ratio2[-1] < 1.25 * ls.ratio2[0]


def test_rate_sums_cutoff_too_small():
    with pytest.raises(ValueError):
        rate_sums(RateParams(), [80], M_terms=10)
    with pytest.raises(ValueError, match="1%"):
        rate_sums(RateParams(), [80], M_terms=800)


def test_subordination_constant(table_cfg):
    p = transform_radial(table_cfg)
    mb = subordination_constant(p, 100)
    assert mb == pytest.approx(subordination_constant(p, 200), rel=1e-6)
    assert mb >= abs(p.imp_coeff) * 2 / math.pi


def test_series_first_order_closed_form(table_cfg):
    p = transform_radial(table_cfg)
    B = assemble_galerkin(p, 200, enrich=False).matB
    s = perturbation_series(p, 40, k_max=2, B=B)
    j = np.arange(1, 201)
    expect = np.where(j != 40, B[39] / np.where(j != 40, mu_seq(40) - mu_seq(j), 1), 0)
    np.testing.assert_allclose(s.coeffs[0], expect, atol=1e-15)
    assert s.l2_norms[1] < s.l2_norms[0]


def test_series_matches_galerkin(table_spectrum):
    cmp_ = compare_with_galerkin(table_spectrum, [30, 45, 60])
    assert np.all(cmp_.remainder_ratio <= 10)
    # first-order size decays like 1/n
    assert np.all(cmp_.first_order * cmp_.n < 3)
    assert np.all(cmp_.tail_fraction[:, 0] < 2e-2)


def test_first_order_eigenvalue(table_spectrum):
    B = assemble_galerkin(table_spectrum.problem, 400, enrich=False).matB
    out = first_order_eigen_discrepancy(table_spectrum.lambdas_t, B, [40, 80])
    assert np.all(out[:, 1].real <= 5 * out[:, 2].real + 1e-6)


def test_empirical_n0(table_spectrum):
    n0 = empirical_n0(table_spectrum.lambdas_t[:200])
    assert 1 < n0 < 60
    assert empirical_n0(mu_seq(np.arange(1, 30)).astype(complex)) == 1
