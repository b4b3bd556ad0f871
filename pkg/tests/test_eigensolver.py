import math

import mpmath
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from leakyguide import (ConfigError, GaussLegendre, RefractiveProfile, SolverError, WaveguideConfig,
                        convergence_study, shooting_refine, solve_modes)
from leakyguide.eigensolver import (align_to_reference, assemble_galerkin, beta_from_lambda, solve_transformed,
                                    straight_guide_problem, table_eigenvalue)


def test_neumann_case_exact():
    cfg = WaveguideConfig(r1=1.0, r2=2.0, omega=0.0, varsigma=0.0)
    sp = solve_modes(cfg, N=100)
    n = np.arange(50)
    np.testing.assert_allclose(sp.lambdas_t[:50].real, n**2, atol=1e-10)
    np.testing.assert_allclose(sp.lambdas[:50].real, n**2 / sp.delta**2, rtol=1e-12, atol=1e-8)


def test_beta_branch():
    lam = np.array([-4.0 + 1e-3j, 9.0 + 0.5j, -1.0 - 2j])
    b = beta_from_lambda(lam)
    assert np.all(b.imag >= 0)
    np.testing.assert_allclose(-(b**2), lam, rtol=1e-14)
    assert beta_from_lambda(-4.0 + 0j) == pytest.approx(2.0)


def test_straight_guide_against_characteristic_equation():
    omega, vs = 2.0, 0.7 + 0.2j
    sp = solve_transformed(straight_guide_problem(vs, omega), 200)
    for lam in sp.lambdas[:6]:
        z = mpmath.findroot(lambda z: z * mpmath.tan(z) - 1j * omega * vs, mpmath.sqrt(lam))
        assert abs(complex(z) ** 2 - lam) < 1e-8 * max(1.0, abs(lam))


def _rayleigh(sp, cfg, n):
    # lambda int |phi|^2 / r = int r |phi'|^2 - omega^2 int r n |phi|^2 + i omega s r2 |phi(r2)|^2
    r, w = GaussLegendre(panels=64, order=16).nodes(cfg.r1, cfg.r2, cfg.refr_profile.breakpoints())
    f, df = sp.phi(n, r), sp.phi(n, r, deriv=1)
    num = (np.sum(r * np.abs(df) ** 2 * w) - cfg.omega**2 * np.sum(r * cfg.refr_profile(r) * np.abs(f) ** 2 * w)
           + 1j * cfg.omega * cfg.varsigma * cfg.r2 * abs(sp.phi(n, [cfg.r2])[0]) ** 2)
    return num / np.sum(np.abs(f) ** 2 / r * w)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(r1=st.floats(0.5, 3.0), width=st.floats(0.3, 2.0), omega=st.floats(0.2, 6.0),
       s_re=st.floats(0.0, 2.0), s_im=st.floats(-1.0, 1.0), n_ref=st.floats(0.5, 2.0))
def test_energy_identity_and_damping(r1, width, omega, s_re, s_im, n_ref):
    cfg = WaveguideConfig(r1=r1, r2=r1 + width, omega=omega, varsigma=complex(s_re, s_im),
                          refr_profile=RefractiveProfile("constant", n_ref))
    sp = solve_modes(cfg, N=96)
    scale = max(1.0, np.abs(sp.lambdas[:5]).max())
    for n in range(1, 6):
        lam = sp.lambdas[n - 1]
        assert abs(_rayleigh(sp, cfg, n) - lam) < 1e-8 * scale
        assert lam.imag >= -1e-9 * scale  # dissipative wall
    assert np.all(sp.betas.imag >= 0)


def test_piecewise_profile_against_shooting():
    cfg = WaveguideConfig(r1=1.0, r2=2.0, omega=4.0, varsigma=1.0,
                          refr_profile=RefractiveProfile("piecewise", {"breaks": [1.4], "values": [1.5, 1.0]}))
    sp = solve_modes(cfg, N=300)
    for n in range(4):
        sh = shooting_refine(cfg, sp.lambdas[n])
        assert abs(sh.lam - sp.lambdas[n]) < 1e-6 * abs(sh.lam)


def test_shooting_eigenfunction_matches_galerkin(small_cfg, small_spectrum):
    sh = shooting_refine(small_cfg, small_spectrum.lambdas[2])
    r = np.linspace(1.0, 2.0, 9)
    a, b = sh.phi(r), small_spectrum.phi(3, r)
    np.testing.assert_allclose(a, b, atol=1e-6)
    assert sh.residual < 1e-10


def test_shooting_nonconvergence_raises(small_cfg):
    from leakyguide import ToleranceSet

    with pytest.raises(SolverError):
        shooting_refine(small_cfg, 3.0 + 1j, tol=ToleranceSet(newton_maxiter=1))


def test_truncation_guard(small_cfg):
    with pytest.raises(SolverError, match="truncation"):
        solve_modes(small_cfg, N=40, count=30)


def test_dimension_guard():
    with pytest.raises(ConfigError):
        assemble_galerkin(straight_guide_problem(1.0, 1.0), 1)


def test_enrichment_accelerates_convergence(small_cfg):
    ref = shooting_refine(small_cfg, solve_modes(small_cfg, N=200).lambdas[3]).lam
    plain = solve_modes(small_cfg, N=64, enrich=False).lambdas[3]
    rich = solve_modes(small_cfg, N=64).lambdas[3]
    assert abs(rich - ref) < 1e-3 * abs(plain - ref)


def test_convergence_study_increments(table_cfg):
    tab = convergence_study(table_cfg, [100, 200, 400], count=20)
    assert tab.increments[-1].max() / np.abs(tab.lambdas[-1]).max() < 1e-8


def test_table_alignment(table_spectrum, table_cfg):
    lam = table_eigenvalue(table_spectrum.lambdas, table_cfg)
    k, err = align_to_reference(lam, lam[3:8])
    assert k == 3 and err == 0.0
