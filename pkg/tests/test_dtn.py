import numpy as np
import pytest
import sympy as S
from hypothesis import given, settings
from hypothesis import strategies as st

from leakyguide import solve_modes
from leakyguide.dtn import (apply_dtn, assemble_dtn, cascade_polynomials, cascade_residual, catalan, dtn_of_trace,
                            dtn_table, dtn_boundedness_check, poly_deriv, poly_eval, single_mode_ratio)


def test_catalan_values():
    assert [catalan(m) for m in range(8)] == [1, 1, 2, 5, 14, 42, 132, 429]
    with pytest.raises(OverflowError):
        catalan(31)
    with pytest.raises(ValueError):
        catalan(-1)


def test_table_shape():
    D = np.array(dtn_table(2.0 + 0.5j, 3), complex)
    assert np.allclose(np.diag(D), 1j * (2 + 0.5j))
    assert np.all(D[np.triu_indices(3, 1)] == 0)
    assert D[1, 0] == pytest.approx(1 / (2j * (2 + 0.5j)))
    assert D[2, 0] == pytest.approx(-1 / (2j * (2 + 0.5j)) ** 3)


@pytest.mark.parametrize("J", [1, 2, 3, 4])
def test_cascade_symbolic(J):
    b, th = S.symbols("b th")
    cs = S.symbols(f"c0:{J}")
    P = cascade_polynomials(b, cs, i_unit=S.I)
    D = dtn_table(b, J, i_unit=S.I)
    for j in range(J):
        pj = sum(c * th**k for k, c in enumerate(P[j]))
        # polynomial times exponential solves the block ODE
        rhs = P[j + 1] if j + 1 < J else [0]
        ode = S.diff(pj, th, 2) + 2 * S.I * b * S.diff(pj, th) - sum(c * th**k for k, c in enumerate(rhs))
        assert S.simplify(ode) == 0
        bc = S.diff(pj, th) - sum(D[k][j] * sum(c * th**m for m, c in enumerate(P[k])) for k in range(j + 1, J))
        assert S.simplify(bc) == 0


@settings(max_examples=80, deadline=None)
@given(br=st.floats(-50, 50), bi=st.floats(0.05, 20), J=st.integers(1, 5), theta=st.floats(0, 30),
       seed=st.integers(0, 2**31))
def test_cascade_numeric(br, bi, J, theta, seed):
    rng = np.random.default_rng(seed)
    consts = list(rng.standard_normal(J) + 1j * rng.standard_normal(J))
    assert cascade_residual(complex(br, bi), consts, theta) < 1e-10


def test_poly_helpers():
    c = [1.0, 2.0, 3.0]
    assert poly_eval(c, 2.0) == 17.0
    assert poly_deriv(c) == [2.0, 6.0]


def test_apply_dtn_validates(small_spectrum):
    d = assemble_dtn(small_spectrum, 3)
    with pytest.raises(ValueError):
        apply_dtn(d, [np.ones(1)] * 2)
    with pytest.raises(ValueError):
        apply_dtn(d, [np.ones(2)] * 3)


def test_outgoing_mode_is_fixed_point(table_spectrum):
    sp = table_spectrum
    d = assemble_dtn(sp.truncated(100))
    r = np.linspace(99.5, 100.5, 9)
    for n in (1, 4, 17):
        beta = sp.blocks[n - 1].beta
        lhs = r * dtn_of_trace(d, lambda rr: sp.phi(n, rr), r)
        ref = 1j * beta * sp.phi(n, r)
        assert np.abs(lhs - ref).max() < 1e-10 * np.abs(ref).max()


def test_boundedness_refinement(table_cfg):
    sups = []
    for N in (100, 200):
        sp = solve_modes(table_cfg, N=N)
        rep = dtn_boundedness_check(assemble_dtn(sp.truncated(sp.n_trusted)), trials=100)
        assert rep.random_h1_to_l2 <= rep.sup_h1_to_l2 * (1 + 1e-9)
        assert rep.random_dual <= rep.sup_dual * (1 + 1e-9)
        sups.append(rep.sup_h1_to_l2)
    assert abs(sups[1] - sups[0]) / sups[0] < 0.1


def test_boundedness_requires_trials(small_spectrum):
    with pytest.raises(ValueError):
        dtn_boundedness_check(assemble_dtn(small_spectrum, 5), trials=10)


def test_single_mode_ratio(table_spectrum):
    lhs, bound = single_mode_ratio(table_spectrum, 1)
    assert lhs <= bound / 99.5 * (1 + 1e-12)
