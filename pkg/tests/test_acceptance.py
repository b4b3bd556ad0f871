"""Acceptance criteria 1-10; each test prints one PASS/FAIL line with the measured numbers.

Run directly (``python tests/test_acceptance.py``) or through pytest.
"""

import math
import sys
import time

import numpy as np
import pytest
import scipy.linalg as sla
import sympy as S

from leakyguide import WaveguideConfig, shooting_refine, solve_modes, table1_config
from leakyguide.cli import table1_report
from leakyguide.dtn import cascade_polynomials, cascade_residual, catalan, dtn_table
from leakyguide.eigensolver import solve_transformed, straight_guide_problem
from leakyguide.fd import mms_study
from leakyguide.helmholtz import bump_source, compare_with_fd, direct_fd_solve, solve, stability_scan
from leakyguide.perturbation import compare_with_galerkin
from leakyguide.roots import (Box, argument_principle_count, find_roots_sin_plus_z, impedance_for_chain,
                              random_subboxes)
from leakyguide.structure import (bari_diagnostics, biorthogonality_defect, detect_jordan_blocks,
                                  pairing_constants)


@pytest.fixture
def emit(capsys):
    def _emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return _emit


@pytest.fixture(scope="module")
def spectrum400():
    return solve_modes(table1_config(), N=400)


def test_criterion_01_table_reproduction(emit):
    t0 = time.perf_counter()
    rep = table1_report(N=400)
    elapsed = time.perf_counter() - t0
    rows = rep["rows"]
    lam_err = max(max(r["rel_err_re"], r["rel_err_im"]) for r in rows)
    int_err = max(r["int_phi2_diff"] for r in rows)
    n_int_fail = sum(not r["int_phi2_pass"] for r in rows)
    ok_lam, ok_int, ok_time = lam_err < 1e-3, int_err < 1e-2, elapsed < 60
    emit(1, ok_lam and ok_int and ok_time,
         f"eigenvalues max componentwise rel err {lam_err:.2e} (<1e-3: {ok_lam}); "
         f"|int phi^2| max abs diff {int_err:.3f} with {n_int_fail}/20 rows outside 1e-2 (<1e-2: {ok_int}); "
         f"runtime {elapsed:.1f} s at N=400 (<60 s: {ok_time}); reference rows start at mode {rep['offset'] + 1}")
    assert ok_lam and ok_time
    assert ok_int, "|int phi^2| column not reproduced (see decisions ledger)"


def test_criterion_02_neumann_exact(emit):
    N = 200
    sp = solve_modes(WaveguideConfig(r1=1.0, r2=2.0, omega=0.0, varsigma=0.0), N=N)
    n = np.arange(N // 2)
    err = float(np.abs(sp.lambdas_t[: N // 2] - n**2).max())
    ok = err < 1e-10
    emit(2, ok, f"max |lambda_t_n - (n-1)^2| over n <= {N // 2} = {err:.2e} (< 1e-10)")
    assert ok


def test_criterion_03_galerkin_vs_shooting(emit):
    rng = np.random.default_rng(2024)
    r1 = rng.uniform(0.5, 3.0)
    cfg = WaveguideConfig(r1=r1, r2=r1 + rng.uniform(0.3, 2.0), omega=rng.uniform(0.5, 6.0),
                          varsigma=complex(rng.uniform(0.1, 2.0), rng.uniform(-1.0, 1.0)))
    sp = solve_modes(cfg, N=200)
    rel, res = [], []
    for lam in sp.lambdas[:10]:
        sh = shooting_refine(cfg, lam)
        rel.append(abs(sh.lam - lam) / abs(sh.lam))
        res.append(sh.residual)
    ok = max(rel) < 1e-6 and max(res) < 1e-10
    emit(3, ok, f"config r1={cfg.r1:.3f} r2={cfg.r2:.3f} omega={cfg.omega:.3f} varsigma={cfg.varsigma:.3f}: "
                f"max rel diff {max(rel):.2e} (<1e-6), max shooting residual {max(res):.2e} (<1e-10)")
    assert ok


def test_criterion_04_biorthogonality(emit, spectrum400):
    defect = biorthogonality_defect(spectrum400, 30)
    c = np.array([abs(b.pairing[0]) for b in spectrum400.blocks[:30]])
    ok = defect < 1e-8 and c.min() > 0.1
    emit(4, ok, f"max off-diagonal |<phi_n, chi_m>| = {defect:.2e} (<1e-8); inf |c_n| (n<=30) = {c.min():.4f} (>0.1)")
    assert ok


def test_criterion_05_jordan_round_trip(emit):
    roots = find_roots_sin_plus_z(Box(0, 10, 0.5, 5)).roots
    w = roots[np.argmin(np.abs(roots - (7.5 + 2.8j)))]
    vs, z = impedance_for_chain(w, 2.0)
    sp = solve_transformed(straight_guide_problem(vs, 2.0), 160)
    clusters = sp.diagnostics["jordan"]["clusters"]
    J = max(b.J for b in sp.blocks)
    self_pair = clusters[0]["eigvec_self_pairing"] if clusters else float("inf")
    M = np.array([[2 + 1j, 1], [0, 2 + 1j]])
    blocks, _ = detect_jordan_blocks(M, *sla.eig(M))
    synth = [b.J for b in blocks] == [2] and blocks[0].lam == 2 + 1j
    ok = J >= 2 and self_pair < 1e-6 and synth
    emit(5, ok, f"root w={w:.6f}, varsigma={vs:.6f}: chain length {J}, |c| = {self_pair:.2e} (<1e-6); "
                f"synthetic 2x2 block detected exactly: {synth}")
    assert ok


def test_criterion_06_dtn_cascade(emit):
    cats = [catalan(m) for m in range(4)]
    b, th = S.symbols("b th")
    sym_ok = True
    for J in range(1, 5):
        cs = S.symbols(f"c0:{J}")
        P = cascade_polynomials(b, cs, i_unit=S.I)
        D = dtn_table(b, J, i_unit=S.I)
        for j in range(J):
            expr = S.diff(sum(c * th**k for k, c in enumerate(P[j])), th) - sum(
                D[k][j] * sum(c * th**m for m, c in enumerate(P[k])) for k in range(j + 1, J))
            sym_ok &= S.simplify(expr) == 0
    rng = np.random.default_rng(6)
    num = max(cascade_residual(complex(rng.uniform(-30, 30), rng.uniform(0.1, 5)),
                               list(rng.standard_normal(J) + 1j * rng.standard_normal(J)), rng.uniform(0, 20))
              for J in range(1, 5) for _ in range(25))
    ok = cats == [1, 1, 2, 5] and sym_ok and num < 1e-10
    emit(6, ok, f"Catalan C0..C3 = {cats}; symbolic residual zero for J<=4: {sym_ok}; numeric max {num:.2e} (<1e-10)")
    assert ok


def test_criterion_07_modal_vs_fd(emit, spectrum400):
    cfg = table1_config(math.pi)
    f = bump_source((99.7, 100.3), (0.5, 2.5))
    sol = solve(cfg, f, 40, spectrum400)
    fd = direct_fd_solve(cfg, f, 64, 128, 30, spectrum400)
    diff = compare_with_fd(sol, fd)
    orders = mms_study((16, 32, 64, 128)).orders
    ok = diff < 0.05 and np.all((orders >= 1.8) & (orders <= 2.2))
    emit(7, ok, f"relative L2 difference {diff:.2e} at Nr=64, Ntheta=128, N_dtn=30 (<5e-2); "
                f"MMS orders {np.round(orders, 3).tolist()} (in [1.8, 2.2])")
    assert ok


def test_criterion_08_stability(emit, spectrum400):
    cfg = table1_config()
    f = bump_source((99.7, 100.3), (0.5, 2.5))
    rep = stability_scan(cfg, f, [2 * math.pi, 4 * math.pi, 8 * math.pi, 16 * math.pi], 40, spectrum400)
    growth = rep.ratios[-1] / rep.ratios[0]
    cap_ok = bool(np.all(rep.gamma_max <= rep.gamma_cap))
    ok = growth < 2 and cap_ok
    emit(8, ok, f"ratios {np.round(rep.ratios, 5).tolist()}, ratio(16pi)/ratio(2pi) = {growth:.4f} (<2); "
                f"gamma_max {np.round(rep.gamma_max, 2).tolist()} <= cap {np.round(rep.gamma_cap, 2).tolist()}: {cap_ok}")
    assert ok


def test_criterion_09_perturbation(emit, spectrum400):
    cmp_ = compare_with_galerkin(spectrum400, range(30, 61))
    series_ok = bool(np.all(cmp_.remainder <= 10 * cmp_.first_order**2))
    br = bari_diagnostics(spectrum400)
    s100, s200 = br.l2_partial[99], br.l2_partial[199]
    incr = (s200 - s100) / s200
    ratio = abs(br.ratio[99] - 1)
    ok = series_ok and incr < 1e-3 and ratio < 0.05
    emit(9, ok, f"max ||(phi-psi)-phi1|| / ||phi1||^2 over n=30..60 = {cmp_.remainder_ratio.max():.3f} (<=10: {series_ok}); "
                f"Bari partial sums {s100:.4f} -> {s200:.4f}, relative increment {incr:.2e} (<1e-3: {incr < 1e-3}); "
                f"|lambda_100/mu_100 - 1| = {ratio:.2e} (<0.05)")
    assert series_ok and ratio < 0.05
    assert incr < 1e-3, "Bari partial sums still grow like the n^-2 tail (see decisions ledger)"


def test_criterion_10_roots(emit):
    box = Box(-20, 20, -10, 10)
    res = find_roots_sin_plus_z(box)
    z = res.roots
    closed = all(np.min(np.abs(z + w)) < 1e-9 and np.min(np.abs(z - np.conj(w))) < 1e-9 for w in z)
    counts = [(int(b.contains(z).sum()) + int(b.contains(0.0)), argument_principle_count(b))
              for b in random_subboxes(box, z, 5, seed=10)]
    match = all(a == b for a, b in counts)
    ok = res.residuals.max() < 1e-12 and closed and match
    emit(10, ok, f"{len(z)} roots, max residual {res.residuals.max():.2e} (<1e-12); closed under -z and conj: {closed}; "
                 f"sub-box counts (Newton, argument principle) {counts}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
