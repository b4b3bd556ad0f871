import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from leakyguide import SolverError
from leakyguide.eigensolver import solve_transformed, straight_guide_problem
from leakyguide.roots import Box, find_roots_sin_plus_z, impedance_for_chain
from leakyguide.structure import (AmbiguousClusterError, adjoint_modes, bari_diagnostics, biorthogonal_expansion,
                                  biorthogonality_defect, biorthogonalize_block, detect_jordan_blocks,
                                  inner_rinv, pairing_constants)


def _chain_residual(M, block):
    I = np.eye(M.shape[0])
    c = block.phi_chain
    return max(np.linalg.norm((M - block.lam * I) @ c[j] - (c[j - 1] if j else 0)) for j in range(block.J))


@pytest.mark.parametrize("J", [2, 3])
def test_synthetic_jordan_block_exact(J):
    M = (2 + 1j) * np.eye(J) + np.eye(J, k=1)
    w, V = sla.eig(M)
    blocks, report = detect_jordan_blocks(M.astype(complex), w, V)
    assert [b.J for b in blocks] == [J]
    assert blocks[0].lam == 2 + 1j
    assert _chain_residual(M, blocks[0]) == 0.0


def test_similarity_transformed_jordan_block():
    S = np.random.default_rng(0).standard_normal((4, 4))
    Jm = np.diag([1.0, 1.0, 5.0, 7.0]).astype(complex)
    Jm[0, 1] = 1.0
    M = S @ Jm @ np.linalg.inv(S)
    blocks, _ = detect_jordan_blocks(M, *sla.eig(M))
    assert sorted(b.J for b in blocks) == [1, 1, 2]
    blk = next(b for b in blocks if b.J == 2)
    assert abs(blk.lam - 1) < 1e-12
    assert _chain_residual(M, blk) < 1e-12


def test_derogatory_cluster_is_ambiguous():
    M = np.diag([1.0, 1.0 + 1e-12, 3.0]).astype(complex)
    w, V = sla.eig(M)
    V[:, 1] = V[:, 0] + 1e-9 * V[:, 1]  # force the pairing screen to group them
    with pytest.raises(AmbiguousClusterError):
        detect_jordan_blocks(M, w, V)


def test_chain_from_sin_plus_z_root():
    roots = find_roots_sin_plus_z(Box(0, 10, 0.5, 5)).roots
    w = roots[np.argmin(np.abs(roots - (7.5 + 2.8j)))]
    omega = 2.0
    vs, z = impedance_for_chain(w, omega)
    sp = solve_transformed(straight_guide_problem(vs, omega), 160)
    chains = [b for b in sp.blocks if b.J > 1]
    assert len(chains) == 1 and chains[0].J == 2
    assert abs(chains[0].lam - z**2) < 1e-6 * abs(z**2)
    assert sp.diagnostics["jordan"]["clusters"][0]["eigvec_self_pairing"] < 1e-6
    assert np.all(np.abs(chains[0].pairing) > 1e-3)


def test_biorthogonality_table(table_spectrum):
    assert biorthogonality_defect(table_spectrum, 30) < 1e-8
    pc = pairing_constants(table_spectrum)
    assert pc.inf_abs > 0.1


def test_adjoint_duals(table_spectrum):
    adj = adjoint_modes(table_spectrum)
    for n in (1, 7, 19):
        phi = table_spectrum.blocks[n - 1].phi_chain[0]
        for m in (1, 7, 19):
            val = inner_rinv(table_spectrum, phi, adj.duals[m - 1][0])
            assert abs(val - (n == m)) < 1e-9


def test_expansion_reproduces_mode_sum(small_spectrum):
    a = np.array([0.3, -1.2j, 0.5 + 0.5j])
    d = sum(c * small_spectrum.blocks[k].phi_chain[0] for k, c in enumerate(a))
    coef = biorthogonal_expansion(small_spectrum, d, count=5)
    np.testing.assert_allclose(coef, np.r_[a, 0, 0], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(1, 4))
def test_biorthogonalize_block_property(seed, m):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, m)) + 1j * rng.standard_normal((6, m))
    Y = X + 0.3 * (rng.standard_normal((6, m)) + 1j * rng.standard_normal((6, m)))
    Xd = biorthogonalize_block(X, Y)
    np.testing.assert_allclose(X.T @ Xd.conj(), np.eye(m), atol=1e-8)


def test_biorthogonalize_singular_gram():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    Y = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(SolverError):
        biorthogonalize_block(X, Y)


def test_bari_terms_decay(table_spectrum):
    br = bari_diagnostics(table_spectrum)
    assert not br.ambiguous[-10:]
    # ||psi_n - phi_n||^2 decays like n^-2 beyond the propagating range
    n = br.n[50:]
    assert np.max(br.l2_terms[50:] * n**2) < 10.0
    assert abs(br.ratio[99] - 1) < 0.05
