"""Modal Dirichlet-to-Neumann operator at the outlet theta = theta_max.

A trace g(r) = sum_{n,j} p_{n,j} phi_{n,j}(r) is mapped to
r^-1 sum_{n,j} F_{n,j} phi_{n,j}(r) with F_{n,j} = sum_{k>=j} D_{k,j,n} p_{n,k}.
Within a Jordan block the outgoing coefficients are p_{n,j}(theta) =
P_j(theta) e^{i beta theta} with polynomials P_j satisfying
P_j'' + 2 i beta P_j' = P_{j+1}; the table D reproduces P_j' exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .core import GaussLegendre

CATALAN_MAX = 30


def catalan(m: int) -> int:
    if not isinstance(m, (int, np.integer)) or m < 0:
        raise ValueError("catalan index must be a nonnegative integer")
    if m > CATALAN_MAX:
        raise OverflowError(f"catalan index {m} above guard {CATALAN_MAX}")
    m = int(m)
    return math.comb(2 * m + 1, m + 1) // (2 * m + 1)


def dtn_table(beta, J: int, i_unit=1j):
    """D[k][j] (0-based, k >= j) for one block; generic in the number type of beta."""
    two_ib = 2 * i_unit * beta
    D = [[0] * J for _ in range(J)]
    for j in range(J):
        D[j][j] = i_unit * beta
        for k in range(j + 1, J):
            m = k - j
            D[k][j] = (-1) ** (m - 1) * catalan(m - 1) / two_ib ** (2 * m - 1)
    return D


@dataclass
class DtNOperator:
    betas: np.ndarray
    tables: list  # per block (J x J) complex arrays, lower-triangular in (k, j)
    spectrum: object = field(repr=False, default=None)

    @property
    def chain_lengths(self) -> list:
        return [t.shape[0] for t in self.tables]

    @property
    def is_diagonal(self) -> bool:
        return all(t.shape[0] == 1 for t in self.tables)


def assemble_dtn(spectrum, count: int | None = None) -> DtNOperator:
    blocks = spectrum.blocks[:count] if count else spectrum.blocks
    tables = [np.array(dtn_table(complex(b.beta), b.J), dtype=complex) for b in blocks]
    return DtNOperator(np.array([b.beta for b in blocks]), tables, spectrum)


def apply_dtn(dtn: DtNOperator, p: Sequence[np.ndarray]) -> list:
    """F_{n,j} = sum_{k >= j} D_{k,j,n} p_{n,k} for each block."""
    if len(p) != len(dtn.tables):
        raise ValueError(f"got {len(p)} coefficient blocks for {len(dtn.tables)} DtN blocks")
    out = []
    for n, (tab, pn) in enumerate(zip(dtn.tables, p), start=1):
        pn = np.asarray(pn, complex)
        if pn.shape[0] != tab.shape[0]:
            raise ValueError(f"block {n}: chain length {tab.shape[0]} but {pn.shape[0]} coefficients")
        out.append(tab.T @ pn)
    return out


def dtn_function(dtn: DtNOperator, F: Sequence[np.ndarray], r) -> np.ndarray:
    """r^-1 sum F_{n,j} phi_{n,j}(r)."""
    sp = dtn.spectrum
    r = np.asarray(r, float)
    val = np.zeros(r.shape, complex)
    for n, Fn in enumerate(F, start=1):
        for j, f in enumerate(Fn, start=1):
            val = val + f * sp.phi(n, r, j)
    return val / r


# ---------------------------------------------------------------------------
# expansion of traces in the root vectors


def trace_coefficients(spectrum, fn, quad: GaussLegendre | None = None) -> np.ndarray:
    """Coefficients of a function of r in the transformed basis (L2(0, pi) projection)."""
    quad = quad or GaussLegendre(panels=max(64, spectrum.system.N), order=16)
    t, w = quad.nodes(0.0, math.pi, spectrum.problem.t_breaks)
    vals = np.asarray(fn(spectrum.problem.r_of_t(t)), complex)
    return spectrum.system.basis(t) @ (vals * w)


def chain_expansion(spectrum, d: np.ndarray, count: int | None = None) -> list:
    """p_{n,j} = [d, phi_{n,J+1-j}] / c_{n,j} with [u, v] = delta u^T v."""
    blocks = spectrum.blocks[:count] if count else spectrum.blocks
    out = []
    for b in blocks:
        J = b.J
        out.append(np.array([spectrum.delta * (d @ b.phi_chain[J - 1 - j]) / b.pairing[j] for j in range(J)]))
    return out


def dtn_of_trace(dtn: DtNOperator, fn, r, count: int | None = None) -> np.ndarray:
    sp = dtn.spectrum
    p = chain_expansion(sp, trace_coefficients(sp, fn), count or len(dtn.tables))
    return dtn_function(dtn, apply_dtn(dtn, p), r)


# ---------------------------------------------------------------------------
# polynomial cascade oracle


def _solve_first_order(b: list, two_ib):
    """Polynomial Q with Q' + 2 i beta Q = b (coefficients ascending)."""
    d = len(b) - 1
    q = [0] * (d + 1)
    for k in range(d, -1, -1):
        nxt = (k + 1) * q[k + 1] if k < d else 0
        q[k] = (b[k] - nxt) / two_ib
    return q


def cascade_polynomials(beta, constants: Sequence, i_unit=1j) -> list:
    """Outgoing P_1..P_J with P_J = constants[-1] and P_j'' + 2 i beta P_j' = P_{j+1}.

    constants[j] is the free constant term of P_{j+1}.  Works for floats,
    complex numbers, fractions or symbolic expressions alike.
    """
    J = len(constants)
    two_ib = 2 * i_unit * beta
    P = [None] * J
    P[J - 1] = [constants[J - 1]]
    for j in range(J - 2, -1, -1):
        q = _solve_first_order(P[j + 1], two_ib)  # q = P_j'
        P[j] = [constants[j]] + [q[k] / (k + 1) for k in range(len(q))]
    return P


def poly_eval(c: Sequence, x):
    acc = 0
    for a in reversed(c):
        acc = acc * x + a
    return acc


def poly_deriv(c: Sequence) -> list:
    return [k * c[k] for k in range(1, len(c))] or [0]


def cascade_residual(beta, constants: Sequence, theta) -> float:
    """max_j |P_j'(theta) - sum_{k>j} D_{k,j} P_k(theta)| relative to the P scale."""
    P = cascade_polynomials(beta, constants)
    D = dtn_table(beta, len(P))
    vals = [poly_eval(c, theta) for c in P]
    scale = max(abs(v) for v in vals) or 1.0
    res = 0.0
    for j in range(len(P)):
        lhs = poly_eval(poly_deriv(P[j]), theta)
        rhs = sum(D[k][j] * vals[k] for k in range(j + 1, len(P)))
        res = max(res, abs(lhs - rhs))
    return res / scale


# ---------------------------------------------------------------------------
# boundedness


@dataclass
class BoundednessReport:
    sup_h1_to_l2: float  # exact sup over the span of the eigenvectors used
    sup_dual: float
    random_h1_to_l2: float  # best of the random trials (a lower bound)
    random_dual: float
    trials: int
    modes: int


def _gram(A, B, w):
    return (A * w) @ B.conj().T


def _inv_sqrt(G):
    lam, U = sla.eigh(G)
    lam = np.maximum(lam, lam.max() * 1e-14)
    return (U / np.sqrt(lam)) @ U.conj().T


def dtn_boundedness_check(dtn: DtNOperator, trials: int = 100, N: int | None = None, seed: int = 0,
                          quad: GaussLegendre | None = None) -> BoundednessReport:
    """sup ||DtN u||_L2 / ||u||_H1 and sup |<DtN u, r xi>| / (||u||_L2 ||xi||_H1) over eigenvector spans.

    Norms are taken on (r1, r2) with dr.  The exact suprema come from
    generalized Rayleigh quotients of Gram matrices; random combinations with
    coefficients N(0,1)/||phi_n||_H1 give an independent lower bound.  N limits
    the trace space to the first N eigenvectors.
    """
    if trials < 100:
        raise ValueError("at least 100 trials required")
    sp = dtn.spectrum
    K = min(N or len(dtn.tables), len(dtn.tables))
    quad = quad or GaussLegendre(panels=max(64, 2 * K), order=16)
    t, w = quad.nodes(0.0, math.pi, sp.problem.t_breaks)
    r = sp.problem.r_of_t(t)
    wr = w * sp.delta * r
    modes = [(n, 1) for n in range(1, K + 1)]
    Phi = sp.mode_matrix(r, 0, modes)
    dPhi = sp.mode_matrix(r, 1, modes)
    Dg = np.array([tab[0, 0] for tab in dtn.tables[:K]])
    TPhi = Dg[:, None] * Phi / r[None, :]

    GL = _gram(Phi, Phi, wr)
    GH = GL + _gram(dPhi, dPhi, wr)
    GT = _gram(TPhi, TPhi, wr)
    C = _gram(TPhi, Phi, wr * r)  # C[m, n] = <T phi_m, r phi_n>
    HiH, HiL = _inv_sqrt(GH), _inv_sqrt(GL)
    exact1 = math.sqrt(max(np.linalg.eigvalsh(HiH @ GT @ HiH).max(), 0.0))
    # a^T ... b form: <T u, r xi> = a^T C conj(b)
    exact2 = float(np.linalg.svd(HiL.conj() @ C @ HiH, compute_uv=False)[0])

    h1 = np.sqrt(np.real(np.diag(GH)))
    rng = np.random.default_rng(seed)
    sup1 = sup2 = 0.0
    for _ in range(trials):
        a = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) / h1
        b = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) / h1
        nu_h1 = math.sqrt(np.real(a.conj() @ GH.T @ a))
        nu_l2 = math.sqrt(np.real(a.conj() @ GL.T @ a))
        nxi_h1 = math.sqrt(np.real(b.conj() @ GH.T @ b))
        sup1 = max(sup1, math.sqrt(np.real(a.conj() @ GT.T @ a)) / nu_h1)
        sup2 = max(sup2, abs(a @ C @ b.conj()) / (nu_l2 * nxi_h1))
    return BoundednessReport(exact1, exact2, sup1, sup2, trials, K)


def single_mode_ratio(spectrum, n: int = 1, quad: GaussLegendre | None = None) -> tuple[float, float]:
    """(||DtN phi_n||_L2 / ||phi_n||_H1, |beta_n| ||phi_n||_L2 / ||phi_n||_H1) in dr-weighted norms."""
    quad = quad or GaussLegendre(panels=max(64, spectrum.system.N), order=16)
    t, w = quad.nodes(0.0, math.pi, spectrum.problem.t_breaks)
    r = spectrum.problem.r_of_t(t)
    wr = w * spectrum.delta * r
    f, df = spectrum.phi(n, r), spectrum.phi(n, r, deriv=1)
    beta = spectrum.blocks[n - 1].beta
    l2 = math.sqrt(np.sum(np.abs(f) ** 2 * wr))
    h1 = math.sqrt(np.sum((np.abs(f) ** 2 + np.abs(df) ** 2) * wr))
    lhs = math.sqrt(np.sum(np.abs(1j * beta * f / r) ** 2 * wr)) / h1
    return lhs, abs(beta) * l2 / h1
