"""Adjoint modes, pairings, Jordan chains, biorthogonalization and Bari diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DEFAULT_TOL, GaussLegendre, SolverError, ToleranceSet


@dataclass
class JordanBlock:
    """One eigenvalue with its chain phi_1..phi_J and the adjoint chain chi_j = conj(phi_j).

    ``pairing[j-1]`` is c_j = <phi_j, chi_{J+1-j}>_{1/r}.
    """

    lam_t: complex
    lam: complex
    beta: Optional[complex]
    J: int
    phi_chain: list
    chi_chain: list = field(default_factory=list)
    pairing: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    indices: tuple = ()

    @property
    def semisimple(self) -> bool:
        return self.J == 1


class AmbiguousClusterError(SolverError):
    def __init__(self, msg, singular_values):
        super().__init__(msg)
        self.singular_values = singular_values


# ---------------------------------------------------------------------------
# Jordan detection


def _raw_pairing(V: np.ndarray, M: np.ndarray, w: np.ndarray, symmetric: bool) -> np.ndarray:
    if symmetric:
        return np.abs(np.einsum("ij,ij->j", V, V)) / np.einsum("ij,ij->j", V.conj(), V).real
    # general matrices: reciprocal eigenvalue condition numbers from left vectors
    import scipy.linalg as sla

    wl, U = sla.eig(M.T)
    order = [int(np.argmin(np.abs(wl - x))) for x in w]
    U = U[:, order]
    return np.abs(np.einsum("ij,ij->j", U, V)) / (np.linalg.norm(U, axis=0) * np.linalg.norm(V, axis=0))


def _clusters(w: np.ndarray, pair: np.ndarray, tol: ToleranceSet) -> list[list[int]]:
    n = len(w)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    dist = np.abs(w[:, None] - w[None, :])
    close = dist < tol.tol_cluster * (1.0 + np.abs(w))[:, None]
    for i, j in zip(*np.nonzero(np.triu(close, 1))):
        union(i, j)
    # a defective eigenvalue splits under rounding into nearly parallel vectors whose
    # self-pairing scales like the square root of the perturbation: screen with sqrt(tol)
    cand = np.nonzero(pair < math.sqrt(tol.tol_jordan))[0]
    if len(cand) > 1:
        sub = dist[np.ix_(cand, cand)] + np.diag(np.full(len(cand), np.inf))
        for a, i in enumerate(cand):
            union(i, cand[int(np.argmin(sub[a]))])
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _normalize_chain(chain: list[np.ndarray]) -> list[np.ndarray]:
    """Use the chain freedom phi_j -> phi_j + a phi_{j-k} to make [phi_j, phi_l] vanish unless j+l = J+1."""
    J = len(chain)
    for k in range(1, J):
        s_top = chain[0] @ chain[J - 1]
        # s_{J+1+k} = [phi_{1+k}, phi_J]
        s_k = chain[k] @ chain[J - 1]
        a = -s_k / (2 * s_top)
        chain = [chain[j] + (a * chain[j - k] if j - k >= 0 else 0) for j in range(J)]
    return chain


def detect_jordan_blocks(M: np.ndarray, w: np.ndarray, V: np.ndarray, tol: ToleranceSet = DEFAULT_TOL,
                         symmetric: bool | None = None):
    """Group raw eigenpairs into Jordan blocks.

    Returns (blocks, report).  Chain vectors satisfy (M - lam) x_j = x_{j-1} in
    matrix coordinates; block eigenvalues are cluster means.
    """
    M = np.asarray(M, complex)
    if symmetric is None:
        symmetric = bool(np.allclose(M, M.T, rtol=0, atol=1e-13 * max(1.0, np.abs(M).max())))
    V = V / np.linalg.norm(V, axis=0)
    pair = _raw_pairing(V, M, w, symmetric)
    groups = _clusters(w, pair, tol)
    mnorm = np.linalg.norm(M, 2)
    blocks, report = [], {"clusters": [], "min_raw_pairing": float(pair.min()) if len(pair) else None,
                          "flagged_singletons": []}
    I = np.eye(M.shape[0])
    for g in groups:
        if len(g) == 1:
            i = g[0]
            if pair[i] < tol.tol_jordan:
                report["flagged_singletons"].append(i)
            blocks.append(JordanBlock(lam_t=complex(w[i]), lam=complex(w[i]), beta=None, J=1,
                                      phi_chain=[V[:, i].copy()], indices=(i,)))
            continue
        lam = complex(np.mean(w[g]))
        U, s, Wh = np.linalg.svd(M - lam * I)
        J = len(g)
        if s[-2] < 1e-8 * mnorm:
            raise AmbiguousClusterError(
                f"cluster at {lam:.6g} has geometric multiplicity > 1 (rank test inconclusive)", s[-J - 1:])
        x1 = Wh[-1].conj()
        cut = s[0] * 1e3 * np.finfo(float).eps
        keep = s > cut
        chain = [x1]
        for _ in range(1, J):
            rhs = chain[-1]
            coef = (U[:, keep].conj().T @ rhs) / s[keep]
            chain.append(Wh[keep].conj().T @ coef)
        if symmetric:
            chain = _normalize_chain(chain)
        self_pair = abs(x1 @ x1) if symmetric else float("nan")
        report["clusters"].append({"indices": list(g), "lambda": lam, "J": J,
                                   "singular_values": s[-J - 1:].tolist(), "eigvec_self_pairing": self_pair})
        blocks.append(JordanBlock(lam_t=lam, lam=lam, beta=None, J=J, phi_chain=chain, indices=tuple(g)))
    return blocks, report


# ---------------------------------------------------------------------------
# adjoints and pairings


@dataclass
class AdjointChains:
    lam_bar: np.ndarray
    chains: list  # chi_{n,1..J} with (T* - conj(lam)) chi_j = chi_{j-1}
    duals: list  # biorthogonal duals: dual_j = chi_{J+1-j} / conj(c_j)


def adjoint_modes(spectrum) -> AdjointChains:
    """chi_{n,j} = conj(phi_{n,j}); the biorthogonal dual pairs phi_j with chi_{J+1-j}."""
    chains, duals = [], []
    for b in spectrum.blocks:
        chi = [np.conj(v) for v in b.phi_chain]
        chains.append(chi)
        duals.append([chi[b.J - 1 - j] / np.conj(b.pairing[j]) for j in range(b.J)])
    return AdjointChains(np.conj(spectrum.lambdas), chains, duals)


def inner_rinv(spectrum, u: np.ndarray, v: np.ndarray) -> complex:
    """<u, v>_{1/r} for coefficient vectors in the transformed basis (orthonormal up to delta)."""
    return complex(spectrum.delta * (u @ np.conj(v)))


@dataclass
class PairingReport:
    c: list  # per block array of c_{n,j}
    unweighted: np.ndarray  # int phi_n^2 dr with phi normalized in the 1/r norm
    unweighted_ratio: np.ndarray  # |int phi^2 dr| / int |phi|^2 dr
    inf_abs: float


def pairing_constants(spectrum, quad: GaussLegendre | None = None) -> PairingReport:
    quad = quad or GaussLegendre(panels=max(64, spectrum.system.N), order=16)
    t, wt = quad.nodes(0.0, math.pi, spectrum.problem.t_breaks)
    jac = spectrum.delta * spectrum.problem.r_of_t(t)  # dr = delta r dt
    Bas = spectrum.system.basis(t)
    uw, ratio = [], []
    for b in spectrum.blocks:
        f = b.phi_chain[0] @ Bas
        s2 = np.sum(f * f * jac * wt)
        a2 = np.sum(np.abs(f) ** 2 * jac * wt)
        uw.append(s2)
        ratio.append(abs(s2) / a2)
    cs = [b.pairing for b in spectrum.blocks]
    inf_abs = float(min(np.abs(c).min() for c in cs)) if cs else float("nan")
    return PairingReport(cs, np.array(uw), np.array(ratio), inf_abs)


def biorthogonality_defect(spectrum, count: int = 30) -> float:
    """max over n != m of |<phi_n, chi_m>_{1/r}| for the leading eigenvectors, each unit in the 1/r norm."""
    blocks = spectrum.blocks[:count]
    V = np.array([b.phi_chain[0] / np.linalg.norm(b.phi_chain[0]) for b in blocks])
    G = np.abs(V @ V.T)  # <phi_n, conj(phi_m)> = phi_n^T phi_m up to the common factor delta
    np.fill_diagonal(G, 0.0)
    return float(G.max()) if len(blocks) > 1 else 0.0


def biorthogonal_expansion(spectrum, d: np.ndarray, count: int | None = None) -> np.ndarray:
    """Coefficients a_n = <g, chi_n>_{1/r} / c_n of g with transformed coefficients d (semisimple modes)."""
    blocks = spectrum.blocks[:count] if count else spectrum.blocks
    return np.array([spectrum.delta * (d @ b.phi_chain[0]) / b.pairing[0] for b in blocks])


# ---------------------------------------------------------------------------
# Gram biorthogonalization


def biorthogonalize_block(X: np.ndarray, Yp: np.ndarray, inner: Callable | None = None,
                          cond_max: float = 1e12) -> np.ndarray:
    """Columns x'_j = sum_k beta_kj y'_k with (x_i, x'_j) = delta_ij, beta = conj(G)^{-1}, G_ij = (x_i, y'_j)."""
    X = np.atleast_2d(np.asarray(X, complex))
    Yp = np.atleast_2d(np.asarray(Yp, complex))
    if inner is None:
        G = X.T @ Yp.conj()
    else:
        m = X.shape[1]
        G = np.array([[inner(X[:, i], Yp[:, j]) for j in range(m)] for i in range(m)])
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > cond_max:
        raise SolverError(f"singular Gram matrix (condition {cond:.3e}): incomplete root-space basis")
    beta = np.linalg.inv(np.conj(G))
    return Yp @ beta


# ---------------------------------------------------------------------------
# Bari diagnostics


@dataclass
class BariReport:
    n: np.ndarray
    l2_terms: np.ndarray
    h1_terms: np.ndarray
    h1_normalized_terms: np.ndarray
    l2_partial: np.ndarray
    h1_partial: np.ndarray
    h1_normalized_partial: np.ndarray
    ratio: np.ndarray  # lambda_t_n / mu_n
    permutation: np.ndarray  # matched cosine index (0-based) per mode
    ambiguous: list


def bari_diagnostics(spectrum, count: int | None = None) -> BariReport:
    """Partial sums of ||psi_m - phi_n||^2 over modes matched by maximal overlap."""
    sys = spectrum.system
    blocks = [b for b in spectrum.blocks if b.J == 1]
    count = min(count or spectrum.n_trusted, len(blocks))
    blocks = blocks[:count]
    Vn = np.array([b.phi_chain[0] / np.linalg.norm(b.phi_chain[0]) for b in blocks])  # L2(0,pi) unit
    ov = np.abs(Vn[:, : sys.N])
    rows, cols = linear_sum_assignment(-ov)
    perm = np.empty(count, int)
    perm[rows] = cols
    ambiguous = []
    for i in range(count):
        o = np.sort(ov[i])[::-1]
        if o[1] > 0.9 * o[0]:
            ambiguous.append(i + 1)
    A = sys.matA
    l2, h1, h1n = [], [], []
    for i in range(count):
        m = perm[i]
        v = Vn[i] * np.conj(Vn[i, m]) / abs(Vn[i, m])
        e = np.zeros(sys.dim)
        e[m] = 1.0
        d = e - v
        l2.append(float(np.sum(np.abs(d) ** 2)))
        h1.append(float(np.sum(A * np.abs(d) ** 2) / A[m]))
        # H1-normalized: psi_m / sqrt(mu_m) against phi / ||phi||_H1
        vn = v / math.sqrt(float(np.sum(A * np.abs(v) ** 2)))
        dn = e / math.sqrt(A[m]) - vn
        h1n.append(float(np.sum(A * np.abs(dn) ** 2)))
    n = np.arange(1, count + 1)
    mu = (n - 1.0) ** 2 + 1.0
    ratio = np.array([b.lam_t for b in blocks]) / mu
    l2, h1, h1n = map(np.array, (l2, h1, h1n))
    return BariReport(n, l2, h1, h1n, np.cumsum(l2), np.cumsum(h1), np.cumsum(h1n), ratio, perm, ambiguous)
