"""Rates, rate sums, subordination constant and the eigenvector perturbation series.

The unperturbed operator has eigenvalues mu_k = (k-1)^2 + 1 with orthonormal
cosines psi_k; the perturbation is the form b~.  Eigenvector corrections
phi_n^(k) are evaluated from their residue expansions, i.e. nested sums over
indices different from n with denominators mu_n - mu_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import TransformedProblem
from .eigensolver import assemble_galerkin


@dataclass(frozen=True)
class RateParams:
    omega_exp: float = 0.0
    gamma_sep: float = 2.0
    kappa_sep: float = 1.0
    alpha: float = 0.0

    def check(self, need_tau: bool = False):
        if self.gamma_sep <= 0:
            raise ValueError("gamma must be positive")
        if self.omega_exp + self.gamma_sep <= 1:
            raise ValueError("need omega + gamma > 1")
        if need_tau and self.omega_exp + 2 * self.gamma_sep <= 1:
            raise ValueError("need omega + 2 gamma > 1")
        if 2 * self.alpha + self.gamma_sep <= 1:
            raise ValueError("need 2 alpha + gamma > 1")


def sigma_rate(w: float, g: float, n) -> np.ndarray:
    n = np.asarray(n, float)
    if w <= 1:
        return n ** (-w - g + 1) * np.log(math.e * n)
    return n ** (-g)


def tau_rate(w: float, g: float, n) -> np.ndarray:
    n = np.asarray(n, float)
    if w <= 2:
        return n ** (-(w + 2 * g - 2))
    return n ** (-2 * g)


def sigma_tau(params: RateParams, n):
    params.check(need_tau=True)
    return sigma_rate(params.omega_exp, params.gamma_sep, n), tau_rate(params.omega_exp, params.gamma_sep, n)


def mu_seq(k) -> np.ndarray:
    k = np.asarray(k, float)
    return (k - 1.0) ** 2 + 1.0


@dataclass
class RateSums:
    n: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    sigma: np.ndarray
    tau: np.ndarray

    @property
    def ratio1(self):
        return self.S1 / self.sigma

    @property
    def ratio2(self):
        return self.S2 / self.tau


def _rate_tail(M: int, n: int, w: float) -> float:
    # integral_M^inf x^-w / (x^2 - n^2) dx, bounded using x^2 - n^2 >= x^2 (1 - (n/M)^2)
    return M ** (-w - 1) / ((w + 1) * (1 - (n / M) ** 2))


def rate_sums(params: RateParams, n_list: Sequence[int], M_terms: int | None = None) -> RateSums:
    """S1(n) = sum_{m != n} m^-w / |mu_m - mu_n| and S2 with the squared gap.

    Without an explicit M_terms the cutoff starts at 10 * max(n) and doubles
    until the tail estimate is below 1% of every S1.
    """
    params.check(need_tau=True)
    n_arr = np.asarray(list(n_list), int)
    nmax = int(n_arr.max())
    w = params.omega_exp
    auto = M_terms is None
    M = 10 * nmax if auto else int(M_terms)
    if M < 10 * nmax:
        raise ValueError("M_terms must be at least 10 * max(n)")
    while True:
        m = np.arange(1, M + 1, dtype=float)
        mu_m = mu_seq(m)
        S1, S2, bad = [], [], None
        for n in n_arr:
            mask = m != n
            gap = np.abs(mu_m[mask] - mu_seq(n))
            s1 = float(np.sum(m[mask] ** -w / gap))
            S1.append(s1)
            S2.append(float(np.sum(m[mask] ** -w / gap ** 2)))
            if _rate_tail(M, n, w) > 0.01 * s1:
                bad = (n, _rate_tail(M, n, w), s1)
        if bad is None:
            break
        if not auto or M > 10 ** 8:
            raise ValueError(f"cutoff {M} too small at n={bad[0]}: tail estimate {bad[1]:.3e} exceeds 1% of S1={bad[2]:.3e}")
        M *= 2
    sig, tau = sigma_tau(params, n_arr)
    return RateSums(n_arr, np.array(S1), np.array(S2), sig, tau)


def subordination_constant(problem: TransformedProblem, N: int) -> float:
    """M_b = max |b~(psi_m, psi_n)| over m, n <= N (alpha = 0)."""
    B = assemble_galerkin(problem, N, enrich=False).matB
    return float(np.abs(B).max())


@dataclass
class SeriesResult:
    n: int
    coeffs: list  # phi_n^(k), k = 1..k_max, cosine coefficients (0-based index)
    l2_norms: np.ndarray
    h1_scaled_norms: np.ndarray  # || mu_n^{-1/2} A^{1/2} phi_n^(k) ||
    tail_fraction: np.ndarray


def perturbation_series(problem: TransformedProblem, n: int, k_max: int = 3, index_cutoff: int | None = None,
                        B: np.ndarray | None = None) -> SeriesResult:
    """phi_n^(k) from the nested residue sums over j != n, truncated at index_cutoff (1-based n)."""
    index_cutoff = index_cutoff or 5 * n
    if index_cutoff < n:
        raise ValueError("index_cutoff must be >= n")
    if B is None:
        B = assemble_galerkin(problem, index_cutoff, enrich=False).matB
    B = B[:index_cutoff, :index_cutoff]
    j = np.arange(1, index_cutoff + 1)
    mu = mu_seq(j)
    den = mu[n - 1] - mu
    inv = np.zeros(index_cutoff)
    mask = j != n
    inv[mask] = 1.0 / den[mask]
    v = np.zeros(index_cutoff, complex)
    v[n - 1] = 1.0
    coeffs, l2, h1, tails = [], [], [], []
    for _ in range(k_max):
        # (phi^(k), psi_j) = sum_i (phi^(k-1), psi_i) b(psi_i, psi_j) / (mu_n - mu_j)
        v = (v @ B) * inv
        coeffs.append(v.copy())
        l2.append(np.linalg.norm(v))
        h1.append(math.sqrt(float(np.sum(mu * np.abs(v) ** 2) / mu[n - 1])))
        # share of the norm in the last fifth of the index range signals truncation
        cut = int(0.8 * index_cutoff)
        tails.append(np.linalg.norm(v[cut:]) / max(np.linalg.norm(v), 1e-300))
    return SeriesResult(n, coeffs, np.array(l2), np.array(h1), np.array(tails))


def first_order_eigen_discrepancy(lambda_t: np.ndarray, B: np.ndarray, n_list: Sequence[int]):
    """|lambda_t_n - mu_n - b(psi_n, psi_n)| and the second-order bound sum |B_mn|^2 / |mu_m - mu_n|."""
    out = []
    K = B.shape[0]
    mu = mu_seq(np.arange(1, K + 1))
    for n in n_list:
        mask = np.arange(K) != n - 1
        bound = np.sum(np.abs(B[n - 1, mask]) ** 2 / np.abs(mu[mask] - mu[n - 1]))
        out.append((n, abs(lambda_t[n - 1] - mu[n - 1] - B[n - 1, n - 1]), bound))
    return np.array(out)


def empirical_n0(lambda_t: np.ndarray, kappa: float = 1.0, gamma: float = 2.0) -> int:
    """Smallest n such that every computed lambda_t_m (m >= n) lies in its rectangle Pi_m."""
    n = np.arange(1, len(lambda_t) + 1)
    mu = mu_seq(n)
    lo = mu - 0.5 * kappa * np.maximum(n - 1, 0) ** (gamma - 1)
    hi = mu + 0.5 * kappa * n ** (gamma - 1)
    h = 0.5 * kappa * n ** (gamma - 1)
    inside = (lambda_t.real >= lo) & (lambda_t.real < hi) & (np.abs(lambda_t.imag) < h)
    bad = np.nonzero(~inside)[0]
    return int(bad[-1] + 2) if len(bad) else 1


@dataclass
class SeriesComparison:
    n: np.ndarray
    deviation: np.ndarray  # ||phi_n - psi_n||, phi_n scaled so (phi_n, psi_n) = 1
    first_order: np.ndarray  # ||phi_n^(1)||
    remainder: np.ndarray  # ||(phi_n - psi_n) - phi_n^(1)||
    series_norms: np.ndarray  # (len(n), k_max)
    h1_scaled: np.ndarray
    tail_fraction: np.ndarray

    @property
    def remainder_ratio(self) -> np.ndarray:
        return self.remainder / self.first_order ** 2


def compare_with_galerkin(spectrum, n_list: Sequence[int], k_max: int = 3, B: np.ndarray | None = None) -> SeriesComparison:
    """Galerkin eigenvectors against the first-order series term, in cosine coefficients.

    Requires the unenriched form matrix to cover 5 * max(n) indices; it is
    assembled once at the Galerkin dimension unless B is given.
    """
    n_list = list(n_list)
    if B is None:
        B = assemble_galerkin(spectrum.problem, spectrum.system.N, enrich=False).matB
    rows = []
    for n in n_list:
        s = perturbation_series(spectrum.problem, n, k_max, index_cutoff=min(5 * n, B.shape[0]), B=B)
        v = spectrum.blocks[n - 1].phi_chain[0]
        v = v / v[n - 1]
        d = v.copy()
        d[n - 1] -= 1.0
        p1 = np.zeros_like(d)
        p1[: len(s.coeffs[0])] = s.coeffs[0]
        rows.append((np.linalg.norm(d), s.l2_norms[0], np.linalg.norm(d - p1), s.l2_norms, s.h1_scaled_norms,
                     s.tail_fraction))
    dev, first, rem, norms, h1, tail = zip(*rows)
    return SeriesComparison(np.array(n_list), np.array(dev), np.array(first), np.array(rem), np.array(norms),
                            np.array(h1), np.array(tail))
