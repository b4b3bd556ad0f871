"""Transversal modes: enriched cosine Galerkin solver and a shooting oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.special import polygamma

from .core import (DEFAULT_TOL, ConfigError, GaussLegendre, SolverError, ToleranceSet,
                   TransformedProblem, WaveguideConfig, transform_radial)
from .structure import JordanBlock, detect_jordan_blocks


def cosine_norms(N: int) -> np.ndarray:
    return np.where(np.arange(N) == 0, math.sqrt(1 / math.pi), math.sqrt(2 / math.pi))


@dataclass
class GalerkinSystem:
    """Galerkin matrices of the forms a~ and b~.

    The first N basis functions are the L2(0, pi)-orthonormal cosines
    psi_n = sqrt(2/pi) cos((n-1)t).  When ``enrich`` is set one more function is
    appended: g = t^2/(2 pi) with its cosine part removed, normalized.  It carries
    the derivative jump at t = pi that the cosines cannot represent, which lifts
    the otherwise O(1/N) accuracy of the Robin condition.  The enlarged basis is
    still orthonormal and a~ stays diagonal in it.
    """

    problem: TransformedProblem
    N: int
    matA: np.ndarray
    matB: np.ndarray
    enrich: bool
    gk: Optional[np.ndarray] = None
    g_norm: float = 1.0

    @property
    def dim(self) -> int:
        return self.matA.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.matA).astype(complex) + self.matB

    @property
    def mu(self) -> np.ndarray:
        return self.matA[: self.N]

    def basis(self, t, deriv: int = 0) -> np.ndarray:
        """Basis values (dim x len(t)); deriv in {0, 1, 2}."""
        t = np.atleast_1d(np.asarray(t, float))
        m = np.arange(self.N)
        nm = cosine_norms(self.N)[:, None]
        if deriv == 0:
            psi = nm * np.cos(np.outer(m, t))
            g = t * t / (2 * math.pi)
        elif deriv == 1:
            psi = -nm * m[:, None] * np.sin(np.outer(m, t))
            g = t / math.pi
        elif deriv == 2:
            psi = -nm * (m * m)[:, None] * np.cos(np.outer(m, t))
            g = np.full_like(t, 1 / math.pi)
        else:
            raise ValueError("deriv must be 0, 1 or 2")
        if not self.enrich:
            return psi
        gp = (g - self.gk @ psi) / self.g_norm
        return np.vstack([psi, gp[None, :]])

    def evaluate(self, coeffs, t, deriv: int = 0):
        return np.asarray(coeffs) @ self.basis(t, deriv)


def assemble_galerkin(problem: TransformedProblem, N: int, enrich: bool = True) -> GalerkinSystem:
    if N < 2:
        raise ConfigError("Galerkin dimension must be >= 2")
    m = np.arange(N)
    nm = cosine_norms(N)
    Q = problem.q_moments(2 * N - 2)
    Mi, Ni = np.meshgrid(m, m, indexing="ij")
    E = 0.5 * (Q[np.abs(Mi - Ni)] + Q[Mi + Ni]) * np.outer(nm, nm)
    endv = nm * (-1.0) ** m
    imp = problem.imp_coeff
    B = -E + imp * np.outer(endv, endv)
    B = 0.5 * (B + B.T)
    A = m.astype(float) ** 2 + 1.0
    if not enrich:
        return GalerkinSystem(problem, N, A, B.astype(complex), False)

    # enrichment g = t^2/(2 pi): cosine coefficients and tail sums in closed form
    gk = np.empty(N)
    gk[0] = math.sqrt(1 / math.pi) * math.pi**2 / 6
    gk[1:] = math.sqrt(2 / math.pi) * (-1.0) ** m[1:] / m[1:] ** 2
    nrm2 = (2 / math.pi) * polygamma(3, N) / 6
    g_pi = (2 / math.pi) * polygamma(1, N)
    a_gg = (2 / math.pi) * (polygamma(1, N) + polygamma(3, N) / 6)

    quad = GaussLegendre(panels=max(64, N), order=32)
    t, w = quad.nodes(0.0, math.pi, problem.t_breaks)
    psi = nm[:, None] * np.cos(np.outer(m, t))
    q = problem.q_coeff(t)
    g = t * t / (2 * math.pi)
    qg_psi = psi @ (q * g * w)
    b_g_psi = -qg_psi + imp * (math.pi / 2) * endv - B @ gk
    gperp = g - gk @ psi
    b_gg = -np.sum(q * gperp * gperp * w) + imp * g_pi**2

    s = math.sqrt(nrm2)
    Bfull = np.zeros((N + 1, N + 1), complex)
    Bfull[:N, :N] = B
    Bfull[:N, N] = Bfull[N, :N] = b_g_psi / s
    Bfull[N, N] = b_gg / nrm2
    Afull = np.concatenate([A, [a_gg / nrm2]])
    return GalerkinSystem(problem, N, Afull, Bfull, True, gk=gk, g_norm=s)


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class Eigenpair:
    lambda_t: complex
    lam: complex
    beta: complex
    coeffs: np.ndarray
    n: int
    j: int
    J: int


def beta_from_lambda(lam) -> np.ndarray | complex:
    """beta = sqrt(-lambda) on the branch Im(beta) > 0."""
    b = np.sqrt(-np.asarray(lam, complex))
    b = np.where(b.imag < 0, -b, b)
    # purely real beta (selfadjoint case): choose the positive real root
    b = np.where((b.imag == 0) & (b.real < 0), -b, b)
    return b if b.ndim else complex(b)


@dataclass
class Spectrum:
    blocks: list
    system: GalerkinSystem
    problem: TransformedProblem
    config: Optional[WaveguideConfig]
    n_trusted: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.system.dim

    @property
    def delta(self) -> float:
        return self.problem.delta

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([b.lam for b in self.blocks])

    @property
    def lambdas_t(self) -> np.ndarray:
        return np.array([b.lam_t for b in self.blocks])

    @property
    def betas(self) -> np.ndarray:
        return np.array([b.beta for b in self.blocks])

    @property
    def chain_lengths(self) -> np.ndarray:
        return np.array([b.J for b in self.blocks])

    @property
    def trusted(self) -> list:
        return self.blocks[: self.n_trusted]

    def truncated(self, count: int) -> "Spectrum":
        if count > len(self.blocks):
            raise SolverError("not enough modes")
        return Spectrum(self.blocks[:count], self.system, self.problem, self.config,
                        min(count, self.n_trusted), dict(self.diagnostics))

    def eigenpairs(self) -> list:
        out = []
        for n, b in enumerate(self.blocks, start=1):
            for j in range(1, b.J + 1):
                out.append(Eigenpair(b.lam_t, b.lam, b.beta, b.phi_chain[j - 1], n, j, b.J))
        return out

    def coeffs(self, n: int, j: int = 1) -> np.ndarray:
        """Coefficient vector of phi_{n,j} (1-based n)."""
        return self.blocks[n - 1].phi_chain[j - 1]

    def phi(self, n: int, r, j: int = 1, deriv: int = 0):
        """phi_{n,j}(r) or its r-derivative."""
        return self.eval_coeffs(self.coeffs(n, j), r, deriv)

    def eval_coeffs(self, c, r, deriv: int = 0):
        return np.asarray(c) @ self._radial_basis(r, deriv)

    def _radial_basis(self, r, deriv: int):
        # d/dr = (delta r)^-1 d/dt and d2/dr2 = (d2/dt2 - delta d/dt) / (delta r)^2
        t = self.problem.t_of_r(r)
        dr = self.delta * np.atleast_1d(np.asarray(self.problem.r_of_t(t)))
        if deriv == 0:
            return self.system.basis(t)
        if deriv == 1:
            return self.system.basis(t, 1) / dr
        if deriv == 2:
            return (self.system.basis(t, 2) - self.delta * self.system.basis(t, 1)) / dr**2
        raise ValueError("deriv must be 0, 1 or 2")

    def mode_matrix(self, r, deriv: int = 0, modes: Sequence[tuple] | None = None):
        """Rows phi_{n,j}(r) for the given (n, j) list (default: all chain vectors of all blocks)."""
        if modes is None:
            modes = [(n, j) for n, b in enumerate(self.blocks, 1) for j in range(1, b.J + 1)]
        C = np.array([self.coeffs(n, j) for n, j in modes])
        return C @ self._radial_basis(r, deriv)


def _phase_fix(system: GalerkinSystem, c: np.ndarray) -> complex:
    ends = system.basis([math.pi, 0.0])
    v = c @ ends[:, 0]
    if abs(v) < 1e-8 * np.linalg.norm(c):
        v = c @ ends[:, 1]
    if abs(v) == 0:
        return 1.0
    return np.conj(v) / abs(v)


def solve_transformed(problem: TransformedProblem, N: int, enrich: bool = True,
                      tol: ToleranceSet = DEFAULT_TOL, config: WaveguideConfig | None = None,
                      count: int | None = None) -> Spectrum:
    """Eigensolve the Galerkin system of a transformed problem and assemble blocks."""
    system = assemble_galerkin(problem, N, enrich)
    M = system.matrix
    try:
        w, V = sla.eig(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"dense eigensolve failed: {exc}") from exc
    mnorm = np.linalg.norm(M, 2)
    V = V / np.linalg.norm(V, axis=0)
    berr = np.linalg.norm(M @ V - V * w, axis=0) / mnorm
    if berr.max() > tol.backward_error:
        raise SolverError(f"eigensolver backward error {berr.max():.2e} exceeds {tol.backward_error:.0e}")

    raw_blocks, report = detect_jordan_blocks(M, w, V, tol)
    delta = problem.delta
    blocks = []
    for rb in raw_blocks:
        lam = rb.lam_t / delta**2
        # chain relation for T = M/delta^2: phi_j = delta^{2(j-1)} v_j
        chain = [v * delta ** (2 * j) for j, v in enumerate(rb.phi_chain)]
        s = 1.0 / (math.sqrt(delta) * np.linalg.norm(chain[0]))
        s *= _phase_fix(system, chain[0])
        chain = [s * v for v in chain]
        pairing = np.array([delta * (chain[j] @ chain[rb.J - 1 - j]) for j in range(rb.J)])
        blocks.append(JordanBlock(lam_t=rb.lam_t, lam=lam, beta=beta_from_lambda(lam), J=rb.J,
                                  phi_chain=chain, chi_chain=[np.conj(v) for v in chain],
                                  pairing=pairing, indices=rb.indices))
    blocks.sort(key=lambda b: (b.lam.real, b.lam.imag))
    n_trusted = system.N // 2
    if count is not None and count > n_trusted:
        raise SolverError(f"truncation guard: {count} modes requested but only {n_trusted} trusted at N={system.N}")
    diag = {"backward_error": float(berr.max()), "jordan": report, "N": system.N, "enrich": enrich}
    return Spectrum(blocks, system, problem, config, n_trusted, diag)


def default_dimension(count: int | None) -> int:
    return max(64, 4 * (count or 0))


def solve_modes(config: WaveguideConfig, N: int | None = None, count: int | None = None,
                enrich: bool = True, tol: ToleranceSet = DEFAULT_TOL) -> Spectrum:
    """Modes of the transversal operator sorted by ascending Re(lambda)."""
    N = N or default_dimension(count)
    problem = transform_radial(config)
    return solve_transformed(problem, N, enrich, tol, config=config, count=count)


def straight_guide_problem(varsigma: complex, omega: float) -> TransformedProblem:
    """-phi'' = lambda phi on (0,1), phi'(0)=0, phi'(1) + i omega varsigma phi(1) = 0.

    Mapped to (0, pi) by x = t/pi: lambda = pi^2 lambda_t, i.e. delta = 1/pi.
    """
    return TransformedProblem(delta=1 / math.pi, imp_coeff=1j * omega * complex(varsigma) / math.pi,
                              a=0.0, b=0.0, label="straight")


# ---------------------------------------------------------------------------
# reporting convention of the reference table


def table_eigenvalue(lam, config: WaveguideConfig):
    """conj(lambda)/r_mid^2 with r_mid = (r1 + r2)/2.

    The reference table lists eigenvalues with the opposite sign of the
    imaginary part and scaled by the squared mid radius.
    """
    rmid = 0.5 * (config.r1 + config.r2)
    return np.conj(np.asarray(lam)) / rmid**2


def align_to_reference(computed: np.ndarray, reference: np.ndarray, max_offset: int = 5) -> tuple[int, float]:
    """Offset k minimizing the max relative error of computed[k:k+len(ref)] vs ref."""
    best = (0, np.inf)
    for k in range(0, max_offset + 1):
        seg = computed[k:k + len(reference)]
        if len(seg) < len(reference):
            break
        err = np.max(np.abs(seg - reference) / np.abs(reference))
        if err < best[1]:
            best = (k, float(err))
    return best


# ---------------------------------------------------------------------------
# shooting oracle


@dataclass
class ShootingResult:
    lam: complex
    residual: float  # |phi'(r2) + i omega varsigma phi(r2)| for the normalized phi
    iterations: int
    config: WaveguideConfig
    _pieces: list
    _scale: complex

    @property
    def beta(self) -> complex:
        return beta_from_lambda(self.lam)

    def _eval(self, r, comp):
        r = np.atleast_1d(np.asarray(r, float))
        out = np.empty(r.shape, complex)
        for (lo, hi, sol) in self._pieces:
            m = (r >= lo) & (r <= hi)
            if m.any():
                out[m] = sol(r[m])[comp]
        return out * self._scale

    def phi(self, r):
        return self._eval(r, 0)

    def dphi(self, r):
        r = np.atleast_1d(np.asarray(r, float))
        return self._eval(r, 1) / r


def _shoot(config: WaveguideConfig, lam: complex, rtol: float, dense: bool = False):
    w2 = config.omega**2
    prof = config.refr_profile

    def rhs(r, y):
        nr = prof(r)
        k = -(w2 * r * nr + lam / r)
        return np.array([y[1] / r, k * y[0], y[3] / r, k * y[2] - y[0] / r])

    cuts = [config.r1] + [b for b in prof.breakpoints() if config.r1 < b < config.r2] + [config.r2]
    y = np.array([1.0, 0.0, 0.0, 0.0], complex)
    pieces = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=rtol, atol=1e-14 * max(1.0, np.abs(y).max()),
                        dense_output=dense)
        if not sol.success:
            raise SolverError(f"shooting integration failed: {sol.message}")
        y = sol.y[:, -1]
        if dense:
            pieces.append((lo, hi, sol.sol))
    return y, pieces


def shooting_refine(config: WaveguideConfig, lambda_seed: complex, tol: ToleranceSet = DEFAULT_TOL,
                    maxiter: int | None = None) -> ShootingResult:
    """Newton on F(lambda) = phi'(r2) + i omega varsigma phi(r2) with phi(r1)=1, phi'(r1)=0."""
    maxiter = maxiter or tol.newton_maxiter
    r2 = config.r2
    iw = 1j * config.omega * config.varsigma
    lam = complex(lambda_seed)
    F = np.inf
    for it in range(1, maxiter + 1):
        y, _ = _shoot(config, lam, tol.rk_tol)
        F = y[1] / r2 + iw * y[0]
        dF = y[3] / r2 + iw * y[2]
        step = F / dF
        lam = lam - step
        if abs(step) <= 1e-15 * max(1.0, abs(lam)):
            break
    else:
        it = maxiter
    y, pieces = _shoot(config, lam, tol.rk_tol, dense=True)
    F = y[1] / r2 + iw * y[0]
    quad = GaussLegendre(panels=64, order=16)
    rr, ww = quad.nodes(config.r1, config.r2, config.refr_profile.breakpoints())
    res = ShootingResult(lam, 0.0, it, config, pieces, 1.0)
    vals = res.phi(rr)
    nrm = math.sqrt(float(np.sum(np.abs(vals) ** 2 / rr * ww)))
    end = res.phi([r2])[0]
    phase = np.conj(end) / abs(end) if abs(end) > 1e-8 * nrm else 1.0
    res._scale = phase / nrm
    res.residual = float(abs(F) / nrm)
    if not res.residual < tol.shoot_residual:
        raise SolverError(f"shooting Newton did not converge: residual {res.residual:.3e} after {it} iterations")
    return res


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceTable:
    N_list: list
    lambdas: np.ndarray  # (len(N_list), count)
    increments: np.ndarray  # (len(N_list)-1, count)


def convergence_study(config: WaveguideConfig, N_list: Sequence[int], count: int = 20,
                      enrich: bool = True) -> ConvergenceTable:
    N_list = list(N_list)
    if N_list != sorted(N_list):
        raise ValueError("N_list must be ascending")
    rows = []
    for N in N_list:
        spec = solve_modes(config, N=N, enrich=enrich)
        rows.append(spec.lambdas[:count])
    lam = np.array(rows)
    return ConvergenceTable(N_list, lam, np.abs(np.diff(lam, axis=0)))
