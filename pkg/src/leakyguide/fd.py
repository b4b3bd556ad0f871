"""Second-order finite-volume discretization of the polar Helmholtz problem.

Equation (multiplied by r):
    -(r u_r)_r - r^-1 u_thth - omega^2 r n(r, th) u = r f
on (r1, r2) x (th_a, th_b), vertex-centered, with
    u = d(r)                      at th = th_a
    u_r = a(th)                   at r = r1
    u_r + i omega s(th) u = b(th) at r = r2
    r^-1 u_th = DtN u + e(r)      at th = th_b   (or = e(r) without DtN)
The DtN block couples the whole r-line at th_b densely through the modal
expansion of the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ConfigError, SolverError


def _zero(*args):
    return np.zeros(np.broadcast(*args).shape if len(args) > 1 else np.shape(args[0]), complex)


@dataclass
class FDProblem:
    r1: float
    r2: float
    theta_a: float
    theta_b: float
    omega: float
    n_fn: Callable  # n(r, th)
    varsigma_fn: Callable  # s(th)
    f: Callable = _zero  # f(r, th)
    dirichlet: Callable = _zero  # d(r)
    neumann_r1: Callable = _zero  # a(th)
    impedance_r2: Callable = _zero  # b(th)
    outlet_data: Callable = _zero  # e(r)
    dtn_matrix: Optional[Callable] = None  # r-grid -> dense matrix of u(., th_b) |-> DtN u


@dataclass
class FDSolution:
    r: np.ndarray
    theta: np.ndarray
    U: np.ndarray  # (len(r), len(theta)), Dirichlet column included
    diagnostics: dict = field(default_factory=dict)

    def trapezoid_weights(self):
        wr = np.full(len(self.r), self.r[1] - self.r[0])
        wr[[0, -1]] *= 0.5
        wt = np.full(len(self.theta), self.theta[1] - self.theta[0])
        wt[[0, -1]] *= 0.5
        return wr, wt

    def l2_norm(self, V=None) -> float:
        V = self.U if V is None else V
        wr, wt = self.trapezoid_weights()
        return math.sqrt(float(np.sum(np.abs(V) ** 2 * (wr * self.r)[:, None] * wt[None, :])))


def dense_dtn_matrix(spectrum, count: int) -> Callable:
    """Factory r-grid -> matrix M with (M u)_i = DtN(u)(r_i) via trapezoid pairing of the trace."""
    from .dtn import dtn_table

    def build(r):
        r = np.asarray(r, float)
        w = np.full(len(r), r[1] - r[0])
        w[[0, -1]] *= 0.5
        M = np.zeros((len(r), len(r)), complex)
        for b in spectrum.blocks[:count]:
            J = b.J
            Phi = np.array([spectrum.eval_coeffs(v, r) for v in b.phi_chain])  # (J, nr)
            D = np.array(dtn_table(complex(b.beta), J), complex)
            # p_j = sum_i w_i u_i phi_{J+1-j}(r_i) / r_i / c_j
            P = np.array([Phi[J - 1 - j] * w / r / b.pairing[j] for j in range(J)])
            M += (Phi.T / r[:, None]) @ D.T @ P
        return M

    return build


def solve_fd(prob: FDProblem, Nr: int, Ntheta: int, check_resolution: bool = True) -> FDSolution:
    if Nr < 16 or Ntheta < 16:
        raise ConfigError("grid sizes must be at least 16")
    r = np.linspace(prob.r1, prob.r2, Nr + 1)
    th = np.linspace(prob.theta_a, prob.theta_b, Ntheta + 1)
    hr, ht = r[1] - r[0], th[1] - th[0]
    nmax = float(np.max(np.abs(prob.n_fn(r[:, None], th[None, :]))))
    kr = prob.omega * math.sqrt(nmax) * hr
    if check_resolution and kr > math.pi / 2:
        raise ConfigError(f"radial grid too coarse for omega: omega*sqrt(n)*h_r = {kr:.3f} > pi/2")
    nr, nt = Nr + 1, Ntheta  # unknown columns th_1..th_N
    idx = np.arange(nr * nt).reshape(nr, nt)
    R, TH = np.meshgrid(r, th[1:], indexing="ij")
    vr = np.full(nr, hr)
    vr[[0, -1]] *= 0.5
    vt = np.full(nt, ht)
    vt[-1] *= 0.5
    VR, VT = vr[:, None], vt[None, :]
    rows, cols, vals = [], [], []

    def add(i_mask_rows, i_mask_cols, v):
        rows.append(i_mask_rows.ravel())
        cols.append(i_mask_cols.ravel())
        vals.append(np.broadcast_to(v, i_mask_rows.shape).ravel().astype(complex))

    rhs = (R * prob.f(R, TH) * VR * VT).astype(complex)
    diag = -prob.omega**2 * R * prob.n_fn(R, TH) * VR * VT
    diag = diag.astype(complex)

    # radial fluxes between i and i+1
    rh = 0.5 * (r[:-1] + r[1:])
    c = (rh / hr)[:, None] * VT  # (nr-1, nt)
    diag[:-1] += c
    diag[1:] += c
    add(idx[:-1], idx[1:], -c)
    add(idx[1:], idx[:-1], -c)
    # r1: -(F_{1/2} - r1 a) ; r2: -(r2 (b - i w s u) - F)
    rhs[0] += -prob.r1 * prob.neumann_r1(th[1:]) * vt
    s2 = prob.varsigma_fn(th[1:])
    diag[-1] += 1j * prob.omega * s2 * prob.r2 * vt
    rhs[-1] += prob.r2 * prob.impedance_r2(th[1:]) * vt

    # angular fluxes between k and k+1
    g = (vr / r)[:, None] / ht * np.ones((1, nt - 1))
    diag[:, :-1] += g
    diag[:, 1:] += g
    add(idx[:, :-1], idx[:, 1:], -g)
    add(idx[:, 1:], idx[:, :-1], -g)
    # Dirichlet column th_0 enters the first unknown column
    d0 = prob.dirichlet(r)
    diag[:, 0] += vr / r / ht
    rhs[:, 0] += vr / r / ht * d0
    # outlet: -(DtN u + e) * vr
    rhs[:, -1] += vr * prob.outlet_data(r)
    if prob.dtn_matrix is not None:
        Md = prob.dtn_matrix(r)
        I, K = np.meshgrid(idx[:, -1], idx[:, -1], indexing="ij")
        add(I, K, -vr[:, None] * Md)

    add(idx, idx, diag)
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nr * nt, nr * nt))
    try:
        lu = spla.splu(A)
        x = lu.solve(rhs.ravel())
    except RuntimeError as exc:
        raise SolverError(f"singular finite-difference system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("singular finite-difference system")
    U = np.empty((nr, nt + 1), complex)
    U[:, 0] = d0
    U[:, 1:] = x.reshape(nr, nt)
    kt = prob.omega * math.sqrt(nmax) * prob.r2 * ht
    return FDSolution(r, th, U, {"omega_sqrt_n_hr": kr, "omega_sqrt_n_r2_htheta": kt, "unknowns": nr * nt})


# ---------------------------------------------------------------------------
# manufactured solution


@dataclass
class MMSResult:
    sizes: np.ndarray
    errors: np.ndarray
    orders: np.ndarray


def manufactured_problem(r1=1.0, r2=2.0, theta_b=1.5, omega=2.0, varsigma=0.7 + 0.3j,
                         alpha=1.3, kappa=2.1, n_fn=None):
    """u* = cos(alpha r) sin(kappa th) (1 + i r th / 4) with matching boundary data and load."""
    n_fn = n_fn or (lambda r, th: 1.0 + 0.2 * np.sin(r) * np.cos(th))

    def parts(r, th):
        A, Ar, Arr = np.cos(alpha * r), -alpha * np.sin(alpha * r), -alpha**2 * np.cos(alpha * r)
        S, St, Stt = np.sin(kappa * th), kappa * np.cos(kappa * th), -kappa**2 * np.sin(kappa * th)
        W = 1 + 0.25j * r * th
        Wr, Wt = 0.25j * th, 0.25j * r
        u = A * S * W
        ur = Ar * S * W + A * S * Wr
        urr = Arr * S * W + 2 * Ar * S * Wr
        ut = A * St * W + A * S * Wt
        utt = A * Stt * W + 2 * A * St * Wt
        return u, ur, urr, ut, utt

    def exact(r, th):
        return parts(r, th)[0]

    def f(r, th):
        u, ur, urr, ut, utt = parts(r, th)
        return -(urr + ur / r) - utt / r**2 - omega**2 * n_fn(r, th) * u

    prob = FDProblem(
        r1, r2, 0.0, theta_b, omega, n_fn, lambda th: np.full(np.shape(th), varsigma, complex), f=f,
        dirichlet=lambda r: exact(r, 0.0 * r),
        neumann_r1=lambda th: parts(r1, th)[1],
        impedance_r2=lambda th: parts(r2, th)[1] + 1j * omega * varsigma * parts(r2, th)[0],
        outlet_data=lambda r: parts(r, theta_b + 0 * r)[3] / r,
    )
    return prob, exact


def mms_study(sizes=(16, 32, 64), **kw) -> MMSResult:
    prob, exact = manufactured_problem(**kw)
    errs = []
    for n in sizes:
        sol = solve_fd(prob, n, n)
        E = sol.U - exact(sol.r[:, None], sol.theta[None, :])
        errs.append(sol.l2_norm(E) / sol.l2_norm(exact(sol.r[:, None], sol.theta[None, :])))
    errs = np.array(errs)
    sizes = np.array(sizes, float)
    orders = np.log(errs[:-1] / errs[1:]) / np.log(sizes[1:] / sizes[:-1])
    return MMSResult(sizes, errs, orders)
