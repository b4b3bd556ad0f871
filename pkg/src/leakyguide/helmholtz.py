"""Helmholtz problem on the bent guide by modal decomposition.

With u = sum_{n,j} p_{n,j}(th) phi_{n,j}(r) the PDE
    -(r u_r)_r - r^-1 u_thth - omega^2 r n u = r f
decouples into
    -p'' - beta^2 p = g/c - p_next,   p(0) = 0,   p'(L) - i beta p(L) = boundary data,
where g_{n,j}(th) = int r f phi_{n,J+1-j} dr.  Each 1D problem is solved with
the outgoing Green's function
    G(th, s) = sin(beta min) e^{i beta max} / beta
          = (e^{i beta (th + s)} - e^{i beta |th - s|}) / (2 i beta),
integrating a piecewise polynomial interpolant of the right-hand side against
the exponentials exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import comb

from .core import ConfigError, GaussLegendre, SolverError, WaveguideConfig, gamma_kappa
from .dtn import dtn_table
from .eigensolver import Spectrum, solve_modes
from .fd import FDProblem, FDSolution, dense_dtn_matrix, solve_fd

BETA_MIN = 1e-8


# ---------------------------------------------------------------------------
# exponential moments


def exp_moments(z, mmax: int) -> np.ndarray:
    """M_m(z) = int_0^1 e^{z(1-y)} y^m dy for m = 0..mmax; shape (mmax+1,) + z.shape."""
    z = np.asarray(z, complex)
    out = np.empty((mmax + 1,) + z.shape, complex)
    big = np.abs(z) >= mmax + 1
    if big.any():
        zb = z[big]
        m0 = (np.exp(zb) - 1.0) / zb
        out[0][big] = m0
        prev = m0
        for m in range(1, mmax + 1):
            prev = (m * prev - 1.0) / zb
            out[m][big] = prev
    small = ~big
    if small.any():
        zs = z[small]
        top = mmax + 40
        term = np.full(zs.shape, 1.0 / (top + 1), complex)
        acc = term.copy()
        for k in range(1, 80):
            term = term * zs / (k + top + 1)
            acc = acc + term
        cur = acc
        for m in range(top, 0, -1):
            cur = (zs * cur + 1.0) / m  # M_{m-1}
            if m - 1 <= mmax:
                out[m - 1][small] = cur
    return out


# ---------------------------------------------------------------------------
# panel grids on (0, L)


@dataclass
class PanelGrid:
    edges: np.ndarray
    order: int = 8

    def __post_init__(self):
        x, w = np.polynomial.legendre.leggauss(self.order)
        self._x = 0.5 * (x + 1.0)
        self._w = 0.5 * w
        V = np.vander(self._x, self.order, increasing=True)
        self._vinv_t = np.linalg.inv(V).T
        m = np.arange(self.order)
        R = comb(m[:, None], m[None, :]) * (-1.0) ** m[None, :]
        self._reflect = R  # coefficients in x -> coefficients in (1 - x)

    @property
    def panels(self) -> int:
        return len(self.edges) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def nodes(self) -> np.ndarray:
        return (self.edges[:-1, None] + self.widths[:, None] * self._x[None, :]).ravel()

    @property
    def weights(self) -> np.ndarray:
        return (self.widths[:, None] * self._w[None, :]).ravel()

    def locate(self, theta):
        theta = np.asarray(theta, float)
        k = np.clip(np.searchsorted(self.edges, theta, side="right") - 1, 0, self.panels - 1)
        tau = (theta - self.edges[k]) / self.widths[k]
        return k, tau


def build_panel_grid(L: float, hmax: float = 0.05, support: Optional[tuple] = None, hmax_far: float = 1.0,
                     order: int = 8, breaks: Sequence[float] = ()) -> PanelGrid:
    """Panels of width <= hmax on the support of the load and <= hmax_far elsewhere."""
    if L <= 0:
        raise ConfigError("theta_max must be positive")
    pts = {0.0, float(L)}
    if support is not None:
        pts.update(x for x in support if 0 < x < L)
    pts.update(float(x) for x in breaks if 0 < x < L)
    pts = sorted(pts)
    edges = [0.0]
    for a, b in zip(pts[:-1], pts[1:]):
        inside = support is None or (b > support[0] and a < support[1])
        h = hmax if inside else max(hmax, hmax_far)
        n = max(1, int(math.ceil((b - a) / h - 1e-12)))
        edges.extend(np.linspace(a, b, n + 1)[1:])
    return PanelGrid(np.array(edges), order)


# ---------------------------------------------------------------------------
# 1D outgoing problem


class GreenProfile:
    """p(th) = int_0^L G(th, s) h(s) ds + Gb G(th, L) for a piecewise polynomial h."""

    def __init__(self, beta: complex, grid: PanelGrid, h_nodes: np.ndarray, Gb: complex = 0.0):
        beta = complex(beta)
        if abs(beta) < BETA_MIN:
            raise SolverError(f"|beta| = {abs(beta):.2e} below threshold: ill-posed 1D problem")
        if beta.imag < 0:
            raise SolverError("beta must satisfy Im beta >= 0 (outgoing branch)")
        self.beta, self.grid, self.Gb = beta, grid, complex(Gb)
        self.L = float(grid.edges[-1])
        q = grid.order
        H = np.asarray(h_nodes, complex).reshape(grid.panels, q)
        self.C = H @ grid._vinv_t
        self.Ct = self.C @ grid._reflect
        D = grid.widths
        ib = 1j * beta
        M = exp_moments(ib * D, q - 1)  # (q, P)
        full1 = D * np.einsum("km,mk->k", self.C, M)
        full2 = D * np.einsum("km,mk->k", self.Ct, M)
        E = np.exp(ib * D)
        P = grid.panels
        self.I1s = np.zeros(P, complex)
        for k in range(P - 1):
            self.I1s[k + 1] = E[k] * self.I1s[k] + full1[k]
        self.I2e = np.zeros(P, complex)
        for k in range(P - 1, 0, -1):
            self.I2e[k - 1] = full2[k] + E[k] * self.I2e[k]
        self.I2_0 = full2[0] + E[0] * self.I2e[0]

    def h(self, theta) -> np.ndarray:
        k, tau = self.grid.locate(theta)
        pw = tau[None, :] ** np.arange(self.grid.order)[:, None]
        return np.einsum("tm,mt->t", self.C[k], pw)

    def __call__(self, theta, deriv: int = 0) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, float))
        g, b, L = self.grid, self.beta, self.L
        k, tau = g.locate(theta)
        D = g.widths[k]
        sig = 1.0 - tau
        mm = np.arange(g.order)[:, None]
        ib = 1j * b
        M1 = exp_moments(ib * tau * D, g.order - 1)
        M2 = exp_moments(ib * sig * D, g.order - 1)
        I1 = np.exp(ib * tau * D) * self.I1s[k] + tau * D * np.einsum("tm,mt->t", self.C[k], tau[None, :] ** mm * M1)
        I2 = sig * D * np.einsum("tm,mt->t", self.Ct[k], sig[None, :] ** mm * M2) + np.exp(ib * sig * D) * self.I2e[k]
        e0 = np.exp(ib * theta) * self.I2_0
        ep, em = np.exp(ib * (theta + L)), np.exp(ib * (L - theta))
        if deriv == 0:
            return (e0 - I1 - I2) / (2 * ib) + self.Gb * (ep - em) / (2 * ib)
        if deriv == 1:
            return 0.5 * (e0 - I1 + I2) + 0.5 * self.Gb * (ep + em)
        if deriv == 2:
            return -b * b * self(theta) - self.h(theta)
        raise ValueError("deriv must be 0, 1 or 2")


def _as_node_values(g, grid: PanelGrid) -> np.ndarray:
    if callable(g):
        return np.asarray(g(grid.nodes), complex) * np.ones(grid.nodes.shape)
    g = np.asarray(g, complex)
    if g.shape != grid.nodes.shape:
        raise ValueError("load samples must be given at the panel nodes")
    return g


def solve_modal_1d(beta: complex, c: complex, g, theta_max: float, G: complex = 0.0,
                   grid: PanelGrid | None = None, hmax: float = 0.05) -> GreenProfile:
    """Solution of c[-beta^2 (p,q) + (p',q') - i beta p(L) q(L)^*] = (g,q) + G q(L)^*, p(0) = 0."""
    if c == 0:
        raise SolverError("pairing constant c must be nonzero")
    grid = grid or build_panel_grid(theta_max, hmax, hmax_far=hmax)
    return GreenProfile(beta, grid, _as_node_values(g, grid) / c, G / c)


def fd_solve_modal_1d(beta: complex, c: complex, g: Callable, theta_max: float, G: complex, n: int):
    """Second-order finite differences for the same problem (oracle); returns (theta, p)."""
    import scipy.sparse as sps
    import scipy.sparse.linalg as spla

    th = np.linspace(0.0, theta_max, n + 1)
    h = th[1] - th[0]
    b2 = complex(beta) ** 2
    main = np.full(n, 2.0 / h**2 - b2, complex)
    main[-1] = 1.0 / h**2 - 0.5 * b2 - 1j * beta / h
    off = np.full(n - 1, -1.0 / h**2, complex)
    A = sps.diags([off, main, off], [-1, 0, 1], format="csc")
    rhs = np.asarray(g(th[1:]), complex) / c * np.ones(n)
    rhs[-1] = 0.5 * rhs[-1] + G / c / h
    p = np.zeros(n + 1, complex)
    p[1:] = spla.spsolve(A, rhs)
    return th, p


def solve_jordan_block(beta: complex, pairing: Sequence[complex], loads: Sequence, theta_max: float,
                       G: Sequence[complex] | None = None, grid: PanelGrid | None = None,
                       hmax: float | None = None) -> list:
    """Back-substitution j = J..1 for one block; loads[j] is g_{n,j} (callable or node samples)."""
    J = len(pairing)
    if len(loads) != J:
        raise ValueError("one load per chain position required")
    G = list(G) if G is not None else [0.0] * J
    if grid is None:
        h = hmax or 0.05
        if J > 1:
            h = min(h, 0.5 / abs(beta))
        grid = build_panel_grid(theta_max, h, hmax_far=h)
    D = dtn_table(complex(beta), J)
    nodes = grid.nodes
    L = float(grid.edges[-1])
    prof: list = [None] * J
    for j in range(J - 1, -1, -1):
        h_nodes = _as_node_values(loads[j], grid) / pairing[j]
        Gb = G[j] / pairing[j]
        if j + 1 < J:
            h_nodes = h_nodes - prof[j + 1](nodes)
            Gb += sum(D[k][j] * prof[k](np.array([L]))[0] for k in range(j + 1, J))
        prof[j] = GreenProfile(beta, grid, h_nodes, Gb)
    return prof


# ---------------------------------------------------------------------------
# sources and loads


@dataclass
class SourceTerm:
    """f(r, th) as separable g(r) h(th), a callable, or samples on a tensor grid."""

    kind: str
    radial: Optional[Callable] = None
    angular: Optional[Callable] = None
    fn: Optional[Callable] = None
    r_grid: Optional[np.ndarray] = None
    theta_grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    theta_support: Optional[tuple] = None
    r_support: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "separable":
            if self.radial is None or self.angular is None:
                raise ConfigError("separable source needs radial and angular factors")
        elif self.kind == "callable":
            if self.fn is None:
                raise ConfigError("callable source needs fn")
        elif self.kind == "grid":
            if self.r_grid is None or self.theta_grid is None or self.values is None:
                raise ConfigError("grid source needs r_grid, theta_grid and values")
            vals = np.asarray(self.values, complex)
            self._re = RegularGridInterpolator((self.r_grid, self.theta_grid), vals.real, bounds_error=False, fill_value=0.0)
            self._im = RegularGridInterpolator((self.r_grid, self.theta_grid), vals.imag, bounds_error=False, fill_value=0.0)
        else:
            raise ConfigError(f"unsupported source representation {self.kind!r}")

    @classmethod
    def separable(cls, radial, angular, theta_support=None, r_support=None):
        return cls("separable", radial=radial, angular=angular, theta_support=theta_support, r_support=r_support)

    @classmethod
    def from_callable(cls, fn, theta_support=None, r_support=None):
        return cls("callable", fn=fn, theta_support=theta_support, r_support=r_support)

    @classmethod
    def from_grid(cls, r, theta, values):
        r, theta = np.asarray(r, float), np.asarray(theta, float)
        return cls("grid", r_grid=r, theta_grid=theta, values=values,
                   theta_support=(float(theta[0]), float(theta[-1])), r_support=(float(r[0]), float(r[-1])))

    @classmethod
    def zero(cls):
        return cls("callable", fn=lambda r, th: np.zeros(np.broadcast(r, th).shape, complex))

    def __call__(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
        if self.kind == "separable":
            return np.asarray(self.radial(r), complex) * np.asarray(self.angular(theta), complex)
        if self.kind == "callable":
            return np.asarray(self.fn(r, theta), complex) * np.ones(r.shape)
        pts = np.stack([r.ravel(), theta.ravel()], axis=-1)
        return (self._re(pts) + 1j * self._im(pts)).reshape(r.shape)

    def restricted(self, theta_min: float = -np.inf, theta_max: float = np.inf) -> "SourceTerm":
        def fn(r, th, _f=self):
            th = np.asarray(th, float)
            return np.where((th >= theta_min) & (th <= theta_max), _f(r, th), 0.0)

        sup = self.theta_support
        if sup is not None:
            sup = (max(sup[0], theta_min), min(sup[1], theta_max))
        return SourceTerm.from_callable(fn, sup, self.r_support)

    def shifted(self, dtheta: float) -> "SourceTerm":
        """f(r, th - dtheta)."""
        sup = self.theta_support
        if sup is not None:
            sup = (sup[0] + dtheta, sup[1] + dtheta)
        return SourceTerm.from_callable(lambda r, th, _f=self: _f(r, np.asarray(th) - dtheta), sup, self.r_support)


def radial_quadrature(spectrum: Spectrum, r_support=None, quad: GaussLegendre | None = None):
    """Nodes r and weights for int ... dr on (r1, r2)."""
    prob = spectrum.problem
    quad = quad or GaussLegendre(panels=max(64, spectrum.system.N // 2), order=16)
    breaks = list(prob.t_breaks)
    if r_support is not None:
        breaks += [float(prob.t_of_r(x)) for x in r_support if prob.r_of_t(0) < x < prob.r_of_t(math.pi)]
    t, w = quad.nodes(0.0, math.pi, sorted(breaks))
    r = prob.r_of_t(t)
    return r, w * spectrum.delta * r


def chain_modes(spectrum: Spectrum, count: int) -> list:
    return [(n, j) for n, b in enumerate(spectrum.blocks[:count], 1) for j in range(1, b.J + 1)]


def modal_loads(f: SourceTerm, spectrum: Spectrum, theta, count: int | None = None,
                radial: tuple | None = None) -> list:
    """Per block (J x len(theta)) arrays g_{n,j}(th) = int r f(r, th) phi_{n,J+1-j}(r) dr."""
    if not isinstance(f, SourceTerm):
        raise ConfigError("unsupported source representation")
    count = count or spectrum.n_trusted
    theta = np.atleast_1d(np.asarray(theta, float))
    r, wr = radial or radial_quadrature(spectrum, f.r_support)
    blocks = spectrum.blocks[:count]
    # rows phi_{n,J+1-j} for j = 1..J
    rev = [(n, b.J - j) for n, b in enumerate(blocks, 1) for j in range(b.J)]
    Phi = spectrum.mode_matrix(r, 0, rev)
    if f.kind == "separable":
        rad = Phi @ (wr * r * np.asarray(f.radial(r), complex))
        G = rad[:, None] * np.asarray(f.angular(theta), complex)[None, :]
    else:
        F = f(r[:, None], theta[None, :])
        G = Phi @ ((wr * r)[:, None] * F)
    out, pos = [], 0
    for b in blocks:
        out.append(G[pos:pos + b.J])
        pos += b.J
    return out


# ---------------------------------------------------------------------------
# 2D solution


class OutgoingAmplitudes:
    """a_n e^{i beta_n th} for semisimple modes (inlet propagation)."""

    def __init__(self, a: np.ndarray, betas: np.ndarray):
        self.a, self.betas = np.asarray(a, complex), np.asarray(betas, complex)

    def __call__(self, theta, deriv: int = 0):
        theta = np.atleast_1d(np.asarray(theta, float))
        e = np.exp(1j * np.outer(self.betas, theta))
        return (self.a * (1j * self.betas) ** deriv)[:, None] * e


@dataclass
class Solution2D:
    config: WaveguideConfig
    spectrum: Spectrum
    modes: list  # (n, j) per amplitude row
    profiles: list  # GreenProfile per row
    source: SourceTerm
    grid: PanelGrid
    extras: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta_max(self) -> float:
        return float(self.grid.edges[-1])

    def amplitudes(self, theta, deriv: int = 0) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, float))
        P = np.array([p(theta, deriv) for p in self.profiles]) if self.profiles else np.zeros((0, len(theta)))
        for ex in self.extras:
            P = P + ex(theta, deriv)
        return P

    def field(self, r, theta, dr: int = 0, dtheta: int = 0) -> np.ndarray:
        """u (or a derivative) on the tensor grid r x theta."""
        r = np.atleast_1d(np.asarray(r, float))
        Phi = self.spectrum.mode_matrix(r, dr, self.modes)
        return Phi.T @ self.amplitudes(theta, dtheta)

    # norms -----------------------------------------------------------------

    def _grams(self):
        if "_grams" not in self.diagnostics:
            r, wr = radial_quadrature(self.spectrum)
            Phi = self.spectrum.mode_matrix(r, 0, self.modes)
            dPhi = self.spectrum.mode_matrix(r, 1, self.modes)
            G0 = (Phi * (wr * r)) @ Phi.conj().T
            G1 = (dPhi * (wr * r)) @ dPhi.conj().T
            G2 = (Phi * (wr / r)) @ Phi.conj().T
            self.diagnostics["_grams"] = (G0, G1, G2)
        return self.diagnostics["_grams"]

    def norm_grid(self) -> PanelGrid:
        """theta quadrature with >= 20 points per wavelength of the propagating loaded modes."""
        if "_norm_grid" not in self.diagnostics:
            betas = np.array([self.spectrum.blocks[n - 1].beta for n, _ in self.modes])
            prop = np.abs(betas.real) > betas.imag
            kmax = float(np.max(np.abs(betas.real[prop]))) if prop.any() else 1.0
            hq = min(0.05, 2.5 / max(kmax, 1.0))
            # graded breaks resolve evanescent boundary layers at the ends and at support edges
            bmax = float(np.max(np.abs(betas))) if len(betas) else 1.0
            anchors = [0.0, self.theta_max] + list(self.source.theta_support or ())
            brk = []
            for a in anchors:
                d = 1.0 / bmax
                while d < hq:
                    brk += [a - d, a + d]
                    d *= 2
            self.diagnostics["_norm_grid"] = build_panel_grid(self.theta_max, hq, None, hq, 8, brk)
        return self.diagnostics["_norm_grid"]

    def _theta_integrals(self, chunk: int = 20000):
        G0, G1, G2 = self._grams()
        qg = self.norm_grid()
        th, w = qg.nodes, qg.weights
        l2 = h1 = 0.0
        for s in range(0, len(th), chunk):
            t, ww = th[s:s + chunk], w[s:s + chunk]
            P = self.amplitudes(t, 0)
            dP = self.amplitudes(t, 1)
            a0 = np.real(np.einsum("kt,kl,lt->t", P, G0, P.conj()))
            a1 = np.real(np.einsum("kt,kl,lt->t", P, G1, P.conj()))
            a2 = np.real(np.einsum("kt,kl,lt->t", dP, G2, dP.conj()))
            l2 += float(np.sum(a0 * ww))
            h1 += float(np.sum((a0 + a1 + a2) * ww))
        return l2, h1

    def l2_norm(self) -> float:
        if "l2" not in self.diagnostics:
            l2, h1 = self._theta_integrals()
            self.diagnostics["l2"], self.diagnostics["h1"] = math.sqrt(max(l2, 0)), math.sqrt(max(h1, 0))
        return self.diagnostics["l2"]

    def h1_norm(self) -> float:
        self.l2_norm()
        return self.diagnostics["h1"]

    # checks ----------------------------------------------------------------

    def dirichlet_trace(self) -> float:
        r = np.linspace(self.config.r1, self.config.r2, 64)
        return float(np.abs(self.field(r, [0.0])).max())

    def outgoing_residual(self) -> float:
        """max_r |r^-1 u_th - DtN u| at th = L relative to max_r |r^-1 u_th|."""
        L = np.array([self.theta_max])
        P, dP = self.amplitudes(L, 0)[:, 0], self.amplitudes(L, 1)[:, 0]
        F = np.zeros_like(P)
        pos = 0
        n_prev = None
        for n, j in self.modes:
            if n != n_prev:
                b = self.spectrum.blocks[n - 1]
                D = np.array(dtn_table(complex(b.beta), b.J), complex)
                F[pos:pos + b.J] = D.T @ P[pos:pos + b.J]
                pos += b.J
                n_prev = n
        r = np.linspace(self.config.r1, self.config.r2, 64)
        Phi = self.spectrum.mode_matrix(r, 0, self.modes)
        lhs = (Phi.T @ dP) / r
        rhs = (Phi.T @ F) / r
        return float(np.abs(lhs - rhs).max() / max(np.abs(lhs).max(), 1e-300))

    def strong_residual(self, nr: int = 24, nt: int = 48) -> float:
        """max |-(r u_r)_r - r^-1 u_thth - omega^2 r n u - r f| / max |r f| on interior samples."""
        cfg = self.config
        r = np.linspace(cfg.r1, cfg.r2, nr + 2)[1:-1]
        th = np.linspace(0.0, self.theta_max, nt + 2)[1:-1]
        u = self.field(r, th)
        ur = self.field(r, th, dr=1)
        urr = self.field(r, th, dr=2)
        utt = self.field(r, th, dtheta=2)
        R = r[:, None]
        n = cfg.refr_profile(r)[:, None]
        rf = R * self.source(R, th[None, :])
        res = -(ur + R * urr) - utt / R - cfg.omega**2 * R * n * u - rf
        scale = max(np.abs(rf).max(), 1e-300)
        return float(np.abs(res).max() / scale)

    def weak_residual(self, tests: int = 20, seed: int = 0) -> np.ndarray:
        """|a(u, v) - (r f, v)| / sum of |term| for v = q(th) conj(phi_m(r)), q(0) = 0."""
        cfg, sp = self.config, self.spectrum
        rng = np.random.default_rng(seed)
        r, wr = radial_quadrature(sp, self.source.r_support)
        qg = self.norm_grid()
        th, wt = qg.nodes, qg.weights
        L = self.theta_max
        U = self.field(r, th)
        Ur = self.field(r, th, dr=1)
        Ut = self.field(r, th, dtheta=1)
        F = self.source(r[:, None], th[None, :])
        n = cfg.refr_profile(r)[:, None]
        # DtN u at th = L
        PL = self.amplitudes(np.array([L]), 0)[:, 0]
        F_dtn = np.zeros_like(PL)
        pos = 0
        for b in sp.blocks[: len({m[0] for m in self.modes})]:
            D = np.array(dtn_table(complex(b.beta), b.J), complex)
            F_dtn[pos:pos + b.J] = D.T @ PL[pos:pos + b.J]
            pos += b.J
        dtn_u = (sp.mode_matrix(r, 0, self.modes).T @ F_dtn) / r
        ur2 = self.field(np.array([cfg.r2]), th)[0]
        out = []
        for _ in range(tests):
            n_m, j_m = self.modes[rng.integers(len(self.modes))]
            k = rng.integers(1, 4, size=3)
            a = rng.standard_normal(3) + 1j * rng.standard_normal(3)

            def q(t, d=0):
                t = np.asarray(t, float)
                s = 0
                for kk, aa in zip(k, a):
                    w = (kk - 0.5) * math.pi / L
                    s = s + aa * (np.sin(w * t) if d == 0 else w * np.cos(w * t))
                return s

            phi = sp.phi(n_m, r, j_m)
            dphi = sp.phi(n_m, r, j_m, deriv=1)
            qv, dq = np.conj(q(th)), np.conj(q(th, 1))  # conj(v) = conj(q) phi
            W = wr[:, None] * wt[None, :]
            t1 = np.sum(R_(r) * Ur * (dphi[:, None] * qv[None, :]) * W)
            t2 = np.sum(Ut / R_(r) * (phi[:, None] * dq[None, :]) * W)
            t3 = -cfg.omega**2 * np.sum(R_(r) * n * U * (phi[:, None] * qv[None, :]) * W)
            phi2 = sp.phi(n_m, np.array([cfg.r2]), j_m)[0]
            t4 = 1j * cfg.omega * cfg.varsigma * cfg.r2 * np.sum(ur2 * phi2 * qv * wt)
            t5 = -np.sum(dtn_u * phi * wr) * np.conj(q(L))
            rhs = np.sum(R_(r) * F * (phi[:, None] * qv[None, :]) * W)
            terms = [t1, t2, t3, t4, t5, rhs]
            out.append(abs(t1 + t2 + t3 + t4 + t5 - rhs) / max(sum(abs(x) for x in terms), 1e-300))
        return np.array(out)


def R_(r):
    return np.asarray(r)[:, None]


def _default_count(spectrum: Spectrum, N_modes: int | None) -> int:
    count = N_modes or min(spectrum.n_trusted, 40)
    if count > spectrum.n_trusted:
        raise SolverError(f"{count} modes requested but only {spectrum.n_trusted} trusted")
    return count


def solve(config: WaveguideConfig, f: SourceTerm, N_modes: int | None = None, spectrum: Spectrum | None = None,
          N: int | None = None, hmax: float = 0.05, tail_tol: float = 1e-2) -> Solution2D:
    """Modal solve on (r1, r2) x (0, theta_max) with the outgoing condition at theta_max."""
    if spectrum is None:
        spectrum = solve_modes(config, N=N or max(200, 4 * (N_modes or 40)))
    count = _default_count(spectrum, N_modes)
    L = config.theta_max
    support = f.theta_support
    if support is not None:
        support = (max(0.0, support[0]), min(L, support[1]))
        if support[0] >= support[1]:
            support = None
    chains = [b for b in spectrum.blocks[:count] if b.J > 1]
    h = hmax
    for b in chains:
        h = min(h, 0.5 / abs(b.beta))
    grid = build_panel_grid(L, h, support, hmax_far=(h if chains else 1.0))

    # truncation certificate from the loads of a few extra modes
    probe = min(spectrum.n_trusted, count + max(5, count // 4))
    radial = radial_quadrature(spectrum, f.r_support)
    loads_all = modal_loads(f, spectrum, grid.nodes, probe, radial)
    w = grid.weights
    norms = np.array([math.sqrt(float(np.sum(np.abs(g) ** 2 * w))) for g in loads_all])
    top = norms.max() if len(norms) else 0.0
    tail = float(norms[count - 1] / top) if top > 0 else 0.0
    if top > 0 and tail > tail_tol:
        raise SolverError(f"truncation certificate failed: load of mode {count} is {tail:.2e} of the largest")

    modes, profiles = [], []
    for n, (b, g) in enumerate(zip(spectrum.blocks[:count], loads_all[:count]), start=1):
        prof = solve_jordan_block(b.beta, b.pairing, list(g), L, grid=grid)
        for j, p in enumerate(prof, start=1):
            modes.append((n, j))
            profiles.append(p)
    diag = {"count": count, "tail_load": tail, "load_norms": norms, "panels": grid.panels}
    return Solution2D(config, spectrum.truncated(count), modes, profiles, f, grid, diagnostics=diag)


# ---------------------------------------------------------------------------
# finite-difference oracle on the same domain


def _uniform_coefficients(config: WaveguideConfig):
    prof = config.refr_profile

    def n_fn(r, th):
        return np.asarray(prof(np.asarray(r, float)), float) * np.ones(np.broadcast(r, th).shape)

    return n_fn, (lambda th: np.full(np.shape(th), complex(config.varsigma)))


def direct_fd_solve(config: WaveguideConfig, f: SourceTerm, Nr: int, Ntheta: int, N_dtn: int,
                    spectrum: Spectrum | None = None, theta_min: float = 0.0) -> FDSolution:
    """Finite differences on (r1, r2) x (theta_min, theta_max) with the modal DtN at theta_max.

    For theta_min < 0 the inlet coefficients of the config apply on theta < 0.
    """
    if spectrum is None:
        spectrum = solve_modes(config, N=max(200, 4 * N_dtn))
    if N_dtn > spectrum.n_trusted:
        raise ConfigError(f"N_dtn={N_dtn} exceeds the {spectrum.n_trusted} trusted modes")
    n_fn, s_fn = _uniform_coefficients(config)
    if theta_min < 0:
        if config.inlet is None:
            raise ConfigError("theta_min < 0 requires an inlet")
        inl = config.inlet
        n_u, s_u = n_fn, s_fn

        def n_fn(r, th):
            th = np.asarray(th, float)
            return np.where(th < 0, inl.refr_profile_2d(r, th), n_u(r, th))

        def s_fn(th):
            th = np.asarray(th, float)
            return np.where(th < 0, inl.varsigma_inlet(th), s_u(th))

    prob = FDProblem(config.r1, config.r2, theta_min, config.theta_max, config.omega, n_fn, s_fn,
                     f=lambda r, th: f(r, th), dtn_matrix=dense_dtn_matrix(spectrum, N_dtn))
    return solve_fd(prob, Nr, Ntheta)


def compare_with_fd(sol: Solution2D, fd: FDSolution) -> float:
    """Relative L2(Omega) difference on the finite-difference grid (trapezoid, weight r)."""
    mask = fd.theta >= 0
    U = sol.field(fd.r, fd.theta[mask])
    V = fd.U[:, mask]
    sub = FDSolution(fd.r, fd.theta[mask], V)
    return sub.l2_norm(U - V) / max(sub.l2_norm(U), 1e-300)


# ---------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    theta_max: np.ndarray
    ratios: np.ndarray
    C_beta: float
    C_beta_prime: float
    n0: int
    gamma_max: np.ndarray
    gamma_cap: np.ndarray
    J_max: int
    degenerate: bool
    f_norm: float
    gamma_tail: np.ndarray = None  # surrogate at the last trusted mode; tends to 1 as Re(beta)/Im(beta) -> 0

    def to_dict(self) -> dict:
        return {
            "theta_max": self.theta_max.tolist(), "ratios": self.ratios.tolist(), "C_beta": self.C_beta,
            "C_beta_prime": self.C_beta_prime, "n0": self.n0, "gamma_max": self.gamma_max.tolist(),
            "gamma_cap": self.gamma_cap.tolist(), "J_max": self.J_max, "degenerate": self.degenerate,
            "f_norm": self.f_norm,
            "gamma_tail": None if self.gamma_tail is None else self.gamma_tail.tolist(),
        }


def beta_constants(betas: np.ndarray) -> tuple[float, int, float]:
    """(C_beta, n0, C'_beta) over the given modes (1-based n0)."""
    betas = np.asarray(betas, complex)
    if len(betas) == 0:
        raise SolverError("empty trusted-mode set")
    ratio = np.abs(betas.real) / betas.imag
    C_beta = float(ratio.max())
    bad = np.nonzero(np.abs(betas.real) > betas.imag)[0]
    n0 = int(bad[-1] + 2) if len(bad) else 1
    C_prime = float(np.abs(betas[: n0 - 1]).max()) if n0 > 1 else 0.0
    return C_beta, n0, C_prime


def gamma_max_surrogate(betas: np.ndarray, J: np.ndarray, L: float, C_hat: float = 1.0) -> float:
    vals = []
    for b, j in zip(betas, J):
        g = C_hat * gamma_kappa(-1j * b * L)
        vals.append(g * (1 + g / abs(b)) ** (j - 1))
    return float(max(vals))


def source_l2_norm(f: SourceTerm, config: WaveguideConfig, theta_range: tuple | None = None, panels: int = 64) -> float:
    a, b = theta_range or (0.0, config.theta_max)
    sup = f.theta_support
    if sup is not None:
        a, b = max(a, sup[0]), min(b, sup[1])
        if a >= b:
            return 0.0
    qr = GaussLegendre(panels=32, order=16)
    r, wr = qr.nodes(config.r1, config.r2, [x for x in (f.r_support or ()) if config.r1 < x < config.r2])
    th, wt = GaussLegendre(panels=panels, order=16).nodes(a, b)
    F = f(r[:, None], th[None, :])
    return math.sqrt(float(np.sum(np.abs(F) ** 2 * (wr * r)[:, None] * wt[None, :])))


def stability_scan(config: WaveguideConfig, f: SourceTerm, theta_max_list: Sequence[float], N_modes: int | None = None,
                   spectrum: Spectrum | None = None, c0: float = 1.0) -> StabilityReport:
    Ls = np.array(sorted(theta_max_list), float)
    if len(Ls) < 2:
        raise ConfigError("at least two theta_max values required")
    if np.any(Ls <= c0):
        raise ConfigError(f"every theta_max must exceed c0 = {c0}")
    if spectrum is None:
        spectrum = solve_modes(config, N=max(200, 4 * (N_modes or 40)))
    count = _default_count(spectrum, N_modes)
    trusted = spectrum.trusted
    if not trusted:
        raise SolverError("empty trusted-mode set")
    betas = np.array([b.beta for b in trusted])
    J = np.array([b.J for b in trusted])
    C_beta, n0, C_prime = beta_constants(betas)
    ratios, gmax, caps, tail = [], [], [], []
    fn = source_l2_norm(f, config)
    for L in Ls:
        cfg = config.with_(theta_max=float(L))
        if fn == 0:
            ratios.append(0.0)
        else:
            sol = solve(cfg, f, count, spectrum)
            ratios.append(sol.h1_norm() / fn)
        gmax.append(gamma_max_surrogate(betas, J, L))
        tail.append(gamma_max_surrogate(betas[-1:], J[-1:], L))
        caps.append(2 + min(C_beta, C_prime * L))
    return StabilityReport(Ls, np.array(ratios), C_beta, C_prime, n0, np.array(gmax), np.array(caps),
                           int(J.max()), fn == 0, fn, np.array(tail))


# ---------------------------------------------------------------------------
# inhomogeneous inlet


@dataclass
class InletSolution:
    inlet: FDSolution  # on (theta0, 0)
    section: Solution2D  # on (0, theta_max), includes the propagated inlet trace
    trace_coeffs: np.ndarray
    uniform_part: Solution2D

    def inlet_h1_norm(self) -> float:
        return fd_h1_norm(self.inlet)


def fd_h1_norm(sol: FDSolution) -> float:
    """Discrete H1 norm: int (|u|^2 + |u_r|^2 + r^-2 |u_th|^2) r dr dth with cell-averaged differences."""
    r, th, U = sol.r, sol.theta, sol.U
    hr, ht = r[1] - r[0], th[1] - th[0]
    Uc = 0.25 * (U[:-1, :-1] + U[1:, :-1] + U[:-1, 1:] + U[1:, 1:])
    Ur = 0.5 * ((U[1:, :-1] - U[:-1, :-1]) + (U[1:, 1:] - U[:-1, 1:])) / hr
    Ut = 0.5 * ((U[:-1, 1:] - U[:-1, :-1]) + (U[1:, 1:] - U[1:, :-1])) / ht
    rc = 0.5 * (r[:-1] + r[1:])[:, None]
    dens = np.abs(Uc) ** 2 + np.abs(Ur) ** 2 + np.abs(Ut) ** 2 / rc**2
    return math.sqrt(float(np.sum(dens * rc) * hr * ht))


def solve_with_inlet(config: WaveguideConfig, f: SourceTerm, Nr: int = 64, Ntheta0: int = 64,
                     N_modes: int | None = None, spectrum: Spectrum | None = None) -> InletSolution:
    """Block-triangular solve: uniform section with Dirichlet data, then the inlet, then propagation.

    1. u_L solves the section problem for f restricted to theta > 0 with u_L(., 0) = 0.
    2. The inlet field u_0 on (theta0, 0) solves the FD problem with
       r^-1 d_th u_0 = DtN u_0 + r^-1 d_th u_L(., 0+) at theta = 0.
    3. On the section u = u_L + sum a_n e^{i beta_n th} phi_n with a_n the
       biorthogonal coefficients of u_0(., 0).
    """
    if config.inlet is None:
        raise ConfigError("config has no inlet")
    if spectrum is None:
        spectrum = solve_modes(config, N=max(200, 4 * (N_modes or 40)))
    count = _default_count(spectrum, N_modes)
    if any(b.J > 1 for b in spectrum.blocks[:count]):
        raise SolverError("inlet coupling is implemented for semisimple spectra only")
    inl = config.inlet
    sec = solve(config, f.restricted(theta_min=0.0), count, spectrum)
    r_fd = np.linspace(config.r1, config.r2, Nr + 1)
    prob = FDProblem(config.r1, config.r2, inl.theta0, 0.0, config.omega,
                     lambda r, th: inl.refr_profile_2d(r, th), lambda th: inl.varsigma_inlet(th),
                     f=lambda r, th: f.restricted(theta_max=0.0)(r, th),
                     outlet_data=lambda r: sec.field(r, [0.0], dtheta=1)[:, 0] / np.asarray(r),
                     dtn_matrix=dense_dtn_matrix(spectrum, count))
    try:
        fd0 = solve_fd(prob, Nr, Ntheta0)
    except SolverError as exc:
        raise SolverError(f"ill-posed inlet: {exc}") from exc
    trace = fd0.U[:, -1]
    w = np.full(len(r_fd), r_fd[1] - r_fd[0])
    w[[0, -1]] *= 0.5
    Phi = spectrum.mode_matrix(r_fd, 0, [(n, 1) for n in range(1, count + 1)])
    c = np.array([b.pairing[0] for b in spectrum.blocks[:count]])
    a = (Phi @ (w * trace / r_fd)) / c
    betas = np.array([b.beta for b in spectrum.blocks[:count]])
    full = Solution2D(config, sec.spectrum, sec.modes, sec.profiles, sec.source, sec.grid,
                      extras=[OutgoingAmplitudes(a, betas)], diagnostics={"count": count})
    return InletSolution(fd0, full, a, sec)


# ---------------------------------------------------------------------------
# smooth compactly supported sources


def bump(x, a: float, b: float) -> np.ndarray:
    """C-infinity bump on (a, b) with peak value 1 at the midpoint."""
    x = np.asarray(x, float)
    y = np.zeros(x.shape)
    m = (x > a) & (x < b)
    s = (x[m] - a) / (b - a)
    y[m] = np.exp(4.0 - 1.0 / (s * (1.0 - s)))
    return y


def bump_source(r_support: tuple, theta_support: tuple, amplitude: complex = 1.0) -> SourceTerm:
    ra, rb = map(float, r_support)
    ta, tb = map(float, theta_support)
    if not (ra < rb and ta < tb):
        raise ConfigError("bump supports must be nonempty intervals")
    return SourceTerm.separable(lambda r: amplitude * bump(r, ra, rb), lambda t: bump(t, ta, tb),
                                theta_support=(ta, tb), r_support=(ra, rb))


def source_from_dict(d: dict | None, config: WaveguideConfig) -> SourceTerm:
    """{"kind": "zero"} or {"kind": "bump", "r_support": [a, b], "theta_support": [a, b], "amplitude": x}.

    Missing bump supports default to the middle 60% of the radial interval and (0.5, 2.5).
    """
    d = d or {"kind": "bump"}
    kind = d.get("kind", "bump")
    if kind == "zero":
        return SourceTerm.zero()
    if kind != "bump":
        raise ConfigError(f"unknown source kind {kind!r}")
    w = config.r2 - config.r1
    rs = d.get("r_support", [config.r1 + 0.2 * w, config.r2 - 0.2 * w])
    ts = d.get("theta_support", [0.5, 2.5])
    amp = d.get("amplitude", 1.0)
    if isinstance(amp, dict):
        amp = complex(amp.get("re", 0.0), amp.get("im", 0.0))
    try:
        return bump_source(tuple(rs), tuple(ts), complex(amp))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad source specification: {exc}") from exc
