"""Domain types, radial coordinate transform, quadrature and weighted inner products."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid or unparsable waveguide configuration."""


class SolverError(RuntimeError):
    """A numerical routine failed to meet its contract."""


# ---------------------------------------------------------------------------
# tolerances


@dataclass(frozen=True)
class ToleranceSet:
    tol_cluster: float = 1e-6
    tol_jordan: float = 1e-6
    rk_tol: float = 1e-12
    shoot_residual: float = 1e-10
    newton_maxiter: int = 50
    root_residual: float = 1e-12
    root_dedupe: float = 1e-8
    root_maxiter: int = 100
    backward_error: float = 1e-10

    @classmethod
    def from_dict(cls, data: dict) -> "ToleranceSet":
        known = {f.name for f in fields(cls)}
        bad = set(data) - known
        if bad:
            raise ConfigError(f"unknown tolerance keys: {sorted(bad)}")
        return replace(cls(), **data)

    @classmethod
    def from_json(cls, path: str) -> "ToleranceSet":
        return cls.from_dict(_read_json(path))


DEFAULT_TOL = ToleranceSet()


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class GaussLegendre:
    """Composite Gauss-Legendre rule on an interval, optionally split at breakpoints."""

    panels: int = 64
    order: int = 8

    def nodes(self, a: float, b: float, breaks: Sequence[float] = ()) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.order)
        cuts = [a] + sorted(c for c in breaks if a < c < b) + [b]
        pts, wts = [], []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            # panels distributed proportionally to sub-interval length
            k = max(1, int(round(self.panels * (hi - lo) / (b - a))))
            edges = np.linspace(lo, hi, k + 1)
            h = np.diff(edges)
            pts.append((edges[:-1, None] + (x[None, :] + 1.0) * h[:, None] / 2).ravel())
            wts.append((w[None, :] * h[:, None] / 2).ravel())
        return np.concatenate(pts), np.concatenate(wts)

    def integrate(self, fn: Callable, a: float, b: float, breaks: Sequence[float] = ()):
        t, w = self.nodes(a, b, breaks)
        return np.sum(fn(t) * w, axis=-1)


# ---------------------------------------------------------------------------
# refractive profiles


@dataclass(frozen=True)
class RefractiveProfile:
    """Radial refractive index n(r): constant, piecewise constant or linearly interpolated samples."""

    kind: str = "constant"
    data: object = 1.0

    def __post_init__(self):
        if self.kind == "constant":
            v = float(self.data)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError("constant refractive index must be finite and > 0")
        elif self.kind == "piecewise":
            br, vals = self._piecewise()
            if len(vals) != len(br) + 1 or np.any(np.diff(br) <= 0):
                raise ConfigError("piecewise profile needs increasing breaks and len(values)=len(breaks)+1")
            if not np.all(np.isfinite(vals) & (vals > 0)):
                raise ConfigError("piecewise profile values must be finite and > 0")
        elif self.kind == "samples":
            r, v = self._samples()
            if len(r) < 2 or len(r) != len(v) or np.any(np.diff(r) <= 0):
                raise ConfigError("sample profile needs >=2 strictly increasing r values")
            if not np.all(np.isfinite(v) & (v > 0)):
                raise ConfigError("sampled refractive index must be finite and > 0")
        else:
            raise ConfigError(f"unknown refractive profile kind {self.kind!r}")

    def _piecewise(self):
        return np.asarray(self.data["breaks"], float), np.asarray(self.data["values"], float)

    def _samples(self):
        return np.asarray(self.data["r"], float), np.asarray(self.data["n"], float)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, r):
        r = np.asarray(r, float)
        if self.kind == "constant":
            return np.full_like(r, float(self.data))
        if self.kind == "piecewise":
            br, vals = self._piecewise()
            return vals[np.searchsorted(br, r, side="right")]
        rs, ns = self._samples()
        return np.interp(r, rs, ns)

    def breakpoints(self) -> tuple[float, ...]:
        if self.kind == "piecewise":
            return tuple(self._piecewise()[0])
        if self.kind == "samples":
            return tuple(self._samples()[0])
        return ()

    def bounds(self, r1: float, r2: float) -> tuple[float, float]:
        rr = np.concatenate([np.linspace(r1, r2, 257), [b for b in self.breakpoints() if r1 <= b <= r2]])
        v = self(rr)
        return float(v.min()), float(v.max())

    def to_dict(self) -> dict:
        data = self.data
        if self.kind == "constant":
            data = float(data)
        return {"kind": self.kind, "data": data}


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class InletConfig:
    """Heterogeneous inlet section attached at theta in (theta0, 0)."""

    theta0: float
    refr_profile_2d: Callable = field(default=lambda r, th: np.ones(np.broadcast(r, th).shape))
    varsigma_inlet: Callable = field(default=lambda th: np.ones(np.shape(th)))
    spec: Optional[dict] = None  # JSON form, kept for serialization

    def __post_init__(self):
        if not self.theta0 < 0:
            raise ConfigError("inlet theta0 must be negative")


@dataclass(frozen=True)
class WaveguideConfig:
    r1: float
    r2: float
    omega: float
    varsigma: complex = 1.0
    theta_max: float = math.pi
    refr_profile: RefractiveProfile = field(default_factory=RefractiveProfile)
    inlet: Optional[InletConfig] = None

    def __post_init__(self):
        if not (self.r1 > 0 and self.r2 > self.r1):
            raise ConfigError(f"need 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")
        # omega = 0 is admitted: it gives the exactly solvable Neumann case
        if not (np.isfinite(self.omega) and self.omega >= 0):
            raise ConfigError("omega must be finite and >= 0")
        if not self.theta_max > 0:
            raise ConfigError("theta_max must be > 0")
        lo, hi = self.refr_profile.bounds(self.r1, self.r2)
        if not lo > 0:
            raise ConfigError("refractive profile must be positive on [r1, r2]")
        object.__setattr__(self, "varsigma", complex(self.varsigma))

    def with_(self, **kw) -> "WaveguideConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# transformed problem on (0, pi)


def _exp_cos_moments(b: float, k: np.ndarray) -> np.ndarray:
    """int_0^pi e^{b t} cos(k t) dt for integer k (closed form)."""
    k = np.asarray(k, float)
    sgn = np.where(np.abs(k) % 2 == 0, 1.0, -1.0)
    if b == 0.0:
        return np.where(k == 0, math.pi, 0.0)
    return b * (sgn * math.exp(b * math.pi) - 1.0) / (b * b + k * k)


@dataclass(frozen=True)
class TransformedProblem:
    """Problem on t in (0, pi): q(t) = a e^{bt} n(r(t)) + 1 and the impedance coefficient.

    With r = r1 e^{delta t} the modal eigenvalue lambda equals lambda_t / delta**2.
    """

    delta: float
    imp_coeff: complex
    a: float  # omega^2 r1^2 delta^2
    b: float  # 2 delta
    profile_t: Optional[Callable] = None  # n(r(t)); None means identically one
    t_breaks: tuple = ()
    config: Optional[WaveguideConfig] = None
    label: str = "waveguide"

    def q_coeff(self, t):
        t = np.asarray(t, float)
        nt = 1.0 if self.profile_t is None else self.profile_t(t)
        return self.a * np.exp(self.b * t) * nt + 1.0

    @property
    def closed_form(self) -> bool:
        return self.profile_t is None

    def q_moments(self, kmax: int, quad: GaussLegendre | None = None) -> np.ndarray:
        """Q_k = int_0^pi q(t) cos(kt) dt for k = 0..kmax."""
        k = np.arange(kmax + 1)
        if self.closed_form:
            out = self.a * _exp_cos_moments(self.b, k)
            out[0] += math.pi
            return out
        quad = quad or GaussLegendre(panels=max(64, kmax // 2 + 1), order=16)
        t, w = quad.nodes(0.0, math.pi, self.t_breaks)
        qw = self.q_coeff(t) * w
        # cos(k t) by recurrence would drift; direct evaluation is cheap enough
        return np.cos(np.outer(k, t)) @ qw

    def r_of_t(self, t):
        r1 = self.config.r1 if self.config is not None else 1.0
        return r1 * np.exp(self.delta * np.asarray(t, float))

    def t_of_r(self, r):
        r1 = self.config.r1 if self.config is not None else 1.0
        return np.log(np.asarray(r, float) / r1) / self.delta


def transform_radial(config: WaveguideConfig) -> TransformedProblem:
    """Map (r1, r2) to (0, pi) by r = r1 e^{delta t}; delta = ln(r2/r1)/pi."""
    if not config.r1 < config.r2:
        raise ConfigError("invalid geometry: r1 >= r2")
    delta = math.log(config.r2 / config.r1) / math.pi
    a = config.omega**2 * config.r1**2 * delta**2
    prof = config.refr_profile
    if prof.is_constant:
        a *= float(prof.data)
        profile_t, breaks = None, ()
    else:
        def profile_t(t, _p=prof, _r1=config.r1, _d=delta):
            return _p(_r1 * np.exp(_d * np.asarray(t, float)))

        breaks = tuple(math.log(b / config.r1) / delta for b in prof.breakpoints() if config.r1 < b < config.r2)
    imp = 1j * config.omega * config.varsigma * delta * config.r2
    return TransformedProblem(delta=delta, imp_coeff=imp, a=a, b=2 * delta, profile_t=profile_t,
                              t_breaks=breaks, config=config)


def t_of_r(config: WaveguideConfig, r):
    return math.pi * np.log(np.asarray(r, float) / config.r1) / math.log(config.r2 / config.r1)


def r_of_t(config: WaveguideConfig, t):
    delta = math.log(config.r2 / config.r1) / math.pi
    return config.r1 * np.exp(delta * np.asarray(t, float))


# ---------------------------------------------------------------------------
# stability quantity and inner products


def gamma_kappa(kappa: complex) -> float:
    """1 + Im(kappa) / (1 + Re(kappa))."""
    kappa = complex(kappa)
    den = 1.0 + kappa.real
    if den == 0.0:
        raise ZeroDivisionError("gamma_kappa is singular at Re(kappa) = -1")
    return 1.0 + kappa.imag / den


def weighted_inner(u: Callable, v: Callable, weight: str, r1: float, r2: float,
                   quad: GaussLegendre | None = None, breaks: Sequence[float] = ()) -> complex:
    """int_{r1}^{r2} r^{+-1} u conj(v) dr; weight is 'r' or '1/r' (also 'r^-1', '1')."""
    quad = quad or GaussLegendre()
    r, w = quad.nodes(r1, r2, breaks)
    if weight == "r":
        wr = r
    elif weight in ("1/r", "r^-1", "rinv"):
        wr = 1.0 / r
    elif weight in ("1", "none"):
        wr = np.ones_like(r)
    else:
        raise ValueError(f"unknown weight {weight!r}")
    return complex(np.sum(np.asarray(u(r)) * np.conj(np.asarray(v(r))) * wr * w))


# ---------------------------------------------------------------------------
# JSON I/O


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _complex_from(obj) -> complex:
    if isinstance(obj, dict):
        return complex(float(obj.get("re", 0.0)), float(obj.get("im", 0.0)))
    return complex(obj)


def _inlet_from_dict(d: dict) -> InletConfig:
    theta0 = float(d["theta0"])
    refr = d.get("refr_profile_2d", {"kind": "constant", "data": 1.0})
    vs = d.get("varsigma", {"re": 1.0, "im": 0.0})
    if refr.get("kind") == "constant":
        val = float(refr["data"])
        nfun = lambda r, th, _v=val: np.full(np.broadcast(r, th).shape, _v)
    elif refr.get("kind") == "samples":
        from scipy.interpolate import RegularGridInterpolator

        rr = np.asarray(refr["data"]["r"], float)
        tt = np.asarray(refr["data"]["theta"], float)
        vv = np.asarray(refr["data"]["n"], float)
        interp = RegularGridInterpolator((rr, tt), vv, bounds_error=False, fill_value=None)

        def nfun(r, th, _i=interp):
            r, th = np.broadcast_arrays(np.asarray(r, float), np.asarray(th, float))
            return _i(np.stack([r.ravel(), th.ravel()], -1)).reshape(r.shape)
    else:
        raise ConfigError("inlet refr_profile_2d kind must be 'constant' or 'samples'")
    if isinstance(vs, dict) and "theta" in vs:
        th = np.asarray(vs["theta"], float)
        vv = np.asarray(vs["values"], float)
        sfun = lambda t, _t=th, _v=vv: np.interp(t, _t, _v)
    else:
        val = _complex_from(vs)
        sfun = lambda t, _v=val: np.full(np.shape(t), _v)
    return InletConfig(theta0=theta0, refr_profile_2d=nfun, varsigma_inlet=sfun, spec=d)


def config_from_dict(d: dict) -> WaveguideConfig:
    try:
        prof = d.get("refr_profile", {"kind": "constant", "data": 1.0})
        profile = RefractiveProfile(kind=prof["kind"], data=prof["data"])
        inlet = _inlet_from_dict(d["inlet"]) if d.get("inlet") else None
        return WaveguideConfig(
            r1=float(d["r1"]), r2=float(d["r2"]), omega=float(d["omega"]),
            varsigma=_complex_from(d.get("varsigma", 1.0)),
            theta_max=float(d.get("theta_max", math.pi)),
            refr_profile=profile, inlet=inlet,
        )
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc


def config_to_dict(cfg: WaveguideConfig) -> dict:
    d = {
        "r1": cfg.r1, "r2": cfg.r2, "omega": cfg.omega,
        "varsigma": {"re": cfg.varsigma.real, "im": cfg.varsigma.imag},
        "theta_max": cfg.theta_max,
        "refr_profile": cfg.refr_profile.to_dict(),
    }
    if cfg.inlet is not None and cfg.inlet.spec is not None:
        d["inlet"] = cfg.inlet.spec
    return d


def load_config(path: str) -> WaveguideConfig:
    return config_from_dict(_read_json(path))


def save_config(cfg: WaveguideConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)


def table1_config(theta_max: float = math.pi) -> WaveguideConfig:
    """omega=10, r1=99.5, r2=100.5, varsigma=1, n=1."""
    return WaveguideConfig(r1=99.5, r2=100.5, omega=10.0, varsigma=1.0, theta_max=theta_max)
