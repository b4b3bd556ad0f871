"""Zeros of f(w) = sin w + w and the impedances that produce Jordan chains.

For the straight guide -phi'' = lambda phi on (0, 1) with phi'(0) = 0 and
phi'(1) + i omega varsigma phi(1) = 0 the eigenfunction is cos(z x), z^2 = lambda,
with z tan z = i omega varsigma.  A chain of length two needs in addition
int_0^1 cos^2(z x) dx = 0, i.e. sin 2z + 2z = 0, so z = w/2 for a zero w of f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_TOL, ToleranceSet


@dataclass(frozen=True)
class Box:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        vals = (self.re_min, self.re_max, self.im_min, self.im_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("box must be finite")
        if self.re_min >= self.re_max or self.im_min >= self.im_max:
            raise ValueError("empty box")

    @property
    def area(self) -> float:
        return (self.re_max - self.re_min) * (self.im_max - self.im_min)

    def contains(self, z, margin: float = 0.0) -> np.ndarray:
        z = np.asarray(z)
        return ((z.real > self.re_min + margin) & (z.real < self.re_max - margin)
                & (z.imag > self.im_min + margin) & (z.imag < self.im_max - margin))

    def edge_distance(self, z) -> np.ndarray:
        z = np.asarray(z)
        return np.minimum.reduce([z.real - self.re_min, self.re_max - z.real,
                                  z.imag - self.im_min, self.im_max - z.imag])


def f_sin_plus_z(w):
    return np.sin(w) + w


def df_sin_plus_z(w):
    return np.cos(w) + 1.0


@dataclass
class RootSearch:
    roots: np.ndarray
    residuals: np.ndarray
    seeds: int
    box: Box


def find_roots_sin_plus_z(box: Box, density: float = 20.0, tol: ToleranceSet = DEFAULT_TOL) -> RootSearch:
    """Newton from a uniform seed grid; zero is excluded, duplicates merged within tol.root_dedupe."""
    if density < 20:
        raise ValueError("seed density must be at least 20 per unit area")
    nx = max(2, int(math.ceil(math.sqrt(density * box.area * (box.re_max - box.re_min) / (box.im_max - box.im_min)))))
    ny = max(2, int(math.ceil(density * box.area / nx)))
    x = np.linspace(box.re_min, box.re_max, nx)
    y = np.linspace(box.im_min, box.im_max, ny)
    z = (x[None, :] + 1j * y[:, None]).ravel()
    active = np.ones(z.shape, bool)
    with np.errstate(all="ignore"):
        for _ in range(tol.root_maxiter):
            za = z[active]
            step = f_sin_plus_z(za) / df_sin_plus_z(za)
            bad = ~np.isfinite(step)
            step[bad] = 0.0
            z[active] = za - step
            active[active] = (np.abs(step) > 1e-15 * np.maximum(1.0, np.abs(za))) & ~bad
            if not active.any():
                break
        z = z[np.isfinite(z)]
        res = np.abs(f_sin_plus_z(z))
    keep = (res < tol.root_residual) & box.contains(z) & (np.abs(z) > tol.root_dedupe)
    roots: list[complex] = []
    for c in z[keep]:
        if all(abs(c - r) > tol.root_dedupe for r in roots):
            roots.append(complex(c))
    roots_arr = np.array(roots, complex)
    order = np.lexsort((roots_arr.imag, roots_arr.real)) if len(roots_arr) else np.array([], int)
    roots_arr = roots_arr[order]
    return RootSearch(roots_arr, np.abs(f_sin_plus_z(roots_arr)), int(nx * ny), box)


def argument_principle_count(box: Box, n0: int = 256, max_doublings: int = 12) -> int:
    """(1/2 pi i) closed-contour integral of f'/f, trapezoid per edge, doubled until the value is integer-stable."""
    corners = [complex(box.re_min, box.im_min), complex(box.re_max, box.im_min),
               complex(box.re_max, box.im_max), complex(box.re_min, box.im_max)]
    prev = None
    n = n0
    for _ in range(max_doublings):
        total = 0.0 + 0.0j
        for a, b in zip(corners, corners[1:] + corners[:1]):
            s = np.linspace(0.0, 1.0, n + 1)
            zz = a + (b - a) * s
            g = df_sin_plus_z(zz) / f_sin_plus_z(zz) * (b - a)
            total += (np.sum(g) - 0.5 * (g[0] + g[-1])) / n
        val = total / (2j * math.pi)
        k = int(round(val.real))
        if abs(val - k) < 1e-3 and prev == k:
            return k
        prev = k if abs(val - k) < 0.05 else None
        n *= 2
    raise ArithmeticError(f"argument principle did not stabilize for {box}")


def random_subboxes(outer: Box, roots: np.ndarray, count: int = 5, seed: int = 0, margin: float = 0.05) -> list:
    """Random sub-boxes whose edges stay at least margin away from every root (and from zero)."""
    rng = np.random.default_rng(seed)
    pts = np.concatenate([roots, [0.0]])
    out = []
    while len(out) < count:
        xa, xb = np.sort(rng.uniform(outer.re_min, outer.re_max, 2))
        ya, yb = np.sort(rng.uniform(outer.im_min, outer.im_max, 2))
        if xb - xa < 1.0 or yb - ya < 1.0:
            continue
        b = Box(xa, xb, ya, yb)
        if np.all(np.abs(b.edge_distance(pts)) > margin):
            out.append(b)
    return out


def impedance_for_chain(w: complex, omega: float) -> tuple[complex, complex]:
    """(varsigma, z) with z = w/2 and varsigma = z tan z / (i omega)."""
    if omega == 0:
        raise ValueError("omega must be nonzero")
    z = complex(w) / 2
    c = np.cos(z)
    if abs(c) < 1e-12:
        raise ZeroDivisionError("cos z vanishes: varsigma has a pole")
    return complex(z * np.sin(z) / c / (1j * omega)), z


def plot_log_abs(box: Box, roots: np.ndarray, path: str, resolution: int = 400):
    """Filled contours of log|sin w + w| with the zeros marked, written as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.linspace(box.re_min, box.re_max, resolution)
    y = np.linspace(box.im_min, box.im_max, max(2, int(resolution * (box.im_max - box.im_min) / (box.re_max - box.re_min))))
    Z = x[None, :] + 1j * y[:, None]
    L = np.log(np.abs(f_sin_plus_z(Z)) + 1e-300)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    cs = ax.contourf(x, y, L, levels=40, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="log|sin w + w|")
    if len(roots):
        ax.plot(np.real(roots), np.imag(roots), "w+", ms=8)
    ax.set_xlabel("Re w")
    ax.set_ylabel("Im w")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
