"""Borel-plane functions sampled along a ray, and Laplace transforms of order 1.

A ray grid is a composite Gauss-Legendre rule on [0, L] e^{i gamma} with panels
that double in length away from the origin. Functions are stored by their
values at the nodes; the Volterra operations the Borel recursion needs
(antiderivative from 0, Borel convolution) act on those values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy import sparse

from .errors import DomainError, GeometryError


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre on geometrically growing panels.

    `ray_length_multiplier` times the decay length |T|/cos(gamma - arg T) sets
    the cutoff; e^{-45} is far below 1e-16 even after polynomial growth.
    """

    panel_nodes: int = 32
    growth: float = 2.0
    ray_length_multiplier: float = 45.0
    tol: float = 1e-10
    max_doublings: int = 4

    def __post_init__(self):
        if self.panel_nodes < 4 or self.growth <= 1 or self.ray_length_multiplier <= 0:
            raise DomainError("invalid quadrature parameters")


def _breakpoints(first: float, length: float, growth: float) -> np.ndarray:
    pts = [0.0, first]
    while pts[-1] < length:
        pts.append(pts[-1] * growth)
    return np.array(pts)


def _split(bp: np.ndarray) -> np.ndarray:
    mid = 0.5 * (bp[:-1] + bp[1:])
    return np.sort(np.concatenate([bp, mid]))


def ray_condition(gamma: float, T: complex) -> float:
    return float(np.cos(gamma - np.angle(T)))


def _gl_sum(f, gamma, bp, n, T):
    x, w = legendre.leggauss(n)
    a, b = bp[:-1, None], bp[1:, None]
    rho = (a + (x[None, :] + 1) * (b - a) / 2).ravel()
    wt = (w[None, :] * (b - a) / 2).ravel()
    e = np.exp(1j * gamma)
    tau = rho * e
    return complex(np.sum(wt * np.asarray(f(tau), dtype=complex) * np.exp(-tau / T)) * e / T)


def laplace_ray(v, gamma: float, T: complex, q: QuadratureSpec | None = None, delta1: float = 0.2,
                return_error: bool = False):
    """T^{-1} int_0^{inf e^{i gamma}} v(tau) e^{-tau/T} d tau.

    `v` is any callable on complex arrays (TauPolynomial works). The estimate
    is the change under splitting every panel, repeated until it is below tol.
    """
    q = q or QuadratureSpec()
    T = complex(T)
    c = ray_condition(gamma, T)
    if T == 0 or c < delta1:
        raise GeometryError(f"ray direction {gamma:.4f} inadmissible for arg T = {np.angle(T):.4f}")
    lam = abs(T) / c
    bp = _breakpoints(lam / 8, q.ray_length_multiplier * lam, q.growth)
    val = _gl_sum(v, gamma, bp, q.panel_nodes, T)
    err = np.inf
    for _ in range(q.max_doublings):
        bp = _split(bp)
        new = _gl_sum(v, gamma, bp, q.panel_nodes, T)
        err = abs(new - val)
        val = new
        if err <= q.tol * max(abs(val), 1e-300):
            break
    return (val, err) if return_error else val


def _bary_weights(x, w):
    # barycentric weights of the Gauss-Legendre nodes
    lam = np.sqrt((1 - x ** 2) * w)
    lam[1::2] *= -1
    return lam


class RayGrid:
    """Nodes rho_k on [0, L] for the ray tau = rho e^{i gamma}."""

    def __init__(self, gamma: float, length: float, first: float, n: int = 24, growth: float = 2.0):
        if not (length > 0 and 0 < first <= length):
            raise DomainError("need 0 < first panel <= ray length")
        self.gamma = float(gamma)
        self.n = int(n)
        self.bp = _breakpoints(first, length, growth)
        self.x, self.w = legendre.leggauss(self.n)
        self._lam = _bary_weights(self.x, self.w)
        a, b = self.bp[:-1, None], self.bp[1:, None]
        self.h = (self.bp[1:] - self.bp[:-1])
        self.rho = (a + (self.x[None, :] + 1) * (b - a) / 2).ravel()
        self.weights = (self.w[None, :] * (b - a) / 2).ravel()
        self.phase = np.exp(1j * self.gamma)
        self.tau = self.rho * self.phase
        self._cum = None
        self._conv = None

    @property
    def size(self) -> int:
        return self.rho.size

    @property
    def panels(self) -> int:
        return self.h.size

    @classmethod
    def for_transforms(cls, gamma: float, Ts, feature: float, n: int = 24,
                       q: QuadratureSpec | None = None) -> "RayGrid":
        """Grid long enough for every T in `Ts` and fine enough near 0 for scale `feature`."""
        q = q or QuadratureSpec()
        lams = []
        for T in Ts:
            c = ray_condition(gamma, T)
            if c <= 0:
                raise GeometryError("ray points away from the Laplace half-plane")
            lams.append(abs(T) / c)
        first = 0.25 * min(min(lams), feature)
        return cls(gamma, q.ray_length_multiplier * max(lams), first, n, q.growth)

    # -- interpolation
    def interpolation_matrix(self, pts) -> sparse.csr_matrix:
        pts = np.asarray(pts, dtype=float)
        if pts.size and (pts.min() < -1e-12 * self.bp[-1] or pts.max() > self.bp[-1] * (1 + 1e-12)):
            raise DomainError("interpolation point outside the ray grid")
        k = np.clip(np.searchsorted(self.bp, pts, side="right") - 1, 0, self.panels - 1)
        a = self.bp[k]
        y = 2 * (pts - a) / self.h[k] - 1
        diff = y[:, None] - self.x[None, :]
        hit = np.abs(diff) < 1e-15
        diff[hit] = 1.0
        c = self._lam[None, :] / diff
        c /= c.sum(axis=1, keepdims=True)
        rows_hit = hit.any(axis=1)
        c[rows_hit] = hit[rows_hit].astype(float)
        cols = k[:, None] * self.n + np.arange(self.n)[None, :]
        rows = np.repeat(np.arange(pts.size), self.n)
        return sparse.csr_matrix((c.ravel(), (rows, cols.ravel())), shape=(pts.size, self.size))

    # -- antiderivative
    def cumulative_matrix(self) -> np.ndarray:
        if self._cum is None:
            n = self.n
            local = np.zeros((n, n))
            van = legendre.legvander(self.x, n - 1)
            inv = np.linalg.inv(van)
            for j in range(n):
                integ = legendre.legint(inv[:, j], lbnd=-1)
                local[:, j] = legendre.legval(self.x, integ)
            P = self.panels
            C = np.zeros((self.size, self.size))
            for k in range(P):
                s = slice(k * n, (k + 1) * n)
                C[s, s] = local * self.h[k] / 2
                if k:
                    C[s, : k * n] = self.weights[None, : k * n]
            self._cum = C
        return self._cum

    def antiderivative(self, f, times: int = 1) -> np.ndarray:
        C = self.cumulative_matrix() * self.phase
        out = np.asarray(f, dtype=complex)
        for _ in range(times):
            out = C @ out
        return out

    # -- convolution
    def _convolution_rule(self):
        if self._conv is None:
            x, w = self.x, self.w
            us, targets, wts = [], [], []
            for i, r in enumerate(self.rho):
                inner = self.bp[(self.bp > 0) & (self.bp < r)]
                cuts = np.unique(np.concatenate([[0.0, r], inner, r - inner]))
                a, b = cuts[:-1, None], cuts[1:, None]
                us.append((a + (x[None, :] + 1) * (b - a) / 2).ravel())
                wts.append((w[None, :] * (b - a) / 2).ravel())
                targets.append(np.full(us[-1].size, i))
            u = np.concatenate(us)
            tgt = np.concatenate(targets)
            wt = np.concatenate(wts)
            right = self.interpolation_matrix(u)
            left = self.interpolation_matrix(np.clip(self.rho[tgt] - u, 0.0, None))
            starts = np.concatenate([[0], np.cumsum([len(s) for s in us])[:-1]])
            self._conv = (left, right, wt * self.phase, starts)
        return self._conv

    def convolution_parts(self, f):
        """(values of f at rho_i - u, values at u) on the convolution sub-rule."""
        left, right, _, _ = self._convolution_rule()
        f = np.asarray(f, dtype=complex)
        return left @ f, right @ f

    def convolve_parts(self, fl, gr) -> np.ndarray:
        _, _, wt, starts = self._convolution_rule()
        return np.add.reduceat(wt * fl * gr, starts)

    def convolve(self, f, g) -> np.ndarray:
        """(f * g)(tau_i) = int_0^{tau_i} f(tau_i - s) g(s) ds."""
        fl, _ = self.convolution_parts(f)
        _, gr = self.convolution_parts(g)
        return self.convolve_parts(fl, gr)

    # -- Laplace transform
    def laplace(self, f, T: complex, delta1: float | None = None) -> complex:
        T = complex(T)
        if delta1 is not None and ray_condition(self.gamma, T) < delta1:
            raise GeometryError(f"ray {self.gamma:.4f} inadmissible for arg T = {np.angle(T):.4f}")
        kern = self.weights * np.exp(-self.tau / T)
        return complex(kern @ np.asarray(f, dtype=complex) * self.phase / T)

    def laplace_many(self, F: np.ndarray, T: complex) -> np.ndarray:
        """Laplace transforms of the rows of F at one T."""
        kern = self.weights * np.exp(-self.tau / complex(T))
        return F @ kern * self.phase / complex(T)


class RayAlgebra:
    """Borel-plane functions as values on a ray grid; same interface as the Taylor algebra."""

    name = "ray"

    def __init__(self, grid: RayGrid, r1: int, r2: int):
        self.grid, self.r1, self.r2 = grid, int(r1), int(r2)
        self._parts = {}

    def zero(self):
        return np.zeros(self.grid.size, dtype=complex)

    def is_zero(self, v) -> bool:
        return not np.any(v)

    def add(self, a, b):
        return a + b

    def scale(self, a, c):
        return a * c

    def shift(self, v, r_: int, p_: int):
        out = self.grid.antiderivative(v, p_) if p_ else v
        return out * self.grid.tau ** r_ if r_ else out

    def antider(self, v, l0: int):
        return self.grid.antiderivative(v, l0) if l0 else v

    def _cached_parts(self, v):
        key = id(v)
        hit = self._parts.get(key)
        if hit is None or hit[0] is not v:
            hit = (v,) + self.grid.convolution_parts(v)
            self._parts[key] = hit
        return hit[1], hit[2]

    def convolve(self, a, b):
        fl, _ = self._cached_parts(a)
        _, gr = self._cached_parts(b)
        return self.grid.convolve_parts(fl, gr)

    def divide(self, v, amplitude: float):
        return v / (self.grid.tau ** self.r2 + amplitude ** self.r1)

    def from_datum(self, datum):
        return np.asarray(datum.evaluate(self.grid.tau), dtype=complex)
