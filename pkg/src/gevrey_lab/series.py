"""Truncated graded formal series in (Z_0, ..., Z_l, X).

A series is U = sum_b u_b Z^b X^q / (b! q!). Coefficients live in a dense complex
array over the canonical basis (total degree, then lex), so every loop and
reduction runs in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidSeriesError
from .indices import (
    MultiIndex,
    basis,
    basis_array,
    basis_position,
    log_factorial_table,
    positions,
    product_pairs,
)


@dataclass(frozen=True)
class GNormParams:
    zbar: tuple
    xbar: float

    def __post_init__(self):
        z = tuple(float(v) for v in self.zbar)
        object.__setattr__(self, "zbar", z)
        object.__setattr__(self, "xbar", float(self.xbar))
        if not z or min(z) <= 0 or self.xbar <= 0:
            raise DomainError("norm radii must be strictly positive")

    @property
    def radii(self) -> np.ndarray:
        return np.array(self.zbar + (self.xbar,))


class GradedSeries:
    """Immutable truncated series; `l` counts frequencies beyond xi_0 = 1."""

    __slots__ = ("l", "trunc", "coeffs")

    def __init__(self, l: int, trunc: int, coeffs=None):
        if l < 0 or trunc < 0:
            raise DomainError("l and trunc must be nonnegative")
        n = len(basis(l + 2, trunc))
        if coeffs is None:
            arr = np.zeros(n, dtype=complex)
        else:
            arr = np.array(coeffs, dtype=complex).reshape(-1)
            if arr.size != n:
                raise DomainError(f"expected {n} coefficients, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise InvalidSeriesError("series has non-finite coefficients")
        arr.setflags(write=False)
        object.__setattr__(self, "l", int(l))
        object.__setattr__(self, "trunc", int(trunc))
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GradedSeries is immutable")

    @property
    def nslots(self) -> int:
        return self.l + 2

    @property
    def indices(self) -> tuple:
        return basis(self.nslots, self.trunc)

    @classmethod
    def zeros(cls, l, trunc):
        return cls(l, trunc)

    @classmethod
    def from_dict(cls, l, trunc, mapping):
        pos = basis_position(l + 2, trunc)
        arr = np.zeros(len(pos), dtype=complex)
        for idx, val in mapping.items():
            idx = MultiIndex(idx)
            if len(idx) != l + 2:
                raise DomainError(f"index {tuple(idx)} has wrong length for l={l}")
            if idx.total <= trunc:
                arr[pos[idx]] += val
        return cls(l, trunc, arr)

    @classmethod
    def monomial(cls, l, trunc, index, value=1.0):
        return cls.from_dict(l, trunc, {MultiIndex(index): value})

    def __getitem__(self, index) -> complex:
        idx = MultiIndex(index)
        if idx.total > self.trunc:
            return 0j
        return complex(self.coeffs[basis_position(self.nslots, self.trunc)[idx]])

    def items(self):
        for idx, val in zip(self.indices, self.coeffs):
            if val != 0:
                yield idx, complex(val)

    def __len__(self):
        return int(np.count_nonzero(self.coeffs))

    def with_trunc(self, trunc: int) -> "GradedSeries":
        """Restrict (drop high totals) or embed (pad with zeros) at a new truncation."""
        n_new = len(basis(self.nslots, trunc))
        if trunc <= self.trunc:
            return GradedSeries(self.l, trunc, self.coeffs[:n_new])
        arr = np.zeros(n_new, dtype=complex)
        arr[: self.coeffs.size] = self.coeffs
        return GradedSeries(self.l, trunc, arr)

    def _align(self, other):
        if not isinstance(other, GradedSeries) or other.l != self.l:
            raise DomainError("series must share l")
        t = min(self.trunc, other.trunc)
        return self.with_trunc(t).coeffs, other.with_trunc(t).coeffs, t

    def __add__(self, other):
        a, b, t = self._align(other)
        return GradedSeries(self.l, t, a + b)

    def __sub__(self, other):
        a, b, t = self._align(other)
        return GradedSeries(self.l, t, a - b)

    def __neg__(self):
        return GradedSeries(self.l, self.trunc, -self.coeffs)

    def scale(self, factor) -> "GradedSeries":
        return GradedSeries(self.l, self.trunc, self.coeffs * factor)

    def __mul__(self, other):
        if isinstance(other, GradedSeries):
            return product(self, other)
        return self.scale(other)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def to_json(self) -> dict:
        return {
            "l": self.l,
            "trunc": self.trunc,
            "coeffs": [
                {"beta": list(idx), "re": float(v.real), "im": float(v.imag)}
                for idx, v in self.items()
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GradedSeries":
        l, trunc = int(data["l"]), int(data["trunc"])
        mapping = {}
        for item in data["coeffs"]:
            mapping[MultiIndex(item["beta"])] = complex(item["re"], item["im"])
        return cls.from_dict(l, trunc, mapping)

    def __repr__(self):
        return f"GradedSeries(l={self.l}, trunc={self.trunc}, nnz={len(self)})"


def _norm_weights(nslots: int, trunc: int, radii) -> np.ndarray:
    idx = basis_array(nslots, trunc)
    lf = log_factorial_table(trunc)
    logw = idx @ np.log(np.asarray(radii, dtype=float)) - lf[idx.sum(axis=1)]
    return np.exp(logw)


def g_norm(u: GradedSeries, p: GNormParams) -> float:
    """Sum of |u_b| Zbar^b Xbar^q / |b|! over the stored coefficients."""
    if len(p.zbar) != u.l + 1:
        raise DomainError("norm radii do not match the number of Z variables")
    if not np.all(np.isfinite(u.coeffs)):
        raise InvalidSeriesError("series has non-finite coefficients")
    w = _norm_weights(u.nslots, u.trunc, p.radii)
    return float(np.sum(np.abs(u.coeffs) * w))


def _relocate(u: GradedSeries, shift: np.ndarray, out_trunc: int) -> GradedSeries:
    idx = basis_array(u.nslots, u.trunc)
    target = idx + shift[None, :]
    keep = np.all(target >= 0, axis=1) & (target.sum(axis=1) <= out_trunc) & (u.coeffs != 0)
    arr = np.zeros(len(basis(u.nslots, out_trunc)), dtype=complex)
    arr[positions(u.nslots, out_trunc, target[keep])] = u.coeffs[keep]
    return GradedSeries(u.l, out_trunc, arr)


def apply_shift_down(u: GradedSeries, h, out_trunc: int | None = None) -> GradedSeries:
    """Apply d_Z^{h_0..h_l} d_X^{-h_{l+1}}.

    In the factorial normalization the coefficient just moves from b to
    (b_Z - h_Z, q + h_X); entries leaving the truncation are dropped.
    """
    h = np.asarray(h, dtype=np.int64)
    if h.size != u.nslots or np.any(h < 0):
        raise DomainError("shift vector must have l+2 nonnegative entries")
    if h[-1] < h[:-1].sum():
        raise DomainError("need h_{l+1} >= sum of the Z orders")
    shift = np.concatenate([-h[:-1], h[-1:]])
    return _relocate(u, shift, u.trunc if out_trunc is None else out_trunc)


def apply_derivative(u: GradedSeries, h) -> GradedSeries:
    """Pure differentiation; the result is exact up to total trunc - |h|."""
    h = np.asarray(h, dtype=np.int64)
    if h.size != u.nslots or np.any(h < 0):
        raise DomainError("derivative orders must have l+2 nonnegative entries")
    out_trunc = max(u.trunc - int(h.sum()), 0)
    return _relocate(u, -h, out_trunc)


def product(u1: GradedSeries, u2: GradedSeries, trunc: int | None = None) -> GradedSeries:
    """Cauchy product in the factorial normalization, truncated by total degree."""
    if u1.l != u2.l:
        raise DomainError("series must share l")
    t = min(u1.trunc, u2.trunc) if trunc is None else min(trunc, u1.trunc, u2.trunc)
    a = u1.with_trunc(t).coeffs
    b = u2.with_trunc(t).coeffs
    i1, i2, out, w = product_pairs(u1.nslots, t)
    vals = a[i1] * b[i2] * w
    arr = np.zeros(len(basis(u1.nslots, t)), dtype=complex)
    np.add.at(arr, out, vals)
    return GradedSeries(u1.l, t, arr)


def power(u: GradedSeries, m: int) -> GradedSeries:
    if m < 0:
        raise DomainError("negative power")
    out = GradedSeries.monomial(u.l, u.trunc, (0,) * u.nslots)
    for _ in range(m):
        out = product(out, u)
    return out


def random_series(rng: np.random.Generator, l: int, trunc: int, density: float = 1.0,
                  scale: float = 1.0) -> GradedSeries:
    n = len(basis(l + 2, trunc))
    vals = rng.normal(size=n) + 1j * rng.normal(size=n)
    mask = rng.random(n) < density
    return GradedSeries(l, trunc, scale * vals * mask)


def derivative_constant(h, p0: GNormParams, p1: GNormParams, trunc: int) -> float:
    """Exact sup of the derivative-bound ratio over series truncated at `trunc`.

    The ratio is a quotient of weighted l1 sums, so its sup is attained on a
    monomial; we scan all monomials with total <= trunc.
    """
    h = np.asarray(h, dtype=np.int64)
    nslots = h.size
    if trunc < h.sum():
        return 0.0
    radii1 = p1.radii
    scale = np.prod(radii1 ** (-h.astype(float)))
    w0 = _norm_weights(nslots, trunc, p0.radii)
    idx = basis_array(nslots, trunc)
    lf = log_factorial_table(trunc)
    ok = np.all(idx >= h[None, :], axis=1)
    low = idx[ok] - h[None, :]
    w1 = np.exp(low @ np.log(radii1) - lf[low.sum(axis=1)])
    return float(np.max(w1 / (w0[ok] * scale)))


def estimate_c2(h, p0: GNormParams, p1: GNormParams, trunc: int, rng, n_samples: int = 200) -> float:
    """Smallest C_2 consistent with random series and all monomials at this truncation."""
    h = np.asarray(h, dtype=np.int64)
    l = h.size - 2
    scale = np.prod(p1.radii ** (-h.astype(float)))
    best = 0.0
    for _ in range(n_samples):
        u = random_series(rng, l, trunc, density=rng.uniform(0.1, 1.0))
        den = g_norm(u, p0) * scale
        if den > 0:
            best = max(best, g_norm(apply_derivative(u, h), p1) / den)
    return max(best, derivative_constant(h, p0, p1, trunc))


def multiply_monomial(u: GradedSeries, mu, value: complex = 1.0) -> GradedSeries:
    """value * Z^mu * u (plain monomial, not divided by mu!), truncated at u.trunc.

    In the factorial normalization the coefficient at g is g!/(g - mu)! u_{g - mu}.
    """
    mu = np.asarray(mu, dtype=np.int64)
    if mu.size != u.nslots or np.any(mu < 0):
        raise DomainError("monomial exponent must have l+2 nonnegative entries")
    moved = _relocate(u, mu, u.trunc)
    idx = basis_array(u.nslots, u.trunc)
    ok = np.all(idx >= mu[None, :], axis=1)
    lf = log_factorial_table(u.trunc)
    fac = np.zeros(idx.shape[0])
    fac[ok] = np.exp(np.sum(lf[idx[ok]] - lf[idx[ok] - mu[None, :]], axis=1))
    fac = np.where(fac < 2.0**52, np.rint(fac), fac)
    return GradedSeries(u.l, u.trunc, moved.coeffs * fac * value)
