"""Multi-indices over Fourier modes and x-powers, with canonical enumeration."""

from __future__ import annotations

from functools import lru_cache
from math import factorial, lgamma

import numpy as np


class MultiIndex(tuple):
    """Tuple of nonnegative integers (b0, ..., b_l, b_{l+1}).

    The last slot is the x-power. Ordering used everywhere is (total, lex).
    """

    __slots__ = ()

    def __new__(cls, entries):
        vals = tuple(int(v) for v in entries)
        if not vals:
            raise ValueError("multi-index needs at least one slot")
        if any(v < 0 for v in vals):
            raise ValueError(f"negative entry in multi-index {vals}")
        return super().__new__(cls, vals)

    @property
    def total(self) -> int:
        return sum(self)

    @property
    def modes(self) -> tuple:
        return tuple(self[:-1])

    @property
    def xpow(self) -> int:
        return self[-1]

    def key(self):
        return (self.total, tuple(self))

    def __lt__(self, other):
        return self.key() < MultiIndex(other).key()

    def __le__(self, other):
        return self.key() <= MultiIndex(other).key()

    def __gt__(self, other):
        return self.key() > MultiIndex(other).key()

    def __ge__(self, other):
        return self.key() >= MultiIndex(other).key()

    def __add__(self, other):
        return MultiIndex(a + b for a, b in zip(self, other, strict=True))

    def __repr__(self):
        return f"MultiIndex{tuple(self)}"


def compositions(total: int, parts: int):
    """All tuples of `parts` nonnegative ints summing to `total`, lex order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def basis(nslots: int, trunc: int) -> tuple:
    """Canonically ordered indices with total <= trunc."""
    out = []
    for tot in range(trunc + 1):
        out.extend(MultiIndex(c) for c in sorted(compositions(tot, nslots)))
    return tuple(out)


@lru_cache(maxsize=None)
def basis_position(nslots: int, trunc: int) -> dict:
    return {m: i for i, m in enumerate(basis(nslots, trunc))}


@lru_cache(maxsize=None)
def basis_array(nslots: int, trunc: int) -> np.ndarray:
    arr = np.array(basis(nslots, trunc), dtype=np.int64)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _lookup(nslots: int, trunc: int):
    idx = basis_array(nslots, trunc)
    radix = (trunc + 1) ** np.arange(nslots)
    table = np.full((trunc + 1) ** nslots, -1, dtype=np.int64)
    table[idx @ radix] = np.arange(len(idx))
    return radix, table


def positions(nslots: int, trunc: int, idx: np.ndarray) -> np.ndarray:
    """Basis positions of rows of `idx` (all rows must have total <= trunc)."""
    radix, table = _lookup(nslots, trunc)
    return table[np.asarray(idx, dtype=np.int64) @ radix]


@lru_cache(maxsize=None)
def log_factorial_table(nmax: int) -> np.ndarray:
    out = np.array([lgamma(k + 1.0) for k in range(nmax + 1)])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def factorial_table(nmax: int) -> np.ndarray:
    """Float factorials 0..nmax. Past 170! doubles overflow; use log_factorial_table there."""
    out = np.array([float(factorial(k)) if k <= 170 else np.inf for k in range(nmax + 1)])
    out.setflags(write=False)
    return out


def multi_factorial(index) -> float:
    tab = factorial_table(max(max(index), 1))
    val = 1.0
    for v in index:
        val *= tab[v]
    return val


@lru_cache(maxsize=None)
def product_pairs(nslots: int, trunc: int):
    """Index triples (i1, i2, out) and weights prod C(b, b1) for the Cauchy product.

    Pairs are enumerated with out in canonical order, so summation order is fixed.
    """
    idx = basis_array(nslots, trunc)
    totals = idx.sum(axis=1)
    lf = log_factorial_table(trunc)
    i1s, i2s, outs, wts = [], [], [], []
    for i, a in enumerate(idx):
        js = np.nonzero(totals <= trunc - totals[i])[0]
        c = a[None, :] + idx[js]
        w = np.exp(np.sum(lf[c] - lf[a][None, :] - lf[idx[js]], axis=1))
        i1s.append(np.full(len(js), i))
        i2s.append(js)
        outs.append(positions(nslots, trunc, c))
        wts.append(np.where(w < 2.0**52, np.rint(w), w))
    i1s, i2s, outs, wts = (np.concatenate(v) for v in (i1s, i2s, outs, wts))
    order = np.lexsort((i2s, i1s, outs))
    res = tuple(v[order] for v in (i1s, i2s, outs, wts))
    for v in res:
        v.setflags(write=False)
    return res


def enumerate_splits(index, parts: int):
    """All ways to write `index` as an ordered sum of `parts` multi-indices."""
    per_slot = [list(compositions(v, parts)) for v in index]

    def rec(slot):
        if slot == len(index):
            yield [()] * parts
            return
        for tail in rec(slot + 1):
            for comp in per_slot[slot]:
                yield [tuple([comp[p]]) + tail[p] for p in range(parts)]

    for pieces in rec(0):
        yield tuple(MultiIndex(p) for p in pieces)
