"""Borel-plane engine: operator rewritings, the V recursion and its scalar majorant.

Coefficients are indexed by b = (b_0, ..., b_l, b_x). A table holds V_b(tau, eps)
at a fixed eps for every key of the closed key set

    init keys       (modes, j)      |modes| <= B, 0 <= j < S
    generated keys  (modes, q + S)  |modes| + q <= B

and the fill runs by x-index, then canonical mode order, so every read hits a
finished entry.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, e, factorial

import numpy as np
from scipy import optimize

from .ck import CkProblem, solve_fixed_point
from .divisors import AlgebraicFrequencies, DivisorContext, mode_amplitude
from .errors import DomainError, DominationFailure, EngineDefectError, SmallDivisorError
from .indices import basis
from .norms import ENormParams, GridSpec, TauPolynomial, e_norm, tau_convolve, tau_power_antiderivative
from .series import GNormParams, GradedSeries, apply_derivative, multiply_monomial

log = logging.getLogger(__name__)

DIVISOR_FLOOR = 1e-13


# ---------------------------------------------------------------- Borel transform

def borel_transform(coeffs) -> TauPolynomial:
    """sum a_j t^j / j!  ->  sum a_j tau^j / (j!)^2."""
    a = np.asarray(coeffs, dtype=complex)
    fac = np.array([float(factorial(j)) for j in range(a.size)])
    return TauPolynomial(a / fac ** 2)


def _stored_times_t(a):
    """Stored coefficients of t X for X = sum a_j t^j / j!."""
    out = np.zeros(a.size + 1, dtype=complex)
    out[1:] = np.arange(1, a.size + 1) * a
    return out


def _stored_product(a, g):
    n = min(a.size, g.size)
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        out[k] = sum(comb(k, j) * a[j] * g[k - j] for j in range(k + 1))
    return out


@dataclass
class IdentityReport:
    errors: dict
    tol: float

    @property
    def ok(self) -> bool:
        return all(v <= self.tol for v in self.errors.values())


def _rel_gap(p: TauPolynomial, q: TauPolynomial, n: int) -> float:
    a, b = p.padded(n), q.padded(n)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def check_borel_identities(x_coeffs, g_coeffs, tol: float = 1e-12) -> IdentityReport:
    """Compare both sides of the four Borel-plane identities coefficientwise.

    Inputs are stored coefficients a_j of X = sum a_j t^j / j!. Each comparison
    runs over the degrees where the truncated input determines both sides.
    """
    a = np.asarray(x_coeffs, dtype=complex)
    g = np.asarray(g_coeffs, dtype=complex)
    if a.size < 3 or g.size < 3:
        raise DomainError("identity check needs truncation degree >= 2")
    n = a.size - 1
    BX = borel_transform(a)
    errs = {}
    lhs = BX.derivative(2) * TauPolynomial([0, 1]) + BX.derivative(1)
    errs["derivative"] = _rel_gap(lhs, borel_transform(a[1:]), n - 1)
    errs["antiderivative"] = _rel_gap(tau_power_antiderivative(BX, 0, 1),
                                      borel_transform(_stored_times_t(a)), n + 1)
    euler = np.zeros(a.size + 1, dtype=complex)
    euler[1:] = np.arange(1, a.size + 1) ** 2 * a
    errs["multiplication"] = _rel_gap(TauPolynomial([0, 1]) * BX, borel_transform(euler), n + 1)
    m = min(a.size, g.size)
    conv = tau_convolve(borel_transform(a[:m]), borel_transform(g[:m]))
    errs["convolution"] = _rel_gap(conv, borel_transform(_stored_times_t(_stored_product(a, g))), m)
    rep = IdentityReport(errs, tol)
    if not rep.ok:
        raise EngineDefectError(f"Borel identity failed: {errs}")
    return rep


# ---------------------------------------------------------------- operator rewrites

def _weyl_product(p: dict, q: dict) -> dict:
    """(tau^a d^b)(tau^c d^d) = sum_k C(b,k) c!/(c-k)! tau^{a+c-k} d^{b-k+d}."""
    out = {}
    for (a, b), x in p.items():
        for (c, d), y in q.items():
            for k in range(min(b, c) + 1):
                coef = comb(b, k) * (factorial(c) // factorial(c - k))
                key = (a + c - k, b - k + d)
                out[key] = out.get(key, 0) + x * y * coef
    return {k: v for k, v in out.items() if v}


@lru_cache(maxsize=None)
def rewrite_irregular_power(k0: int) -> tuple:
    """(tau d^2 + d)^{k0} = sum_{k=k0}^{2k0} a_k tau^{k-k0} d^k; returns ((k, a_k), ...)."""
    if k0 < 1:
        raise DomainError("k0 must be at least 1")
    base = {(1, 2): 1, (0, 1): 1}
    op = {(0, 0): 1}
    for _ in range(k0):
        op = _weyl_product(op, base)
    out = []
    for (a, b), v in sorted(op.items(), key=lambda kv: kv[0][1]):
        if a != b - k0:
            raise EngineDefectError(f"unexpected term tau^{a} d^{b}")
        out.append((b, int(v)))
    return tuple(out)


@lru_cache(maxsize=None)
def _integrate_once(b: int, c: int) -> tuple:
    # d^{-1}(tau^b d^c u) = tau^b d^{c-1} u - b d^{-1}(tau^{b-1} d^{c-1} u)
    if b == 0:
        return (((0, c - 1), 1),)
    terms = {(b, c - 1): 1}
    for key, val in _integrate_once(b - 1, c - 1):
        terms[key] = terms.get(key, 0) - b * val
    return tuple(sorted(terms.items()))


@lru_cache(maxsize=None)
def rewrite_antiderivative_product(a: int, b: int, c: int) -> tuple:
    """d^{-a}(tau^b d^c u) as ((b', c', alpha), ...) with b'-c' = a+b-c, b' >= 0, c' <= 0.

    Repeated integration by parts; a step that integrates a pure derivative
    d^c u (b = 0, c >= 1) drops the constant (d^{c-1}u)(0).
    """
    if min(a, b, c) < 0 or a < b or a < c:
        raise DomainError("need nonnegative a, b, c with a >= b and a >= c")
    terms = {(b, c): 1}
    for _ in range(a):
        nxt = {}
        for (bb, cc), val in terms.items():
            for key, v in _integrate_once(bb, cc):
                nxt[key] = nxt.get(key, 0) + val * v
        terms = {k: v for k, v in nxt.items() if v}
    return tuple((bb, cc, v) for (bb, cc), v in sorted(terms.items()))


def _direct_linear_on_monomial(s: int, k0: int, m: int) -> Fraction:
    """d^{-s}(tau d^2 + d)^{k0} tau^m = lam * tau^{m + s - k0}; returns lam."""
    if m < k0:
        return Fraction(0)
    lam = Fraction(1)
    for j in range(k0):
        lam *= (m - j) ** 2
    n = m - k0
    return lam * Fraction(factorial(n), factorial(n + s))


@lru_cache(maxsize=None)
def borel_linear_operator(s: int, k0: int) -> tuple:
    """d^{-s}(tau d^2 + d)^{k0} as ((r', p', alpha), ...) meaning sum alpha tau^{r'} d^{-p'}.

    r' + p' = s - k0. The expansion is checked exactly on tau^m for m <= 40.
    """
    if s < 2 * k0:
        raise DomainError(f"need s >= 2 k0 for the rewrite, got s={s}, k0={k0}")
    if k0 == 0:
        terms = {(0, s): 1}
    else:
        terms = {}
        for k, a_k in rewrite_irregular_power(k0):
            for bb, cc, alpha in rewrite_antiderivative_product(s, k - k0, k):
                terms[(bb, -cc)] = terms.get((bb, -cc), 0) + a_k * alpha
    terms = {k: v for k, v in terms.items() if v}
    for m in range(41):
        val = sum(Fraction(alpha * factorial(m), factorial(m + p)) for (r, p), alpha in terms.items())
        if val != _direct_linear_on_monomial(s, k0, m):
            raise EngineDefectError(f"rewrite of d^-{s}(tau d^2+d)^{k0} is not exact at tau^{m}")
    return tuple((r, p, v) for (r, p), v in sorted(terms.items()))


# ---------------------------------------------------------------- problem data

@dataclass(frozen=True)
class LinearTerm:
    s: int
    k0: int
    k1: int
    k2: int

    def as_tuple(self):
        return (self.s, self.k0, self.k1, self.k2)


@dataclass(frozen=True)
class NonlinearTerm:
    l0: int
    l1: int

    def as_tuple(self):
        return (self.l0, self.l1)


@dataclass(frozen=True)
class Structure:
    """Integer shape of the problem together with the frequencies."""

    S: int
    r1: int
    r2: int
    r3: int
    b: float
    sigma: float
    freq: AlgebraicFrequencies
    linear: tuple = ()
    nonlinear: tuple = ()

    @property
    def l(self) -> int:
        return self.freq.l

    @property
    def h(self) -> int:
        return self.freq.h

    @property
    def r(self) -> float:
        return self.r3 / self.r2

    def violations(self) -> list:
        out = []
        S, b, hr1 = self.S, self.b, self.h * self.r1
        for t in self.linear:
            s, k0, k1, k2 = t.as_tuple()
            tag = f"linear term (s,k0,k1,k2)={t.as_tuple()}"
            if not s >= 2 * k0:
                out.append(f"{tag}: s >= 2 k0 fails ({s} < {2 * k0})")
            if not S > k2:
                out.append(f"{tag}: S > k2 fails ({S} <= {k2})")
            bound = b * (s - k0 + 2) + k2
            if not S > bound:
                out.append(f"{tag}: S > b(s-k0+2)+k2 fails ({S} <= {bound:g})")
            bound4 = hr1 + b * (s - k0 + 2) + k1 + k2
            if not S >= bound4:
                out.append(f"{tag}: S >= h r1 + b(s-k0+2) + k1 + k2 fails ({S} < {bound4:g})")
        for t in self.nonlinear:
            if not t.l1 >= 2:
                out.append(f"nonlinear term (l0,l1)={t.as_tuple()}: l1 >= 2 fails")
            if t.l0 < 0:
                out.append(f"nonlinear term (l0,l1)={t.as_tuple()}: l0 must be nonnegative")
        if min(self.S, self.r1, self.r2, self.r3) < 1:
            out.append("S, r1, r2, r3 must be positive integers")
        return out

    def require_valid(self):
        problems = self.violations()
        if problems:
            raise DomainError("; ".join(problems))


def eps_power(eps: complex, exponent: float) -> complex:
    """eps^exponent on the principal branch."""
    eps = complex(eps)
    if eps == 0:
        raise DomainError("eps must be nonzero")
    return abs(eps) ** exponent * np.exp(1j * exponent * np.angle(eps))


def _eps_poly(coeffs, eps) -> complex:
    return complex(sum(complex(c) * eps ** k for k, c in enumerate(coeffs)))


def _eps_sup(coeffs, eps0: float) -> float:
    return float(sum(abs(complex(c)) * eps0 ** k for k, c in enumerate(coeffs)))


@dataclass(frozen=True)
class CoefficientData:
    """eps-Taylor coefficients of b_{s,k0,k1,k2,b0,q}(eps) and c_{l0,l1,b0,q}(eps).

    Keys are (s, k0, k1, k2, b0, q) and (l0, l1, b0, q); values are coefficient
    sequences in eps. The decay constants are checked against sup over |eps|<=eps0.
    """

    b_table: dict
    c_table: dict
    eps0: float
    rho: float = 1.0
    rho_prime: float = 1.0
    bfrak: dict = field(default_factory=dict)
    cfrak: dict = field(default_factory=dict)

    def __post_init__(self):
        bad = []
        geo0 = np.exp(-self.rho_prime) / 2
        geox = 1.0 / (2 * self.rho)
        for key, coeffs in self.b_table.items():
            term, b0, q = key[:4], key[4], key[5]
            cap = self.bfrak.get(term, np.inf) * geo0 ** b0 * geox ** q * factorial(b0) * factorial(q)
            if _eps_sup(coeffs, self.eps0) > cap * (1 + 1e-12):
                bad.append(f"b{key}")
        for key, coeffs in self.c_table.items():
            term, b0, q = key[:2], key[2], key[3]
            cap = self.cfrak.get(term, np.inf) * geo0 ** b0 * geox ** q * factorial(b0) * factorial(q)
            if _eps_sup(coeffs, self.eps0) > cap * (1 + 1e-12):
                bad.append(f"c{key}")
        if bad:
            raise DomainError("coefficient decay bound violated for " + ", ".join(bad))

    def linear_entries(self, term: LinearTerm):
        t = term.as_tuple()
        return sorted((k[4], k[5], v) for k, v in self.b_table.items() if k[:4] == t)

    def nonlinear_entries(self, term: NonlinearTerm):
        t = term.as_tuple()
        return sorted((k[2], k[3], v) for k, v in self.c_table.items() if k[:2] == t)

    @classmethod
    def zero(cls, eps0: float = 0.1):
        return cls({}, {}, eps0)


# ---------------------------------------------------------------- initial data

@dataclass(frozen=True)
class PolynomialDatum:
    coeffs: tuple

    def taylor(self, M: int) -> TauPolynomial:
        return TauPolynomial(np.asarray(self.coeffs, dtype=complex)).truncate(M)

    def evaluate(self, tau):
        return TauPolynomial(np.asarray(self.coeffs, dtype=complex))(tau)

    def to_json(self):
        c = np.asarray(self.coeffs, dtype=complex)
        return {"kind": "poly", "re": c.real.tolist(), "im": c.imag.tolist()}


@dataclass(frozen=True)
class LogDatum:
    """-amp * log(1 - tau/pole): Taylor coefficients amp / (m pole^m), m >= 1."""

    amp: complex
    pole: complex

    def taylor(self, M: int) -> TauPolynomial:
        m = np.arange(1, M + 1)
        c = np.zeros(M + 1, dtype=complex)
        c[1:] = self.amp / (m * complex(self.pole) ** m)
        return TauPolynomial(c)

    def evaluate(self, tau):
        tau = np.asarray(tau, dtype=complex)
        return -self.amp * np.log1p(-tau / self.pole)

    def to_json(self):
        a, p = complex(self.amp), complex(self.pole)
        return {"kind": "log", "amp": [a.real, a.imag], "pole": [p.real, p.imag]}


@dataclass(frozen=True)
class PoleDatum:
    """amp / (1 - tau/pole)^order."""

    amp: complex
    pole: complex
    order: int = 1

    def taylor(self, M: int) -> TauPolynomial:
        m = np.arange(M + 1)
        binom = np.array([comb(k + self.order - 1, k) for k in m], dtype=float)
        return TauPolynomial(self.amp * binom / complex(self.pole) ** m)

    def evaluate(self, tau):
        tau = np.asarray(tau, dtype=complex)
        return self.amp / (1 - tau / self.pole) ** self.order

    def to_json(self):
        a, p = complex(self.amp), complex(self.pole)
        return {"kind": "pole", "amp": [a.real, a.imag], "pole": [p.real, p.imag], "order": self.order}


def datum_from_json(d):
    kind = d["kind"]
    if kind == "poly":
        return PolynomialDatum(tuple(np.array(d["re"]) + 1j * np.array(d["im"])))
    if kind == "log":
        return LogDatum(complex(*d["amp"]), complex(*d["pole"]))
    if kind == "pole":
        return PoleDatum(complex(*d["amp"]), complex(*d["pole"]), int(d.get("order", 1)))
    raise DomainError(f"unknown initial datum kind {kind!r}")


# ---------------------------------------------------------------- key set

def init_keys(l: int, S: int, B: int) -> list:
    return [tuple(m) + (j,) for j in range(S) for m in basis(l + 1, B)]


def generated_keys(l: int, S: int, B: int) -> list:
    return [tuple(m) + (q + S,) for q in range(B + 1) for m in basis(l + 1, B - q)]


def key_total(key) -> int:
    return int(sum(key))


def _fact(v) -> float:
    out = 1.0
    for x in v:
        out *= factorial(int(x))
    return out


def _phase(modes, freq: AlgebraicFrequencies) -> float:
    """beta_0 + sum_{j>=1} beta_j xi_j."""
    return float(np.asarray(modes, dtype=float) @ freq.full)


# ---------------------------------------------------------------- tau algebras

class PolynomialAlgebra:
    """Truncated Taylor polynomials in tau, degree <= M."""

    name = "taylor"

    def __init__(self, M: int, r1: int, r2: int):
        if M < 1:
            raise DomainError("tau degree M must be at least 1")
        self.M, self.r1, self.r2 = int(M), int(r1), int(r2)

    def zero(self):
        return TauPolynomial([0.0])

    def is_zero(self, v) -> bool:
        return v.is_zero()

    def add(self, a, b):
        return a + b

    def scale(self, a, c):
        return a.scale(c)

    def shift(self, v, r_: int, p_: int):
        return tau_power_antiderivative(v, r_, p_).truncate(self.M)

    def antider(self, v, l0: int):
        return tau_power_antiderivative(v, 0, l0).truncate(self.M)

    def convolve(self, a, b):
        return tau_convolve(a, b, self.M)

    def divide(self, v, amplitude: float):
        """Multiply by the Maclaurin inverse of tau^{r2} + A^{r1}, truncated at M."""
        Ar = amplitude ** self.r1
        inv = np.zeros(self.M + 1, dtype=complex)
        n = np.arange(self.M // self.r2 + 1)
        inv[self.r2 * n] = (-1.0) ** n / Ar ** (n + 1)
        return (v * TauPolynomial(inv)).truncate(self.M)

    def from_datum(self, datum):
        return datum.taylor(self.M)


# ---------------------------------------------------------------- V recursion

@dataclass
class BorelCoefficientTable:
    entries: dict
    eps: complex
    max_total: int
    tau_degree: int
    S: int
    l: int

    def __getitem__(self, key):
        return self.entries[tuple(key)]

    def keys(self):
        return list(self.entries)

    def generated(self):
        return [k for k in self.entries if k[-1] >= self.S]

    def to_json(self) -> dict:
        out = []
        for k in sorted(self.entries, key=lambda k: (k[-1], key_total(k), k)):
            v = self.entries[k]
            out.append({"beta": list(k), "re": v.coeffs.real.tolist(), "im": v.coeffs.imag.tolist()})
        return {"eps": [complex(self.eps).real, complex(self.eps).imag], "B": self.max_total,
                "M": self.tau_degree, "S": self.S, "l": self.l, "entries": out}

    @classmethod
    def from_json(cls, d) -> "BorelCoefficientTable":
        ent = {tuple(x["beta"]): TauPolynomial(np.array(x["re"]) + 1j * np.array(x["im"]))
               for x in d["entries"]}
        return cls(ent, complex(*d["eps"]), int(d["B"]), int(d["M"]), int(d["S"]), int(d["l"]))


class _Filler:
    """Tracks finished entries and memoizes convolution powers of V_b / b!."""

    def __init__(self, algebra, entries, S):
        self.alg, self.entries, self.S = algebra, entries, S
        self.final = set(entries)
        self._norm = {}
        self._pow = {}

    def get(self, key):
        key = tuple(key)
        if key not in self.final:
            raise EngineDefectError(f"recursion read unfinished entry {key}")
        return self.entries[key]

    def normalized(self, key):
        key = tuple(key)
        if key not in self._norm:
            v = self.get(key)
            self._norm[key] = None if self.alg.is_zero(v) else self.alg.scale(v, 1.0 / _fact(key))
        return self._norm[key]

    def conv_power(self, k: int, gamma):
        """sum over ordered splits gamma = g^1 + ... + g^k of (V_{g^1}/g^1!) * ... * (V_{g^k}/g^k!)."""
        gamma = tuple(gamma)
        if k == 1:
            return self.normalized(gamma)
        memo = (k, gamma)
        if memo in self._pow:
            return self._pow[memo]
        acc = None
        for alpha in itertools.product(*(range(g + 1) for g in gamma)):
            left = self.conv_power(k - 1, alpha)
            if left is None:
                continue
            right = self.normalized(tuple(g - a for g, a in zip(gamma, alpha)))
            if right is None:
                continue
            term = self.alg.convolve(left, right)
            acc = term if acc is None else self.alg.add(acc, term)
        self._pow[memo] = acc
        return acc


def run_recursion(structure: Structure, data: CoefficientData, init: dict, eps: complex, B: int,
                  algebra) -> BorelCoefficientTable:
    """Fill V on the generated keys from the initial entries.

    `init` maps init keys to algebra values; absent keys count as zero.
    """
    structure.require_valid()
    S, l, freq = structure.S, structure.l, structure.freq
    eps_r = eps_power(eps, structure.r)
    entries = {}
    for key in init_keys(l, S, B):
        entries[key] = init.get(key, algebra.zero())
    fill = _Filler(algebra, entries, S)
    lin = [(t, borel_linear_operator(t.s, t.k0), data.linear_entries(t)) for t in structure.linear]
    non = [(t, data.nonlinear_entries(t)) for t in structure.nonlinear]
    for key in generated_keys(l, S, B):
        modes, q = key[:-1], key[-1] - S
        acc = None
        for term, ops, entries_b in lin:
            pre = eps_r ** (term.k0 - term.s)
            for b0, q1, coeffs in entries_b:
                if b0 > modes[0] or q1 > q:
                    continue
                src_modes = (modes[0] - b0,) + tuple(modes[1:])
                src = src_modes + (q - q1 + term.k2,)
                v = fill.get(src)
                if algebra.is_zero(v):
                    continue
                phase = _phase(src_modes, freq)
                coef = (_eps_poly(coeffs, eps) * pre * (1j * phase) ** term.k1
                        / (factorial(b0) * factorial(q1) * _fact(src_modes) * factorial(q - q1)))
                if coef == 0:
                    continue
                part = None
                for r_, p_, alpha in ops:
                    piece = algebra.scale(algebra.shift(v, r_, p_), alpha)
                    part = piece if part is None else algebra.add(part, piece)
                part = algebra.scale(part, coef)
                acc = part if acc is None else algebra.add(acc, part)
        for term, entries_c in non:
            pre = eps_r ** (-(term.l0 + term.l1 - 1))
            for b0, q1, coeffs in entries_c:
                if b0 > modes[0] or q1 > q:
                    continue
                gamma = (modes[0] - b0,) + tuple(modes[1:]) + (q - q1,)
                pw = fill.conv_power(term.l1, gamma)
                if pw is None:
                    continue
                coef = _eps_poly(coeffs, eps) * pre / (factorial(b0) * factorial(q1))
                part = algebra.scale(algebra.antider(pw, term.l0), coef)
                acc = part if acc is None else algebra.add(acc, part)
        if acc is None:
            entries[key] = algebra.zero()
        else:
            A = mode_amplitude(modes, freq)
            if abs(A) ** structure.r1 < DIVISOR_FLOOR:
                raise SmallDivisorError(f"|A^r1| below {DIVISOR_FLOOR:g} at modes {modes}")
            entries[key] = algebra.scale(algebra.divide(acc, A), _fact(modes) * factorial(q))
        fill.final.add(key)
    M = getattr(algebra, "M", -1)
    return BorelCoefficientTable(entries, complex(eps), B, M, S, l)


# ---------------------------------------------------------------- majorant

@dataclass
class MajorantTable:
    entries: dict
    max_total: int
    S: int

    def __getitem__(self, key):
        return self.entries[tuple(key)]

    def to_json(self):
        keys = sorted(self.entries, key=lambda k: (k[-1], key_total(k), k))
        return {"B": self.max_total, "S": self.S,
                "entries": [{"beta": list(k), "U": float(self.entries[k])} for k in keys]}


@dataclass(frozen=True)
class MajorantConstants:
    c10: float
    c11: float
    eps0: float


def c11_constant(structure: Structure, c5: float) -> float:
    """max over nonlinear terms of (C6(l0) C5^{l1-1})^{1/l1}, C6 = (C5 (1 + (2/(e sigma))^2))^{l0}."""
    best = 0.0
    chi = 1.0 + (2.0 / (e * structure.sigma)) ** 2
    for t in structure.nonlinear:
        c6 = (c5 * chi) ** t.l0
        best = max(best, (c6 * c5 ** (t.l1 - 1)) ** (1.0 / t.l1))
    return best


def _bracket(total_plus_S: int, a: int, structure: Structure, k2: int) -> float:
    gap = structure.sigma * (structure.S - k2)
    b = structure.b
    t1 = total_plus_S ** (b * a) * (a / (e * gap)) ** a if a > 0 else 1.0
    t2 = total_plus_S ** (b * (a + 2)) * ((a + 2) / (e * gap)) ** (a + 2)
    return t1 + t2


def _abs_phase(modes, freq) -> float:
    return float(np.asarray(modes, dtype=float) @ np.abs(freq.full))


def run_majorant(structure: Structure, data: CoefficientData, init_norms: dict, B: int,
                 consts: MajorantConstants) -> MajorantTable:
    """Scalar majorant recursion on the generated keys, with eps0 in the coefficient sups."""
    structure.require_valid()
    S, l, freq, hr1 = structure.S, structure.l, structure.freq, structure.h * structure.r1
    U = {key: float(init_norms.get(key, 0.0)) for key in init_keys(l, S, B)}
    if any(v < 0 for v in U.values()):
        raise DomainError("initial norms must be nonnegative")
    norm = {}

    def nU(key):
        if key not in U:
            raise EngineDefectError(f"majorant read unfinished entry {key}")
        if key not in norm:
            norm[key] = U[key] / _fact(key)
        return norm[key]

    pw_memo = {}

    def power(k, gamma):
        if k == 1:
            return nU(gamma)
        if (k, gamma) not in pw_memo:
            acc = 0.0
            for alpha in itertools.product(*(range(g + 1) for g in gamma)):
                left = power(k - 1, alpha)
                if left:
                    acc += left * nU(tuple(g - a for g, a in zip(gamma, alpha)))
            pw_memo[(k, gamma)] = acc
        return pw_memo[(k, gamma)]

    lin = [(t, borel_linear_operator(t.s, t.k0), data.linear_entries(t)) for t in structure.linear]
    non = [(t, data.nonlinear_entries(t)) for t in structure.nonlinear]
    for key in generated_keys(l, S, B):
        modes, q = key[:-1], key[-1] - S
        lead = consts.c10 * (1.0 + sum(modes)) ** hr1
        tot = sum(modes) + q + S
        acc = 0.0
        for term, ops, entries_b in lin:
            mode_fac = _abs_phase(modes, freq) ** term.k1
            for b0, q1, coeffs in entries_b:
                if b0 > modes[0] or q1 > q:
                    continue
                src_modes = (modes[0] - b0,) + tuple(modes[1:])
                src = src_modes + (q - q1 + term.k2,)
                u_src = U[src] if src in U else nU(src)
                if u_src == 0.0:
                    continue
                sup_b = _eps_sup(coeffs, consts.eps0)
                for r_, p_, alpha in ops:
                    A = abs(alpha) * sup_b
                    acc += (A / (factorial(b0) * factorial(q1)) * u_src / (_fact(src_modes) * factorial(q - q1))
                            * _bracket(tot, r_ + p_, structure, term.k2) * mode_fac)
        for term, entries_c in non:
            for b0, q1, coeffs in entries_c:
                if b0 > modes[0] or q1 > q:
                    continue
                gamma = (modes[0] - b0,) + tuple(modes[1:]) + (q - q1,)
                pw = power(term.l1, gamma)
                if pw:
                    acc += (_eps_sup(coeffs, consts.eps0) / (factorial(b0) * factorial(q1))
                            * consts.c11 ** term.l1 * pw)
        U[key] = lead * acc * _fact(modes) * factorial(q)
    return MajorantTable(U, B, S)


# ---------------------------------------------------------------- majorant as a CK problem

def _poly_mul(p: dict, q: dict) -> dict:
    out = {}
    for a, x in p.items():
        for b, y in q.items():
            k = tuple(i + j for i, j in zip(a, b))
            out[k] = out.get(k, 0.0) + x * y
    return out


def _poly_pow(p: dict, n: int, nvar: int) -> dict:
    out = {(0,) * nvar: 1.0}
    for _ in range(n):
        out = _poly_mul(out, p)
    return out


def _linear_form(const: float, weights, nvar: int) -> dict:
    p = {(0,) * nvar: const} if const else {}
    for j, w in enumerate(weights):
        if w:
            k = [0] * nvar
            k[j] = 1
            p[tuple(k)] = p.get(tuple(k), 0.0) + w
    return p


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    if n == k:
        return 1
    if k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def _theta_to_derivatives(p: dict) -> dict:
    """Rewrite a polynomial in theta_j = Z_j d_j as sum_mu c_mu Z^mu d^mu."""
    out = {}
    for kappa, c in p.items():
        choices = [[(mu, stirling2(m, mu)) for mu in range(m + 1) if stirling2(m, mu)] for m in kappa]
        for combo in itertools.product(*choices):
            mu = tuple(x[0] for x in combo)
            w = float(np.prod([x[1] for x in combo]))
            out[mu] = out.get(mu, 0.0) + c * w
    return {k: v for k, v in out.items() if v}


def _integer_exponent(x: float, what: str) -> int:
    n = int(round(x))
    if abs(n - x) > 1e-12:
        raise DomainError(f"{what} = {x} must be an integer to write the majorant as a PDE")
    return n


def majorant_ck_problem(structure: Structure, data: CoefficientData, init_norms: dict, B: int,
                        consts: MajorantConstants) -> CkProblem:
    """The Cauchy-Kowalevski problem whose solution has the majorant table as coefficients."""
    structure.require_valid()
    S, l, freq = structure.S, structure.l, structure.freq
    n = l + 2
    D = B + S
    hr1 = structure.h * structure.r1
    absxi = np.abs(freq.full)
    one_plus_modes = _poly_pow(_linear_form(1.0, [1.0] * (l + 1) + [0.0], n), hr1, n)
    d_coeffs = {}
    for term in structure.linear:
        mode_poly = _poly_pow(_linear_form(0.0, list(absxi) + [0.0], n), term.k1, n)
        for r_, p_, alpha in borel_linear_operator(term.s, term.k0):
            a = r_ + p_
            gap = structure.sigma * (S - term.k2)
            total_S = _linear_form(float(S), [1.0] * n, n)
            br = {}
            for aa in ([a] if a > 0 else []) + [a + 2]:
                ex = _integer_exponent(structure.b * aa, "b(s1+k0)")
                piece = _poly_pow(total_S, ex, n)
                c = (aa / (e * gap)) ** aa
                for kk, v in piece.items():
                    br[kk] = br.get(kk, 0.0) + c * v
            if a == 0:
                br[(0,) * n] = br.get((0,) * n, 0.0) + 1.0
            P = _poly_mul(_poly_mul(one_plus_modes, br), mode_poly)
            P = {k: consts.c10 * v for k, v in P.items()}
            ent = {}
            for b0, q1, coeffs in data.linear_entries(term):
                idx = (b0,) + (0,) * l + (q1,)
                ent[idx] = abs(alpha) * _eps_sup(coeffs, consts.eps0)
            A = GradedSeries.from_dict(l, D, ent)
            for mu, pc in _theta_to_derivatives(P).items():
                for nu in itertools.product(*(range(m + 1) for m in mu)):
                    dA = apply_derivative(A, tuple(m - v for m, v in zip(mu, nu))).with_trunc(D)
                    if len(dA) == 0:
                        continue
                    c = pc * float(np.prod([comb(m, v) for m, v in zip(mu, nu)]))
                    key = tuple(nu[:-1]) + (nu[-1] + term.k2,)
                    piece = multiply_monomial(dA, mu, c)
                    d_coeffs[key] = d_coeffs[key] + piece if key in d_coeffs else piece
    f_coeffs, e_coeffs = {}, {}
    if structure.nonlinear:
        lead = _theta_to_derivatives({k: consts.c10 * v for k, v in one_plus_modes.items()})
        for mu, pc in lead.items():
            f_coeffs[tuple(mu[:-1])] = GradedSeries.monomial(l, D, tuple(mu), pc * _fact(mu))
        for term in structure.nonlinear:
            ent = {}
            for b0, q1, coeffs in data.nonlinear_entries(term):
                ent[(b0,) + (0,) * l + (q1,)] = consts.c11 ** term.l1 * _eps_sup(coeffs, consts.eps0)
            Bs = GradedSeries.from_dict(l, D + hr1, ent)
            e_coeffs[term.l1] = e_coeffs[term.l1] + Bs if term.l1 in e_coeffs else Bs
    init = []
    for j in range(S):
        ent = {tuple(m) + (0,): init_norms.get(tuple(m) + (j,), 0.0) for m in basis(l + 1, B)}
        init.append(GradedSeries.from_dict(l, D + hr1, ent))
    e_coeffs = {m: s for m, s in e_coeffs.items() if len(s)}
    if not e_coeffs:
        f_coeffs = {}
    return CkProblem(S=S, l=l, trunc=D, d_coeffs=d_coeffs, f_coeffs=f_coeffs, e_coeffs=e_coeffs, init=init)


def majorant_via_ck(structure: Structure, data: CoefficientData, init_norms: dict, B: int,
                    consts: MajorantConstants, params: GNormParams) -> MajorantTable:
    p = majorant_ck_problem(structure, data, init_norms, B, consts)
    rep = solve_fixed_point(p, params, tol=1e-15, max_iter=4 * (B + structure.S) + 8)
    U = {}
    for key in init_keys(structure.l, structure.S, B) + generated_keys(structure.l, structure.S, B):
        U[key] = float(rep.solution[key].real)
    return MajorantTable(U, B, structure.S)


def compare_majorants(a: MajorantTable, b: MajorantTable) -> float:
    worst = 0.0
    for k, v in a.entries.items():
        w = b.entries[k]
        scale = max(abs(v), abs(w))
        if scale > 0:
            worst = max(worst, abs(v - w) / scale)
    return worst


# ---------------------------------------------------------------- domination

@dataclass
class DominationReport:
    w: dict
    u: dict
    margin: float
    offenders: list

    @property
    def ok(self) -> bool:
        return not self.offenders

    def ratios(self) -> dict:
        return {k: (self.w[k] / self.u[k] if self.u[k] > 0 else (0.0 if self.w[k] == 0 else np.inf))
                for k in self.w}


def table_norms(table: BorelCoefficientTable, structure: Structure, ctx: DivisorContext,
                eps_abs: float, grid: GridSpec | None = None, keys=None) -> dict:
    out = {}
    for key in keys if keys is not None else table.keys():
        v = table[key]
        if v.is_zero():
            out[key] = 0.0
            continue
        tot = key_total(key)
        p = ENormParams(eps_abs, structure.sigma, structure.r, structure.b, tot)
        out[key] = e_norm(v, p, ctx.region(tot), grid)
    return out


def check_domination(table: BorelCoefficientTable, majorant: MajorantTable, structure: Structure,
                     ctx: DivisorContext, eps_abs: float, grid: GridSpec | None = None,
                     margin: float = 1.05, norms: dict | None = None,
                     raise_on_failure: bool = True) -> DominationReport:
    """w_b = ||V_b|| against U_b * margin on every key of the table."""
    if table.max_total != majorant.max_total:
        raise DomainError("tables must share B")
    w = norms if norms is not None else table_norms(table, structure, ctx, eps_abs, grid)
    u = {k: majorant[k] for k in w}
    bad = sorted((k for k in w if w[k] > u[k] * margin), key=lambda k: (k[-1], key_total(k), k))
    rep = DominationReport(w, u, margin, bad)
    if bad and raise_on_failure:
        raise DominationFailure(f"{len(bad)} entries exceed the majorant, first {bad[0]}", bad)
    return rep


# ---------------------------------------------------------------- growth envelope

@dataclass
class GrowthEnvelope:
    C: float
    K: float
    ratio: float

    def bound(self, key, l: int) -> float:
        modes = sum(key[:-1])
        return self.C * self.ratio ** modes * self.K ** key[-1] * _fact(key)


def fit_growth_envelope(norms: dict, l: int, M0: float) -> GrowthEnvelope:
    """Tightest (C, K) with w_b <= C ((l+2)/M0)^{|modes|} K^{b_x} b! on every nonzero entry.

    Solved as a linear program in (log C, log K) minimizing the total log slack.
    """
    ratio = (l + 2) / M0
    rows = [(k, v) for k, v in sorted(norms.items()) if v > 0]
    if not rows:
        return GrowthEnvelope(0.0, 1.0, ratio)
    y = np.array([np.log(v) - np.log(_fact(k)) - sum(k[:-1]) * np.log(ratio) for k, v in rows])
    x = np.array([k[-1] for k, _ in rows], dtype=float)
    res = optimize.linprog(c=[len(rows), x.sum()], A_ub=-np.column_stack([np.ones_like(x), x]), b_ub=-y,
                           bounds=[(None, None), (-50, 50)], method="highs")
    if not res.success:
        raise EngineDefectError(f"envelope fit failed: {res.message}")
    logC, logK = res.x
    # guard against solver round-off so the bound covers every entry
    logC += max(0.0, float(np.max(y - logC - logK * x)))
    return GrowthEnvelope(float(np.exp(logC)), float(np.exp(logK)), ratio)
