"""Flatness of sectorial differences, formal eps-expansions and Gevrey remainders.

The formal solution is sum_l H_l eps^l / l!. Each H_l is stored like the
Borel tables: per key b a polynomial in t, so that

    H_l(t, z, x) = l! * sum_b P_{l,b}(t) exp(i z <modes, xi>) / modes! * x^q / q!.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb, factorial, lgamma

import numpy as np
from scipy import optimize, special

from .borel import CoefficientData, Structure, _fact, _phase, generated_keys, init_keys
from .divisors import mode_amplitude
from .errors import DomainError, EngineDefectError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationGrid:
    """Fixed (t, z, x) grid over which sups are taken."""

    t: tuple
    z: tuple
    x: tuple

    def points(self):
        return [(complex(t), complex(z), complex(x)) for t in self.t for z in self.z for x in self.x]

    def to_json(self):
        pair = lambda v: [complex(v).real, complex(v).imag]
        return {"t": [pair(v) for v in self.t], "z": [pair(v) for v in self.z], "x": [pair(v) for v in self.x]}

    @classmethod
    def from_json(cls, d):
        conv = lambda vs: tuple(complex(a, b) for a, b in vs)
        return cls(conv(d["t"]), conv(d["z"]), conv(d["x"]))


def _sup_difference(f, g, grid: EvaluationGrid) -> float:
    return max(abs(f(t, z, x) - g(t, z, x)) for t, z, x in grid.points())


# ---------------------------------------------------------------- flatness

@dataclass
class FlatnessFit:
    K: float
    M: float
    r2: float
    s_fit: float
    r2_free: float
    K_free: float
    M_free: float
    exponent: float
    degenerate: bool = False
    notice: str = ""


@dataclass
class FlatnessDataset:
    samples: list
    sector_pair: tuple
    grid: EvaluationGrid | None
    fit: FlatnessFit

    def to_json(self):
        f = self.fit
        return {"K_fit": f.K, "M_fit": f.M, "s_fit": f.s_fit, "r2": f.r2, "r2_free": f.r2_free,
                "exponent": f.exponent, "degenerate": f.degenerate, "notice": f.notice,
                "sector_pair": list(self.sector_pair),
                "eps_samples": [e for e, _ in self.samples], "sup_differences": [d for _, d in self.samples],
                "grid": self.grid.to_json() if self.grid else None}


def _ls(x, y):
    A = np.column_stack([np.ones_like(x), x])
    c, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ c
    tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(res @ res) / tot if tot > 0 else 1.0
    return c, r2, float(res @ res)


def fit_flatness(eps_abs, delta, exponent: float, s_bounds=(0.05, 3.0)) -> FlatnessFit:
    """log delta = log K - M |eps|^{-s}: fixed s = exponent, then s free."""
    e = np.asarray(eps_abs, dtype=float)
    d = np.asarray(delta, dtype=float)
    ok = d > 0
    if ok.sum() < 3:
        return FlatnessFit(0.0, 0.0, 0.0, float("nan"), 0.0, 0.0, 0.0, exponent, True,
                           "differences vanish: the two solutions coincide on the grid")
    e, y = e[ok], np.log(d[ok])
    c, r2, _ = _ls(e ** -exponent, y)
    best = optimize.minimize_scalar(lambda s: _ls(e ** -s, y)[2], bounds=s_bounds, method="bounded",
                                    options={"xatol": 1e-8})
    cf, r2f, _ = _ls(e ** -best.x, y)
    return FlatnessFit(float(np.exp(c[0])), float(-c[1]), r2, float(best.x), r2f, float(np.exp(cf[0])),
                       float(-cf[1]), float(exponent))


def flatness_exponent(structure: Structure) -> float:
    return structure.r3 / (structure.h * structure.r1 + structure.r2)


def measure_flatness(builder, pair, grid: EvaluationGrid, eps_samples, exponent: float) -> FlatnessDataset:
    """sup over the grid of |X_{i+1} - X_i| at each eps, with the fits.

    `builder(i, eps)` returns a SectorialSolution for sector i at eps.
    """
    eps_samples = [complex(e) for e in eps_samples]
    mags = [abs(e) for e in eps_samples]
    if any(b >= a for a, b in zip(mags, mags[1:])):
        raise DomainError("eps samples must have strictly decreasing modulus")
    i, j = pair
    samples = []
    for eps in eps_samples:
        a, b = builder(i, eps), builder(j, eps)
        samples.append((abs(eps), _sup_difference(a.evaluate, b.evaluate, grid)))
    fit = fit_flatness([s[0] for s in samples], [s[1] for s in samples], exponent)
    if fit.degenerate:
        log.warning("flatness fit degenerate: %s", fit.notice)
    return FlatnessDataset(samples, (i, j), grid, fit)


def mode_flatness(sol_a, sol_b, t) -> dict:
    """|Y_b^(a)(T) - Y_b^(b)(T)| per key at one t."""
    T = sol_a.eps_r * complex(t)
    da, db = sol_a.transforms(T), sol_b.transforms(T)
    ib = {k: n for n, k in enumerate(sol_b.keys)}
    return {k: float(abs(da[n] - db[ib[k]])) for n, k in enumerate(sol_a.keys) if k in ib}


# ---------------------------------------------------------------- Dirichlet series

@dataclass(frozen=True)
class DirichletParams:
    a: float
    alpha: float

    def __post_init__(self):
        if not (0 <= self.a < 1) or not self.alpha > 0:
            raise DomainError("need 0 <= a < 1 and alpha > 0")


def _dirichlet_cutoff(p: DirichletParams, eps: float, rel: float = 1e-17) -> int:
    """kappa_max past which the terms sum to less than rel times the largest term."""
    la = np.log(p.a)
    # the exponent -1/((k+1)^alpha eps) + k log a peaks near this k
    k_star = max(0.0, (p.alpha / (eps * -la)) ** (1.0 / (p.alpha + 1)) - 1)
    peak = max(-1.0 / ((k + 1) ** p.alpha * eps) + k * la for k in (np.floor(k_star), np.ceil(k_star)))
    # a^{K+1}/(1-a) <= rel * e^{peak}
    return int(np.ceil(max(k_star, (peak + np.log(rel) + np.log(1 - p.a)) / la)))


def dirichlet_log_series(p: DirichletParams, eps: float, kappa_max: int | None = None):
    """(log of the partial sum, log of the tail bound) of sum_k exp(-1/((k+1)^alpha eps)) a^k.

    Terms are summed in log space because for small eps they underflow.
    Each term is at most a^k, so the tail after kappa_max is below a^{kappa_max+1}/(1-a).
    """
    if p.a == 0:
        return -1.0 / eps, -np.inf
    if kappa_max is None:
        kappa_max = _dirichlet_cutoff(p, eps)
    k = np.arange(kappa_max + 1, dtype=float)
    logs = -1.0 / ((k + 1) ** p.alpha * eps) + k * np.log(p.a)
    return float(special.logsumexp(logs)), float((kappa_max + 1) * np.log(p.a) - np.log(1 - p.a))


def dirichlet_series(p: DirichletParams, eps: float, kappa_max: int | None = None):
    """(partial sum, tail bound) of sum_k exp(-1/((k+1)^alpha eps)) a^k."""
    v, t = dirichlet_log_series(p, eps, kappa_max)
    return float(np.exp(v)), float(np.exp(t))


def cover_fit(x, y):
    """Tightest (c0, c1) with c0 + c1 x >= y at every sample, by linear programming.

    Minimizes the total gap sum(c0 + c1 x - y). Returns (c0, c1).
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    res = optimize.linprog(c=[len(x), x.sum()], A_ub=-np.column_stack([np.ones_like(x), x]), b_ub=-y,
                           bounds=[(None, None), (None, None)], method="highs")
    if not res.success:
        raise EngineDefectError(f"cover fit failed: {res.message}")
    c0, c1 = res.x
    c0 += max(0.0, float(np.max(y - c0 - c1 * x)))
    return float(c0), float(c1)


def fit_dirichlet_bound(p: DirichletParams, eps_grid):
    """(K, M, log S) with S(eps) <= K exp(-M eps^{-1/(alpha+1)}) on the grid, tightest in log space."""
    eps_grid = np.asarray(eps_grid, float)
    logs = np.array([dirichlet_log_series(p, e)[0] for e in eps_grid])
    x = -eps_grid ** (-1.0 / (p.alpha + 1))
    c0, c1 = cover_fit(x, logs)
    return float(np.exp(c0)), float(c1), logs


# ---------------------------------------------------------------- formal series

def _padd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    n = max(a.size, b.size)
    out = np.zeros(n, dtype=complex)
    out[: a.size] += a
    out[: b.size] += b
    return out


def _pshift(a, s):
    return np.concatenate([np.zeros(s, dtype=complex), a]) if s else a


def _pderiv(a, k):
    for _ in range(k):
        if a.size <= 1:
            return np.zeros(1, dtype=complex)
        a = a[1:] * np.arange(1, a.size)
    return a


def _euler(a):
    """(t^2 d_t + t) on coefficients: c_k t^k -> (k+1) c_k t^{k+1}."""
    return _pshift(a * np.arange(1, a.size + 1), 1)


def _peval(a, t):
    return complex(np.polyval(a[::-1], complex(t))) if a.size else 0j


def _mode_binom(m, m1) -> int:
    out = 1
    for a, b in zip(m, m1):
        out *= comb(a, b)
    return out


def _splits(key):
    """All (k1, k2) with k1 + k2 = key, componentwise."""
    ranges = [range(v + 1) for v in key]
    for k1 in np.ndindex(*[len(r) for r in ranges]):
        yield tuple(k1), tuple(v - a for v, a in zip(key, k1))


def init_expansion_from_datums(init: dict, structure: Structure, N: int) -> dict:
    """eps-Taylor data of the initial entries: key -> [t-poly of [eps^n] Xi_key, n < N].

    For V_b(tau) = sum c_m tau^m independent of eps, Xi_b(t, eps) is 1-summed from
    sum c_m m! (eps^r t)^m, so [eps^n] is c_m m! t^m when r m = n.
    """
    r = structure.r
    if abs(r - round(r)) > 1e-12:
        raise DomainError("formal eps-expansion implemented for integer r = r3/r2")
    r = int(round(r))
    out = {}
    for key, datum in init.items():
        c = datum.taylor(N).coeffs
        levels = []
        for n in range(N):
            poly = np.zeros(1, dtype=complex)
            if n % r == 0 and n // r < c.size:
                m = n // r
                poly = np.zeros(m + 1, dtype=complex)
                poly[m] = c[m] * factorial(m)
            levels.append(poly)
        out[key] = levels
    return out


@dataclass
class FormalTail:
    """X_l = H_l / l! per key as t-polynomials, l < N."""

    X: list
    N: int
    structure: Structure
    time_term_levels: tuple = ()
    keys: tuple = ()

    def __post_init__(self):
        self._cache = {}

    def H(self, l: int, t, z, x) -> complex:
        return factorial(l) * self.level_values(t, z, x)[l]

    def level_values(self, t, z, x, dt=0, dz=0, dx=0) -> np.ndarray:
        """[X_0, ..., X_{N-1}] (each differentiated) at one point."""
        ck = (complex(t), complex(z), complex(x), dt, dz, dx)
        hit = self._cache.get(ck)
        if hit is not None:
            return hit
        st = self.structure
        out = np.zeros(self.N, dtype=complex)
        for l in range(self.N):
            total = 0j
            for key, poly in self.X[l].items():
                q = key[-1]
                if q < dx:
                    continue
                ph = _phase(key[:-1], st.freq)
                val = _peval(_pderiv(poly, dt) if dt else poly, t)
                if val == 0:
                    continue
                total += (val * np.exp(1j * complex(z) * ph) * (1j * ph) ** dz / _fact(key[:-1])
                          * complex(x) ** (q - dx) / factorial(q - dx))
            out[l] = total
        self._cache[ck] = out
        return out

    def partial_sums(self, eps, t, z, x, dt=0, dz=0, dx=0) -> np.ndarray:
        """Entry n is sum_{l < n} H_l eps^l / l!, n = 0..N."""
        lv = self.level_values(t, z, x, dt, dz, dx)
        return np.concatenate([[0j], np.cumsum(complex(eps) ** np.arange(self.N) * lv)])

    def partial_sum(self, n: int, eps, t, z, x, dt=0, dz=0, dx=0) -> complex:
        """sum_{l < n} H_l eps^l / l! (or its derivative)."""
        if n > self.N:
            raise DomainError(f"only {self.N} formal coefficients available")
        return complex(self.partial_sums(eps, t, z, x, dt, dz, dx)[n])


def compute_H(structure: Structure, data: CoefficientData, init_expansion: dict, N: int, B: int) -> FormalTail:
    """Formal coefficients from the eps-differentiated equation, level by level.

    At level l the generated entry (modes, q+S) solves
        A^{r1} X_l = RHS_l(modes, q) - (t^2 d_t + t)^{r2} X_{l-r3}(modes, q+S),
    where RHS_l reads X_l only at x-indices <= q (the nonlinear h = l terms and
    the linear k2 shift), so increasing x-order is a forward substitution.
    """
    st = structure
    st.require_valid()
    S, l_, freq = st.S, st.l, st.freq
    if N < 1:
        raise DomainError("N must be positive")
    ikeys = init_keys(l_, S, B)
    gkeys = generated_keys(l_, S, B)
    for key in ikeys:
        lv = init_expansion.get(key)
        if lv is not None and len(lv) < N:
            raise DomainError(f"initial datum {key} has only {len(lv)} eps-coefficients, need {N}")
    X = [dict() for _ in range(N)]
    keyset = set(ikeys) | set(gkeys)
    lin = [(t, data.linear_entries(t)) for t in st.linear]
    non = [(t, data.nonlinear_entries(t)) for t in st.nonlinear]
    time_levels = []

    def get(n, key):
        return X[n].get(key) if 0 <= n < N else None

    for n in range(N):
        for key in ikeys:
            lv = init_expansion.get(key)
            if lv is not None and np.any(lv[n]):
                X[n][key] = np.asarray(lv[n], dtype=complex)
        memo = {}

        def power(k, level, g):
            """[eps^level] coefficient of (X^k) at key g (normalized basis), or None."""
            if k == 1:
                return get(level, g)
            mk = (k, level, g)
            if mk in memo:
                return memo[mk]
            acc = None
            for g1, g2 in _splits(g):
                if g1 not in keyset or g2 not in keyset:
                    continue
                w = _mode_binom(g, g1)
                for n1 in range(level + 1):
                    a = get(n1, g1)
                    if a is None:
                        continue
                    b = power(k - 1, level - n1, g2)
                    if b is None:
                        continue
                    acc = _padd(acc, w * np.convolve(a, b))
            memo[mk] = acc
            return acc

        uses_time = n >= st.r3
        if uses_time:
            time_levels.append(n)
        for key in gkeys:
            modes, q = key[:-1], key[-1] - S
            acc = None
            for term, entries in lin:
                for b0, q1, coeffs in entries:
                    if b0 > modes[0] or q1 > q:
                        continue
                    src_modes = (modes[0] - b0,) + tuple(modes[1:])
                    src = src_modes + (q - q1 + term.k2,)
                    w = comb(modes[0], b0) * comb(q, q1) * (1j * _phase(src_modes, freq)) ** term.k1
                    for h, bh in enumerate(coeffs):
                        if bh == 0 or w == 0:
                            continue
                        v = get(n - h, src)
                        if v is None:
                            continue
                        acc = _padd(acc, w * bh * _pshift(_pderiv(v, term.k0), term.s))
            for term, entries in non:
                for b0, q1, coeffs in entries:
                    if b0 > modes[0] or q1 > q:
                        continue
                    g = (modes[0] - b0,) + tuple(modes[1:]) + (q - q1,)
                    w = comb(modes[0], b0) * comb(q, q1)
                    for h, ch in enumerate(coeffs):
                        if ch == 0 or n - h < 0:
                            continue
                        pw = power(term.l1, n - h, g)
                        if pw is None:
                            continue
                        acc = _padd(acc, w * ch * _pshift(pw, term.l0 + term.l1 - 1))
            if uses_time:
                prev = get(n - st.r3, key)
                if prev is not None:
                    v = prev
                    for _ in range(st.r2):
                        v = _euler(v)
                    acc = _padd(acc, -v)
            if acc is not None and np.any(acc):
                A = mode_amplitude(modes, freq) ** st.r1
                if abs(A) < 1e-13:
                    raise EngineDefectError(f"near-singular pivot A^r1 = {A:.2e} at modes {modes}")
                X[n][key] = acc / A
    return FormalTail(X, N, st, tuple(time_levels), tuple(sorted(keyset)))


def formal_residual(tail: FormalTail, data: CoefficientData, n: int, eps, points) -> float:
    """Largest |PDE residual| of the truncated formal sum at (t, z, x) points."""
    st = tail.structure
    eps = complex(eps)
    er3 = eps ** st.r3
    worst = 0.0
    for t, z, x in points:
        t = complex(t)

        def val(dt=0, dz=0, dx=0):
            return tail.partial_sum(n, eps, t, z, x, dt, dz, dx)

        # (t^2 d_t + t)^{r2} d_x^S and (-i d_z + 1)^{r1} d_x^S, built from the polynomial parts
        lhs = 0j
        for l in range(n):
            for key, poly in tail.X[l].items():
                if key[-1] < st.S:
                    continue
                ph = _phase(key[:-1], st.freq)
                v = poly
                for _ in range(st.r2):
                    v = _euler(v)
                q = key[-1] - st.S
                base = np.exp(1j * complex(z) * ph) / _fact(key[:-1]) * complex(x) ** q / factorial(q)
                lhs += eps ** l * base * (er3 * _peval(v, t) + (1 + ph) ** st.r1 * _peval(poly, t))
        rhs = 0j
        for term in st.linear:
            for b0, q1, coeffs in data.linear_entries(term):
                bval = sum(c * eps ** h for h, c in enumerate(coeffs)) * np.exp(1j * b0 * complex(z)) / factorial(b0) \
                    * complex(x) ** q1 / factorial(q1)
                rhs += bval * t ** term.s * val(term.k0, term.k1, term.k2)
        if st.nonlinear:
            X0 = val()
        for term in st.nonlinear:
            for b0, q1, coeffs in data.nonlinear_entries(term):
                cval = sum(c * eps ** h for h, c in enumerate(coeffs)) * np.exp(1j * b0 * complex(z)) / factorial(b0) \
                    * complex(x) ** q1 / factorial(q1)
                rhs += cval * t ** (term.l0 + term.l1 - 1) * X0 ** term.l1
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------- Gevrey remainder

@dataclass
class RemainderReport:
    eps: list
    Ns: list
    R: np.ndarray
    gevrey_order: float
    C: float
    M: float
    fit_Ns: tuple
    covered: bool
    optimal_N: dict = field(default_factory=dict)

    def has_interior_minimum(self, eps_abs) -> bool:
        j = int(np.argmin(np.abs(np.abs(self.eps) - eps_abs)))
        k = int(np.argmin(self.R[:, j]))
        return 0 < k < len(self.Ns) - 1

    def to_json(self):
        return {"eps": [[complex(e).real, complex(e).imag] for e in self.eps], "N": list(self.Ns),
                "R": self.R.tolist(), "s": self.gevrey_order, "C": self.C, "M": self.M,
                "fit_N": list(self.fit_Ns), "covered": self.covered,
                "optimal_N": [[complex(k).real, complex(k).imag, int(v)] for k, v in self.optimal_N.items()]}


def gevrey_order(structure: Structure) -> float:
    return (structure.h * structure.r1 + structure.r2) / structure.r3


def remainder_bound(C, M, N, s, eps_abs):
    return C * M ** N * np.exp(s * lgamma(N + 1)) * eps_abs ** N


def gevrey_remainder(solutions: dict, tail: FormalTail, grid: EvaluationGrid, Ns, s: float,
                     fit_Ns=(1, 2, 3, 4, 5)) -> RemainderReport:
    """R_N(eps) = sup_grid |X_i - sum_{k<N} H_k eps^k/k!| and the fixed-s cover fit.

    `solutions` maps eps to a SectorialSolution at that eps.
    """
    eps_list = list(solutions)
    Ns = list(Ns)
    if max(Ns) > tail.N:
        raise DomainError("N exceeds the computed formal tail")
    pts = grid.points()
    R = np.zeros((len(Ns), len(eps_list)))
    for j, eps in enumerate(eps_list):
        sol = solutions[eps]
        diff = np.array([sol.evaluate(t, z, x) - tail.partial_sums(eps, t, z, x) for t, z, x in pts])
        R[:, j] = np.abs(diff[:, Ns]).max(axis=0)
    xs, ys = [], []
    for i, N in enumerate(Ns):
        if N not in fit_Ns:
            continue
        for j, eps in enumerate(eps_list):
            if R[i, j] > 0:
                xs.append(N)
                ys.append(np.log(R[i, j]) - s * lgamma(N + 1) - N * np.log(abs(eps)))
    C, M, covered = 0.0, 0.0, True
    if xs:
        c0, c1 = cover_fit(xs, ys)
        C, M = float(np.exp(c0)), float(np.exp(c1))
        for i, N in enumerate(Ns):
            if N in fit_Ns:
                for j, eps in enumerate(eps_list):
                    if R[i, j] > remainder_bound(C, M, N, s, abs(eps)) * (1 + 1e-9):
                        covered = False
    opt = {eps: Ns[int(np.argmin(R[:, j]))] for j, eps in enumerate(eps_list)}
    return RemainderReport(eps_list, Ns, R, s, C, M, tuple(fit_Ns), covered, opt)
