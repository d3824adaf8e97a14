"""Sectorial solutions X_i(t, z, x, eps) = Y(eps^r t, z, x, eps) by Laplace summation.

For a sector E_i of the eps-covering the Borel recursion is run on a ray grid
in direction gamma inside U_{d_i}; every mode Y_b(T) is then the Laplace
transform of V_b along that ray, and X_i is the mode sum

    sum_b Y_b(eps^r t) exp(i z <modes, xi>) / modes! * x^q / q!.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import comb, factorial, pi

import numpy as np

from .borel import (CoefficientData, GrowthEnvelope, Structure, _eps_poly, _fact, _phase, eps_power,
                    fit_growth_envelope, init_keys, run_recursion)
from .divisors import forbidden_directions, mode_amplitude
from .errors import DomainError, GeometryError
from .rays import QuadratureSpec, RayAlgebra, RayGrid, laplace_ray, ray_condition

__all__ = ["QuadratureSpec", "SectorGeometry", "SectorialSolution", "laplace_ray", "choose_direction",
           "common_direction", "assemble_solution", "residual_check", "ResidualReport", "write_solution_csv",
           "CSV_COLUMNS"]

CSV_COLUMNS = ("i", "Re t", "Im t", "Re z", "Im z", "Re x", "Im x", "Re eps", "Im eps", "Re X", "Im X",
               "tail_estimate")


def _wrap(a):
    """Angle reduced to (-pi, pi]."""
    return float(-((-a + pi) % (2 * pi) - pi))


@dataclass(frozen=True)
class SectorGeometry:
    """Good covering {E_i} of a punctured eps-disc, Laplace directions d_i and the t-sector."""

    nu: int = 4
    eps_directions: tuple = ()
    eps_aperture: float = pi / 2 + 0.3
    eps0: float = 0.12
    directions: tuple = ()
    borel_aperture: float = 0.5
    theta: float = pi + 0.4
    t_direction: float = 0.0
    t_aperture: float = 0.2
    t_radius: float = 120.0
    delta1: float = 0.2
    r: float = 1.0
    r2: int = 1

    def __post_init__(self):
        if self.nu < 2:
            raise GeometryError("a good covering needs at least two sectors")
        if not self.eps_directions:
            dirs = tuple(pi * (2 * k + 1) / self.nu for k in range(self.nu))
            object.__setattr__(self, "eps_directions", dirs)
        if not self.directions:
            object.__setattr__(self, "directions", tuple(self.r * p + self.t_direction
                                                         for p in self.eps_directions))
        if len(self.eps_directions) != self.nu or len(self.directions) != self.nu:
            raise GeometryError("need one eps direction and one Laplace direction per sector")

    @property
    def margin(self) -> float:
        return 0.05 * self.borel_aperture

    def violations(self) -> list:
        out = []
        half = self.eps_aperture / 2
        probe = np.linspace(-pi, pi, 7201)
        counts = np.zeros(probe.size, dtype=int)
        for phi in self.eps_directions:
            counts += (np.abs(np.vectorize(_wrap)(probe - phi)) < half).astype(int)
        if np.any(counts == 0):
            out.append("sectors do not cover a punctured neighbourhood of 0")
        if np.any(counts >= 3):
            out.append("three sectors share a common direction")
        for i in range(self.nu):
            a, b = self.eps_directions[i], self.eps_directions[(i + 1) % self.nu]
            if abs(_wrap(b - a)) >= self.eps_aperture:
                out.append(f"sectors {i} and {(i + 1) % self.nu} do not overlap")
        if not self.theta > pi:
            out.append("theta must exceed pi")
        bad = forbidden_directions(self.r2)
        for i, d in enumerate(self.directions):
            gap = min(abs(_wrap(d - f)) for f in bad)
            if gap <= self.borel_aperture / 2:
                out.append(f"U_d{i} meets a root direction of tau^r2 + A^r1")
            worst = self.r * half + self.t_aperture / 2 + abs(_wrap(self.r * self.eps_directions[i]
                                                                    + self.t_direction - d))
            if worst >= self.theta / 2:
                out.append(f"eps^r t leaves U_(d{i}, theta) for some eps in E_{i}, t in the t-sector")
            excess = max(0.0, worst - (self.borel_aperture / 2 - self.margin))
            if np.cos(excess) < self.delta1:
                out.append(f"no admissible ray in U_d{i} for some eps in E_{i} (cos below delta1)")
        return out

    def require_valid(self):
        bad = self.violations()
        if bad:
            raise GeometryError("; ".join(bad))
        return self

    def eps_arg(self, i: int, eps: complex) -> float:
        """arg eps taken continuously around the bisector of E_i."""
        phi = self.eps_directions[i]
        return phi + _wrap(np.angle(eps) - phi)

    def contains_eps(self, i: int, eps: complex) -> bool:
        return (0 < abs(eps) < self.eps0
                and abs(_wrap(np.angle(eps) - self.eps_directions[i])) < self.eps_aperture / 2)

    def contains_t(self, t: complex) -> bool:
        return (0 < abs(t) <= self.t_radius
                and abs(_wrap(np.angle(t) - self.t_direction)) < self.t_aperture / 2)

    def overlap_bisector(self, i: int) -> float:
        """Bisecting direction of E_i and E_{i+1}."""
        a = self.eps_directions[i]
        b = a + _wrap(self.eps_directions[(i + 1) % self.nu] - a)
        half = self.eps_aperture / 2
        lo, hi = max(a, b) - half, min(a, b) + half
        if lo >= hi:
            raise GeometryError(f"sectors {i} and {i + 1} do not overlap")
        return 0.5 * (lo + hi)

    def borel_arg(self, i: int, eps: complex, t: complex) -> float:
        """arg(eps^r t) continued around d_i."""
        d = self.directions[i]
        a = self.r * self.eps_arg(i, eps) + self.t_direction + _wrap(np.angle(t) - self.t_direction)
        return d + _wrap(a - d)

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, d: dict) -> "SectorGeometry":
        d = dict(d)
        for k in ("eps_directions", "directions"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _clamp_direction(i: int, target: float, geom: SectorGeometry) -> float:
    d = geom.directions[i]
    half = geom.borel_aperture / 2 - geom.margin
    return d + float(np.clip(_wrap(target - d), -half, half))


def _check_ray(gamma: float, args, geom: SectorGeometry):
    worst = min(np.cos(gamma - a) for a in args)
    if worst < geom.delta1:
        raise GeometryError(f"no admissible ray: cos(gamma - arg T) = {worst:.3f} < {geom.delta1}")
    if min(abs(_wrap(gamma - f)) for f in forbidden_directions(geom.r2)) < 1e-12:
        raise GeometryError("ray falls on a root direction")


def choose_direction(i: int, eps: complex, t: complex, geom: SectorGeometry) -> float:
    """The gamma in U_{d_i} maximizing cos(gamma - arg(eps^r t))."""
    if not geom.contains_eps(i, eps):
        raise DomainError(f"eps = {eps} is not in sector {i}")
    if not geom.contains_t(t):
        raise DomainError(f"t = {t} is not in the t-sector")
    target = geom.borel_arg(i, eps, t)
    gamma = _clamp_direction(i, target, geom)
    _check_ray(gamma, [target], geom)
    return gamma


def common_direction(i: int, eps: complex, ts, geom: SectorGeometry) -> float:
    """One gamma in U_{d_i} admissible for every eps^r t, t in `ts`.

    The value of each Laplace integral does not depend on which admissible ray
    inside U_{d_i} is used, so a batch of points can share one ray grid.
    """
    if not geom.contains_eps(i, eps):
        raise DomainError(f"eps = {eps} is not in sector {i}")
    args = []
    for t in ts:
        if not geom.contains_t(t):
            raise DomainError(f"t = {t} is not in the t-sector")
        args.append(geom.borel_arg(i, eps, t))
    gamma = _clamp_direction(i, 0.5 * (min(args) + max(args)), geom)
    _check_ray(gamma, args, geom)
    return gamma


def _derivative_weights(k: int) -> list:
    """[(c, j)] with d^k/dT^k L(V)(T) = sum c T^{-(k+j)} L(tau^j V)(T)."""
    terms = {(0, 1): 1}
    for _ in range(k):
        new = {}
        for (j, n), c in terms.items():
            new[(j, n + 1)] = new.get((j, n + 1), 0) - n * c
            new[(j + 1, n + 2)] = new.get((j + 1, n + 2), 0) + c
        terms = new
    return sorted((c, j) for (j, n), c in terms.items() if c)


def _singularity_scale(init: dict, gamma: float) -> float:
    """Distance from the ray to the nearest singular point of the initial data (capped at 1)."""
    best = 1.0
    for datum in init.values():
        pole = getattr(datum, "pole", None)
        if pole is None:
            continue
        p = complex(pole)
        ang = abs(_wrap(np.angle(p) - gamma))
        best = min(best, abs(p) * (np.sin(ang) if ang < pi / 2 else 1.0))
    return max(best, 1e-6)


class SectorialSolution:
    """X_i at one eps, built on a single admissible ray for a batch of t values."""

    def __init__(self, structure: Structure, data: CoefficientData, init: dict, geom: SectorGeometry,
                 i: int, eps: complex, B: int, t_points, nodes: int = 24, M0: float = 7.0):
        self.structure, self.data, self.geom, self.i = structure, data, geom, int(i)
        self.eps, self.B, self.M0 = complex(eps), int(B), float(M0)
        self.eps_r = eps_power(self.eps, structure.r)
        ts = [complex(t) for t in t_points]
        self.gamma = common_direction(self.i, self.eps, ts, geom)
        Ts = [self.eps_r * t for t in ts]
        keep = set(init_keys(structure.l, structure.S, self.B))
        datums = {k: v for k, v in init.items() if k in keep}
        self.grid = RayGrid.for_transforms(self.gamma, Ts, _singularity_scale(datums, self.gamma), nodes)
        alg = RayAlgebra(self.grid, structure.r1, structure.r2)
        vals = {k: alg.from_datum(v) for k, v in datums.items()}
        self.table = run_recursion(structure, data, vals, self.eps, self.B, alg)
        self.keys = sorted(self.table.keys())
        self.values = np.array([self.table[k] for k in self.keys])
        self.phases = np.array([_phase(k[:-1], structure.freq) for k in self.keys])
        self.mode_fact = np.array([_fact(k[:-1]) for k in self.keys])
        self.xidx = np.array([k[-1] for k in self.keys])
        self._cache = {}

    # -- Laplace data
    def transforms(self, T: complex, j: int = 0) -> np.ndarray:
        """L(tau^j V_b)(T) for every key b."""
        key = (complex(T), int(j))
        hit = self._cache.get(key)
        if hit is None:
            if ray_condition(self.gamma, T) < self.geom.delta1:
                raise GeometryError(f"ray {self.gamma:.4f} inadmissible for arg T = {np.angle(T):.4f}")
            F = self.values * self.grid.tau ** j if j else self.values
            hit = self.grid.laplace_many(F, complex(T))
            self._cache[key] = hit
        return hit

    def mode_derivative(self, T: complex, k: int) -> np.ndarray:
        """d^k/dT^k Y_b(T) through the identities for tau-multiplication."""
        out = np.zeros(len(self.keys), dtype=complex)
        for c, j in _derivative_weights(k):
            out += c * complex(T) ** (-(k + j)) * self.transforms(T, j)
        return out

    def check_point(self, t, z, x, rho1: float = 0.5, rho1_prime: float = 0.1):
        if not self.geom.contains_t(t):
            raise DomainError(f"t = {t} is outside the t-sector")
        if abs(np.imag(z)) >= rho1_prime or abs(x) >= rho1:
            raise DomainError("(z, x) outside the strip |Im z| < rho1' times the disc |x| < rho1")

    def _mode_sum(self, Y, z, x, dz=0, dx=0, mask=None):
        x = complex(x)
        w = np.zeros(len(self.keys), dtype=complex)
        ok = self.xidx >= dx
        q = self.xidx[ok] - dx
        w[ok] = np.array([x ** int(n) / factorial(int(n)) for n in q])
        if mask is not None:
            w = w * mask
        e = np.exp(1j * complex(z) * self.phases) * (1j * self.phases) ** dz / self.mode_fact
        return complex(np.sum(Y * e * w))

    def evaluate(self, t, z, x, dt: int = 0, dz: int = 0, dx: int = 0) -> complex:
        """d_t^dt d_z^dz d_x^dx X_i at (t, z, x)."""
        T = self.eps_r * complex(t)
        Y = self.mode_derivative(T, dt) * self.eps_r ** dt if dt else self.transforms(T)
        return self._mode_sum(Y, z, x, dz, dx)

    def envelope(self, t) -> GrowthEnvelope:
        key = ("envelope", complex(t))
        if key not in self._cache:
            T = self.eps_r * complex(t)
            mags = {k: abs(v) for k, v in zip(self.keys, self.transforms(T))}
            self._cache[key] = fit_growth_envelope(mags, self.structure.l, self.M0)
        return self._cache[key]

    def tail_estimate(self, t, z, x, extra: int = 40) -> float:
        """Fitted-envelope estimate of the modes and x-powers left out of the sum."""
        env = self.envelope(t)
        if env.C == 0:
            return 0.0
        l, S, B = self.structure.l, self.structure.S, self.B
        xi_max = max(1.0, float(np.max(np.abs(self.structure.freq.full))))
        zfac = np.exp(abs(np.imag(z)) * xi_max)
        kx = env.K * abs(x)
        if kx >= 1:
            return float("inf")
        total = 0.0
        for m in range(B + extra + 1):
            weight = env.C * comb(m + l, l) * (env.ratio * zfac) ** m
            for j in range(S + B + extra + 1):
                stored = m <= B and (j < S or m + j - S <= B)
                if not stored:
                    total += weight * kx ** j
        return float(total)


def assemble_solution(solution: SectorialSolution, point, rho1: float = 0.5, rho1_prime: float = 0.1,
                      with_tail: bool = True):
    """X_i(t, z, x, eps) and the truncation-tail estimate at point = (t, z, x, eps)."""
    t, z, x, eps = point
    if abs(complex(eps) - solution.eps) > 1e-15 * max(1.0, abs(eps)):
        raise DomainError("solution was built for a different eps")
    solution.check_point(t, z, x, rho1, rho1_prime)
    val = solution.evaluate(t, z, x)
    tail = solution.tail_estimate(t, z, x) if with_tail else float("nan")
    return val, tail


@dataclass
class ResidualReport:
    relative: float
    absolute: float
    scale: float
    per_point: list = field(default_factory=list)


def _coefficient_function(entries, z, x, eps):
    return sum(_eps_poly(c, eps) * np.exp(1j * b0 * complex(z)) / factorial(b0) * complex(x) ** q1 / factorial(q1)
               for b0, q1, c in entries)


def residual_check(solution: SectorialSolution, points) -> ResidualReport:
    """Insert the truncated mode sum into the PDE at (t, z, x) points.

    Time derivatives come from L(tau^j V); eps^{r3}(t^2 d_t + t)^{r2} acts as
    L(tau^{r2} V); z-derivatives multiply by i<modes, xi>; x-derivatives shift.
    """
    st, data, sol = solution.structure, solution.data, solution
    eps = sol.eps
    amp = np.array([mode_amplitude(k[:-1], st.freq) ** st.r1 for k in sol.keys])
    lhs_mask = (sol.xidx >= st.S).astype(float)
    rows, worst, scale = [], 0.0, 0.0
    for t, z, x in points:
        T = sol.eps_r * complex(t)
        Y = sol.transforms(T)
        Yr = sol.transforms(T, st.r2)
        lhs = sol._mode_sum(Yr + amp * Y, z, x, 0, st.S, lhs_mask)
        terms = []
        for term in st.linear:
            bval = _coefficient_function(data.linear_entries(term), z, x, eps)
            if bval == 0:
                continue
            if term.k0:
                Yd = sol.mode_derivative(T, term.k0) * sol.eps_r ** term.k0
            else:
                Yd = Y
            d = sol._mode_sum(Yd, z, x, term.k1, term.k2)
            terms.append(bval * complex(t) ** term.s * d)
        if st.nonlinear:
            X = sol._mode_sum(Y, z, x)
        for term in st.nonlinear:
            cval = _coefficient_function(data.nonlinear_entries(term), z, x, eps)
            if cval == 0:
                continue
            terms.append(cval * complex(t) ** (term.l0 + term.l1 - 1) * X ** term.l1)
        res = lhs - sum(terms)
        size = max([abs(lhs)] + [abs(v) for v in terms])
        rows.append((complex(t), complex(z), complex(x), abs(res), size))
        worst, scale = max(worst, abs(res)), max(scale, size)
    rel = worst / scale if scale > 0 else 0.0
    return ResidualReport(float(rel), float(worst), float(scale), rows)


def write_solution_csv(path, rows):
    """rows: iterable of (i, t, z, x, eps, X, tail)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, t, z, x, eps, X, tail in rows:
            t, z, x, eps, X = (complex(v) for v in (t, z, x, eps, X))
            w.writerow([int(i), repr(t.real), repr(t.imag), repr(z.real), repr(z.imag), repr(x.real),
                        repr(x.imag), repr(eps.real), repr(eps.imag), repr(X.real), repr(X.imag),
                        repr(float(tail))])
