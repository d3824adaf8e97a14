"""Exponentially weighted sup norms on truncated tau-polynomials.

||v|| = sup over Omega of |v(tau)| (1 + |tau|^2/|eps|^{2r}) exp(-sigma r_b |tau| / |eps|^r),
with Omega = D(0, rho) united with an unbounded sector S_d.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from math import cos, e, exp, log, sin

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError
from .indices import log_factorial_table


class TauPolynomial:
    """sum_m c_m tau^m with complex coefficients, immutable."""

    __slots__ = ("coeffs", "domain")

    def __init__(self, coeffs, domain: "OmegaRegion | None" = None):
        arr = np.array(coeffs, dtype=complex).reshape(-1)
        if arr.size == 0:
            arr = np.zeros(1, dtype=complex)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tau-polynomial has non-finite coefficients")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)
        object.__setattr__(self, "domain", domain)

    def __setattr__(self, name, value):
        raise AttributeError("TauPolynomial is immutable")

    @classmethod
    def zeros(cls, degree: int = 0):
        return cls(np.zeros(degree + 1))

    @classmethod
    def monomial(cls, m: int, value=1.0):
        arr = np.zeros(m + 1, dtype=complex)
        arr[m] = value
        return cls(arr)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=complex)
        out = np.full(tau.shape, self.coeffs[-1], dtype=complex)
        for c in self.coeffs[-2::-1]:
            out *= tau
            out += c
        return out

    def truncate(self, M: int) -> "TauPolynomial":
        if self.coeffs.size > M + 1:
            return TauPolynomial(self.coeffs[: M + 1], self.domain)
        return self

    def padded(self, M: int) -> np.ndarray:
        out = np.zeros(M + 1, dtype=complex)
        n = min(M + 1, self.coeffs.size)
        out[:n] = self.coeffs[:n]
        return out

    def __add__(self, other):
        n = max(self.coeffs.size, other.coeffs.size)
        return TauPolynomial(self.padded(n - 1) + other.padded(n - 1))

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, factor) -> "TauPolynomial":
        return TauPolynomial(self.coeffs * factor, self.domain)

    def __mul__(self, other):
        if isinstance(other, TauPolynomial):
            return TauPolynomial(np.convolve(self.coeffs, other.coeffs))
        return self.scale(other)

    __rmul__ = __mul__

    def derivative(self, k: int = 1) -> "TauPolynomial":
        c = self.coeffs
        for _ in range(k):
            c = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1, dtype=complex)
        return TauPolynomial(c)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def to_json(self) -> dict:
        return {"re": self.coeffs.real.tolist(), "im": self.coeffs.imag.tolist()}

    @classmethod
    def from_json(cls, data) -> "TauPolynomial":
        return cls(np.array(data["re"]) + 1j * np.array(data["im"]))

    def __repr__(self):
        return f"TauPolynomial(degree={self.degree})"


@dataclass(frozen=True)
class OmegaRegion:
    disc_radius: float
    sector_direction: float
    sector_aperture: float

    def __post_init__(self):
        if self.disc_radius < 0 or self.sector_aperture < 0:
            raise DomainError("disc radius and aperture must be nonnegative")

    def enlarged(self, factor: float) -> "OmegaRegion":
        return replace(self, disc_radius=self.disc_radius * factor,
                       sector_aperture=self.sector_aperture * factor)


@dataclass(frozen=True)
class ENormParams:
    eps_abs: float
    sigma: float
    r: float
    b: float
    beta_total: int

    def __post_init__(self):
        if self.b <= 1:
            raise DomainError("b must exceed 1")
        if self.sigma <= 0 or self.eps_abs <= 0 or self.r <= 0:
            raise DomainError("sigma, |eps| and r must be positive")

    @property
    def scale(self) -> float:
        return self.eps_abs ** self.r

    @property
    def rate(self) -> float:
        return self.sigma * r_b(self.beta_total, self.b) / self.scale

    def at_total(self, total: int) -> "ENormParams":
        return replace(self, beta_total=int(total))


@dataclass(frozen=True)
class GridSpec:
    n_radial: int = 512
    n_sector_rays: int = 9
    n_disc_rays: int = 16
    n_circle: int = 512
    max_doublings: int = 5
    rtol: float = 1e-6
    weight_floor: float = 1e-16

    def doubled(self) -> "GridSpec":
        return replace(self, n_radial=2 * self.n_radial, n_circle=2 * self.n_circle,
                       n_disc_rays=2 * self.n_disc_rays,
                       n_sector_rays=2 * self.n_sector_rays - 1)


def r_b(total: int, b: float) -> float:
    if b <= 1:
        raise DomainError("b must exceed 1")
    if total < 0:
        raise DomainError("total must be nonnegative")
    n = np.arange(total + 1, dtype=float)
    return float(np.sum((n + 1.0) ** (-b)))


def r_b_table(max_total: int, b: float) -> np.ndarray:
    return np.cumsum((np.arange(max_total + 1, dtype=float) + 1.0) ** (-b))


def weight(x, p: ENormParams):
    x = np.asarray(x, dtype=float)
    return (1.0 + (x / p.scale) ** 2) * np.exp(-p.rate * x)


def weight_cutoff(p: ENormParams, floor: float = 1e-16) -> float:
    """Radius past the weight's peak where the weight drops below floor * peak."""
    kappa = p.rate * p.scale
    u_peak = (1.0 + np.sqrt(1.0 - kappa * kappa)) / kappa if kappa < 1 else 0.0
    log_peak = log(1.0 + u_peak * u_peak) - kappa * u_peak

    def g(u):
        return log_peak - log(1.0 + u * u) + kappa * u + log(floor)

    hi = max(2.0 * u_peak, 1.0)
    while g(hi) < 0:
        hi *= 2.0
    return optimize.brentq(g, u_peak, hi, xtol=1e-12) * p.scale


def _sector_dirs(region: OmegaRegion, n: int) -> np.ndarray:
    if n == 1:
        return np.array([region.sector_direction])
    return region.sector_direction + region.sector_aperture * np.linspace(-0.5, 0.5, n)


def _sample_points(region: OmegaRegion, p: ENormParams, grid: GridSpec, reach: float) -> np.ndarray:
    return _cached_points(region, grid, float(reach))[0]


@lru_cache(maxsize=512)
def _cached_points(region: OmegaRegion, grid: GridSpec, reach: float):
    """Sample points and their moduli; read-only, shared between calls."""
    pts = _build_points(region, grid, reach)
    mod = np.abs(pts)
    pts.flags.writeable = False
    mod.flags.writeable = False
    return pts, mod


def _build_points(region: OmegaRegion, grid: GridSpec, reach: float) -> np.ndarray:
    pts = []
    rho = region.disc_radius
    if rho > 0:
        ang = 2 * np.pi * np.arange(grid.n_circle) / grid.n_circle
        pts.append(rho * np.exp(1j * ang))
        rad = np.linspace(0.0, rho, grid.n_radial)
        for a in 2 * np.pi * np.arange(grid.n_disc_rays) / grid.n_disc_rays:
            pts.append(rad * np.exp(1j * a))
    rad = np.linspace(0.0, reach, grid.n_radial)
    for a in _sector_dirs(region, grid.n_sector_rays):
        pts.append(rad * np.exp(1j * a))
    return np.concatenate(pts)


def _ascent_objective(v, p: ENormParams):
    """-|v(u e^{ia})| w(u) as a function of x = (u, a), and whether it returns its gradient too."""
    scale, rate = p.scale, p.rate

    def w(u):
        return (1.0 + (u / scale) ** 2) * exp(-rate * u)

    if isinstance(v, TauPolynomial):
        # scalar Horner for p and p' with an exact gradient: the ascent visits one point at a time
        coeffs = [complex(c) for c in v.coeffs[::-1]]

        def fun(x):
            u, a = float(x[0]), float(x[1])
            ph = complex(cos(a), sin(a))
            tau = u * ph
            val, der = 0j, 0j
            for c in coeffs:
                der = der * tau + val
                val = val * tau + c
            m = abs(val)
            wu = w(u)
            dw = (2.0 * u / scale ** 2 - rate * (1.0 + (u / scale) ** 2)) * exp(-rate * u)
            if m == 0.0:
                return 0.0, np.zeros(2)
            # d|p|/du and d|p|/da along tau = u e^{ia}
            dm_du = (val.conjugate() * der * ph).real / m
            dm_da = (val.conjugate() * der * 1j * tau).real / m
            return -m * wu, -np.array([dm_du * wu + m * dw, dm_da * wu])
        return fun, True

    def fun(x):
        u = float(x[0])
        tau = complex(u * cos(x[1]), u * sin(x[1]))
        return -abs(complex(v(np.array([tau]))[0])) * w(u)
    return fun, None


def _polish(v, region, p, start: complex, reach: float) -> float:
    """Local bounded ascent of the weighted modulus from a grid point, in polar coordinates."""
    u0, a0 = abs(start), float(np.angle(start))
    d, half = region.sector_direction, region.sector_aperture / 2
    off = (a0 - d + np.pi) % (2 * np.pi) - np.pi
    boxes = []
    if abs(off) <= half + 1e-12:
        boxes.append(((0.0, reach), (d - half, d + half), (u0, d + np.clip(off, -half, half))))
    if u0 <= region.disc_radius * (1 + 1e-12):
        boxes.append(((0.0, region.disc_radius), (a0 - np.pi, a0 + np.pi), (min(u0, region.disc_radius), a0)))

    fun, jac = _ascent_objective(v, p)

    def f(x):
        out = fun(x)
        return out[0] if jac else out

    best = 0.0
    for ub, ab, x0 in boxes:
        res = optimize.minimize(fun, np.array(x0), method="L-BFGS-B", jac=jac, bounds=[ub, ab],
                                options={"ftol": 1e-15, "gtol": 1e-14})
        best = max(best, -float(res.fun), -f(np.array(x0)))
    return best


def _grid_max(v, region, p, grid):
    reach = weight_cutoff(p, grid.weight_floor)
    for _ in range(8):
        pts, mod = _cached_points(region, grid, float(reach))
        vals = np.abs(v(pts)) * weight(mod, p)
        top = float(np.max(vals)) if vals.size else 0.0
        tail = np.abs(v(reach * np.exp(1j * region.sector_direction))) * weight(reach, p)
        if top == 0.0 or tail <= grid.weight_floor * top:
            break
        reach *= 2.0
    return top, pts, vals, reach


def e_norm(v, p: ENormParams, region: OmegaRegion, grid: GridSpec | None = None,
           polish: bool = True) -> float:
    """Grid maximum of the weighted modulus, refined by doubling until it settles.

    The best points of the final grid are then polished by a bounded local
    ascent, which resolves the sup well below the grid spacing. `v` is a
    TauPolynomial or any vectorized callable of tau.
    """
    grid = GridSpec() if grid is None else grid
    if grid.n_radial < 2 or grid.n_sector_rays < 1:
        raise DomainError("empty sampling grid")
    current, pts, vals, reach = _grid_max(v, region, p, grid)
    for _ in range(grid.max_doublings):
        grid = grid.doubled()
        nxt, pts, vals, reach = _grid_max(v, region, p, grid)
        settled = abs(nxt - current) <= grid.rtol * max(abs(nxt), 1e-300)
        current = max(nxt, current)
        if settled:
            break
    if polish and current > 0.0:
        top = np.argpartition(vals, -3)[-3:] if vals.size > 3 else np.arange(vals.size)
        for i in top[np.argsort(vals[top])[::-1]]:
            current = max(current, _polish(v, region, p, complex(pts[i]), reach))
    return current


def tau_power_antiderivative(v: TauPolynomial, s1: int, k0: int) -> TauPolynomial:
    """tau^{s1} d_tau^{-k0}: c_m tau^m -> c_m m!/(m+k0)! tau^{m+k0+s1}."""
    if s1 < 0 or k0 < 0:
        raise DomainError("orders must be nonnegative")
    n = v.coeffs.size
    lf = log_factorial_table(n + k0)
    m = np.arange(n)
    fac = np.exp(lf[m] - lf[m + k0])
    out = np.zeros(n + k0 + s1, dtype=complex)
    out[k0 + s1:] = v.coeffs * fac
    return TauPolynomial(out)


def tau_convolve(v1: TauPolynomial, v2: TauPolynomial, M: int | None = None) -> TauPolynomial:
    """int_0^tau v1(tau - s) v2(s) ds via tau^m * tau^n = m! n!/(m+n+1)! tau^{m+n+1}.

    Exact; the result is cut at degree M when M is given.
    """
    n1, n2 = v1.coeffs.size, v2.coeffs.size
    M = n1 + n2 - 1 if M is None else M
    lf = log_factorial_table(n1 + n2)
    m = np.arange(n1)[:, None]
    n = np.arange(n2)[None, :]
    w = np.exp(lf[m] + lf[n] - lf[m + n + 1])
    prod = v1.coeffs[:, None] * v2.coeffs[None, :] * w
    out = np.zeros(n1 + n2, dtype=complex)
    np.add.at(out, (m + n + 1).ravel(), prod.ravel())
    return TauPolynomial(out[: M + 1])


def prop_shift_factor(s1: int, k0: int, total_hi: int, total_lo: int, p: ENormParams) -> float:
    """Explicit operator bound for tau^{s1} d^{-k0} between weighted spaces."""
    if total_hi <= total_lo:
        raise DomainError("target total must exceed source total")
    a = s1 + k0
    gap = p.sigma * (total_hi - total_lo)
    t1 = (total_hi + 1.0) ** (p.b * a) * (a / (e * gap)) ** a if a > 0 else 1.0
    t2 = (total_hi + 1.0) ** (p.b * (a + 2)) * ((a + 2) / (e * gap)) ** (a + 2)
    return p.eps_abs ** (p.r * a) * (t1 + t2)


def chi_norm_bound(sigma: float) -> float:
    return 1.0 + (2.0 / (e * sigma)) ** 2


def c6_constant(c5: float, l0: int, sigma: float) -> float:
    return (c5 * chi_norm_bound(sigma)) ** l0


def weight_peak_closed(m1: float, m2: float) -> float:
    return (m1 / m2) ** m1 * exp(-m1)


def weight_peak_numeric(m1: float, m2: float) -> float:
    """Locate sup_{x>=0} x^{m1} e^{-m2 x} by bounded search on the log."""
    if m1 == 0:
        return 1.0
    res = optimize.minimize_scalar(lambda x: -(m1 * log(x) - m2 * x), bounds=(1e-12, 50 * m1 / m2 + 1),
                                   method="bounded", options={"xatol": 1e-13})
    return exp(-res.fun)


def rb_gap_holds(max_total: int, b: float) -> bool:
    """Check r_b(n2) - r_b(n1) >= (n2 - n1)/(n2 + 1)^b for all n1 < n2 <= max_total.

    The left side is summed term by term from n1 + 1 so no cancellation occurs.
    """
    terms = (np.arange(max_total + 1, dtype=float) + 1.0) ** (-b)
    n = np.arange(max_total + 1, dtype=float)
    for n1 in range(max_total):
        lhs = np.cumsum(terms[n1 + 1:])
        rhs = (n[n1 + 1:] - n1) * terms[n1 + 1:]
        if np.any(lhs < rhs * (1 - 1e-12)):
            return False
    return True


def j_integral(x: float) -> float:
    """J(|tau|, |eps|)/|eps|^r written in the scaled variable x = |tau|/|eps|^r."""
    def f(h):
        return (1 + x * x) * x / ((1 + x * x * (1 - h) ** 2) * (1 + x * x * h * h))
    pts = [min(1.0, 1.0 / x), max(0.0, 1 - 1.0 / x)] if x > 1 else None
    val, _ = integrate.quad(f, 0.0, 1.0, points=pts, limit=200, epsabs=1e-13, epsrel=1e-12)
    return val


def j_integral_sup() -> float:
    """sup over x >= 0 of the scaled J integral: the analytic convolution constant."""
    xs = np.geomspace(1e-2, 1e4, 400)
    vals = np.array([j_integral(x) for x in xs])
    i = int(np.argmax(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    res = optimize.minimize_scalar(lambda x: -j_integral(x), bounds=(lo, hi), method="bounded")
    return max(float(vals.max()), -res.fun, np.pi)


def random_tau_polynomial(rng, degree: int, scale: float) -> TauPolynomial:
    """Random coefficients sized so that every power matters on |tau| ~ scale."""
    m = np.arange(degree + 1)
    c = (rng.normal(size=degree + 1) + 1j * rng.normal(size=degree + 1)) * scale ** (-m.astype(float))
    return TauPolynomial(c)


@dataclass
class ConvolutionFit:
    c5: float
    ratios: np.ndarray


def _convolution_ratio(v1, v2, t1, t2, t, base, region_for_total, grid, polish=True):
    n1 = e_norm(v1, base.at_total(t1), region_for_total(t1), grid, polish)
    n2 = e_norm(v2, base.at_total(t2), region_for_total(t2), grid, polish)
    n12 = e_norm(tau_convolve(v1, v2), base.at_total(t), region_for_total(t), grid, polish)
    return n12 / (base.scale * n1 * n2)


def fit_c5(rng, n_samples: int, eps_abs: float, sigma: float, b: float, r: float,
           region_for_total, grid: GridSpec | None = None, max_degree: int = 10,
           max_total: int = 12, n_climb: int = 4, climb_iter: int = 150) -> ConvolutionFit:
    """Largest observed ||v1*v2||_t / (|eps|^r ||v1||_t1 ||v2||_t2) with t = t1 + t2.

    Half of the samples are random pairs; the other half pair a random
    polynomial with a constant or a monomial, the family behind iterated
    antiderivatives. Totals favour small values, where the weight is widest.
    The worst few pairs are then pushed further by a Nelder-Mead ascent on the
    coefficients of the second factor.
    """
    grid = GridSpec(n_radial=256, n_circle=256, n_disc_rays=8, max_doublings=2) if grid is None else grid
    base = ENormParams(eps_abs, sigma, r, b, 0)
    sc0 = eps_abs ** r
    half = max_total // 2
    samples, ratios = [], []
    for k in range(n_samples):
        t1, t2 = (int(min(x, half)) for x in rng.geometric(0.4, size=2) - 1)
        sc = sc0 * rng.uniform(0.2, 3.0)
        v2 = random_tau_polynomial(rng, int(rng.integers(0, max_degree + 1)), sc)
        if k % 2 == 0:
            v1 = random_tau_polynomial(rng, int(rng.integers(0, max_degree + 1)), sc)
        elif k % 4 == 1:
            v1 = TauPolynomial([1.0])
        else:
            v1 = TauPolynomial.monomial(int(rng.integers(1, 4)))
        samples.append((v1, v2, t1, t2))
        ratios.append(_convolution_ratio(v1, v2, t1, t2, t1 + t2, base, region_for_total, grid))
    coarse = replace(grid, max_doublings=0)
    for i in np.argsort(ratios)[::-1][:n_climb]:
        v1, v2, t1, t2 = samples[i]
        n = v2.coeffs.size

        def unpack(x, n=n):
            return TauPolynomial(x[:n] + 1j * x[n:])

        # v1 stays fixed during the ascent, so its norm is computed once
        n1 = e_norm(v1, base.at_total(t1), region_for_total(t1), coarse, False)

        def loss(x, v1=v1, n1=n1, t1=t1, t2=t2):
            v = unpack(x)
            n2 = e_norm(v, base.at_total(t2), region_for_total(t2), coarse, False)
            n12 = e_norm(tau_convolve(v1, v), base.at_total(t1 + t2), region_for_total(t1 + t2), coarse, False)
            return -n12 / (base.scale * n1 * n2)

        x0 = np.concatenate([v2.coeffs.real, v2.coeffs.imag])
        res = optimize.minimize(loss, x0, method="Nelder-Mead",
                                options={"maxiter": climb_iter, "xatol": 1e-8, "fatol": 1e-10})
        ratios.append(_convolution_ratio(v1, unpack(res.x), t1, t2, t1 + t2, base,
                                         region_for_total, grid))
    ratios = np.array(ratios)
    return ConvolutionFit(float(ratios.max()), ratios)
