"""Diophantine constants, the radii rho_beta and the denominators tau^{r2} + A^{r1}.

For a frequency vector (1, xi_1, ..., xi_l) the lower bound
|k_0 + k_1 xi_1 + ... + k_l xi_l| >= C / (sum |k_j|)^h is probed by exhaustive
search over |k_j| <= K; the minimizing ratio is the operational constant.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

import numpy as np

from .errors import DependenceError, DomainError, GeometryError
from .norms import OmegaRegion

log = logging.getLogger(__name__)

DEPENDENCE_FLOOR = 1e-14
MARGIN_WARNING = 1e-10


def _parse_real(value) -> float:
    if isinstance(value, str):
        try:
            return float(Decimal(value.strip()))
        except InvalidOperation as exc:
            raise DomainError(f"cannot parse frequency {value!r}") from exc
    return float(value)


def _combination_minimum(xi: np.ndarray, h: int, K: int):
    """Return (min ratio, argmin k, min |sum k xi|) over 0 < max|k_j| <= K.

    For fixed (k_1..k_l) only the two integers k_0 nearest to -sum k_j xi_j can
    minimize, so the search runs over (2K+1)^l tails, one slab per value of
    (k_2..k_l) to keep memory at O(K).
    """
    l = xi.size
    if l == 0:
        return 1.0, (1,), 1.0
    ks = np.arange(-K, K + 1)
    best_ratio, best_k, best_raw = np.inf, None, np.inf
    for rest in itertools.product(ks, repeat=l - 1):
        tail = np.zeros((ks.size, l), dtype=np.int64)
        tail[:, 0] = ks
        tail[:, 1:] = rest
        s = tail @ xi
        tail_abs = np.abs(tail).sum(axis=1)
        for off in (0.0, 1.0):
            k0 = np.floor(-s) + off
            ok = (np.abs(k0) <= K) & ((tail_abs > 0) | (k0 != 0))
            if not np.any(ok):
                continue
            val = np.where(ok, np.abs(k0 + s), np.inf)
            ratio = np.where(ok, val * np.where(ok, np.abs(k0) + tail_abs, 1) ** h, np.inf)
            i = int(np.argmin(ratio))
            best_raw = min(best_raw, float(val.min()))
            if ratio[i] < best_ratio:
                best_ratio = float(ratio[i])
                best_k = (int(k0[i]),) + tuple(int(t) for t in tail[i])
    return best_ratio, best_k, best_raw


def estimate_c_xi(xi, h: int, K: int = 200) -> float:
    """min over 0 < max|k| <= K of |k_0 + sum k_j xi_j| (sum |k_j|)^h."""
    if K < 50:
        raise DomainError("search bound K must be at least 50")
    if h < 1:
        raise DomainError("h must be a positive integer")
    arr = np.array([_parse_real(v) for v in xi], dtype=float)
    ratio, k, raw = _combination_minimum(arr, h, K)
    if raw < DEPENDENCE_FLOOR:
        raise DependenceError(f"integer relation among (1, xi): |combination| = {raw:.3e}")
    log.debug("c_xi = %.6g attained at k = %s", ratio, k)
    return ratio


@dataclass(frozen=True)
class AlgebraicFrequencies:
    xi: tuple
    h: int
    c_xi: float
    k_check: int = 50

    def __post_init__(self):
        xi = tuple(_parse_real(v) for v in self.xi)
        object.__setattr__(self, "xi", xi)
        if self.h < 1:
            raise DomainError("h must be a positive integer")
        if not self.c_xi > 0:
            raise DomainError("c_xi must be positive")
        _, _, raw = _combination_minimum(np.array(xi), self.h, self.k_check)
        if raw < DEPENDENCE_FLOOR:
            raise DependenceError(f"integer relation among (1, xi) with |k| <= {self.k_check}")
        if raw < MARGIN_WARNING:
            warnings.warn(f"independence margin {raw:.2e} is below {MARGIN_WARNING:g}", RuntimeWarning)

    @classmethod
    def from_values(cls, xi, h: int, K: int = 200) -> "AlgebraicFrequencies":
        return cls(tuple(xi), h, estimate_c_xi(xi, h, K))

    @property
    def l(self) -> int:
        return len(self.xi)

    @property
    def full(self) -> np.ndarray:
        """(xi_0, ..., xi_l) with xi_0 = 1."""
        return np.array((1.0,) + self.xi)


def forbidden_directions(r2: int) -> np.ndarray:
    return np.pi * (2 * np.arange(r2) + 1) / r2


def _angle_gap(a, b):
    return np.abs((np.asarray(a) - b + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True)
class DivisorContext:
    r1: int
    r2: int
    freq: AlgebraicFrequencies
    sector: OmegaRegion = field(default_factory=lambda: OmegaRegion(0.0, np.pi / 4, 0.5))

    def __post_init__(self):
        if self.r1 < 1 or self.r2 < 1:
            raise DomainError("r1, r2 must be positive integers")
        gap = float(np.min(_angle_gap(forbidden_directions(self.r2), self.sector.sector_direction)))
        if gap <= self.sector.sector_aperture / 2:
            raise GeometryError(
                f"sector around {self.sector.sector_direction:.4f} meets a root direction "
                f"(2k+1)pi/{self.r2} of tau^r2 + A^r1")

    @property
    def exponent(self) -> float:
        return self.freq.h * self.r1 / self.r2

    def region(self, total: int) -> OmegaRegion:
        return OmegaRegion(rho_total(total, self), self.sector.sector_direction,
                           self.sector.sector_aperture)


def rho_total(total: int, ctx: DivisorContext) -> float:
    c = ctx.freq.c_xi ** (ctx.r1 / ctx.r2)
    return c / (2.0 * (1.0 + total) ** ctx.exponent)


def rho_beta(beta, ctx: DivisorContext) -> float:
    """c^{r1/r2} / (2 (1 + |beta|)^{h r1/r2}), |beta| summing every slot including x."""
    return rho_total(int(np.sum(beta)), ctx)


def mode_amplitude(beta_modes, freq: AlgebraicFrequencies) -> float:
    """A = 1 + sum_{j=0}^{l} beta_j xi_j."""
    b = np.asarray(beta_modes, dtype=float)
    return 1.0 + float(b @ freq.full)


def denominator(tau, beta, ctx: DivisorContext):
    """tau^{r2} + A^{r1}; `beta` lists the mode slots beta_0..beta_l (an x slot is ignored)."""
    b = tuple(beta)[: ctx.freq.l + 1]
    A = mode_amplitude(b, ctx.freq)
    return np.asarray(tau, dtype=complex) ** ctx.r2 + A ** ctx.r1


def partial_fractions(A: float, r1: int, r2: int) -> list:
    """Poles and residues of 1/(tau^{r2} + A^{r1}) for A > 0."""
    if not A > 0:
        raise DomainError("A must be positive")
    k = np.arange(r2)
    poles = A ** (r1 / r2) * np.exp(1j * np.pi * (2 * k + 1) / r2)
    res = np.exp(-1j * np.pi * (2 * k + 1) * (r2 - 1) / r2) / (r2 * A ** (r1 - r1 / r2))
    return list(zip(poles.tolist(), res.tolist()))


def evaluate_partial_fractions(pf, tau):
    tau = np.asarray(tau, dtype=complex)
    return sum(r / (tau - p) for p, r in pf)


@dataclass
class DenominatorFit:
    c7: float
    ratios: np.ndarray


def _sample_region(rng, region: OmegaRegion, n: int, scale: float) -> np.ndarray:
    """Points of D(0, rho) and of the sector, radii log-spread around `scale`."""
    n_disc = n // 2
    rad = region.disc_radius * np.sqrt(rng.uniform(size=n_disc))
    disc = rad * np.exp(2j * np.pi * rng.uniform(size=n_disc))
    m = n - n_disc
    ang = region.sector_direction + region.sector_aperture * rng.uniform(-0.5, 0.5, size=m)
    # include the rim directions where the denominator is smallest
    ang[: m // 8] = region.sector_direction + np.sign(rng.uniform(-1, 1, size=m // 8)) * region.sector_aperture / 2
    r = scale * np.exp(rng.uniform(np.log(1e-3), np.log(1e2), size=m))
    return np.concatenate([disc, r * np.exp(1j * ang)])


def fit_c7(rng, ctx: DivisorContext, S: int, n_samples: int = 10_000, max_total: int = 30,
           per_beta: int = 20) -> DenominatorFit:
    """Largest |1/(tau^r2 + A^r1)| / (1 + sum_{j<=l} beta_j)^{h r1} over sampled (beta, tau).

    tau ranges over Omega_{(beta, beta_x + S)}, i.e. the disc radius is rho at
    total |beta| + S.
    """
    ratios = []
    nslots = ctx.freq.l + 2
    n_beta = max(1, n_samples // per_beta)
    for _ in range(n_beta):
        total = int(rng.integers(0, max_total + 1))
        cuts = np.sort(rng.integers(0, total + 1, size=nslots - 1))
        beta = np.diff(np.concatenate([[0], cuts, [total]]))
        modes = beta[:-1]
        A = mode_amplitude(modes, ctx.freq)
        reg = ctx.region(total + S)
        tau = _sample_region(rng, reg, per_beta, A ** (ctx.r1 / ctx.r2))
        val = np.abs(1.0 / denominator(tau, modes, ctx))
        ratios.append(val / (1.0 + modes.sum()) ** (ctx.freq.h * ctx.r1))
    ratios = np.concatenate(ratios)
    return DenominatorFit(float(ratios.max()), ratios)
