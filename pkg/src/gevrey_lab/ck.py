"""Picard solver for the truncated Cauchy-Kowalevski problem

    d_X^S U = sum_k d_k d_Z^{k_Z} d_X^{k_X} U + sum_p f_p d_Z^p (sum_m e_m U^m),
    d_X^j U(Z, 0) = phi_j(Z),  0 <= j < S.

The unknown is H = d_X^S U, so U = d_X^{-S} H + w with w = sum_j phi_j X^j / j!.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, DomainError
from .indices import basis_array
from .series import (
    GNormParams,
    GradedSeries,
    apply_derivative,
    apply_shift_down,
    g_norm,
    product,
)


@dataclass(frozen=True)
class CkProblem:
    S: int
    l: int
    trunc: int
    d_coeffs: dict = field(default_factory=dict)
    f_coeffs: dict = field(default_factory=dict)
    e_coeffs: dict = field(default_factory=dict)
    init: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "init", tuple(self.init))
        problems = self.violations()
        if problems:
            raise DomainError("; ".join(problems))

    def violations(self) -> list:
        out = []
        n = self.l + 2
        if self.S < 1:
            out.append("S must be positive")
        for k in self.d_coeffs:
            if len(k) != n:
                out.append(f"linear order {k} must have l+2 entries")
                continue
            if not self.S > k[-1]:
                out.append(f"need S > k_X for {k}")
            if not self.S >= sum(k):
                out.append(f"need S >= |k| for {k}")
        for p in self.f_coeffs:
            if len(p) != self.l + 1:
                out.append(f"nonlinear order {p} must have l+1 entries")
            elif not self.S >= sum(p):
                out.append(f"need S >= |p| for {p}")
        for m in self.e_coeffs:
            if m < 2:
                out.append(f"nonlinear power {m} must be >= 2")
        if len(self.init) != self.S:
            out.append(f"expected {self.S} initial series, got {len(self.init)}")
        for j, phi in enumerate(self.init):
            if phi.l != self.l:
                out.append(f"initial series {j} has wrong l")
            elif any(idx[-1] != 0 for idx, _ in phi.items()):
                out.append(f"initial series {j} depends on X")
        return out

    @property
    def pmax(self) -> int:
        return max((sum(p) for p in self.f_coeffs), default=0)

    @property
    def work_trunc(self) -> int:
        return self.trunc + self.pmax


@dataclass
class FixedPointReport:
    solution: GradedSeries
    H: GradedSeries
    iterations: int
    final_delta: float
    norm_bound: float
    history: list


def initial_polynomial(p: CkProblem, trunc: int | None = None) -> GradedSeries:
    """w = sum_j phi_j X^j / j!, i.e. w_(b, j) = (phi_j)_(b, 0).

    Entries of phi_j beyond the supplied truncation count as zero.
    """
    trunc = p.work_trunc if trunc is None else trunc
    idx = basis_array(p.l + 2, trunc)
    arr = np.zeros(len(idx), dtype=complex)
    for j, phi in enumerate(p.init):
        rows = np.nonzero(idx[:, -1] == j)[0]
        for r in rows:
            arr[r] = phi[tuple(idx[r, :-1]) + (0,)]
    return GradedSeries(p.l, trunc, arr)


def _nonlinear_source(p: CkProblem, U: GradedSeries) -> GradedSeries:
    acc = GradedSeries.zeros(p.l, U.trunc)
    for m in sorted(p.e_coeffs):
        pw = U
        for _ in range(m - 1):
            pw = product(pw, U)
        acc = acc + product(p.e_coeffs[m].with_trunc(U.trunc), pw)
    return acc


def apply_A(p: CkProblem, H: GradedSeries, params: GNormParams | None = None,
            w: GradedSeries | None = None) -> GradedSeries:
    """The map A whose fixed point H gives U = d_X^{-S} H + w."""
    if H.l != p.l:
        raise DomainError("H has the wrong number of variables")
    D, W = p.trunc, p.work_trunc
    H = H.with_trunc(D)
    w = initial_polynomial(p, W) if w is None else w
    out = GradedSeries.zeros(p.l, D)
    for k in sorted(p.d_coeffs):
        kz = np.asarray(k[:-1])
        shifted = apply_shift_down(H, np.concatenate([kz, [p.S - k[-1]]]), out_trunc=D)
        dw = apply_derivative(w, k).with_trunc(D)
        out = out + product(p.d_coeffs[k].with_trunc(D), shifted + dw)
    if p.f_coeffs and p.e_coeffs:
        U = apply_shift_down(H, (0,) * (p.l + 1) + (p.S,), out_trunc=W) + w
        src = _nonlinear_source(p, U)
        for q in sorted(p.f_coeffs):
            deriv = apply_derivative(src, tuple(q) + (0,)).with_trunc(D)
            out = out + product(p.f_coeffs[q].with_trunc(D), deriv)
    return out


def assemble_U(p: CkProblem, H: GradedSeries, trunc: int | None = None) -> GradedSeries:
    trunc = p.work_trunc if trunc is None else trunc
    U = apply_shift_down(H.with_trunc(p.trunc), (0,) * (p.l + 1) + (p.S,), out_trunc=trunc)
    return U + initial_polynomial(p, trunc)


def solve_fixed_point(p: CkProblem, params: GNormParams, tol: float = 1e-12,
                      max_iter: int = 200) -> FixedPointReport:
    """Picard iteration from H = 0.

    The stopping test is relative: ||H_new - H|| <= tol * max(1, ||H_new||).
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    w = initial_polynomial(p)
    H = GradedSeries.zeros(p.l, p.trunc)
    history = []
    for it in range(1, max_iter + 1):
        H_new = apply_A(p, H, params, w)
        delta = g_norm(H_new - H, params)
        history.append(delta)
        H = H_new
        if not np.isfinite(delta):
            break
        if delta <= tol * max(1.0, g_norm(H, params)):
            U = assemble_U(p, H, p.trunc)
            return FixedPointReport(U, H, it, delta, g_norm(U, params), history)
    raise DivergenceError(
        f"no convergence in {max_iter} iterations (last increment {history[-1]:.3e}); "
        "initial data are probably too large for these radii", history)


def ck_residual(p: CkProblem, U: GradedSeries) -> float:
    """Relative residual of the PDE, computed by direct substitution of U.

    U must be exact up to total trunc + pmax; the comparison runs at total trunc - S.
    """
    n = p.l + 2
    lhs = apply_derivative(U, (0,) * (n - 1) + (p.S,))
    D = lhs.trunc
    terms = []
    for k in sorted(p.d_coeffs):
        terms.append(product(p.d_coeffs[k].with_trunc(D), apply_derivative(U, k).with_trunc(D)))
    if p.f_coeffs and p.e_coeffs:
        src = _nonlinear_source(p, U)
        for q in sorted(p.f_coeffs):
            terms.append(product(p.f_coeffs[q].with_trunc(D),
                                 apply_derivative(src, tuple(q) + (0,)).with_trunc(D)))
    rhs = GradedSeries.zeros(p.l, D)
    for t in terms:
        rhs = rhs + t
    scale = max([lhs.max_abs(), rhs.max_abs()] + [t.max_abs() for t in terms] + [1e-300])
    return float(np.max(np.abs((lhs - rhs).coeffs), initial=0.0) / scale)
