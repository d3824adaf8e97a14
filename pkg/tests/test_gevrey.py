from math import factorial, lgamma

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.special import exp1

from gevrey_lab.borel import CoefficientData, LinearTerm, PolynomialDatum, Structure
from gevrey_lab.divisors import AlgebraicFrequencies
from gevrey_lab.errors import DomainError
from gevrey_lab.gevrey import (DirichletParams, EvaluationGrid, compute_H, cover_fit, dirichlet_log_series,
                               dirichlet_series, fit_dirichlet_bound, fit_flatness, flatness_exponent,
                               formal_residual, gevrey_order, gevrey_remainder, init_expansion_from_datums,
                               measure_flatness, remainder_bound)

FREQ = AlgebraicFrequencies.from_values([2 ** 0.5], 1)
LIN = Structure(5, 1, 1, 1, 2.0, 1.0, FREQ, (LinearTerm(0, 0, 0, 0),), ())
LIN_DATA = CoefficientData({(0, 0, 0, 0, 0, 0): [0.5]}, {}, 0.12)


# ---------------------------------------------------------------- flatness fits

def test_synthetic_flatness_recovery():
    eps = 0.1 / 2 ** np.arange(12)
    delta = 2 * np.exp(-3 / eps ** 0.5)
    f = fit_flatness(eps, delta, 0.5)
    assert f.K == pytest.approx(2, rel=0.02) and f.M == pytest.approx(3, rel=0.02)
    assert f.s_fit == pytest.approx(0.5, rel=1e-4) and f.r2_free > 0.999999
    assert not f.degenerate


def test_flatness_degenerate_notice():
    f = fit_flatness([0.1, 0.05, 0.025], [0.0, 0.0, 0.0], 0.5)
    assert f.degenerate and "coincide" in f.notice


def test_flatness_exponents(default_spec):
    assert flatness_exponent(default_spec.structure) == 0.5
    assert gevrey_order(default_spec.structure) == 2.0


class _Fake:
    def __init__(self, sign, eps):
        self.sign, self.eps = sign, eps

    def evaluate(self, t, z, x):
        return self.sign * np.exp(-2.0 / abs(self.eps) ** 0.5) * (1 + 0.1 * abs(t))


def test_measure_flatness_on_known_difference():
    grid = EvaluationGrid((1.0, 2.0), (0.0,), (0.0,))
    eps = [0.1 / 2 ** n for n in range(6)]
    ds = measure_flatness(lambda i, e: _Fake((-1) ** i, e), (0, 1), grid, eps, 0.5)
    assert ds.fit.M == pytest.approx(2.0, rel=1e-9) and ds.fit.K == pytest.approx(2 * 1.2, rel=1e-9)
    assert ds.to_json()["sector_pair"] == [0, 1]
    with pytest.raises(DomainError):
        measure_flatness(lambda i, e: _Fake(1, e), (0, 1), grid, eps[::-1], 0.5)


# ---------------------------------------------------------------- Dirichlet series

def test_dirichlet_a_zero_is_single_exponential():
    assert dirichlet_series(DirichletParams(0.0, 1.0), 0.1) == (np.exp(-10.0), 0.0)


@pytest.mark.parametrize("a, alpha, eps", [(0.3, 0.5, 1e-4), (0.8, 2.0, 1e-4), (0.5, 1.0, 0.1), (0.8, 0.5, 0.02)])
def test_dirichlet_log_sum_matches_high_precision(a, alpha, eps):
    mp.mp.dps = 30
    ref = mp.log(mp.fsum(mp.e ** (-1 / ((k + 1) ** alpha * mp.mpf(eps))) * mp.mpf(a) ** k for k in range(5000)))
    v, tail = dirichlet_log_series(DirichletParams(a, alpha), eps)
    assert v == pytest.approx(float(ref), rel=1e-13)
    assert tail < v + np.log(1e-16)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0.05, 0.95), alpha=st.floats(0.3, 3.0), eps=st.floats(1e-4, 0.2))
def test_dirichlet_bracketed_and_monotone(a, alpha, eps):
    p = DirichletParams(a, alpha)
    v, _ = dirichlet_log_series(p, eps)
    # the k = 0 term below, the geometric series above
    assert -1 / eps <= v + 1e-12 and v <= -np.log(1 - a) + 1e-12
    assert dirichlet_log_series(p, 0.9 * eps)[0] < v


def test_dirichlet_params_validated():
    for a, alpha in ((1.0, 1.0), (-0.1, 1.0), (0.5, 0.0)):
        with pytest.raises(DomainError):
            DirichletParams(a, alpha)


def test_dirichlet_fit_dominates():
    grid = np.geomspace(1e-4, 0.1, 30)
    p = DirichletParams(0.5, 1.0)
    K, M, logs = fit_dirichlet_bound(p, grid)
    bound = np.log(K) - M * grid ** -0.5
    assert np.all(logs <= bound + 1e-12 * np.abs(bound)) and M > 0


def test_cover_fit_is_tight_cover():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 5, 40)
    y = 1.0 + 0.7 * x - rng.uniform(0, 1, 40)
    c0, c1 = cover_fit(x, y)
    gap = c0 + c1 * x - y
    assert np.all(gap >= 0) and np.min(gap) <= 1e-9


# ---------------------------------------------------------------- formal series

def test_H0_matches_ode_oracle():
    ex = init_expansion_from_datums({(0, 0, 0): PolynomialDatum((1.0,))}, LIN, 3)
    tail = compute_H(LIN, LIN_DATA, ex, 3, 20)
    sol = solve_ivp(lambda x, y: [y[1], y[2], y[3], y[4], 0.5 * y[0]], (0, 0.4), [1, 0, 0, 0, 0],
                    rtol=1e-12, atol=1e-14)
    assert tail.H(0, 2.0, 0.0, 0.4) == pytest.approx(sol.y[0, -1], rel=1e-10)


def test_second_level_matches_ode_oracle():
    # V = tau gives X = eps t at x = 0, so X_1 = t f(x) with f^(5) = f/2, and
    # X_2 = -t^2 g(x) with g^(5) = g/2 + f, g^(j)(0) = 0
    ex = init_expansion_from_datums({(0, 0, 0): PolynomialDatum((0.0, 1.0))}, LIN, 3)
    tail = compute_H(LIN, LIN_DATA, ex, 3, 20)

    def rhs(x, y):
        f, g = y[:5], y[5:]
        return [f[1], f[2], f[3], f[4], 0.5 * f[0], g[1], g[2], g[3], g[4], 0.5 * g[0] + f[0]]

    sol = solve_ivp(rhs, (0, 0.4), [1, 0, 0, 0, 0, 0, 0, 0, 0, 0], rtol=1e-12, atol=1e-16)
    f, g = sol.y[0, -1], sol.y[5, -1]
    t = 3.0
    assert tail.H(0, t, 0.0, 0.4) == 0
    assert tail.H(1, t, 0.0, 0.4) == pytest.approx(t * f, rel=1e-10)
    assert tail.H(2, t, 0.0, 0.4) == pytest.approx(-2 * t ** 2 * g, rel=1e-8)


def test_time_term_levels_follow_r3():
    st2 = Structure(5, 1, 1, 2, 2.0, 1.0, FREQ, (LinearTerm(0, 0, 0, 0),), ())
    ex = init_expansion_from_datums({(0, 0, 0): PolynomialDatum((1.0,))}, Structure(5, 1, 1, 1, 2.0, 1.0, FREQ,
                                                                                    (LinearTerm(0, 0, 0, 0),)), 5)
    tail = compute_H(st2, LIN_DATA, ex, 5, 6)
    assert min(tail.time_term_levels) == 2


def test_non_integer_r_rejected():
    st_ = Structure(5, 1, 2, 1, 2.0, 1.0, FREQ, (LinearTerm(0, 0, 0, 0),), ())
    with pytest.raises(DomainError):
        init_expansion_from_datums({(0, 0, 0): PolynomialDatum((1.0,))}, st_, 3)


def test_formal_residual_order(default_spec):
    s = default_spec
    init = s.initial_data(4)
    ex = init_expansion_from_datums(init, s.structure, 8)
    tail = compute_H(s.structure, s.data, ex, 8, 4)
    pts = [(t, z, x) for t in (5.0, 10.0) for z in (0.0, 0.05) for x in (0.1, -0.2)]
    for n in (2, 4):
        a = formal_residual(tail, s.data, n, 0.01, pts)
        b = formal_residual(tail, s.data, n, 0.005, pts)
        assert np.log2(a / b) == pytest.approx(n, abs=0.5)


# ---------------------------------------------------------------- remainders

class _StieltjesTail:
    """Partial sums of sum (-1)^k k! eps^k, the expansion of int e^{-u}/(1 + eps u) du."""

    def __init__(self, N):
        self.N = N

    def partial_sums(self, eps, t, z, x):
        terms = np.array([(-1) ** n * float(factorial(n)) * abs(eps) ** n for n in range(self.N)], dtype=complex)
        return np.concatenate([[0j], np.cumsum(terms)])


class _StieltjesValue:
    def __init__(self, eps):
        self.eps = abs(eps)

    def evaluate(self, t, z, x):
        w = 1 / self.eps
        return w * np.exp(w) * exp1(w)


def test_remainder_fit_on_stieltjes_oracle():
    eps = [0.2, 0.1, 0.05]
    sols = {e: _StieltjesValue(e) for e in eps}
    grid = EvaluationGrid((1.0,), (0.0,), (0.0,))
    rep = gevrey_remainder(sols, _StieltjesTail(40), grid, range(1, 40), 1.0, fit_Ns=(1, 2, 3, 4, 5))
    assert rep.covered
    # |R_N| <= N! eps^N for this series, and the fit must not be looser than that
    assert rep.C * rep.M ** 5 <= 1.0 + 1e-9
    for e in eps:
        assert rep.has_interior_minimum(e)
        assert abs(rep.optimal_N[e] - 1 / e) <= 2
    N, e = 3, 0.1
    assert remainder_bound(rep.C, rep.M, N, 1.0, e) == pytest.approx(
        rep.C * rep.M ** N * np.exp(lgamma(N + 1)) * e ** N)
    with pytest.raises(DomainError):
        gevrey_remainder(sols, _StieltjesTail(5), grid, range(1, 10), 1.0)
