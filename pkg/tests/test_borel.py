import itertools
from fractions import Fraction
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_lab.borel import (
    BorelCoefficientTable,
    CoefficientData,
    LinearTerm,
    LogDatum,
    MajorantConstants,
    NonlinearTerm,
    PoleDatum,
    PolynomialAlgebra,
    PolynomialDatum,
    Structure,
    _Filler,
    borel_linear_operator,
    borel_transform,
    c11_constant,
    check_borel_identities,
    check_domination,
    compare_majorants,
    datum_from_json,
    eps_power,
    fit_growth_envelope,
    generated_keys,
    init_keys,
    key_total,
    majorant_via_ck,
    rewrite_antiderivative_product,
    rewrite_irregular_power,
    run_majorant,
    run_recursion,
    table_norms,
)
from gevrey_lab.divisors import AlgebraicFrequencies, DivisorContext, rho_total
from gevrey_lab.errors import DomainError, DominationFailure, EngineDefectError
from gevrey_lab.norms import GridSpec, TauPolynomial
from gevrey_lab.series import GNormParams

FREQ = AlgebraicFrequencies.from_values([2 ** 0.5], 1)
CTX = DivisorContext(1, 1, FREQ)
DEFAULT = Structure(9, 1, 1, 1, 2.0, 1.0, FREQ, (LinearTerm(2, 1, 1, 0),), (NonlinearTerm(1, 2),))
DATA = CoefficientData({(2, 1, 1, 0, 0, 0): [0.2], (2, 1, 1, 0, 1, 0): [0, 0.3]},
                       {(1, 2, 0, 0): [0.3], (1, 2, 0, 1): [0.1]}, 0.12)
EPS = 1e-3 * np.exp(1j * np.pi / 4)
GRID = GridSpec(256, n_circle=128, n_disc_rays=4, max_doublings=1)


def default_init(B, alg, structure=DEFAULT, delta=1e-3):
    out = {}
    for key in init_keys(structure.l, structure.S, B):
        amp = delta * 0.15 ** key_total(key) * np.prod([factorial(m) for m in key])
        out[key] = alg.from_datum(LogDatum(amp, 1.5j * rho_total(key_total(key), CTX)))
    return out


# ------------------------------------------------------------ Borel transform

def test_borel_transform_examples():
    np.testing.assert_allclose(borel_transform([0, 1]).coeffs, [0, 1])
    np.testing.assert_allclose(borel_transform([0, 0, 1]).coeffs, [0, 0, 0.25])
    np.testing.assert_allclose(borel_transform([1]).coeffs, [1])


def test_identity_examples():
    rep = check_borel_identities([1, 0, 0], [1, 0, 0])
    assert rep.ok
    # (t^2 d_t + t) t = 2 t^2 = 4 t^2/2!, whose transform is tau^2
    x = TauPolynomial([0, 1])
    assert np.allclose((x * borel_transform([0, 1, 0])).coeffs[:3], borel_transform([0, 0, 4]).coeffs)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 14), st.integers(0, 10 ** 6))
def test_identities_on_random_series(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
    g = rng.normal(size=n + 1)
    assert check_borel_identities(a, g).ok


def test_identity_needs_degree_two():
    with pytest.raises(DomainError):
        check_borel_identities([1, 2], [1, 2, 3])


# ------------------------------------------------------------ operator rewrites

def test_irregular_power_examples():
    assert dict(rewrite_irregular_power(1)) == {1: 1, 2: 1}
    assert dict(rewrite_irregular_power(2)) == {2: 2, 3: 4, 4: 1}
    with pytest.raises(DomainError):
        rewrite_irregular_power(0)


def _apply_tau_d2_d(coeffs):
    # (tau d^2 + d) on exact coefficient lists
    out = [Fraction(0)] * len(coeffs)
    for m, c in enumerate(coeffs):
        if m >= 1:
            out[m - 1] += c * m * m
    return out


@pytest.mark.parametrize("k0", [1, 2, 3, 4])
def test_irregular_power_matches_direct_application(k0):
    for m in range(13):
        u = [Fraction(0)] * m + [Fraction(1)]
        direct = u
        for _ in range(k0):
            direct = _apply_tau_d2_d(direct)
        rewritten = [Fraction(0)] * (m + 1)
        for k, a in rewrite_irregular_power(k0):
            if m >= k:
                # tau^{k-k0} d^k tau^m
                rewritten[m - k0] += a * Fraction(factorial(m), factorial(m - k))
        assert rewritten[: len(direct)] == direct + [0] * (len(rewritten) - len(direct))


def test_antiderivative_product_examples():
    assert rewrite_antiderivative_product(1, 1, 1) == ((0, -1, -1), (1, 0, 1))
    assert rewrite_antiderivative_product(1, 0, 0) == ((0, -1, 1),)
    with pytest.raises(DomainError):
        rewrite_antiderivative_product(1, 2, 0)
    with pytest.raises(DomainError):
        rewrite_antiderivative_product(1, 0, 2)


def _lhs_on_monomial(a, b, c, m):
    """d^{-a}(tau^b d^c tau^m) as (coefficient, degree)."""
    if m < c:
        return Fraction(0), None
    coef = Fraction(factorial(m), factorial(m - c))
    deg = m - c + b
    return coef * Fraction(factorial(deg), factorial(deg + a)), deg + a


def _rhs_on_monomial(terms, m):
    total, deg = Fraction(0), None
    for bb, cc, alpha in terms:
        # tau^{b'} d^{c'} tau^m with c' <= 0
        p = -cc
        total += alpha * Fraction(factorial(m), factorial(m + p))
        deg = m + p + bb
    return total, deg


@pytest.mark.parametrize("a,b,c", [(a, b, c) for a in range(5) for b in range(a + 1) for c in range(a + 1)])
def test_antiderivative_product_on_monomials(a, b, c):
    terms = rewrite_antiderivative_product(a, b, c)
    for bb, cc, _ in terms:
        assert bb >= 0 and cc <= 0 and bb - cc == a + b - c
    for m in range(c, 11):
        lhs, ldeg = _lhs_on_monomial(a, b, c, m)
        rhs, rdeg = _rhs_on_monomial(terms, m)
        assert lhs == rhs and ldeg == rdeg


def test_linear_operator_default_term():
    # d^{-2}(tau d^2 + d) = tau - d^{-1}
    assert borel_linear_operator(2, 1) == ((0, 1, -1), (1, 0, 1))
    assert borel_linear_operator(3, 0) == ((0, 3, 1),)
    with pytest.raises(DomainError):
        borel_linear_operator(1, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3).flatmap(lambda k0: st.tuples(st.just(k0), st.integers(2 * k0, 2 * k0 + 4))))
def test_linear_operator_shape(pair):
    k0, s = pair
    ops = borel_linear_operator(s, k0)
    assert ops and all(r + p == s - k0 and r >= 0 and p >= 0 for r, p, _ in ops)


# ------------------------------------------------------------ structure and data

def test_default_structure_valid():
    assert DEFAULT.violations() == []


def test_structure_violation_names_condition():
    bad = Structure(7, 1, 1, 1, 2.0, 1.0, FREQ, (LinearTerm(2, 1, 1, 0),), (NonlinearTerm(1, 2),))
    v = bad.violations()
    assert len(v) == 1 and "h r1 + b(s-k0+2) + k1 + k2" in v[0]
    with pytest.raises(DomainError):
        bad.require_valid()
    lin = Structure(9, 1, 1, 1, 2.0, 1.0, FREQ, (LinearTerm(1, 1, 0, 0),), (NonlinearTerm(0, 1),))
    msgs = " ".join(lin.violations())
    assert "s >= 2 k0" in msgs and "l1 >= 2" in msgs


def test_coefficient_decay_enforced():
    CoefficientData({(2, 1, 1, 0, 1, 0): [0.1]}, {}, 0.1, bfrak={(2, 1, 1, 0): 1.0})
    with pytest.raises(DomainError):
        CoefficientData({(2, 1, 1, 0, 1, 0): [0.3]}, {}, 0.1, bfrak={(2, 1, 1, 0): 1.0})


def test_eps_power_principal_branch():
    assert eps_power(-1.0, 0.5) == pytest.approx(1j)
    assert eps_power(4.0, 0.5) == pytest.approx(2.0)


def test_datum_taylor_matches_closed_form():
    tau = 0.05 * np.exp(0.4j)
    for d in (LogDatum(0.3, 0.5j), PoleDatum(0.2, 0.4 + 0.1j, 2), PolynomialDatum((1.0, 2.0, 0.5))):
        assert d.taylor(60)(tau) == pytest.approx(complex(d.evaluate(tau)), rel=1e-12)
        assert datum_from_json(d.to_json()) == d
    assert LogDatum(1.0, 2.0).taylor(3).coeffs[0] == 0


def test_key_sets_are_disjoint_and_sized():
    a, b = init_keys(1, 3, 2), generated_keys(1, 3, 2)
    assert not set(a) & set(b)
    assert len(a) == 3 * 6 and len(b) == 6 + 3 + 1
    assert all(key_total(k) <= 2 + 3 for k in b)


# ------------------------------------------------------------ recursion

def test_zero_coefficients_give_zero_entries():
    alg = PolynomialAlgebra(8, 1, 1)
    tab = run_recursion(DEFAULT, CoefficientData.zero(), default_init(2, alg), EPS, 2, alg)
    assert all(tab[k].is_zero() for k in tab.generated())


def test_unfinished_entry_read_is_a_defect():
    f = _Filler(PolynomialAlgebra(4, 1, 1), {(0, 0, 0): TauPolynomial([1.0])}, 1)
    with pytest.raises(EngineDefectError):
        f.get((0, 0, 1))


def _conv_direct(p, q, M):
    out = [0j] * (M + 1)
    for a, x in enumerate(p):
        for b, y in enumerate(q):
            if a + b + 1 <= M:
                out[a + b + 1] += x * y * factorial(a) * factorial(b) / factorial(a + b + 1)
    return out


def test_pure_convolution_hand_oracle():
    # S=2, nonlinear term (l0,l1)=(1,2), data only at beta = 0, B=2, M=6
    structure = Structure(2, 1, 1, 1, 0.1, 1.0, FREQ, (), (NonlinearTerm(1, 2),))
    data = CoefficientData({}, {(1, 2, 0, 0): [0.5]}, 0.1)
    M, eps = 6, 0.01 * np.exp(0.3j)
    alg = PolynomialAlgebra(M, 1, 1)
    v0 = [0.0, 0.7, -0.2, 0.1]
    tab = run_recursion(structure, data, {(0, 0, 0): TauPolynomial(v0)}, eps, 2, alg)
    sq = _conv_direct(v0, v0, M)
    anti = [0j] + [sq[m] / (m + 1) for m in range(M)]
    # divide by (1 + tau) through the recurrence y_m = a_m - y_{m-1}
    y = []
    for m in range(M + 1):
        y.append(anti[m] - (y[-1] if y else 0))
    expected = 0.5 * eps ** -2 * np.array(y)
    np.testing.assert_allclose(tab[(0, 0, 2)].padded(M), expected, rtol=1e-13)
    for k in tab.generated():
        if k != (0, 0, 2):
            assert tab[k].is_zero()


def test_recursion_matches_t_plane_solution():
    structure = Structure(5, 1, 1, 1, 1.0, 1.0, FREQ, (LinearTerm(2, 1, 1, 0),), (NonlinearTerm(1, 2),))
    data = CoefficientData({(2, 1, 1, 0, 0, 0): [0.2, 0.1], (2, 1, 1, 0, 1, 1): [0.3]},
                           {(1, 2, 0, 0): [0.3], (1, 2, 1, 0): [0.0, 0.2]}, 0.1)
    B, M = 3, 10
    alg = PolynomialAlgebra(M, 1, 1)
    init = default_init(B, alg, structure, delta=0.5)
    eps = 0.05 * np.exp(0.7j)
    tab = run_recursion(structure, data, init, eps, B, alg)
    oracle = _t_domain_table(structure, data, init, eps, B, M)
    for k in tab.generated():
        expect = oracle[k]
        scale = max(np.max(np.abs(expect)), 1e-300)
        assert np.max(np.abs(tab[k].padded(M) - expect)) <= 1e-12 * scale, k


def _t_domain_table(structure, data, init, eps, B, M):
    """Independent route: solve the equation in the T-plane on truncated Taylor series, then Borel-transform."""
    S, l, r = structure.S, structure.l, structure.r
    full = FREQ.full

    def fac(v):
        return float(np.prod([factorial(x) for x in v]))

    P = {}  # P[(modes, x)] = plain T-coefficients of Y_(modes, x) / (modes! x!)
    for key, v in init.items():
        P[key] = np.array([v.padded(M)[n] * factorial(n) for n in range(M + 1)]) / fac(key)

    def get(key):
        return P.get(key, np.zeros(M + 1, dtype=complex))

    def tmul(p, q):
        return np.convolve(p, q)[: M + 1]

    def shift_T(p, s):
        out = np.zeros(M + 1, dtype=complex)
        out[s:] = p[: M + 1 - s]
        return out

    def dT(p, k):
        for _ in range(k):
            p = np.concatenate([p[1:] * np.arange(1, M + 1), [0]])
        return p

    memo = {}

    def power_at(target, k):
        if k == 1:
            return get(target)
        if (target, k) not in memo:
            acc = np.zeros(M + 1, dtype=complex)
            for a in itertools.product(*(range(t + 1) for t in target)):
                rest = tuple(t - x for t, x in zip(target, a))
                acc = acc + tmul(get(a), power_at(rest, k - 1))
            memo[(target, k)] = acc
        return memo[(target, k)]

    for key in generated_keys(l, S, B):
        modes, q = key[:-1], key[-1] - S
        rhs = np.zeros(M + 1, dtype=complex)
        for t in structure.linear:
            s, k0, k1, k2 = t.as_tuple()
            for (b0, q1), coeffs in ((k[4:], v) for k, v in data.b_table.items() if k[:4] == t.as_tuple()):
                if b0 > modes[0] or q1 > q:
                    continue
                sm = (modes[0] - b0,) + modes[1:]
                coef = sum(c * eps ** j for j, c in enumerate(coeffs)) / (factorial(b0) * factorial(q1))
                coef *= eps_power(eps, r * (k0 - s))
                # plain coefficient of x^{q-q1} in d_x^{k2} Y restricted to mode sm
                src = sm + (q - q1 + k2,)
                g = get(src) * factorial(q - q1 + k2) / factorial(q - q1)
                g = g * (1j * float(np.dot(sm, full))) ** k1
                rhs = rhs + coef * shift_T(dT(g, k0), s)
        for t in structure.nonlinear:
            l0, l1 = t.as_tuple()
            for (b0, q1), coeffs in ((k[2:], v) for k, v in data.c_table.items() if k[:2] == t.as_tuple()):
                if b0 > modes[0] or q1 > q:
                    continue
                gam = (modes[0] - b0,) + modes[1:] + (q - q1,)
                coef = sum(c * eps ** j for j, c in enumerate(coeffs)) / (factorial(b0) * factorial(q1))
                coef *= eps_power(eps, -r * (l0 + l1 - 1))
                rhs = rhs + coef * shift_T(power_at(gam, l1), l0 + l1 - 1)
        A = 1 + float(np.dot(modes, full))
        y = np.zeros(M + 1, dtype=complex)
        for n in range(M + 1):
            prev = n * y[n - 1] if n else 0
            y[n] = (rhs[n] - prev) / A ** structure.r1
        # y is the plain x^q coefficient of d_x^S Y, i.e. Y_(modes, q+S) / (modes! q!)
        P[key] = y * factorial(q) / factorial(q + S)
    out = {}
    for key in generated_keys(l, S, B):
        Y = P[key] * fac(key)
        out[key] = np.array([Y[n] / factorial(n) for n in range(M + 1)])
    return out


def test_growth_envelope_covers_default_table():
    B = 4
    alg = PolynomialAlgebra(16, 1, 1)
    tab = run_recursion(DEFAULT, DATA, default_init(B, alg), EPS, B, alg)
    w = table_norms(tab, DEFAULT, CTX, abs(EPS), GRID)
    env = fit_growth_envelope(w, 1, 7.0)
    assert env.C > 0 and env.K > 0
    for k, v in w.items():
        assert v <= env.bound(k, 1) * (1 + 1e-9)


def test_table_json_roundtrip():
    alg = PolynomialAlgebra(6, 1, 1)
    tab = run_recursion(DEFAULT, DATA, default_init(1, alg), EPS, 1, alg)
    back = BorelCoefficientTable.from_json(tab.to_json())
    for k in tab.keys():
        np.testing.assert_array_equal(back[k].coeffs, tab[k].coeffs)


# ------------------------------------------------------------ majorant

CONSTS = MajorantConstants(1.04, c11_constant(DEFAULT, 2.6), 0.12)


def test_majorant_zero_data():
    U = run_majorant(DEFAULT, CoefficientData.zero(), {k: 1.0 for k in init_keys(1, 9, 2)}, 2, CONSTS)
    assert all(U[k] == 0 for k in generated_keys(1, 9, 2))


def test_majorant_linear_in_init_without_nonlinear_terms():
    lin = Structure(9, 1, 1, 1, 2.0, 1.0, FREQ, (LinearTerm(2, 1, 1, 0),), ())
    data = CoefficientData({(2, 1, 1, 0, 0, 0): [0.2]}, {}, 0.12)
    keys = init_keys(1, 9, 2)
    u1 = run_majorant(lin, data, {k: 1.0 for k in keys}, 2, CONSTS)
    u3 = run_majorant(lin, data, {k: 3.0 for k in keys}, 2, CONSTS)
    for k in generated_keys(1, 9, 2):
        assert u3[k] == pytest.approx(3 * u1[k], rel=1e-14)


def test_majorant_equals_ck_solution():
    B = 4
    rng = np.random.default_rng(2)
    init = {k: float(rng.uniform(0, 1e-3)) for k in init_keys(1, 9, B)}
    a = run_majorant(DEFAULT, DATA, init, B, CONSTS)
    b = majorant_via_ck(DEFAULT, DATA, init, B, CONSTS, GNormParams((8.0, 8.0), 1.0))
    assert compare_majorants(a, b) <= 1e-10


def test_c11_constant_formula():
    chi = 1 + (2 / (np.e * 1.0)) ** 2
    assert c11_constant(DEFAULT, 2.0) == pytest.approx(((2.0 * chi) * 2.0) ** 0.5)


# ------------------------------------------------------------ domination

@pytest.fixture(scope="module")
def default_run():
    B = 3
    alg = PolynomialAlgebra(16, 1, 1)
    tab = run_recursion(DEFAULT, DATA, default_init(B, alg), EPS, B, alg)
    w = table_norms(tab, DEFAULT, CTX, abs(EPS), GRID)
    U = run_majorant(DEFAULT, DATA, {k: w[k] for k in init_keys(1, 9, B)}, B, CONSTS)
    return tab, w, U


def test_domination_on_default(default_run):
    tab, w, U = default_run
    rep = check_domination(tab, U, DEFAULT, CTX, abs(EPS), norms=w)
    assert rep.ok


def test_domination_fault_injection(default_run):
    tab, w, U = default_run
    key = (1, 0, 2)
    bad = dict(tab.entries)
    bad[key] = bad[key].scale(10.0)
    forged = BorelCoefficientTable(bad, tab.eps, tab.max_total, tab.tau_degree, tab.S, tab.l)
    norms = dict(w)
    norms.update(table_norms(forged, DEFAULT, CTX, abs(EPS), GRID, keys=[key]))
    with pytest.raises(DominationFailure) as info:
        check_domination(forged, U, DEFAULT, CTX, abs(EPS), norms=norms)
    assert info.value.offenders == [key]


def test_domination_zero_problem():
    alg = PolynomialAlgebra(6, 1, 1)
    tab = run_recursion(DEFAULT, CoefficientData.zero(), {}, EPS, 2, alg)
    U = run_majorant(DEFAULT, CoefficientData.zero(), {}, 2, CONSTS)
    rep = check_domination(tab, U, DEFAULT, CTX, abs(EPS), GRID)
    assert rep.ok and all(v == 0 for v in rep.w.values())
