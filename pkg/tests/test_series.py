import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_lab.errors import DomainError, InvalidSeriesError
from gevrey_lab.indices import MultiIndex, basis
from gevrey_lab.series import (
    GNormParams,
    GradedSeries,
    apply_derivative,
    apply_shift_down,
    derivative_constant,
    estimate_c2,
    g_norm,
    power,
    product,
    random_series,
)

P = GNormParams((3.0, 2.0), 2.0)


def mono(idx, val=1.0, trunc=6):
    return GradedSeries.monomial(1, trunc, idx, val)


def test_norm_single_z_term():
    assert g_norm(mono((1, 0, 0)), P) == pytest.approx(3.0)


def test_norm_x_squared():
    assert g_norm(mono((0, 0, 2)), P) == pytest.approx(2.0)


def test_norm_z_squared_uses_total_factorial():
    # Z0^2 is stored as 2 because of the 1/b! normalization
    assert g_norm(mono((2, 0, 0), 2.0), P) == pytest.approx(9.0)


def test_non_finite_rejected():
    with pytest.raises(InvalidSeriesError):
        GradedSeries(1, 1, [np.nan, 0, 0, 0])


def test_canonical_order_is_total_then_lex():
    b = basis(3, 3)
    keys = [m.key() for m in b]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)
    assert MultiIndex((0, 0, 2)) < MultiIndex((0, 1, 1)) < MultiIndex((0, 0, 3))


def test_shift_down_examples():
    out = apply_shift_down(mono((1, 0, 0)), (1, 0, 1))
    assert out[(0, 0, 1)] == 1 and len(out) == 1
    assert len(apply_shift_down(mono((0, 0, 0)), (1, 0, 1))) == 0


def test_shift_down_precondition():
    with pytest.raises(DomainError):
        apply_shift_down(mono((1, 0, 0)), (1, 1, 1))


def test_derivative_examples():
    assert apply_derivative(mono((0, 0, 2)), (0, 0, 2))[(0, 0, 0)] == 1
    assert apply_derivative(mono((1, 0, 1)), (1, 0, 1))[(0, 0, 0)] == 1
    assert len(apply_derivative(GradedSeries.zeros(1, 4), (1, 1, 1))) == 0


def test_product_examples():
    sq = product(mono((1, 0, 0)), mono((1, 0, 0)))
    assert sq[(2, 0, 0)] == 2
    rng = np.random.default_rng(0)
    u = random_series(rng, 1, 6)
    one = mono((0, 0, 0))
    np.testing.assert_allclose(product(one, u).coeffs, u.coeffs)


def test_shift_then_derivative_recovers():
    rng = np.random.default_rng(1)
    u = random_series(rng, 1, 5)
    back = apply_derivative(apply_shift_down(u, (0, 0, 3), out_trunc=8), (0, 0, 3))
    np.testing.assert_allclose(back.coeffs, u.coeffs)


def test_json_round_trip():
    rng = np.random.default_rng(2)
    u = random_series(rng, 1, 4, density=0.5)
    v = GradedSeries.from_json(u.to_json())
    np.testing.assert_array_equal(u.coeffs, v.coeffs)


params = st.tuples(st.floats(0.3, 4.0), st.floats(0.3, 4.0), st.floats(0.3, 4.0))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), radii=params,
       h=st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 3)))
def test_shift_down_norm_bound(seed, radii, h):
    h = (h[0], h[1], h[0] + h[1] + h[2])
    p = GNormParams(radii[:2], radii[2])
    u = random_series(np.random.default_rng(seed), 1, 8, density=0.6)
    lhs = g_norm(apply_shift_down(u, h), p)
    rhs = radii[0] ** -h[0] * radii[1] ** -h[1] * radii[2] ** h[2] * g_norm(u, p)
    assert lhs <= rhs * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), radii=params)
def test_banach_algebra(seed, radii):
    p = GNormParams(radii[:2], radii[2])
    rng = np.random.default_rng(seed)
    u, v = random_series(rng, 1, 8, 0.5), random_series(rng, 1, 8, 0.5)
    assert g_norm(product(u, v), p) <= g_norm(u, p) * g_norm(v, p) * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_product_commutative_associative(seed):
    rng = np.random.default_rng(seed)
    u, v, w = (random_series(rng, 1, 6) for _ in range(3))
    np.testing.assert_allclose(product(u, v).coeffs, product(v, u).coeffs, rtol=1e-12, atol=1e-12)
    a = product(product(u, v), w).coeffs
    b = product(u, product(v, w)).coeffs
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.max(np.abs(a)))


def test_power_matches_repeated_product():
    rng = np.random.default_rng(3)
    u = random_series(rng, 1, 6)
    np.testing.assert_allclose(power(u, 3).coeffs, product(u, product(u, u)).coeffs)


def test_derivative_constant_bounds_random_series_and_stabilizes():
    p0 = GNormParams((3.0, 3.0), 2.0)
    p1 = GNormParams((2.0, 2.0), 1.0)
    h = (1, 0, 1)
    rng = np.random.default_rng(4)
    scale = np.prod(p1.radii ** -np.array(h, float))
    for trunc in (6, 10):
        exact = derivative_constant(h, p0, p1, trunc)
        for _ in range(50):
            u = random_series(rng, 1, trunc)
            # the monomial scan bounds every series
            assert g_norm(apply_derivative(u, h), p1) <= exact * scale * g_norm(u, p0) * (1 + 1e-12)
    c_small = estimate_c2(h, p0, p1, 16, rng, n_samples=20)
    c_large = estimate_c2(h, p0, p1, 24, rng, n_samples=20)
    assert np.isfinite(c_large) and abs(c_large - c_small) <= 1e-9 * c_large
