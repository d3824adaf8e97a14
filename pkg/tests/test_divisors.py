import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_lab.divisors import (
    AlgebraicFrequencies,
    DivisorContext,
    _combination_minimum,
    denominator,
    estimate_c_xi,
    evaluate_partial_fractions,
    fit_c7,
    mode_amplitude,
    partial_fractions,
    rho_beta,
    rho_total,
)
from gevrey_lab.errors import DependenceError, DomainError, GeometryError
from gevrey_lab.norms import OmegaRegion

SQRT2 = "1.4142135623730950488016887242096980785696718753769"


@pytest.fixture(scope="module")
def freq():
    return AlgebraicFrequencies.from_values([SQRT2], 1)


@pytest.fixture(scope="module")
def ctx(freq):
    return DivisorContext(1, 1, freq, OmegaRegion(0.0, np.pi / 4, 0.5))


def test_c_xi_for_sqrt2():
    c = estimate_c_xi([SQRT2], 1, 200)
    assert c == pytest.approx(abs(1 - np.sqrt(2)) * 2, rel=1e-12)
    assert c == pytest.approx(0.828427, abs=1e-6)
    assert abs(3 - 2 * np.sqrt(2)) * 5 == pytest.approx(0.857864, abs=1e-6)
    assert abs(3 - 2 * np.sqrt(2)) * 5 > c
    assert c <= 1.0  # k = (1, 0) contributes exactly 1


def test_search_bound_validated():
    with pytest.raises(DomainError):
        estimate_c_xi([SQRT2], 1, 10)


def test_dependence_detected():
    with pytest.raises(DependenceError):
        estimate_c_xi(["1.5"], 1, 50)
    with pytest.raises(DependenceError):
        AlgebraicFrequencies((np.sqrt(2), 2 * np.sqrt(2)), 2, 0.1)


def test_small_margin_warns():
    with pytest.warns(RuntimeWarning):
        AlgebraicFrequencies((1 / 3 + 1e-12,), 1, 1e-9)


def test_lower_bound_holds_by_construction():
    xi = np.array([np.sqrt(2), np.sqrt(3)])
    c, k_star, _ = _combination_minimum(xi, 2, 60)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        k = rng.integers(-60, 61, size=3)
        if not np.any(k):
            continue
        val = abs(k[0] + k[1:] @ xi)
        assert val >= c / np.abs(k).sum() ** 2 * (1 - 1e-12)
    k_star = np.array(k_star)
    assert abs(k_star[0] + k_star[1:] @ xi) * np.abs(k_star).sum() ** 2 == pytest.approx(c)


def test_rho_examples(freq):
    f08 = AlgebraicFrequencies((np.sqrt(2),), 1, 0.8)
    c = DivisorContext(1, 1, f08)
    assert rho_total(0, c) == pytest.approx(0.4)
    assert rho_total(1, c) == pytest.approx(0.2)
    assert rho_beta((1, 2, 0), c) == pytest.approx(0.1)


def test_rho_monotone_exhaustive(ctx):
    vals = np.array([rho_total(t, ctx) for t in range(1001)])
    assert np.all(np.diff(vals) < 0)


def test_denominator_examples(freq):
    assert denominator(0.0, (0, 0), DivisorContext(1, 1, freq)) == pytest.approx(1.0)
    with pytest.raises(GeometryError):
        DivisorContext(1, 2, freq, OmegaRegion(0.0, np.pi / 2, 0.5))
    c2 = DivisorContext(1, 2, freq, OmegaRegion(0.0, 0.0, 0.5))
    assert abs(denominator(1j, (0, 0), c2)) < 1e-15
    assert denominator(0.5, (1, 1), DivisorContext(1, 1, freq)) == pytest.approx(0.5 + 2 + np.sqrt(2))


def test_partial_fraction_examples():
    [(p, r)] = partial_fractions(3.0, 2, 1)
    assert p == pytest.approx(-9.0) and r == pytest.approx(1.0)
    pf = partial_fractions(4.0, 1, 2)
    assert sorted(abs(p) for p, _ in pf) == pytest.approx([2.0, 2.0])
    assert evaluate_partial_fractions(pf, 1.0) == pytest.approx(0.2, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(A=st.floats(0.1, 20), r1=st.integers(1, 3), r2=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_partial_fraction_reconstruction(A, r1, r2, seed):
    rng = np.random.default_rng(seed)
    pf = partial_fractions(A, r1, r2)
    tau = rng.normal(size=100) + 1j * rng.normal(size=100)
    tau *= A ** (r1 / r2)
    direct = 1.0 / (tau ** r2 + A ** r1)
    poles = np.array([p for p, _ in pf])
    far = np.min(np.abs(tau[:, None] - poles[None, :]), axis=1) > 1e-3 * A ** (r1 / r2)
    rel = np.abs(evaluate_partial_fractions(pf, tau) - direct) / np.abs(direct)
    assert np.all(rel[far] <= 1e-12)


def test_amplitude_bound_chain(ctx, freq):
    S = 9
    for modes in np.ndindex(40, 40):
        A = mode_amplitude(modes, freq)
        assert A ** (1 / 1) > freq.c_xi / (1 + sum(modes) + S) ** 1


def test_disc_keeps_away_from_roots(freq):
    rng = np.random.default_rng(1)
    S = 9
    for r1, r2 in [(1, 1), (1, 2), (2, 3)]:
        c = DivisorContext(r1, r2, freq, OmegaRegion(0.0, 0.1, 0.2))
        for _ in range(200):
            modes = rng.integers(0, 15, size=2)
            bx = int(rng.integers(0, 5))
            A = mode_amplitude(modes, freq)
            rho = rho_total(int(modes.sum()) + bx + S, c)
            tau = rho * np.sqrt(rng.uniform(size=50)) * np.exp(2j * np.pi * rng.uniform(size=50))
            for p, _ in partial_fractions(A, r1, r2):
                assert np.all(np.abs(tau - p) >= 0.5 * A ** (r1 / r2))


def test_c7_fit_bounds_samples_and_is_stable(ctx):
    fit = fit_c7(np.random.default_rng(2), ctx, 9, n_samples=10_000)
    again = fit_c7(np.random.default_rng(3), ctx, 9, n_samples=10_000)
    assert abs(fit.c7 - again.c7) <= 0.05 * fit.c7
    rng = np.random.default_rng(4)
    for _ in range(500):
        modes = rng.integers(0, 20, size=2)
        tau = 2 * rng.uniform() * np.exp(1j * (np.pi / 4 + rng.uniform(-0.25, 0.25)))
        assert abs(1 / denominator(tau, modes, ctx)) <= fit.c7 * (1 + modes.sum()) * 1.05
