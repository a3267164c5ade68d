import mpmath
import numpy as np
import pytest

from dbatlas import lemma as L
from dbatlas import models as M
from dbatlas.errors import UsageError


def mp_bound(n, Lc, t):
    n, Lc, t = mpmath.mpf(n), mpmath.mpf(Lc), mpmath.mpf(t)
    return 1 - Lc * mpmath.e ** (-2 * mpmath.pi * n * t**2 / Lc**2) / (mpmath.pi * t * mpmath.sqrt(n))


def test_bound_matches_arbitrary_precision():
    cases = [(100, 1.0, 1.0), (100, 10.0, 0.1), (3072, 60.0, 0.05), (16, 2.0, 0.3)]
    for n, Lc, t in cases:
        assert L.lemma_bound(n, Lc, t) == pytest.approx(float(mp_bound(n, Lc, t)), abs=1e-9)


def test_bound_hand_value_vacuous_case():
    # n=100, L=10, t=0.1 -> 1 - 10*exp(-0.02*pi)/pi = -1.9892... ; clamps to 0
    v = L.lemma_bound(100, 10.0, 0.1)
    assert v == pytest.approx(float(mp_bound(100, 10, mpmath.mpf(1) / 10)), abs=1e-9)
    assert v == pytest.approx(-1.9892, abs=5e-4)
    assert L.clamp01(v) == 0.0


def test_bound_exponent_dominance_case():
    assert L.lemma_bound(100, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_bound_monotone_in_t_and_n():
    # non-strict at the top: the bound saturates to 1.0 exactly in float64
    ts = np.linspace(0.05, 2.0, 40)
    vals = [L.lemma_bound(50, 3.0, t) for t in ts]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > vals[0]
    ns = range(1, 200, 7)
    vals = [L.lemma_bound(n, 3.0, 0.2) for n in ns]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > vals[0]
    assert vals[-1] <= 1.0


def test_bound_preconditions():
    with pytest.raises(UsageError):
        L.lemma_bound(0, 1.0, 0.1)
    with pytest.raises(UsageError):
        L.lemma_bound(10, 0.0, 0.1)
    with pytest.raises(UsageError):
        L.lemma_bound(10, 1.0, 0.0)


# ---- Lipschitz estimation ----


def test_lipschitz_coordinate_function():
    n = 50
    f = lambda X: np.asarray(X)[:, 0]
    est = L.estimate_lipschitz(f, n, seed=1)
    expected = np.sqrt(n) * 1.0 * 1.1
    assert abs(est.L - expected) / expected < 0.05


def test_lipschitz_constant_function():
    est = L.estimate_lipschitz(lambda X: np.zeros(len(X)), 20, seed=2)
    assert est.L == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(UsageError):
        L.lemma_bound(20, est.L, 0.1)  # bound evaluation refused at L = 0


def test_lipschitz_normalized_sum():
    n = 64
    f = lambda X: np.asarray(X).sum(axis=1) / np.sqrt(n)
    est = L.estimate_lipschitz(f, n, seed=3)
    expected = np.sqrt(n) * 1.0 * 1.1   # gradient norm is exactly 1
    assert abs(est.L - expected) / expected < 0.10


# ---- concentration validation ----


def test_constant_function_passes():
    check = L.validate_concentration(lambda X: np.full(len(X), 0.5), 32,
                                     [0.05, 0.1], n_samples=10_000, seed=4)
    assert check.passed
    assert check.empirical_fracs == [1.0, 1.0]
    assert check.f_bar == 0.5


def test_coordinate_function_high_dim():
    # f(x) = x0 on n=3072: |x0 - 0.5| <= 0.45 with probability 0.9. With
    # L ~ sqrt(n)*1.1 the bound evaluates to ~0.728 (checked against mpmath),
    # below the 0.9 empirical fraction, so the check passes
    n = 3072
    f = lambda X: np.asarray(X)[:, 0]
    check = L.validate_concentration(f, n, [0.45], n_samples=10_000, seed=5)
    assert check.passed
    assert check.empirical_fracs[0] == pytest.approx(0.9, abs=0.02)
    ref = float(mp_bound(n, check.L, 0.45))
    assert check.bounds[0] == pytest.approx(ref, abs=1e-6)
    assert check.bounds[0] == pytest.approx(0.728, abs=0.01)
    assert check.f_bar == pytest.approx(0.5, abs=0.02)


def test_certified_lipschitz_function_never_violates():
    # f(x) = mean(x): certified |f(x)-f(y)| <= (1/sqrt(n)) ||x-y|| exactly,
    # i.e. L = 1; with the true L given, no t may report a violation
    n = 25
    f = lambda X: np.asarray(X).mean(axis=1)
    check = L.validate_concentration(f, n, [0.02, 0.05, 0.1, 0.3], n_samples=20_000,
                                     seed=6, L=1.0)
    assert check.l_source == "given"
    assert check.passed, (check.empirical_fracs, check.bounds_clamped)


def test_violation_flagged_as_underestimated_L():
    # force a too-small L on a spread-out function: empirical fraction at small
    # t undershoots the (now too strong) bound
    n = 4
    f = lambda X: np.asarray(X)[:, 0]
    check = L.validate_concentration(f, n, [0.05], n_samples=10_000, seed=7, L=0.05)
    assert not check.passed
    assert check.violations == [0.05]


def test_sample_split_precondition():
    with pytest.raises(UsageError):
        L.validate_concentration(lambda X: np.zeros(len(X)), 8, [0.1], n_samples=100)


def test_softmax_head_range(rng):
    model = M.init_model(M.ModelSpec("mlp", 4, 1, 6, 3, init_seed=2))
    head = L.softmax_head(model, 1)
    vals = head(rng.random((50, 6)))
    assert (vals >= 0).all() and (vals <= 1).all()
    with pytest.raises(UsageError):
        L.softmax_head(model, 5)
