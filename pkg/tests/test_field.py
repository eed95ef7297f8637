import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eikonal_mlmcmc.field import (
    BinaryField,
    Disk,
    GridFunction,
    SineBasis,
    SlownessField,
    TabulatedBasis,
    basis_eval,
    cantor_index,
    cantor_unindex,
    sample_prior,
    slowness_eval,
)
from eikonal_mlmcmc.grid import Domain, build_grid
from eikonal_mlmcmc.presets import one_parameter_template

UNIT = Domain((0, 0), (1, 1))


@pytest.mark.parametrize("k,ij", [(1, (0, 0)), (2, (1, 0)), (3, (0, 1)), (4, (2, 0)), (5, (1, 1)), (6, (0, 2))])
def test_cantor_examples(k, ij):
    assert cantor_unindex(k) == ij
    assert cantor_index(*ij) == k


def test_cantor_round_trip():
    for s in range(1001):
        for j in range(s + 1):
            assert cantor_unindex(cantor_index(s - j, j)) == (s - j, j)
    for k in range(1, 20000):
        assert cantor_index(*cantor_unindex(k)) == k


def test_cantor_rejects_bad_input():
    with pytest.raises(ValueError):
        cantor_index(-1, 0)
    with pytest.raises(ValueError):
        cantor_unindex(0)
    with pytest.raises(OverflowError):
        cantor_index(2**32, 2**32)


def test_basis_first_term_at_centre():
    assert basis_eval(1, (0.5, 0.5), kappa=20) == pytest.approx(5.0, abs=1e-14)


def test_basis_second_term_closed_form():
    # (i, j) = (1, 0): 20 / 25 * sin(2 pi x) sin(pi y)
    assert basis_eval(2, (0.25, 0.5), kappa=20) == pytest.approx(0.8, abs=1e-14)
    assert abs(basis_eval(2, (0.5, 0.5), kappa=20)) < 1e-14


@pytest.mark.parametrize("k", [1, 2, 7, 30])
def test_basis_vanishes_on_boundary(k):
    for pt in [(0, 0.3), (1, 0.7), (0.4, 0), (0.9, 1)]:
        assert abs(basis_eval(k, pt, kappa=1)) < 1e-14


def test_basis_mapped_domain():
    # (-1,1)^2 mapped to the unit square puts the bump at the origin
    assert basis_eval(1, (0, 0), kappa=4, origin=(-1, -1), scale=(2, 2)) == pytest.approx(1.0)


def test_slowness_examples():
    b = SineBasis(kappa=1)
    assert slowness_eval(SlownessField(b, [0.0]), np.array([0.3, 0.6])) == 1.0
    const = TabulatedBasis(UNIT, np.full((1, 3, 3), 0.7))
    assert slowness_eval(SlownessField(const, [1.0]), np.array([0.3, 0.6])) == pytest.approx(math.exp(0.7))
    f = one_parameter_template().with_coeffs([0.4])
    assert slowness_eval(f, np.array([1.0, 1.0])) == pytest.approx(math.exp(0.4), rel=1e-14)


def test_s_star_and_s_bar():
    f = SlownessField(SineBasis(), [0.0], s_star=0.5, s_bar=math.log(2))
    assert float(f.evaluate(0.2, 0.2)) == pytest.approx(2.5)
    g = SlownessField(SineBasis(), [0.0], s_bar=GridFunction(UNIT, [[0.0, 1.0], [0.0, 1.0]]))
    assert float(g.evaluate(0.5, 0.1)) == pytest.approx(math.exp(0.5))


def test_sample_prior_deterministic():
    a = sample_prior(5, np.random.default_rng(3))
    b = sample_prior(5, np.random.default_rng(3))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_prior(0, np.random.default_rng(0))


def test_sample_prior_moments():
    u = sample_prior(4 * 10**5, np.random.default_rng(0))
    assert abs(u.mean()) < 0.01
    assert abs(u.var() - 1) < 0.01


def test_grid_evaluation_matches_pointwise():
    b = SineBasis(kappa=3, max_terms=20, origin=(-1, -1), scale=(2, 2))
    f = SlownessField(b, np.random.default_rng(1).standard_normal(20), s_star=0.1)
    g = build_grid(Domain((-1, -1), (1, 1)), 4)
    X, Y = g.coordinates()
    assert np.allclose(f.on_grid(g, 12), f.evaluate(X, Y, 12), rtol=1e-12, atol=0)


def test_truncation_pads_with_zeros():
    f = SlownessField(SineBasis(max_terms=64), [0.3, -0.2])
    assert np.array_equal(f.evaluate(0.3, 0.4, 10), f.evaluate(0.3, 0.4))
    assert float(f.evaluate(0.3, 0.4, 0)) == 1.0


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=10, max_size=10),
    st.floats(0, 1),
    st.floats(0, 1),
    st.integers(1, 9),
)
def test_truncation_bound(u, x, y, J):
    b = SineBasis(kappa=2, max_terms=10)
    f = SlownessField(b, u)
    lhs = abs(float(f.evaluate(x, y)) - float(f.evaluate(x, y, J)))
    tail = sum(abs(u[k - 1]) * b.sup_norm(k) for k in range(J + 1, 11))
    bound = tail * max(float(f.evaluate(x, y)), float(f.evaluate(x, y, J)))
    assert lhs <= bound * (1 + 1e-9) + 1e-14


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_slowness_positive(u, x, y):
    f = SlownessField(SineBasis(kappa=20, max_terms=30), u)
    assert float(f.evaluate(x, y)) > 0


def test_sup_norm_series_summable():
    b = SineBasis(kappa=1, max_terms=10**6)
    norms = np.array([b.sup_norm(k) for k in range(1, 20001)])
    assert norms.sum() < 1.0
    # the tail past 20000 terms (all with i + j >= 198) is tiny
    assert norms[-1] < 1e-8


def test_binary_field():
    f = BinaryField([Disk((0.5, 0.5), 0.2, 1.5)], background=1.0)
    assert float(f.evaluate(0.5, 0.6)) == 1.5
    assert float(f.evaluate(0.1, 0.1)) == 1.0
    with pytest.raises(ValueError):
        BinaryField([Disk((0.5, 0.5), 0.2, 0.0)])


def test_rejects_nonfinite_coefficients():
    with pytest.raises(ValueError):
        SlownessField(SineBasis(), [np.nan])
