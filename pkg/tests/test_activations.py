"""
Unit tests for maxent/activations.py
Run with: python -m pytest tests/test_activations.py -v
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxent.activations import (
    ActivationKind,
    DataRange,
    Variant,
    activation_table,
    lam,
    lam_inv,
    lam_prime,
    lam_second,
    validate_range,
)
from maxent.errors import ActivationDomainError

ALL_KINDS = [
    ActivationKind.linear(),
    ActivationKind.trunc_gauss(),
    ActivationKind.exponential(),
    ActivationKind.ted(),
]


def test_known_values():
    """Closed-form values at a few points."""
    assert lam(ActivationKind.linear(2.0), 3.0) == 6.0
    assert lam_prime(ActivationKind.linear(2.0), -7.0) == 2.0
    assert abs(lam(ActivationKind.exponential(), -2.0) - 0.5) < 1e-15
    assert abs(lam_prime(ActivationKind.exponential(), -2.0) - 0.25) < 1e-15
    assert abs(lam(ActivationKind.ted(), 0.0) - 0.5) < 1e-15
    assert abs(lam_prime(ActivationKind.ted(), 0.0) - 1 / 12) < 1e-15
    assert abs(lam(ActivationKind.ted(), 1.0) - (np.e / (np.e - 1) - 1.0)) < 1e-12
    # truncated Gaussian at 0: sqrt(2/pi) and 1 - 2/pi
    assert abs(lam(ActivationKind.trunc_gauss(), 0.0) - np.sqrt(2 / np.pi)) < 1e-12
    assert abs(lam_prime(ActivationKind.trunc_gauss(), 0.0) - (1 - 2 / np.pi)) < 1e-12


def test_scalar_in_scalar_out():
    """Scalars give floats, arrays give arrays of the same shape."""
    kind = ActivationKind.ted()
    assert isinstance(lam(kind, 0.3), float)
    out = lam(kind, np.zeros((2, 3)))
    assert out.shape == (2, 3)
    assert np.all(out == 0.5)


def test_ted_series_matches_closed_form_at_cutoff():
    """The Taylor branch and the closed form agree where they meet."""
    kind = ActivationKind.ted()
    for a in (9.99e-4, 1.001e-3, -9.99e-4, -1.001e-3):
        closed = np.exp(a) / np.expm1(a) - 1 / a
        assert abs(lam(kind, a) - closed) < 1e-10
    assert abs(lam_prime(kind, 1e-4) - 1 / 12) < 1e-9


def test_extreme_arguments_stay_in_range():
    """Large |a| gives values strictly inside the range and positive derivatives."""
    ted = ActivationKind.ted()
    assert 0 < lam(ted, -700.0) < 1e-2
    assert 1 - 1e-2 < lam(ted, 700.0) < 1
    tg = ActivationKind.trunc_gauss()
    assert abs(lam(tg, -50.0) - 0.02) < 5e-5
    assert lam(tg, -1e4) > 0
    assert abs(lam(tg, 40.0) - 40.0) < 1e-12


def test_exponential_domain_error():
    """Exponential needs a < 0 and reports the offending index."""
    with pytest.raises(ActivationDomainError) as info:
        lam(ActivationKind.exponential(), np.array([-1.0, -2.0, 0.0]))
    assert info.value.index == 2
    with pytest.raises(ActivationDomainError):
        lam_prime(ActivationKind.exponential(), 1.0)


def test_non_finite_input_rejected():
    with pytest.raises(ActivationDomainError):
        lam(ActivationKind.linear(), np.array([0.0, np.nan]))


def test_second_derivative_finite_difference():
    """lambda'' matches central differences of lambda' for every kind."""
    for kind in ALL_KINDS:
        if kind.variant is Variant.EXPONENTIAL:
            grid = np.array([-3.0, -0.7, -0.02])
            h = 1e-5 * np.abs(grid)
        else:
            grid = np.array([-4.0, -0.5, 0.01, 0.3, 2.5])
            h = np.full_like(grid, 1e-5)
        fd = (lam_prime(kind, grid + h) - lam_prime(kind, grid - h)) / (2 * h)
        assert np.allclose(lam_second(kind, grid), fd, rtol=1e-5, atol=1e-6), kind.name


def test_inverse_domain_error():
    """The inverse refuses values on or outside the range boundary."""
    with pytest.raises(ActivationDomainError):
        lam_inv(ActivationKind.ted(), 1.0)
    with pytest.raises(ActivationDomainError):
        lam_inv(ActivationKind.trunc_gauss(), np.array([1.0, -0.5]))
    assert lam_inv(ActivationKind.linear(), -4.0) == -4.0


def test_for_range_defaults():
    assert ActivationKind.for_range(DataRange.REALS).variant is Variant.LINEAR
    assert ActivationKind.for_range("positives").variant is Variant.TRUNC_GAUSS
    assert ActivationKind.for_range(DataRange.UNIT).variant is Variant.TED
    with pytest.raises(ValueError):
        ActivationKind(Variant.LINEAR, 0.0)


def test_validate_range():
    """Violations are reported by flat index."""
    assert validate_range(DataRange.UNIT, [0.5, 1.0, 0.0]).violations == [1, 2]
    assert validate_range(DataRange.POSITIVES, [1e-3, 2.0])
    assert not validate_range(DataRange.REALS, [0.0, np.inf])
    assert validate_range(DataRange.REALS, [-1e9, 1e9])


def test_activation_table_skips_invalid_exponential_rows():
    table = activation_table(ActivationKind.exponential(), np.linspace(-2, 2, 9))
    assert list(table.columns) == ["a", "lambda", "lambda_prime"]
    assert (table["a"] < 0).all()
    ted = activation_table(ActivationKind.ted(), np.linspace(-10, 10, 41))
    row = ted[ted["a"] == 0.0].iloc[0]
    assert row["lambda"] == 0.5


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(["linear", "truncgauss", "ted"]),
    st.floats(min_value=-30, max_value=30),
    st.floats(min_value=1e-3, max_value=5),
)
def test_monotone_and_positive_derivative(variant, a, gap):
    """lambda is strictly increasing and lambda' > 0."""
    kind = ActivationKind(Variant(variant))
    assert lam_prime(kind, a) > 0
    assert lam(kind, a + gap) > lam(kind, a)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(ALL_KINDS), st.floats(min_value=1e-3, max_value=0.999))
def test_inverse_round_trip(kind, u):
    """lam(lam_inv(y)) == y for y inside the range."""
    if kind.data_range is DataRange.UNIT:
        y = u
    elif kind.data_range is DataRange.POSITIVES:
        y = 50 * u
    else:
        y = 100 * (u - 0.5)
    back = lam(kind, lam_inv(kind, y))
    assert abs(back - y) < 1e-10 * max(1.0, abs(y))


if __name__ == "__main__":
    print("Running activation unit tests...")

    test_known_values()
    print("✓ known values")

    test_ted_series_matches_closed_form_at_cutoff()
    print("✓ TED series/closed-form agreement")

    test_extreme_arguments_stay_in_range()
    print("✓ extreme arguments")

    test_second_derivative_finite_difference()
    print("✓ second derivatives")

    print("\nAll tests passed!")
