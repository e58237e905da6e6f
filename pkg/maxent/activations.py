"""
MaxEnt activation functions.

Each activation is the mean of an exponential-class prior
p_e(x; a, b) ~ exp(a*x + b*x^2) on a data range, viewed as a function of the
natural parameter a. The derivative is the prior variance, the second derivative
its third cumulant.

    range        prior                  lambda(a)
    reals        Gauss(0, s2)           s2*a                         (Linear)
    positives    2*Gauss(0, s2), x>0    s2*a + s*phi(s*a)/Phi(s*a)   (TruncGauss)
    positives    exp(-x)                -1/a                         (Exponential)
    unit         uniform on (0,1)       e^a/(e^a - 1) - 1/a          (TED)

All functions accept a scalar or an array and work element-wise; a scalar input
returns a float.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize, special

from maxent.errors import ActivationDomainError

ArrayLike = Union[float, np.ndarray]

# Default boundary margin used by validate_range
RANGE_EPS = 1e-12

# Below this |a| the TED closed forms lose digits to cancellation
TED_SERIES_CUTOFF = 1e-3
TED_SECOND_SERIES_CUTOFF = 5e-2

# Taylor coefficients around a = 0, ascending powers
TED_MEAN_SERIES: Tuple[float, ...] = (0.5, 1 / 12, 0.0, -1 / 720, 0.0, 1 / 30240)
TED_VAR_SERIES: Tuple[float, ...] = (1 / 12, 0.0, -1 / 240, 0.0, 1 / 6048, 0.0, -1 / 172800)
TED_SKEW_SERIES: Tuple[float, ...] = (0.0, -1 / 120, 0.0, 1 / 1512, 0.0, -1 / 28800)

# Switch to the erfcx form of the inverse Mills ratio below this u = sigma*a
TG_TAIL_U = -5.0

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DataRange(Enum):
    """Per-coordinate support of the data."""

    REALS = "reals"
    POSITIVES = "positives"
    UNIT = "unit"


class Variant(Enum):
    """The four MaxEnt prior/activation pairs."""

    LINEAR = "linear"
    TRUNC_GAUSS = "truncgauss"
    EXPONENTIAL = "exponential"
    TED = "ted"


_VARIANT_RANGE = {
    Variant.LINEAR: DataRange.REALS,
    Variant.TRUNC_GAUSS: DataRange.POSITIVES,
    Variant.EXPONENTIAL: DataRange.POSITIVES,
    Variant.TED: DataRange.UNIT,
}

# Natural (a, b) of the reference prior; b for Linear/TruncGauss is -1/(2*sigma_sq)
_VARIANT_B = {
    Variant.LINEAR: -0.5,
    Variant.TRUNC_GAUSS: -0.5,
    Variant.EXPONENTIAL: 0.0,
    Variant.TED: 0.0,
}


@dataclass(frozen=True)
class ActivationKind:
    """A MaxEnt prior/activation pair with its variance hyperparameter."""

    variant: Variant
    sigma_sq: float = 1.0

    def __post_init__(self):
        if not isinstance(self.variant, Variant):
            object.__setattr__(self, "variant", Variant(self.variant))
        if not (np.isfinite(self.sigma_sq) and self.sigma_sq > 0):
            raise ValueError(f"sigma_sq must be positive, got {self.sigma_sq}")

    @property
    def data_range(self) -> DataRange:
        return _VARIANT_RANGE[self.variant]

    @property
    def b(self) -> float:
        return _VARIANT_B[self.variant]

    @property
    def name(self) -> str:
        return self.variant.value

    @classmethod
    def linear(cls, sigma_sq: float = 1.0) -> "ActivationKind":
        return cls(Variant.LINEAR, sigma_sq)

    @classmethod
    def trunc_gauss(cls, sigma_sq: float = 1.0) -> "ActivationKind":
        return cls(Variant.TRUNC_GAUSS, sigma_sq)

    @classmethod
    def exponential(cls) -> "ActivationKind":
        return cls(Variant.EXPONENTIAL)

    @classmethod
    def ted(cls) -> "ActivationKind":
        return cls(Variant.TED)

    @classmethod
    def for_range(cls, data_range: DataRange, sigma_sq: float = 1.0) -> "ActivationKind":
        """Default kind for a data range: Linear, TruncGauss or TED."""
        data_range = DataRange(data_range)
        if data_range is DataRange.REALS:
            return cls.linear(sigma_sq)
        if data_range is DataRange.POSITIVES:
            return cls.trunc_gauss(sigma_sq)
        return cls.ted()


@dataclass
class RangeReport:
    """Result of validate_range: ok flag and offending (flat) indices."""

    ok: bool
    violations: List[int] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def _prepare(a: ArrayLike) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(a, dtype=np.float64)
    return np.atleast_1d(arr), arr.ndim == 0


def _finish(out: np.ndarray, scalar: bool) -> ArrayLike:
    return float(out[0]) if scalar else out


def _check_domain(kind: ActivationKind, a: np.ndarray) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        idx = int(np.flatnonzero(bad.ravel())[0])
        raise ActivationDomainError(f"non-finite activation input at index {idx}", idx)
    if kind.variant is Variant.EXPONENTIAL:
        bad = a >= 0
        if bad.any():
            idx = int(np.flatnonzero(bad.ravel())[0])
            raise ActivationDomainError(
                f"exponential activation needs a < 0, got {a.ravel()[idx]!r} at index {idx}", idx
            )


def _inverse_mills(u: np.ndarray) -> np.ndarray:
    """phi(u)/Phi(u), stable for large negative u."""
    r = np.empty_like(u)
    tail = u < TG_TAIL_U
    r[tail] = _SQRT_2_OVER_PI / special.erfcx(-u[tail] / np.sqrt(2.0))
    body = ~tail
    ub = u[body]
    r[body] = _INV_SQRT_2PI * np.exp(-0.5 * ub * ub) / special.ndtr(ub)
    return r


def _ted_parts(a: np.ndarray, cutoff: float):
    small = np.abs(a) < cutoff
    return small, a[small], a[~small]


def lam_raw(kind: ActivationKind, a: np.ndarray) -> np.ndarray:
    """Activation without domain checks; invalid entries come back NaN."""
    v = kind.variant
    if v is Variant.LINEAR:
        return kind.sigma_sq * a
    if v is Variant.EXPONENTIAL:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a < 0, -1.0 / np.where(a < 0, a, -1.0), np.nan)
    if v is Variant.TRUNC_GAUSS:
        s = np.sqrt(kind.sigma_sq)
        return kind.sigma_sq * a + s * _inverse_mills(s * a)
    out = np.empty_like(a)
    small, a_s, a_b = _ted_parts(a, TED_SERIES_CUTOFF)
    out[small] = P.polyval(a_s, TED_MEAN_SERIES)
    with np.errstate(over="ignore"):
        out[~small] = -1.0 / np.expm1(-a_b) - 1.0 / a_b
    return out


def lam_prime_raw(kind: ActivationKind, a: np.ndarray) -> np.ndarray:
    """Derivative without domain checks."""
    v = kind.variant
    if v is Variant.LINEAR:
        return np.full_like(a, kind.sigma_sq)
    if v is Variant.EXPONENTIAL:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a < 0, 1.0 / (a * a), np.nan)
    if v is Variant.TRUNC_GAUSS:
        s = np.sqrt(kind.sigma_sq)
        u = s * a
        r = _inverse_mills(u)
        return kind.sigma_sq * (1.0 - r * (u + r))
    out = np.empty_like(a)
    small, a_s, a_b = _ted_parts(a, TED_SERIES_CUTOFF)
    out[small] = P.polyval(a_s, TED_VAR_SERIES)
    with np.errstate(over="ignore"):
        out[~small] = 1.0 / (a_b * a_b) - 0.25 / np.sinh(0.5 * a_b) ** 2
    return out


def lam_second_raw(kind: ActivationKind, a: np.ndarray) -> np.ndarray:
    """Second derivative without domain checks."""
    v = kind.variant
    if v is Variant.LINEAR:
        return np.zeros_like(a)
    if v is Variant.EXPONENTIAL:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(a < 0, -2.0 / (a * a * a), np.nan)
    if v is Variant.TRUNC_GAUSS:
        s = np.sqrt(kind.sigma_sq)
        u = s * a
        r = _inverse_mills(u)
        t = u + r
        return kind.sigma_sq * s * r * (t * t + r * t - 1.0)
    out = np.empty_like(a)
    small, a_s, a_b = _ted_parts(a, TED_SECOND_SERIES_CUTOFF)
    out[small] = P.polyval(a_s, TED_SKEW_SERIES)
    half = 0.5 * a_b
    with np.errstate(over="ignore"):
        out[~small] = -2.0 / a_b ** 3 + 0.25 / (np.tanh(half) * np.sinh(half) ** 2)
    return out


def lam(kind: ActivationKind, a: ArrayLike) -> ArrayLike:
    """
    MaxEnt activation: mean of the prior as a function of its natural parameter.

    Args:
        kind: activation kind
        a: natural parameter(s); Exponential needs a < 0

    Returns:
        Mean(s), strictly inside the kind's data range

    Raises:
        ActivationDomainError: non-finite input or Exponential with a >= 0

    Examples:
        >>> lam(ActivationKind.exponential(), -2.0)
        0.5
        >>> round(lam(ActivationKind.ted(), 1.0), 6)
        0.581977
    """
    arr, scalar = _prepare(a)
    _check_domain(kind, arr)
    return _finish(lam_raw(kind, arr), scalar)


def lam_prime(kind: ActivationKind, a: ArrayLike) -> ArrayLike:
    """
    Derivative d lambda / da, equal to the prior variance (always > 0).

    Examples:
        >>> lam_prime(ActivationKind.linear(2.0), 5.0)
        2.0
        >>> round(lam_prime(ActivationKind.trunc_gauss(), 0.0), 6)
        0.36338
    """
    arr, scalar = _prepare(a)
    _check_domain(kind, arr)
    return _finish(lam_prime_raw(kind, arr), scalar)


def lam_second(kind: ActivationKind, a: ArrayLike) -> ArrayLike:
    """Second derivative of the activation (third cumulant of the prior)."""
    arr, scalar = _prepare(a)
    _check_domain(kind, arr)
    return _finish(lam_second_raw(kind, arr), scalar)


def _inside(kind: ActivationKind, y: float) -> bool:
    r = kind.data_range
    if not np.isfinite(y):
        return False
    if r is DataRange.REALS:
        return True
    if r is DataRange.POSITIVES:
        return y > 0
    return 0 < y < 1


def _lam_inv_scalar(kind: ActivationKind, y: float) -> float:
    v = kind.variant
    if v is Variant.LINEAR:
        return y / kind.sigma_sq
    if v is Variant.EXPONENTIAL:
        return -1.0 / y

    # lambda(a) < -1/a for a < 0 on both ranges, lambda(a) > s2*a (TG) and
    # lambda(a) > 1 - 1/a (TED) for a > 0. The factor 2 keeps a sign change in floating point.
    lo = -2.0 / y
    hi = (y + 1.0) / kind.sigma_sq if v is Variant.TRUNC_GAUSS else 2.0 / (1.0 - y)

    def f(a: float) -> float:
        return float(lam_raw(kind, np.asarray([a]))[0]) - y

    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def lam_inv(kind: ActivationKind, y: ArrayLike) -> ArrayLike:
    """
    Inverse activation: the natural parameter whose mean is y.

    Linear and Exponential are inverted in closed form, TruncGauss and TED with
    a bracketed Brent search.

    Args:
        kind: activation kind
        y: mean value(s), strictly inside the kind's data range

    Returns:
        a with lam(kind, a) == y

    Raises:
        ActivationDomainError: y on or outside the range boundary

    Examples:
        >>> lam_inv(ActivationKind.linear(), -4.0)
        -4.0
        >>> round(lam_inv(ActivationKind.ted(), 0.581977), 5)
        1.0
    """
    arr, scalar = _prepare(y)
    flat = arr.ravel()
    out = np.empty_like(flat, dtype=np.float64)
    for i, yi in enumerate(flat):
        if not _inside(kind, yi):
            raise ActivationDomainError(
                f"{kind.name} inverse needs y inside {kind.data_range.value}, "
                f"got {yi!r} at index {i}",
                i,
            )
        out[i] = _lam_inv_scalar(kind, float(yi))
    return _finish(out.reshape(arr.shape), scalar)


def validate_range(data_range: DataRange, x: ArrayLike, eps: float = RANGE_EPS) -> RangeReport:
    """
    Check that every coordinate lies strictly inside the data range.

    Positives requires x > eps and Unit requires eps < x < 1 - eps; Reals only
    requires finite values.

    Args:
        data_range: the declared range
        x: vector (or array; indices are then flat indices)
        eps: boundary margin

    Returns:
        RangeReport with ok flag and offending indices

    Examples:
        >>> validate_range(DataRange.UNIT, [0.5, 1.0]).violations
        [1]
    """
    arr = np.asarray(x, dtype=np.float64).ravel()
    data_range = DataRange(data_range)
    good = np.isfinite(arr)
    if data_range is DataRange.POSITIVES:
        good &= arr > eps
    elif data_range is DataRange.UNIT:
        good &= (arr > eps) & (arr < 1.0 - eps)
    bad = np.flatnonzero(~good)
    return RangeReport(ok=bad.size == 0, violations=[int(i) for i in bad])


def activation_table(kind: ActivationKind, a_values: np.ndarray):
    """Rows (a, lambda, lambda_prime) for plotting; a values outside the domain are skipped."""
    import pandas as pd

    a_values = np.asarray(a_values, dtype=np.float64)
    if kind.variant is Variant.EXPONENTIAL:
        a_values = a_values[a_values < 0]
    return pd.DataFrame(
        {
            "a": a_values,
            "lambda": lam_raw(kind, a_values),
            "lambda_prime": lam_prime_raw(kind, a_values),
        }
    )


if __name__ == "__main__":
    print("MaxEnt activations at a few points")
    for k in (
        ActivationKind.linear(),
        ActivationKind.trunc_gauss(),
        ActivationKind.exponential(),
        ActivationKind.ted(),
    ):
        if k.variant is Variant.EXPONENTIAL:
            grid = np.array([-2.0, -1.0, -0.5])
        else:
            grid = np.array([-2.0, -0.5, 0.5, 2.0])
        print(f"\n{k.name}:")
        for a in grid:
            print(f"  a={a:+.2f}  lambda={lam(k, a):.6f}  lambda'={lam_prime(k, a):.6f}")
