"""
Self-test of the numerical core.

Checks, per activation variant:
- mean and variance against adaptive quadrature of the prior,
- lambda' and lambda'' against central finite differences,
- the inverse round trip,
- saddle round trips on random feasible instances.

Also produces the a / lambda / lambda_prime tables used for plotting.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, TextIO

import numpy as np
import pandas as pd
from scipy import integrate

from maxent import activations
from maxent.activations import ActivationKind, DataRange, Variant, activation_table
from maxent.linop import DenseMap
from maxent.saddle import SaddleOptions, solve_saddle

logger = logging.getLogger(__name__)

DISPLAY_NAMES = {
    Variant.LINEAR: "Linear",
    Variant.TRUNC_GAUSS: "TruncGauss",
    Variant.EXPONENTIAL: "Exponential",
    Variant.TED: "TED",
}

ORACLE_RTOL = 1e-6
# means that vanish (Linear at a = 0) are compared absolutely below this
ORACLE_FLOOR = 1e-10
DERIVATIVE_RTOL = 1e-6
SECOND_DERIVATIVE_RTOL = 1e-5
INVERSE_ATOL = 1e-10
ROUND_TRIP_INSTANCES = 200
ROUND_TRIP_MAX_ITERS = 50
ROUND_TRIP_TOL = 1e-9
TABLE_FORMAT = "%.10g"


def default_kinds() -> List[ActivationKind]:
    return [
        ActivationKind.linear(),
        ActivationKind.trunc_gauss(),
        ActivationKind.exponential(),
        ActivationKind.ted(),
    ]


def grid_for(kind: ActivationKind) -> np.ndarray:
    """Check points: [-30, 30] plus points near zero (Exponential: [-30, -1e-3])."""
    small = np.array([1e-5, 1e-4, 5e-4, 2e-3, 1e-2, 3e-2, 0.1])
    if kind.variant is Variant.EXPONENTIAL:
        return np.unique(np.concatenate([-np.linspace(1e-3, 30, 61), -small[small >= 1e-3]]))
    return np.unique(np.concatenate([np.linspace(-30, 30, 61), small, -small]))


def table_grid() -> np.ndarray:
    """a from -10 to 10 in steps of 0.5."""
    return np.linspace(-10.0, 10.0, 41)


def _support(kind: ActivationKind, a: float):
    """Integration interval holding all but a negligible part of the prior's mass."""
    s2 = kind.sigma_sq
    s = np.sqrt(s2)
    v = kind.variant
    if v is Variant.LINEAR:
        return s2 * a - 40 * s, s2 * a + 40 * s
    if v is Variant.TRUNC_GAUSS:
        hi = max(0.0, s2 * a) + 40 * s
        if a < 0:
            hi = min(hi, 80.0 / abs(a))
        return max(0.0, s2 * a - 40 * s), hi
    if v is Variant.EXPONENTIAL:
        return 0.0, 80.0 / abs(a)
    return 0.0, 1.0


def _log_density(kind: ActivationKind, a: float) -> Callable[[float], float]:
    b = kind.b / kind.sigma_sq if kind.variant in (Variant.LINEAR, Variant.TRUNC_GAUSS) else 0.0
    lo, hi = _support(kind, a)
    # subtract the maximum of a*x + b*x^2 on the interval
    cands = [lo, hi]
    if b < 0:
        cands.append(min(max(-a / (2 * b), lo), hi))
    peak = max(a * x + b * x * x for x in cands)
    return lambda x: a * x + b * x * x - peak


def quadrature_moments(kind: ActivationKind, a: float):
    """Mean and variance of the prior with natural parameter a, by adaptive quadrature."""
    lo, hi = _support(kind, a)
    logp = _log_density(kind, a)
    opts = dict(epsabs=1e-15, epsrel=1e-12, limit=400)
    z = integrate.quad(lambda x: np.exp(logp(x)), lo, hi, **opts)[0]
    m = integrate.quad(lambda x: x * np.exp(logp(x)), lo, hi, **opts)[0] / z
    var = integrate.quad(lambda x: (x - m) ** 2 * np.exp(logp(x)), lo, hi, **opts)[0] / z
    return m, var


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass
class SelftestReport:
    checks: List[CheckResult] = field(default_factory=list)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]


def check_oracle(kind: ActivationKind) -> List[CheckResult]:
    """Mean and variance against quadrature, relative error ORACLE_RTOL."""
    name = DISPLAY_NAMES[kind.variant]
    worst_m = worst_v = 0.0
    at_m = at_v = None
    for a in grid_for(kind):
        m, var = quadrature_moments(kind, float(a))
        em = abs(activations.lam(kind, a) - m) / max(abs(m), ORACLE_FLOOR)
        ev = abs(activations.lam_prime(kind, a) - var) / max(abs(var), ORACLE_FLOOR)
        if em > worst_m:
            worst_m, at_m = em, a
        if ev > worst_v:
            worst_v, at_v = ev, a
    return [
        CheckResult(f"{name} mean oracle", worst_m <= ORACLE_RTOL, worst_m, f"worst at a={at_m}"),
        CheckResult(
            f"{name} variance oracle", worst_v <= ORACLE_RTOL, worst_v, f"worst at a={at_v}"
        ),
    ]


def check_derivatives(kind: ActivationKind) -> List[CheckResult]:
    """lambda' and lambda'' against central differences with step 1e-5 * max(1, |a|)."""
    name = DISPLAY_NAMES[kind.variant]
    grid = grid_for(kind)
    if kind.variant is Variant.EXPONENTIAL:
        step = 1e-5 * np.abs(grid)
    else:
        step = 1e-5 * np.maximum(1.0, np.abs(grid))
    fd1 = (activations.lam(kind, grid + step) - activations.lam(kind, grid - step)) / (2 * step)
    d1 = activations.lam_prime(kind, grid)
    err1 = np.abs(d1 - fd1) / np.maximum(1.0, np.abs(d1))
    up, down = activations.lam_prime(kind, grid + step), activations.lam_prime(kind, grid - step)
    fd2 = (up - down) / (2 * step)
    d2 = activations.lam_second(kind, grid)
    err2 = np.abs(d2 - fd2) / np.maximum(1.0, np.abs(d2))
    i1, i2 = int(np.argmax(err1)), int(np.argmax(err2))
    return [
        CheckResult(
            f"{name} derivative check",
            bool(err1[i1] <= DERIVATIVE_RTOL),
            float(err1[i1]),
            f"worst at a={grid[i1]:.6g}",
        ),
        CheckResult(
            f"{name} second derivative check",
            bool(err2[i2] <= SECOND_DERIVATIVE_RTOL),
            float(err2[i2]),
            f"worst at a={grid[i2]:.6g}",
        ),
    ]


def _inside_samples(kind: ActivationKind, rng: np.random.Generator, n: int) -> np.ndarray:
    r = kind.data_range
    if r is DataRange.UNIT:
        return rng.uniform(1e-6, 1 - 1e-6, n)
    if r is DataRange.POSITIVES:
        return np.exp(rng.uniform(np.log(1e-4), np.log(1e3), n))
    return rng.uniform(-1e3, 1e3, n)


def check_inverse(kind: ActivationKind, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    y = _inside_samples(kind, rng, 200)
    back = activations.lam(kind, activations.lam_inv(kind, y))
    err = np.abs(back - y) / np.maximum(1.0, np.abs(y))
    i = int(np.argmax(err))
    return CheckResult(
        f"{DISPLAY_NAMES[kind.variant]} inverse round-trip",
        bool(err[i] <= INVERSE_ATOL),
        float(err[i]),
        f"worst at y={y[i]:.6g}",
    )


def random_instance(kind: ActivationKind, rng: np.random.Generator):
    """
    Random dense W (scale 1/sqrt(N)) and a feature z = W'x of an in-range x.

    For the exponential kind the first column of W is constant, like the DC
    row of a DCT; a mixed-sign W with N > M almost never admits W h < 0.
    """
    n = int(rng.integers(4, 65))
    m = int(rng.integers(1, min(16, n) + 1))
    w = rng.standard_normal((n, m)) / np.sqrt(n)
    if kind.variant is Variant.EXPONENTIAL:
        w[:, 0] = 1.0 / np.sqrt(n)
    r = kind.data_range
    if r is DataRange.UNIT:
        x = rng.uniform(0.02, 0.98, n)
    elif r is DataRange.POSITIVES:
        x = rng.exponential(1.0, n) + 0.05
    else:
        x = rng.standard_normal(n)
    linmap = DenseMap(w)
    return linmap, linmap.forward(x)


def check_saddle_round_trip(
    kind: ActivationKind, instances: int = ROUND_TRIP_INSTANCES, seed: int = 0
) -> CheckResult:
    rng = np.random.default_rng(seed)
    opts = SaddleOptions(max_iters=ROUND_TRIP_MAX_ITERS, residual_tol=ROUND_TRIP_TOL)
    bad = []
    worst = 0.0
    for i in range(instances):
        linmap, z = random_instance(kind, rng)
        res = solve_saddle(linmap, kind, z, opts)
        worst = max(worst, res.residual_inf)
        if not res.converged:
            bad.append(i)
    detail = f"{len(bad)} of {instances} did not converge" + (f" (first: {bad[0]})" if bad else "")
    return CheckResult(
        f"{DISPLAY_NAMES[kind.variant]} saddle round-trip", not bad, float(worst), detail
    )


def run_selftest(
    kinds: Optional[List[ActivationKind]] = None,
    instances: int = ROUND_TRIP_INSTANCES,
    seed: int = 0,
) -> SelftestReport:
    """Run every check for every kind and build the activation tables."""
    t0 = time.perf_counter()
    report = SelftestReport()
    for kind in kinds or default_kinds():
        report.checks.extend(check_oracle(kind))
        report.checks.extend(check_derivatives(kind))
        report.checks.append(check_inverse(kind, seed))
        report.checks.append(check_saddle_round_trip(kind, instances, seed))
        report.tables[kind.name] = activation_table(kind, table_grid())
    report.seconds = time.perf_counter() - t0
    for c in report.checks:
        log = logger.info if c.passed else logger.error
        status = "ok" if c.passed else "FAILED"
        log("%-36s %s  (worst %.3g; %s)", c.name, status, c.worst, c.detail)
    return report


def write_tables(
    report: SelftestReport, out_dir: Optional[str] = None, stream: Optional[TextIO] = None
) -> None:
    """Write activation_<variant>.csv files into out_dir, or all tables to a stream."""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, table in report.tables.items():
            path = os.path.join(out_dir, f"activation_{name}.csv")
            table.to_csv(path, index=False, float_format=TABLE_FORMAT, lineterminator="\n")
        return
    for name, table in report.tables.items():
        stream.write(f"# {name}\n")
        stream.write(table.to_csv(index=False, float_format=TABLE_FORMAT, lineterminator="\n"))


if __name__ == "__main__":
    import sys

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    rep = run_selftest()
    n_ok = len(rep.checks) - len(rep.failures)
    print(f"\n{n_ok}/{len(rep.checks)} checks passed in {rep.seconds:.1f}s")
    sys.exit(0 if rep.passed else 1)
