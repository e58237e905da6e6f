"""
Saddle-point solver for the D-PBN special non-linearity.

gamma(h) = W' lambda(W h) maps a length-M latent to a feature. Solving
gamma(h) = z gives the saddle point h, and lambda(W h) is the MaxEnt
conditional-mean reconstruction of the input from its feature z.

The Jacobian J(h) = W' diag(lambda'(W h)) W is symmetric positive definite, so
each damped Newton step solves J dh = z - gamma(h) by Cholesky (small M) or
conjugate gradients (large M, matrix-free), then halves the step until the
infinity norm of the residual decreases.

The solver never raises on non-convergence; outcomes are reported in
SaddleResult / SaddleBatch.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.optimize import linprog
from scipy.sparse.linalg import LinearOperator, cg

from maxent.activations import (
    ActivationKind,
    Variant,
    lam,
    lam_prime_raw,
    lam_raw,
)
from maxent.errors import DimensionError
from maxent.linop import LinearMap, MaterializeCapError, least_squares_reconstruction

logger = logging.getLogger(__name__)

INNER_AUTO = "auto"
INNER_CHOLESKY = "cholesky"
INNER_CG = "cg"


@dataclass(frozen=True)
class SaddleOptions:
    """
    Newton iteration settings.

    A sample converges when ||gamma(h) - z||_inf <= residual_tol and is declared
    failed when its final residual exceeds fail_tol.
    """

    max_iters: int = 100
    residual_tol: float = 1e-9
    fail_tol: float = 1e-6
    step_scale: float = 1.0
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    inner_solver: str = INNER_AUTO
    cholesky_max_dim: int = 512
    cg_tol: float = 1e-12
    cg_max_iters: int = 2000
    # Extra Newton steps taken even after convergence (unrolled differentiation)
    min_iters: int = 0

    def __post_init__(self):
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if not (0 < self.residual_tol < self.fail_tol):
            raise ValueError(
                f"need 0 < residual_tol < fail_tol, got {self.residual_tol}, {self.fail_tol}"
            )
        if not (0 < self.backtrack_factor < 1):
            raise ValueError("backtrack_factor must be in (0, 1)")
        if self.inner_solver not in (INNER_AUTO, INNER_CHOLESKY, INNER_CG):
            raise ValueError(f"unknown inner solver {self.inner_solver!r}")
        if self.min_iters < 0 or self.min_iters > self.max_iters:
            raise ValueError("min_iters must be in [0, max_iters]")

    def inner_for(self, m: int) -> str:
        if self.inner_solver != INNER_AUTO:
            return self.inner_solver
        return INNER_CHOLESKY if m <= self.cholesky_max_dim else INNER_CG


@dataclass
class SaddleResult:
    """Outcome of one saddle solve."""

    h: np.ndarray
    residual_inf: float
    iterations: int
    converged: bool
    failed: bool


@dataclass
class SaddleBatch:
    """
    Outcome of a batch of saddle solves, one row per sample.

    When history is tracked, iterates[t, b] is sample b's latent after t Newton
    steps (t <= iterations[b]) and steps[t, b] the step length taken from it.
    """

    h: np.ndarray
    residual_inf: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    failed: np.ndarray
    iterates: Optional[np.ndarray] = None
    steps: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.h.shape[0]

    def result(self, i: int) -> SaddleResult:
        return SaddleResult(
            h=self.h[i].copy(),
            residual_inf=float(self.residual_inf[i]),
            iterations=int(self.iterations[i]),
            converged=bool(self.converged[i]),
            failed=bool(self.failed[i]),
        )

    @property
    def efficiency(self) -> float:
        n = len(self)
        return float(np.count_nonzero(~self.failed)) / n if n else 1.0


def gamma(linmap: LinearMap, kind: ActivationKind, h: np.ndarray) -> np.ndarray:
    """
    The special non-linearity gamma(h) = W' lambda(W h).

    Args:
        linmap: the weight map W
        kind: MaxEnt activation of the layer's input range
        h: latent (length M, or rows of length M)

    Returns:
        Reconstructed feature(s), same shape as h

    Raises:
        ActivationDomainError: Exponential kind with some (W h)_i >= 0

    Examples:
        >>> from maxent.linop import DenseMap
        >>> gamma(DenseMap([[1.0], [1.0]]), ActivationKind.linear(), np.array([2.0]))
        array([4.])
    """
    return linmap.forward(lam(kind, linmap.adjoint(h)))


def _evaluate(linmap, kind, z, h):
    """Residual rows and inf-norms; invalid rows get an infinite norm."""
    a = linmap.adjoint(h)
    with np.errstate(invalid="ignore", over="ignore"):
        x = lam_raw(kind, a)
        r = z - linmap.forward(x)
    norm = np.max(np.abs(r), axis=1)
    norm[~np.isfinite(norm)] = np.inf
    return a, r, norm


def _cholesky_directions(linmap, d, r) -> Tuple[np.ndarray, np.ndarray]:
    jac = linmap.weighted_gram(d)
    try:
        chol = np.linalg.cholesky(jac)
        y = np.linalg.solve(chol, r[:, :, None])
        dh = np.linalg.solve(np.swapaxes(chol, -1, -2), y)[:, :, 0]
        ok = np.all(np.isfinite(dh), axis=1)
        return dh, ok
    except np.linalg.LinAlgError:
        pass
    # some sample's Jacobian is not numerically SPD; factor one at a time
    dh = np.zeros_like(r)
    ok = np.zeros(r.shape[0], dtype=bool)
    for i in range(r.shape[0]):
        try:
            factor = linalg.cho_factor(jac[i])
            dh[i] = linalg.cho_solve(factor, r[i])
            ok[i] = np.all(np.isfinite(dh[i]))
        except (linalg.LinAlgError, ValueError):
            ok[i] = False
    return dh, ok


def _cg_directions(linmap, d, r, opts) -> Tuple[np.ndarray, np.ndarray]:
    m = linmap.n_out
    dh = np.zeros_like(r)
    ok = np.zeros(r.shape[0], dtype=bool)
    for i in range(r.shape[0]):
        di = d[i]
        op = LinearOperator(
            (m, m), matvec=lambda v, di=di: linmap.jac_apply(di, v), dtype=np.float64
        )
        sol, info = cg(op, r[i], rtol=opts.cg_tol, atol=0.0, maxiter=opts.cg_max_iters)
        if info < 0 or not np.all(np.isfinite(sol)):
            continue
        if info > 0:
            logger.debug("CG stopped after %d iterations without reaching tolerance", info)
        dh[i] = sol
        ok[i] = True
    return dh, ok


def newton_directions(linmap, kind, a, r, opts: SaddleOptions):
    """Solve J(h) dh = r for each row; returns (dh, ok)."""
    d = lam_prime_raw(kind, a)
    bad = ~np.all(np.isfinite(d) & (d > 0), axis=1)
    if opts.inner_for(linmap.n_out) == INNER_CHOLESKY:
        dh, ok = _cholesky_directions(linmap, np.where(bad[:, None], 1.0, d), r)
    else:
        dh, ok = _cg_directions(linmap, np.where(bad[:, None], 1.0, d), r, opts)
    return dh, ok & ~bad


def admissible_latent(linmap: LinearMap) -> Optional[np.ndarray]:
    """
    Some h with every coordinate of W h negative, or None when there is none.

    Solved as the linear program max t subject to W h <= -t, 0 <= t <= 1. The
    map is materialized, so this is meant for the rare case where the cheap
    projections in the cold start fail.
    """
    try:
        w = linmap.materialize().weights
    except MaterializeCapError:
        logger.debug("%r too large for the admissible-start search", linmap)
        return None
    n, m = w.shape
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    bounds = [(None, None)] * m + [(0.0, 1.0)]
    a_ub = np.hstack([w, np.ones((n, 1))])
    res = linprog(cost, A_ub=a_ub, b_ub=np.zeros(n), bounds=bounds, method="highs")
    if res.status != 0 or -res.fun <= 1e-12:
        return None
    h = res.x[:m]
    return h if np.all(w @ h < 0) else None


def _initial_latent(linmap, kind, z) -> np.ndarray:
    if kind.variant is not Variant.EXPONENTIAL:
        return np.zeros_like(z)
    # Need W h0 < 0 everywhere: try the projection of -1/x_ls, then of -1,
    # then a linear program
    x_ls = least_squares_reconstruction(linmap, z)
    pos = np.where(x_ls > 0, x_ls, np.nan)
    with np.errstate(invalid="ignore"):
        floor = np.maximum(1e-3, 0.05 * np.nanmean(pos, axis=1, keepdims=True))
    floor = np.where(np.isfinite(floor), floor, 1.0)
    target = -1.0 / np.maximum(x_ls, floor)
    h0 = linmap.gram_solve(linmap.forward(target))
    fallback = linmap.gram_solve(linmap.forward(-np.ones((z.shape[0], linmap.n_in))))
    ok = np.all(linmap.adjoint(h0) < 0, axis=1)
    h0 = np.where(ok[:, None], h0, fallback)
    bad = ~np.all(linmap.adjoint(h0) < 0, axis=1)
    if bad.any():
        # admissibility does not depend on z, so one search serves every row
        start = admissible_latent(linmap)
        if start is not None:
            h0[bad] = start
    return h0


def solve_saddle_batch(
    linmap: LinearMap,
    kind: ActivationKind,
    z: np.ndarray,
    opts: Optional[SaddleOptions] = None,
    h0: Optional[np.ndarray] = None,
    track_history: bool = False,
) -> SaddleBatch:
    """
    Solve W' lambda(W h) = z for every row of z by damped Newton iteration.

    Args:
        linmap: weight map W (N x M)
        kind: activation of the input range
        z: (B, M) features
        opts: solver options
        h0: optional (B, M) warm starts; NaN rows start cold
        track_history: keep every iterate and step length (for unrolling)

    Returns:
        SaddleBatch with per-sample latents, residuals and flags
    """
    opts = opts or SaddleOptions()
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, m = z.shape
    if m != linmap.n_out:
        raise DimensionError(f"features have length {m}, map expects {linmap.n_out}")

    h = _initial_latent(linmap, kind, z)
    if h0 is not None:
        h0 = np.atleast_2d(np.asarray(h0, dtype=np.float64))
        warm = np.all(np.isfinite(h0), axis=1)
        h[warm] = h0[warm]
    a, r, res = _evaluate(linmap, kind, z, h)
    if h0 is not None:
        # a warm start outside the domain falls back to the cold start
        redo = warm & ~np.isfinite(res)
        if redo.any():
            h[redo] = _initial_latent(linmap, kind, z[redo])
            a[redo], r[redo], res[redo] = _evaluate(linmap, kind, z[redo], h[redo])

    iters = np.zeros(n, dtype=np.int64)
    stopped = ~np.isfinite(res)
    iterates = steps = None
    if track_history:
        iterates = np.full((opts.max_iters + 1, n, m), np.nan)
        steps = np.full((opts.max_iters, n), np.nan)
        iterates[0] = h

    for it in range(opts.max_iters):
        active = ~stopped & ((res > opts.residual_tol) | (iters < opts.min_iters))
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        dh, ok = newton_directions(linmap, kind, a[idx], r[idx], opts)
        stopped[idx[~ok]] = True
        idx, dh = idx[ok], dh[ok]
        forced = res[idx] <= opts.residual_tol

        t = np.full(idx.size, opts.step_scale)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(opts.max_backtracks + 1):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            rows = idx[p]
            cand = h[rows] + t[p, None] * dh[p]
            ca, cr, cres = _evaluate(linmap, kind, z[rows], cand)
            take = (cres < res[rows]) | (forced[p] & np.isfinite(cres))
            took = p[take]
            accepted = idx[took]
            h[accepted], a[accepted], r[accepted], res[accepted] = (
                cand[take], ca[take], cr[take], cres[take]
            )
            if track_history:
                steps[iters[accepted], accepted] = t[took]
            iters[accepted] += 1
            if track_history:
                iterates[iters[accepted], accepted] = h[accepted]
            pending[took] = False
            t[pending] *= opts.backtrack_factor
        # no decrease within the backtracking budget
        stopped[idx[pending]] = True

    converged = res <= opts.residual_tol
    failed = ~(res <= opts.fail_tol)
    if failed.any():
        logger.debug("%d of %d saddle solves failed", int(failed.sum()), n)
    return SaddleBatch(
        h=h,
        residual_inf=res,
        iterations=iters,
        converged=converged,
        failed=failed,
        iterates=iterates,
        steps=steps,
    )


def solve_saddle(
    linmap: LinearMap,
    kind: ActivationKind,
    z: np.ndarray,
    opts: Optional[SaddleOptions] = None,
    h0: Optional[np.ndarray] = None,
) -> SaddleResult:
    """
    Solve gamma(h) = z for a single feature vector.

    Examples:
        >>> from maxent.linop import DenseMap
        >>> res = solve_saddle(DenseMap([[1.0], [1.0]]), ActivationKind.linear(), np.array([4.0]))
        >>> res.converged, float(res.h[0])
        (True, 2.0)
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("solve_saddle takes one feature vector; use solve_saddle_batch")
    batch = solve_saddle_batch(
        linmap, kind, z[None, :], opts, None if h0 is None else np.asarray(h0)[None, :]
    )
    return batch.result(0)


def reconstruct_from_feature(
    linmap: LinearMap,
    kind: ActivationKind,
    z: np.ndarray,
    opts: Optional[SaddleOptions] = None,
    h0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SaddleResult]:
    """
    MaxEnt conditional-mean reconstruction x_bar = lambda(W h) of an input from z.

    A failed solve still returns lambda(W h) at the last iterate when it is
    finite; callers decide what to do with failed results.
    """
    result = solve_saddle(linmap, kind, z, opts, h0)
    with np.errstate(invalid="ignore", over="ignore"):
        x_bar = lam_raw(kind, linmap.adjoint(result.h))
    return x_bar, result


def reconstruct_batch(
    linmap: LinearMap,
    kind: ActivationKind,
    z: np.ndarray,
    opts: Optional[SaddleOptions] = None,
    h0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, SaddleBatch]:
    """Row-wise reconstruct_from_feature; failed rows are NaN."""
    batch = solve_saddle_batch(linmap, kind, z, opts, h0)
    with np.errstate(invalid="ignore", over="ignore"):
        x_bar = lam_raw(kind, linmap.adjoint(batch.h))
    x_bar[batch.failed] = np.nan
    return x_bar, batch


def residual_history(batch: SaddleBatch) -> List[np.ndarray]:
    """Iterates of each sample as a list of (iterations+1, M) arrays."""
    if batch.iterates is None:
        raise ValueError("batch was solved without track_history")
    return [batch.iterates[: batch.iterations[b] + 1, b] for b in range(len(batch))]


if __name__ == "__main__":
    from maxent.linop import DenseMap

    rng = np.random.default_rng(1)
    n_in, n_out = 50, 10
    w = DenseMap(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))
    x = rng.uniform(0.05, 0.95, size=(5, n_in))
    feats = w.forward(x)
    out = solve_saddle_batch(w, ActivationKind.ted(), feats)
    print("TED saddle solves on random feasible features")
    for b in range(len(out)):
        print(
            f"  sample {b}: iterations={out.iterations[b]:2d} "
            f"residual={out.residual_inf[b]:.2e} converged={out.converged[b]}"
        )
