"""
Unit tests for maxent/saddle.py
Run with: python -m pytest tests/test_saddle.py -v
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxent.activations import ActivationKind, lam, lam_prime
from maxent.errors import DimensionError
from maxent.linop import DenseMap, TruncatedDct2D, least_squares_reconstruction
from maxent.saddle import (
    SaddleOptions,
    admissible_latent,
    gamma,
    reconstruct_batch,
    reconstruct_from_feature,
    residual_history,
    solve_saddle,
    solve_saddle_batch,
)

KINDS = {
    "linear": ActivationKind.linear(),
    "truncgauss": ActivationKind.trunc_gauss(),
    "exponential": ActivationKind.exponential(),
    "ted": ActivationKind.ted(),
}


def feasible_instance(kind, n, m, seed):
    """
    Random W (N x M) and z = W'x for an x strictly inside the kind's range.

    Exponential instances get a constant first column so that W h < 0 is
    reachable.
    """
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((n, m)) / np.sqrt(n)
    if kind.name == "exponential":
        weights[:, 0] = 1.0 / np.sqrt(n)
    w = DenseMap(weights)
    if kind.name == "ted":
        x = rng.uniform(0.05, 0.95, n)
    elif kind.name in ("truncgauss", "exponential"):
        x = rng.exponential(1.0, n) + 0.05
    else:
        x = rng.standard_normal(n)
    return w, x, w.forward(x)


def test_linear_one_step():
    """Linear kind: h = (W'W)^-1 z / sigma_sq after a single Newton step."""
    w, _, z = feasible_instance(KINDS["linear"], 12, 4, 0)
    res = solve_saddle(w, ActivationKind.linear(2.0), z)
    assert res.converged and not res.failed
    assert res.iterations <= 2
    expected = np.linalg.solve(w.weights.T @ w.weights, z) / 2.0
    assert np.allclose(res.h, expected, atol=1e-10)


def test_each_kind_converges():
    """A feasible feature is matched to 1e-9 and the reconstruction lies in range."""
    for kind in KINDS.values():
        w, _, z = feasible_instance(kind, 30, 6, 1)
        x_bar, res = reconstruct_from_feature(w, kind, z)
        assert res.converged, kind.name
        assert res.residual_inf <= 1e-9
        assert np.max(np.abs(w.forward(x_bar) - z)) <= 1e-9
        if kind.name == "ted":
            assert np.all((x_bar > 0) & (x_bar < 1))
        elif kind.name != "linear":
            assert np.all(x_bar > 0)


def test_square_orthonormal_recovers_input():
    """With M = N and orthonormal W the saddle point reproduces the input exactly."""
    q, _ = np.linalg.qr(np.random.default_rng(4).standard_normal((8, 8)))
    x = np.random.default_rng(5).uniform(0.1, 0.9, 8)
    w = DenseMap(q)
    x_bar, res = reconstruct_from_feature(w, KINDS["ted"], w.forward(x))
    assert res.converged
    assert np.allclose(x_bar, x, atol=1e-8)


def test_gamma_matches_definition():
    w, _, _ = feasible_instance(KINDS["ted"], 9, 3, 2)
    h = np.array([0.3, -0.2, 0.1])
    assert np.allclose(gamma(w, KINDS["ted"], h), w.weights.T @ lam(KINDS["ted"], w.weights @ h))


def test_infeasible_feature_is_reported_not_raised():
    """A feature no unit-range vector can produce ends as a failed result."""
    w = DenseMap(np.ones((4, 1)) / 2.0)
    res = solve_saddle(w, KINDS["ted"], np.array([5.0]), SaddleOptions(max_iters=30))
    assert res.failed
    assert not res.converged


def test_batch_and_single_agree():
    kind = KINDS["truncgauss"]
    w, _, _ = feasible_instance(kind, 20, 5, 3)
    rng = np.random.default_rng(6)
    x = rng.exponential(1.0, (4, 20)) + 0.05
    z = w.forward(x)
    batch = solve_saddle_batch(w, kind, z)
    assert len(batch) == 4
    assert batch.efficiency == 1.0
    for i in range(4):
        single = solve_saddle(w, kind, z[i])
        assert np.allclose(batch.h[i], single.h, atol=1e-9)


def test_warm_start_uses_fewer_iterations():
    """Starting at the solution needs no Newton step; NaN rows start cold."""
    kind = KINDS["ted"]
    w, _, z = feasible_instance(kind, 25, 5, 7)
    cold = solve_saddle_batch(w, kind, np.vstack([z, z]))
    h0 = np.vstack([cold.h[0], np.full(5, np.nan)])
    warm = solve_saddle_batch(w, kind, np.vstack([z, z]), h0=h0)
    assert warm.iterations[0] == 0
    assert warm.iterations[1] > 0
    assert np.all(warm.converged)


def test_min_iters_forces_steps():
    kind = KINDS["ted"]
    w, _, z = feasible_instance(kind, 25, 5, 8)
    cold = solve_saddle_batch(w, kind, z[None, :])
    opts = SaddleOptions(min_iters=3)
    forced = solve_saddle_batch(w, kind, z[None, :], opts, h0=cold.h)
    assert forced.iterations[0] == 3
    assert forced.converged[0]


def test_track_history():
    kind = KINDS["truncgauss"]
    w, _, z = feasible_instance(kind, 16, 4, 9)
    batch = solve_saddle_batch(w, kind, z[None, :], track_history=True)
    path = residual_history(batch)[0]
    assert path.shape == (batch.iterations[0] + 1, 4)
    assert np.allclose(path[-1], batch.h[0])
    assert np.all(batch.steps[: batch.iterations[0], 0] > 0)
    with pytest.raises(ValueError):
        residual_history(solve_saddle_batch(w, kind, z[None, :]))


def test_cg_matches_cholesky():
    """The matrix-free inner solver gives the same saddle point."""
    kind = KINDS["ted"]
    w, _, z = feasible_instance(kind, 40, 8, 10)
    chol = solve_saddle(w, kind, z, SaddleOptions(inner_solver="cholesky"))
    cg = solve_saddle(w, kind, z, SaddleOptions(inner_solver="cg"))
    assert chol.converged and cg.converged
    assert np.allclose(chol.h, cg.h, atol=1e-6)


def test_truncated_dct_exponential():
    """Positive image from its low-frequency DCT block with the exponential prior."""
    rng = np.random.default_rng(11)
    img = 0.2 + rng.random((8, 8))
    op = TruncatedDct2D(8, 8, 4, 4)
    z = op.forward(img.ravel())
    x_bar, batch = reconstruct_batch(op, KINDS["exponential"], z[None, :])
    assert not batch.failed[0]
    assert np.all(x_bar > 0)
    assert np.max(np.abs(op.forward(x_bar[0]) - z)) < 1e-6


def test_options_validation():
    with pytest.raises(ValueError):
        SaddleOptions(residual_tol=1e-3, fail_tol=1e-6)
    with pytest.raises(ValueError):
        SaddleOptions(inner_solver="lu")
    with pytest.raises(ValueError):
        SaddleOptions(max_iters=5, min_iters=6)
    assert SaddleOptions().inner_for(512) == "cholesky"
    assert SaddleOptions().inner_for(513) == "cg"


def test_wrong_feature_length():
    w = DenseMap(np.ones((4, 2)))
    with pytest.raises(DimensionError):
        solve_saddle_batch(w, KINDS["ted"], np.ones((1, 3)))


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(sorted(KINDS)),
    st.integers(min_value=4, max_value=64),
    st.integers(min_value=1, max_value=16),
    st.integers(min_value=0, max_value=2 ** 31),
)
def test_round_trip_property(name, n, m, seed):
    """For z = W'x with x in range, the solve converges and honors the feature to 1e-9."""
    kind = KINDS[name]
    w, _, z = feasible_instance(kind, n, min(m, n), seed)
    x_bar, res = reconstruct_from_feature(w, kind, z, SaddleOptions(max_iters=50))
    assert res.converged
    assert res.iterations <= 50
    assert np.max(np.abs(w.forward(x_bar) - z)) <= 1e-9


def test_dense_instance_converges_within_budget():
    """N=50, M=10 with entries of scale 1/sqrt(N): every kind converges in 50 steps."""
    for seed, kind in enumerate(KINDS.values()):
        w, _, z = feasible_instance(kind, 50, 10, 100 + seed)
        res = solve_saddle(w, kind, z, SaddleOptions(max_iters=50))
        assert res.converged, kind.name
        assert res.residual_inf <= 1e-9


def test_linear_reconstruction_is_least_squares():
    """Linear kind: the reconstruction equals W (W'W)^-1 z for any sigma_sq."""
    for sigma_sq in (1.0, 0.3):
        kind = ActivationKind.linear(sigma_sq)
        w, _, z = feasible_instance(kind, 40, 7, 12)
        x_bar, res = reconstruct_from_feature(w, kind, z)
        wm = w.weights
        expected = wm @ np.linalg.solve(wm.T @ wm, z)
        assert res.converged
        assert np.max(np.abs(x_bar - expected)) <= 1e-8
        assert np.max(np.abs(x_bar - least_squares_reconstruction(w, z))) <= 1e-8


def test_jacobian_matches_finite_difference():
    """J(h) v against a central difference of gamma along v."""
    eps = 1e-6
    for seed, kind in enumerate(KINDS.values()):
        w, _, z = feasible_instance(kind, 12, 4, 20 + seed)
        rng = np.random.default_rng(30 + seed)
        if kind.name == "exponential":
            h = solve_saddle(w, kind, z).h
        else:
            h = 0.5 * rng.standard_normal(4)
        v = rng.standard_normal(4)
        jac = w.weighted_gram(lam_prime(kind, w.adjoint(h))[None, :])[0]
        fd = (gamma(w, kind, h + eps * v) - gamma(w, kind, h - eps * v)) / (2 * eps)
        rel = np.max(np.abs(jac @ v - fd)) / max(1.0, np.max(np.abs(fd)))
        assert rel <= 1e-5, kind.name


def test_accepted_steps_never_increase_residual():
    """Along the Newton path the infinity norm of z - gamma(h) is non-increasing."""
    for seed, kind in enumerate(KINDS.values()):
        w, _, z = feasible_instance(kind, 30, 6, 40 + seed)
        batch = solve_saddle_batch(w, kind, z[None, :], track_history=True)
        assert batch.converged[0], kind.name
        path = residual_history(batch)[0]
        norms = [np.max(np.abs(z - gamma(w, kind, h))) for h in path]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:])), kind.name


def test_admissible_latent():
    """The cold-start search finds W h < 0 when it exists and None otherwise."""
    rng = np.random.default_rng(50)
    w = np.abs(rng.standard_normal((20, 3)))
    w[:, 1:] -= 2.0
    h = admissible_latent(DenseMap(w))
    assert h is not None
    assert np.all(w @ h < 0)
    assert admissible_latent(DenseMap(np.array([[1.0], [-1.0]]))) is None


def test_infeasible_exponential_instance_fails_cleanly():
    """No h with W h < 0: the solve reports failure without raising."""
    w = DenseMap(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]))
    res = solve_saddle(w, KINDS["exponential"], np.array([0.5, 1.0]))
    assert res.failed
    assert not res.converged


if __name__ == "__main__":
    print("Running saddle solver unit tests...")

    test_linear_one_step()
    print("✓ linear kind")

    test_each_kind_converges()
    print("✓ every kind converges")

    test_warm_start_uses_fewer_iterations()
    print("✓ warm starts")

    print("\nAll tests passed!")
