"""
Dimension-reducing linear maps.

A LinearMap stands for an N x M weight matrix W. `forward` computes the feature
z = W'x (length N -> M) and `adjoint` computes Wu (length M -> N). Both accept a
single vector or a 2-D array whose rows are samples.

Two backings:
- DenseMap: an explicit N x M matrix, row-major.
- TruncatedDct2D: the low-frequency kh x kw block of the orthonormal 2-D DCT-II
  of an H x W image, applied separably without forming the N x M matrix.
"""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy import linalg

from maxent.errors import DimensionError

# Largest N*M a map may be materialized to
DEFAULT_MATERIALIZE_CAP = 2 ** 26


class MaterializeCapError(DimensionError):
    """Materializing the map would exceed the entry cap."""


def dct_matrix(length: int, keep: Optional[int] = None) -> np.ndarray:
    """
    Orthonormal DCT-II basis rows.

    C[k, n] = alpha_k * cos(pi * (2n + 1) * k / (2L)), alpha_0 = sqrt(1/L),
    alpha_k = sqrt(2/L). Returns the first `keep` rows (all rows by default).
    """
    keep = length if keep is None else keep
    n = np.arange(length)
    k = np.arange(keep)[:, None]
    c = np.cos(np.pi * (2 * n + 1) * k / (2 * length)) * np.sqrt(2.0 / length)
    c[0, :] = np.sqrt(1.0 / length)
    return c


class LinearMap(ABC):
    """Abstract N -> M linear operator with forward W'x and adjoint Wu."""

    n_in: int
    n_out: int

    def _check(self, v: np.ndarray, expected: int, what: str) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim not in (1, 2) or v.shape[-1] != expected:
            raise DimensionError(
                f"{what} expects length {expected}, got shape {v.shape}"
            )
        return v

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Feature z = W'x; x has length N (or rows of length N)."""
        return self._forward(self._check(x, self.n_in, "forward"))

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        """Back-projection Wu; u has length M (or rows of length M)."""
        return self._adjoint(self._check(u, self.n_out, "adjoint"))

    @abstractmethod
    def _forward(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _adjoint(self, u: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def basis(self) -> np.ndarray:
        """The M x N matrix W' (rows are the feature directions)."""

    def materialize(self, cap: int = DEFAULT_MATERIALIZE_CAP) -> "DenseMap":
        """Dense copy of the map; refused when N*M exceeds `cap`."""
        self.check_cap(cap)
        return DenseMap(self.basis().T)

    def check_cap(self, cap: int = DEFAULT_MATERIALIZE_CAP) -> None:
        entries = self.n_in * self.n_out
        if entries > cap:
            raise MaterializeCapError(
                f"materializing {self.n_in}x{self.n_out} ({entries} entries) exceeds cap {cap}"
            )

    def weighted_gram(self, d: np.ndarray) -> np.ndarray:
        """
        Stack of W' diag(d_b) W for each row d_b of d.

        Args:
            d: (B, N) positive weights

        Returns:
            (B, M, M) symmetric matrices
        """
        g = self.basis()
        d = np.atleast_2d(d)
        return np.matmul(g[None, :, :] * d[:, None, :], g.T)

    def jac_apply(self, d: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Matrix-free W' diag(d) W v for a single sample."""
        return self._forward(d * self._adjoint(v))

    @abstractmethod
    def gram_solve(self, v: np.ndarray) -> np.ndarray:
        """Solve (W'W) h = v for h (rows of v are independent right-hand sides)."""


class DenseMap(LinearMap):
    """Explicit N x M weight matrix; forward is x @ W, adjoint is u @ W.T."""

    def __init__(self, weights: np.ndarray):
        w = np.array(weights, dtype=np.float64, copy=True)
        if w.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got shape {w.shape}")
        w.setflags(write=False)
        self._w = w
        self.n_in, self.n_out = w.shape
        self._gram_factor = None

    @property
    def weights(self) -> np.ndarray:
        return self._w

    def _forward(self, x):
        return x @ self._w

    def _adjoint(self, u):
        return u @ self._w.T

    def basis(self):
        return self._w.T

    def materialize(self, cap: int = DEFAULT_MATERIALIZE_CAP) -> "DenseMap":
        self.check_cap(cap)
        return DenseMap(self._w)

    def gram_solve(self, v):
        if self._gram_factor is None:
            self._gram_factor = linalg.cho_factor(self._w.T @ self._w)
        v = self._check(v, self.n_out, "gram_solve")
        return linalg.cho_solve(self._gram_factor, v.T).T

    def __repr__(self):
        return f"DenseMap({self.n_in}x{self.n_out})"


class TruncatedDct2D(LinearMap):
    """
    Low-frequency block of the orthonormal 2-D DCT-II.

    Pixels are flattened row-major (index i*width + j) and kept coefficients
    likewise (index p*keep_w + q). Rows of W' are orthonormal, so W'W = I.
    """

    def __init__(self, height: int, width: int, keep_h: int, keep_w: int):
        sizes = (("height", height), ("width", width), ("keep_h", keep_h), ("keep_w", keep_w))
        for name, val in sizes:
            if int(val) != val or val <= 0:
                raise DimensionError(f"{name} must be a positive integer, got {val!r}")
        if keep_h > height or keep_w > width:
            raise DimensionError(
                f"kept block {keep_h}x{keep_w} larger than image {height}x{width}"
            )
        self.height, self.width = int(height), int(width)
        self.keep_h, self.keep_w = int(keep_h), int(keep_w)
        self.n_in = self.height * self.width
        self.n_out = self.keep_h * self.keep_w
        self._dh = dct_matrix(self.height, self.keep_h)
        self._dw = dct_matrix(self.width, self.keep_w)

    def _forward(self, x):
        img = x.reshape(x.shape[:-1] + (self.height, self.width))
        coef = self._dh @ img @ self._dw.T
        return coef.reshape(x.shape[:-1] + (self.n_out,))

    def _adjoint(self, u):
        coef = u.reshape(u.shape[:-1] + (self.keep_h, self.keep_w))
        img = self._dh.T @ coef @ self._dw
        return img.reshape(u.shape[:-1] + (self.n_in,))

    def basis(self):
        self.check_cap()
        return np.kron(self._dh, self._dw)

    def gram_solve(self, v):
        return np.array(self._check(v, self.n_out, "gram_solve"), copy=True)

    def __repr__(self):
        return (
            f"TruncatedDct2D({self.height}x{self.width} keep {self.keep_h}x{self.keep_w})"
        )


def least_squares_reconstruction(linmap: LinearMap, z: np.ndarray) -> np.ndarray:
    """Minimum-norm x with W'x = z, i.e. W (W'W)^-1 z."""
    return linmap.adjoint(linmap.gram_solve(z))


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    op = TruncatedDct2D(8, 8, 4, 4)
    x = rng.random(64)
    u = rng.standard_normal(16)
    print(op)
    print(f"<W'x, u> = {op.forward(x) @ u:.12f}")
    print(f"<x, Wu>  = {x @ op.adjoint(u):.12f}")
    g = op.materialize().weights
    print(f"G'G == I: {np.allclose(g.T @ g, np.eye(16))}")
