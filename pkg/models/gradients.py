"""
Reconstruction loss and its exact gradient for both decoders.

The loss of a batch is the mean over successful samples and over the N input
coordinates of (x - reconstruction)^2. Samples whose D-PBN back-projection failed
are dropped before anything else is computed, so their contribution to the
gradient is exactly zero and they do not count in the denominator.

Gradients through a saddle solve W' lambda(W h) = z, with a = W h:

- implicit: differentiate the converged fixed point. With J = W' diag(lambda'(a)) W
  and v = J^-1 W' g_a,
      dL/dW += g_a h' - lambda(a) v' - (lambda'(a) * W v) h',   dL/dz = v.
- unrolled: backpropagate through the last k Newton updates h <- h + t J^-1 r,
  treating the step lengths as constants and the first iterate of the window
  as detached.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from maxent.activations import lam_prime_raw, lam_raw, lam_second_raw
from maxent.errors import DataError, NumericalError
from maxent.saddle import SaddleBatch, SaddleOptions
from network.layers import (
    EncodeTrace,
    Network,
    ParamSet,
    decode_aec_trace,
    encode,
    reconstruct_dpbn,
)

logger = logging.getLogger(__name__)


class Decoder(Enum):
    """Which reconstruction network the loss is measured on."""

    DPBN = "dpbn"
    AEC = "aec"


@dataclass(frozen=True)
class GradMode:
    """How the dependence of h on the parameters is differentiated."""

    kind: str = "implicit"
    k: int = 3

    def __post_init__(self):
        if self.kind not in ("implicit", "unrolled"):
            raise ValueError(f"unknown grad mode {self.kind!r}")
        if self.k <= 0:
            raise ValueError("unroll depth k must be positive")

    @classmethod
    def implicit(cls) -> "GradMode":
        return cls("implicit")

    @classmethod
    def unrolled(cls, k: int = 3) -> "GradMode":
        return cls("unrolled", k)

    @property
    def is_unrolled(self) -> bool:
        return self.kind == "unrolled"


class EmptyBatchError(DataError):
    """The batch has no samples."""


class AllSamplesFailedError(NumericalError):
    """Every sample of a batch failed D-PBN reconstruction."""


@dataclass
class LossResult:
    """
    Loss of one batch.

    mask flags the samples that were reconstructed; latents[l] holds layer l's
    saddle points (NaN rows for failed samples) for warm starting.
    """

    mse: float
    mask: np.ndarray
    reconstruction: np.ndarray
    latents: Optional[List[np.ndarray]] = None

    @property
    def n_ok(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def efficiency(self) -> float:
        return self.n_ok / self.mask.size


def as_decoder(decoder) -> Decoder:
    """Decoder from an enum member or its name."""
    return decoder if isinstance(decoder, Decoder) else Decoder(decoder)


def _forward(net, x, decoder, opts, warm_start, track_history):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    trace = encode(net, x)
    if decoder is Decoder.AEC:
        aec = decode_aec_trace(net, trace.z_top)
        mask = np.ones(x.shape[0], dtype=bool)
        return x, trace, aec, None, mask, aec.x_hat
    rec = reconstruct_dpbn(net, trace.z_top, opts, warm_start, track_history)
    if not rec.ok.any():
        raise AllSamplesFailedError(f"all {x.shape[0]} samples failed D-PBN reconstruction")
    return x, trace, None, rec, rec.ok, rec.x_bar


def batch_loss(
    net: Network,
    x: np.ndarray,
    decoder=Decoder.DPBN,
    opts: Optional[SaddleOptions] = None,
    warm_start: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> LossResult:
    """
    Masked mean-square reconstruction error of a batch.

    Args:
        net: the network
        x: (B, N) batch inside the network's input range
        decoder: Decoder.DPBN or Decoder.AEC
        opts: saddle options for the D-PBN decoder
        warm_start: optional per-layer latents for the D-PBN solves

    Returns:
        LossResult

    Raises:
        EmptyBatchError: B == 0
        AllSamplesFailedError: no sample could be reconstructed
    """
    decoder = as_decoder(decoder)
    x, _, _, rec, mask, recon = _forward(net, x, decoder, opts, warm_start, False)
    diff = recon[mask] - x[mask]
    latents = None if rec is None else [s.h for s in rec.solves]
    return LossResult(
        mse=float(np.mean(diff * diff)), mask=mask, reconstruction=recon, latents=latents
    )


def _backprop_encoder(net: Network, trace: EncodeTrace, g_ztop: np.ndarray, grads: ParamSet):
    """Accumulate encoder gradients given dL/dz_top."""
    g_z = g_ztop
    for i in range(net.depth - 1, -1, -1):
        x_i = trace.inputs[i]
        grads.weights[i] += x_i.T @ g_z
        if i == 0:
            break
        layer = net.layers[i]
        prev = net.layers[i - 1]
        g_x = layer.linmap.adjoint(g_z)
        g_z = lam_prime_raw(prev.out_activation, trace.post_bias[i - 1]) * g_x
        grads.biases[i - 1] += g_z.sum(axis=0)


def _jacobians(w: np.ndarray, d: np.ndarray) -> np.ndarray:
    # (B, M, M) stack of W' diag(d_b) W
    return np.matmul(w.T[None, :, :] * d[:, None, :], w)


def _implicit_layer(w, kind, h, g_a) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of the fixed point w.r.t. W and the target z; returns (g_W, v)."""
    a = h @ w.T
    lam_a = lam_raw(kind, a)
    d = lam_prime_raw(kind, a)
    rhs = g_a @ w
    v = np.linalg.solve(_jacobians(w, d), rhs[:, :, None])[:, :, 0]
    wv = v @ w.T
    g_w = g_a.T @ h - lam_a.T @ v - (d * wv).T @ h
    return g_w, v


def _unrolled_layer(w, kind, z, batch, g_a, k) -> Tuple[np.ndarray, np.ndarray]:
    """Backpropagate through the last k Newton steps of each sample."""
    h_final = batch.h
    g_w = g_a.T @ h_final
    g_h = g_a @ w
    g_z = np.zeros_like(z)
    iters = batch.iterations
    n_steps = np.minimum(k, iters)
    for s in range(int(n_steps.max(initial=0))):
        rows = np.flatnonzero(s < n_steps)
        j = iters[rows] - 1 - s
        h = batch.iterates[j, rows]
        t = batch.steps[j, rows]
        g = g_h[rows]
        a = h @ w.T
        lam_a = lam_raw(kind, a)
        d = lam_prime_raw(kind, a)
        d2 = lam_second_raw(kind, a)
        r = z[rows] - lam_a @ w
        jac = _jacobians(w, d)
        sol = np.linalg.solve(jac, np.stack([r, t[:, None] * g], axis=2))
        delta, wt = sol[:, :, 0], sol[:, :, 1]
        w_wt = wt @ w.T
        w_delta = delta @ w.T
        p = d * w_wt
        q = d2 * w_wt * w_delta
        g_w += (
            -lam_a.T @ wt
            - p.T @ h
            - (d * w_delta).T @ wt
            - p.T @ delta
            - q.T @ h
        )
        g_z[rows] += wt
        g_h[rows] = g - (p + q) @ w
    return g_w, g_z


def loss_and_gradients(
    net: Network,
    x: np.ndarray,
    decoder=Decoder.DPBN,
    grad_mode: GradMode = GradMode(),
    opts: Optional[SaddleOptions] = None,
    warm_start: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> Tuple[LossResult, ParamSet]:
    """
    Masked batch loss together with its gradient for every trainable parameter.

    Unrolled differentiation forces at least k Newton steps per solve so that a
    warm start that is already converged still carries a dependence on z.

    Args:
        net: dense network
        x: (B, N) batch
        decoder: Decoder.DPBN or Decoder.AEC
        grad_mode: GradMode.implicit() or GradMode.unrolled(k)
        opts: saddle options
        warm_start: optional per-layer latents

    Returns:
        (LossResult, ParamSet of gradients)
    """
    decoder = as_decoder(decoder)
    opts = opts or SaddleOptions()
    unrolled = decoder is Decoder.DPBN and grad_mode.is_unrolled
    if unrolled and opts.min_iters < grad_mode.k:
        opts = replace(opts, min_iters=min(grad_mode.k, opts.max_iters))

    x, trace, aec, rec, mask, recon = _forward(net, x, decoder, opts, warm_start, unrolled)
    grads = ParamSet.zeros_like(net.params())
    n_ok = int(mask.sum())
    scale = 2.0 / (n_ok * net.n_input)
    diff = recon[mask] - x[mask]
    result = LossResult(
        mse=float(np.mean(diff * diff)),
        mask=mask,
        reconstruction=recon,
        latents=None if rec is None else [s.h for s in rec.solves],
    )
    g_out = scale * diff

    if decoder is Decoder.AEC:
        g_u = g_out
        for i, layer in enumerate(net.layers):
            g_p = lam_prime_raw(layer.in_kind, aec.pre[i]) * g_u
            grads.recon_biases[i] += g_p.sum(axis=0)
            grads.scales[i] += np.sum(g_p * aec.q[i])
            g_q = layer.recon_scale * g_p
            grads.weights[i] += g_q.T @ aec.u[i + 1]
            g_u = g_q @ layer.linmap.weights
        _backprop_encoder(net, trace, g_u, grads)
        return result, grads

    # D-PBN: work on the successful samples only
    sub = EncodeTrace(
        inputs=[v[mask] for v in trace.inputs],
        pre=[v[mask] for v in trace.pre],
        post_bias=[v[mask] for v in trace.post_bias],
        z_top=trace.z_top[mask],
    )
    a0 = rec.solves[0].h[mask] @ net.layers[0].linmap.weights.T
    g_a = lam_prime_raw(net.input_kind, a0) * g_out
    for i, layer in enumerate(net.layers):
        w = layer.linmap.weights
        batch = rec.solves[i]
        if unrolled:
            sub_batch = _select(batch, mask)
            g_w, v = _unrolled_layer(
                w, layer.in_kind, rec.targets[i][mask], sub_batch, g_a, grad_mode.k
            )
        else:
            g_w, v = _implicit_layer(w, layer.in_kind, batch.h[mask], g_a)
        grads.weights[i] += g_w
        if i < net.depth - 1:
            # target of layer i is W_{i+1} h_{i+1} - b_i
            grads.biases[i] -= v.sum(axis=0)
            g_a = v
        else:
            _backprop_encoder(net, sub, v, grads)
    return result, grads


def _select(batch: SaddleBatch, mask: np.ndarray) -> SaddleBatch:
    return SaddleBatch(
        h=batch.h[mask],
        residual_inf=batch.residual_inf[mask],
        iterations=batch.iterations[mask],
        converged=batch.converged[mask],
        failed=batch.failed[mask],
        iterates=batch.iterates[:, mask],
        steps=batch.steps[:, mask],
    )


def gradients(
    net: Network,
    x: np.ndarray,
    decoder=Decoder.DPBN,
    grad_mode: GradMode = GradMode(),
    opts: Optional[SaddleOptions] = None,
) -> ParamSet:
    """Gradient of the masked batch mse (see loss_and_gradients)."""
    return loss_and_gradients(net, x, decoder, grad_mode, opts)[1]
