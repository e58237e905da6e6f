"""
Multi-layer encoder with the two decoders.

Encoder (perceptron forward path), for layers l = 0..L-1:
    z_l = W_l' x_l
    x_{l+1} = lambda_{l+1}(z_l + b_l)        (l < L-1)
    z_top = z_{L-1}                           (linear output, no bias)

D-PBN decoder: solve the top saddle point, then walk down the stack using
z_{l-1} = W_l h_l - b_{l-1}. This only works because layer l-1's output
activation is layer l's MaxEnt input activation (matched activations), which
Network checks at construction.

AEC decoder: tied weights with a scalar scale s_l and a reconstruction bias c_l,
    u_l = lambda_l(s_l * W_l u_{l+1} + c_l),  u_L = z_top.

Arrays are always 2-D inside this module: rows are samples.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from maxent.activations import (
    ActivationKind,
    DataRange,
    Variant,
    lam,
    lam_raw,
    validate_range,
)
from maxent.errors import ConfigError, DimensionError, RangeViolationError
from maxent.linop import DenseMap, LinearMap
from maxent.saddle import SaddleBatch, SaddleOptions, solve_saddle_batch

logger = logging.getLogger(__name__)


@dataclass
class Layer:
    """
    One encoder layer and the decoder parameters tied to it.

    Attributes:
        linmap: weights W (N x M)
        bias: length-M bias added after W'x (ignored on the top layer)
        in_kind: MaxEnt activation of this layer's input range
        out_activation: activation applied to z + bias; None on the top layer
        recon_scale: AEC scale s
        recon_bias: length-N AEC reconstruction bias
    """

    linmap: LinearMap
    bias: np.ndarray
    in_kind: ActivationKind
    out_activation: Optional[ActivationKind] = None
    recon_scale: float = 1.0
    recon_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.size != self.n_out:
            raise DimensionError(
                f"bias has length {self.bias.size}, layer has {self.n_out} outputs"
            )
        if self.recon_bias is None:
            self.recon_bias = np.zeros(self.n_in)
        self.recon_bias = np.asarray(self.recon_bias, dtype=np.float64).reshape(-1)
        if self.recon_bias.size != self.n_in:
            raise DimensionError(
                f"recon_bias has length {self.recon_bias.size}, layer has {self.n_in} inputs"
            )
        if self.n_out > self.n_in:
            raise DimensionError(f"layer must reduce dimension, got {self.n_in} -> {self.n_out}")
        self.recon_scale = float(self.recon_scale)

    @property
    def n_in(self) -> int:
        return self.linmap.n_in

    @property
    def n_out(self) -> int:
        return self.linmap.n_out


@dataclass
class Network:
    """A stack of layers over one input data range."""

    layers: List[Layer]
    input_range: DataRange
    input_kind: ActivationKind

    def __post_init__(self):
        self.input_range = DataRange(self.input_range)
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        if self.input_kind.data_range is not self.input_range:
            raise ConfigError(
                f"input kind {self.input_kind.name} does not match range {self.input_range.value}"
            )
        for i, layer in enumerate(self.layers):
            if layer.in_kind.variant is Variant.EXPONENTIAL:
                raise ConfigError(
                    f"layer {i}: the exponential kind is not supported inside networks"
                )
            if i == 0:
                if layer.in_kind != self.input_kind:
                    raise ConfigError("layer 0 input kind must equal the network input kind")
                continue
            prev = self.layers[i - 1]
            if layer.n_in != prev.n_out:
                raise DimensionError(
                    f"layer {i} expects {layer.n_in} inputs, layer {i - 1} emits {prev.n_out}"
                )
            if prev.out_activation != layer.in_kind:
                raise ConfigError(
                    f"layer {i - 1} output activation must equal layer {i} MaxEnt activation "
                    f"({layer.in_kind.name})"
                )
        if self.layers[-1].out_activation is not None:
            raise ConfigError("the top layer has a linear output (out_activation must be None)")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_input(self) -> int:
        return self.layers[0].n_in

    @property
    def n_feature(self) -> int:
        return self.layers[-1].n_out

    @property
    def dims(self) -> List[int]:
        return [self.n_input] + [layer.n_out for layer in self.layers]

    def params(self) -> "ParamSet":
        """Copy of the trainable parameters (dense layers only)."""
        for i, layer in enumerate(self.layers):
            if not isinstance(layer.linmap, DenseMap):
                raise ConfigError(f"layer {i} is not dense and cannot be trained")
        return ParamSet(
            weights=[np.array(layer.linmap.weights) for layer in self.layers],
            biases=[layer.bias.copy() for layer in self.layers],
            scales=np.array([layer.recon_scale for layer in self.layers]),
            recon_biases=[layer.recon_bias.copy() for layer in self.layers],
        )

    def with_params(self, params: "ParamSet") -> "Network":
        """New network with the same kinds and the given parameters."""
        layers = [
            Layer(
                linmap=DenseMap(params.weights[i]),
                bias=params.biases[i].copy(),
                in_kind=layer.in_kind,
                out_activation=layer.out_activation,
                recon_scale=float(params.scales[i]),
                recon_bias=params.recon_biases[i].copy(),
            )
            for i, layer in enumerate(self.layers)
        ]
        return Network(layers, self.input_range, self.input_kind)


@dataclass
class ParamSet:
    """Trainable parameters (or gradients of them), one entry per layer."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    scales: np.ndarray
    recon_biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, other: "ParamSet") -> "ParamSet":
        return cls(
            weights=[np.zeros_like(w) for w in other.weights],
            biases=[np.zeros_like(b) for b in other.biases],
            scales=np.zeros_like(other.scales),
            recon_biases=[np.zeros_like(c) for c in other.recon_biases],
        )

    def arrays(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases, self.scales, *self.recon_biases]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def norm_sq(self) -> float:
        return float(sum(np.sum(a * a) for a in self.arrays()))


@dataclass
class EncodeTrace:
    """
    Intermediate values of the forward path.

    inputs[l] is x_l (inputs[0] is the data), pre[l] = W_l' x_l and
    post_bias[l] = pre[l] + b_l for l < L-1.
    """

    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    post_bias: List[np.ndarray]
    z_top: np.ndarray


@dataclass
class DpbnReconstruction:
    """
    D-PBN decoder output.

    Rows of x_bar belonging to failed samples are NaN. solves[l] and targets[l]
    are the saddle batch and right-hand side of layer l; samples that failed
    higher up are marked failed in every lower layer.
    """

    x_bar: np.ndarray
    ok: np.ndarray
    solves: List[SaddleBatch]
    targets: List[np.ndarray]

    @property
    def efficiency(self) -> float:
        return float(np.mean(self.ok)) if self.ok.size else 1.0


@dataclass
class AecTrace:
    """AEC decoder intermediates: u[l] are layer outputs (u[L] = z_top), q[l] = W_l u[l+1]."""

    x_hat: np.ndarray
    u: List[np.ndarray]
    q: List[np.ndarray]
    pre: List[np.ndarray] = field(default_factory=list)


def _rows(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != n:
        raise DimensionError(f"{what} must have length {n}, got shape {x.shape}")
    return x


def encode(net: Network, x: np.ndarray, check_range: bool = True) -> EncodeTrace:
    """
    Run the encoder.

    Args:
        net: the network
        x: input vector or (B, N) rows
        check_range: validate x against the network input range first

    Returns:
        EncodeTrace with (B, .) arrays

    Raises:
        RangeViolationError: x outside the input range

    Examples:
        >>> net = Network([Layer(DenseMap([[1.0], [1.0]]), [0.0], ActivationKind.ted())],
        ...               DataRange.UNIT, ActivationKind.ted())
        >>> encode(net, [0.2, 0.3]).z_top
        array([[0.5]])
    """
    x = _rows(x, net.n_input, "input")
    if check_range:
        report = validate_range(net.input_range, x)
        if not report:
            raise RangeViolationError(
                f"{len(report.violations)} input coordinates outside {net.input_range.value}",
                report.violations,
            )
    inputs, pre, post = [x], [], []
    for layer in net.layers[:-1]:
        z = layer.linmap.forward(inputs[-1])
        p = z + layer.bias
        pre.append(z)
        post.append(p)
        inputs.append(lam(layer.out_activation, p))
    top = net.layers[-1]
    z_top = top.linmap.forward(inputs[-1])
    pre.append(z_top)
    return EncodeTrace(inputs=inputs, pre=pre, post_bias=post, z_top=z_top)


def _failed_batch(n: int, m: int) -> SaddleBatch:
    return SaddleBatch(
        h=np.full((n, m), np.nan),
        residual_inf=np.full(n, np.inf),
        iterations=np.zeros(n, dtype=np.int64),
        converged=np.zeros(n, dtype=bool),
        failed=np.ones(n, dtype=bool),
    )


def _solve_rows(
    linmap: LinearMap,
    kind: ActivationKind,
    z: np.ndarray,
    rows: np.ndarray,
    opts: SaddleOptions,
    h0: Optional[np.ndarray],
    track_history: bool,
) -> SaddleBatch:
    """Solve only the selected rows; the rest come back failed."""
    n, m = z.shape
    out = _failed_batch(n, m)
    if track_history:
        out.iterates = np.full((opts.max_iters + 1, n, m), np.nan)
        out.steps = np.full((opts.max_iters, n), np.nan)
    if rows.size == 0:
        return out
    part = solve_saddle_batch(
        linmap, kind, z[rows], opts, None if h0 is None else h0[rows], track_history
    )
    out.h[rows] = part.h
    out.residual_inf[rows] = part.residual_inf
    out.iterations[rows] = part.iterations
    out.converged[rows] = part.converged
    out.failed[rows] = part.failed
    if track_history:
        out.iterates[:, rows] = part.iterates
        out.steps[:, rows] = part.steps
    return out


def reconstruct_dpbn(
    net: Network,
    z_top: np.ndarray,
    opts: Optional[SaddleOptions] = None,
    warm_start: Optional[Sequence[Optional[np.ndarray]]] = None,
    track_history: bool = False,
) -> DpbnReconstruction:
    """
    D-PBN back-projection of top-layer features to the input space.

    Args:
        net: network with matched activations
        z_top: (B, M_top) features (or one vector)
        opts: saddle solver options
        warm_start: optional per-layer (B, M_l) latents; NaN rows start cold
        track_history: keep Newton iterates for unrolled differentiation

    Returns:
        DpbnReconstruction; never raises on solver failure
    """
    opts = opts or SaddleOptions()
    z = _rows(z_top, net.n_feature, "feature")
    n = z.shape[0]
    ok = np.all(np.isfinite(z), axis=1)
    solves: List[Optional[SaddleBatch]] = [None] * net.depth
    targets: List[Optional[np.ndarray]] = [None] * net.depth

    for i in range(net.depth - 1, -1, -1):
        layer = net.layers[i]
        h0 = None if warm_start is None else warm_start[i]
        targets[i] = z
        batch = _solve_rows(
            layer.linmap, layer.in_kind, z, np.flatnonzero(ok), opts, h0, track_history
        )
        solves[i] = batch
        ok &= ~batch.failed
        if i > 0:
            z = np.full((n, layer.n_in), np.nan)
            z[ok] = layer.linmap.adjoint(batch.h[ok]) - net.layers[i - 1].bias

    x_bar = np.full((n, net.n_input), np.nan)
    if ok.any():
        a = net.layers[0].linmap.adjoint(solves[0].h[ok])
        x_bar[ok] = lam_raw(net.input_kind, a)
    n_failed = int(n - ok.sum())
    if n_failed:
        logger.debug("D-PBN reconstruction failed for %d of %d samples", n_failed, n)
    return DpbnReconstruction(x_bar=x_bar, ok=ok, solves=solves, targets=targets)


def decode_aec_trace(net: Network, z_top: np.ndarray) -> AecTrace:
    """AEC decoder keeping the intermediates needed for backpropagation."""
    u = _rows(z_top, net.n_feature, "feature")
    us: List[np.ndarray] = [None] * (net.depth + 1)
    qs: List[np.ndarray] = [None] * net.depth
    pre: List[np.ndarray] = [None] * net.depth
    us[net.depth] = u
    for i in range(net.depth - 1, -1, -1):
        layer = net.layers[i]
        qs[i] = layer.linmap.adjoint(us[i + 1])
        pre[i] = layer.recon_scale * qs[i] + layer.recon_bias
        us[i] = lam(layer.in_kind, pre[i])
    return AecTrace(x_hat=us[0], u=us, q=qs, pre=pre)


def decode_aec(net: Network, z_top: np.ndarray) -> np.ndarray:
    """
    Conventional tied-weight reconstruction of the input from z_top.

    Examples:
        >>> net = Network([Layer(DenseMap([[1.0], [1.0]]), [0.0], ActivationKind.linear())],
        ...               DataRange.REALS, ActivationKind.linear())
        >>> decode_aec(net, [[3.0]])
        array([[3., 3.]])
    """
    return decode_aec_trace(net, z_top).x_hat


@dataclass
class NetworkConfig:
    """
    Shape of a network to initialize.

    sigma_sq holds the MaxEnt variance of each layer's input kind (layer 0 is
    the data range); a single value applies to every layer.
    """

    n_input: int
    nodes: List[int]
    input_range: DataRange
    sigma_sq: Union[float, List[float]] = 1.0

    def kinds(self) -> List[ActivationKind]:
        depth = len(self.nodes)
        sig = self.sigma_sq
        if np.isscalar(sig):
            sig = [float(sig)] * depth
        if len(sig) != depth:
            raise ConfigError(f"need {depth} sigma_sq values, got {len(sig)}")
        return [ActivationKind.for_range(self.input_range, s) for s in sig]


def init_params(config: NetworkConfig, seed: int, weight_scale: float = 1.0) -> Network:
    """
    Random initial network.

    Weights are zero-mean Gaussian with standard deviation weight_scale/sqrt(N_l)
    so that columns have norm close to weight_scale. Biases and reconstruction
    biases start at zero and reconstruction scales at one. Every layer uses the
    MaxEnt activation of the input data range.

    Args:
        config: dimensions, data range and activation variances
        seed: RNG seed (bit-identical parameters for a fixed seed)
        weight_scale: multiplier on the default weight scale

    Returns:
        Network

    Raises:
        ConfigError / DimensionError: invalid dimension chain
    """
    dims = [config.n_input] + list(config.nodes)
    if any(int(d) != d or d <= 0 for d in dims):
        raise DimensionError(f"layer sizes must be positive integers, got {dims}")
    if any(dims[i + 1] > dims[i] for i in range(len(dims) - 1)):
        raise DimensionError(f"layer sizes must not increase, got {dims}")
    if not (weight_scale > 0):
        raise ConfigError("weight_scale must be positive")

    rng = np.random.default_rng(seed)
    kinds = config.kinds()
    layers = []
    for i in range(len(config.nodes)):
        n_in, n_out = int(dims[i]), int(dims[i + 1])
        w = rng.standard_normal((n_in, n_out)) * (weight_scale / np.sqrt(n_in))
        layers.append(
            Layer(
                linmap=DenseMap(w),
                bias=np.zeros(n_out),
                in_kind=kinds[i],
                out_activation=kinds[i + 1] if i + 1 < len(kinds) else None,
            )
        )
    return Network(layers, DataRange(config.input_range), kinds[0])


if __name__ == "__main__":
    cfg = NetworkConfig(n_input=64, nodes=[16, 8], input_range=DataRange.UNIT)
    net = init_params(cfg, seed=0)
    print(f"Initialized network {net.dims}")
    x = np.random.default_rng(1).uniform(0.1, 0.9, size=(4, 64))
    trace = encode(net, x)
    rec = reconstruct_dpbn(net, trace.z_top)
    x_hat = decode_aec(net, trace.z_top)
    print(f"D-PBN efficiency: {rec.efficiency:.2f}")
    if rec.ok.any():
        print(f"D-PBN mse: {np.mean((rec.x_bar[rec.ok] - x[rec.ok]) ** 2):.5f}")
    print(f"AEC mse:   {np.mean((x_hat - x) ** 2):.5f}")
