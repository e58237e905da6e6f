"""
Model training and evaluation.

Minibatch SGD with momentum on the masked reconstruction MSE of either decoder.
Each epoch reshuffles the training set with a generator seeded once per run, so
a fixed seed gives a bit-identical run on one machine. D-PBN saddle points are
cached per training sample and per layer and reused as warm starts in the next
epoch; evaluation always starts cold so its numbers match a fresh `eval`.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from maxent.errors import ActivationDomainError, NumericalError
from maxent.saddle import SaddleOptions
from models.gradients import (
    AllSamplesFailedError,
    Decoder,
    GradMode,
    as_decoder,
    loss_and_gradients,
)
from network.layers import Network, ParamSet, decode_aec, encode, reconstruct_dpbn
from report.metrics import METRIC_COLUMNS

logger = logging.getLogger(__name__)

# Evaluation batch size
EVAL_CHUNK = 256


class TrainingDivergedError(NumericalError):
    """Loss or gradient became non-finite."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        msg = f"training diverged at epoch {epoch}, batch {batch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.epoch = epoch
        self.batch = batch


@dataclass
class Hyperparams:
    """
    Optimizer settings.

    l2_weight adds l2_weight * W to the weight gradients (biases, scales and
    reconstruction biases are not decayed).
    """

    learning_rate: float
    epochs: int
    batch_size: int = 50
    momentum: float = 0.9
    l2_weight: float = 0.0
    grad_mode: GradMode = field(default_factory=GradMode.implicit)
    seed: int = 0
    max_restarts: int = 3
    restart_efficiency: float = 0.5
    record_time: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.momentum < 1):
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch_size and epochs must be positive")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be nonnegative")


@dataclass
class TrainReport:
    """Per-epoch metrics (one row per epoch and split) and the final network."""

    history: pd.DataFrame
    net: Network
    restarts: int = 0
    skipped_batches: int = 0

    def last(self, split: str) -> Dict:
        rows = self.history[self.history["split"] == split]
        return rows.iloc[-1].to_dict()


def evaluate(
    net: Network,
    x: np.ndarray,
    decoder=Decoder.DPBN,
    opts: Optional[SaddleOptions] = None,
    chunk: int = EVAL_CHUNK,
) -> Dict[str, float]:
    """
    Reconstruction MSE and sampling efficiency of a dataset.

    D-PBN solves start cold. MSE averages over successful samples only (NaN when
    none succeeded). The AEC decoder always has efficiency 1.0.

    Returns:
        Dictionary with 'mse', 'sampling_efficiency' and 'n'
    """
    decoder = as_decoder(decoder)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sq_sum, n_ok = 0.0, 0
    for start in range(0, x.shape[0], chunk):
        xb = x[start : start + chunk]
        z = encode(net, xb).z_top
        if decoder is Decoder.AEC:
            recon = decode_aec(net, z)
            ok = np.ones(xb.shape[0], dtype=bool)
        else:
            rec = reconstruct_dpbn(net, z, opts)
            recon, ok = rec.x_bar, rec.ok
        diff = recon[ok] - xb[ok]
        sq_sum += float(np.sum(diff * diff))
        n_ok += int(ok.sum())
    n = x.shape[0]
    mse = sq_sum / (n_ok * x.shape[1]) if n_ok else float("nan")
    return {"mse": mse, "sampling_efficiency": n_ok / n if n else 1.0, "n": n}


def sampling_efficiency(net: Network, x: np.ndarray, opts: Optional[SaddleOptions] = None) -> float:
    """Fraction of samples whose full D-PBN back-projection succeeds at every layer."""
    return evaluate(net, x, Decoder.DPBN, opts)["sampling_efficiency"]


class _RestartRequested(Exception):
    pass


def _sgd_step(params: ParamSet, grads: ParamSet, velocity: ParamSet, hyper: Hyperparams):
    lr, mu = hyper.learning_rate, hyper.momentum
    for i in range(len(params.weights)):
        g = grads.weights[i]
        if hyper.l2_weight > 0:
            g = g + hyper.l2_weight * params.weights[i]
        velocity.weights[i] = mu * velocity.weights[i] - lr * g
        params.weights[i] += velocity.weights[i]
        velocity.biases[i] = mu * velocity.biases[i] - lr * grads.biases[i]
        params.biases[i] += velocity.biases[i]
        velocity.recon_biases[i] = mu * velocity.recon_biases[i] - lr * grads.recon_biases[i]
        params.recon_biases[i] += velocity.recon_biases[i]
    velocity.scales = mu * velocity.scales - lr * grads.scales
    params.scales += velocity.scales


def _train_once(
    net: Network,
    train_x: np.ndarray,
    test_x: np.ndarray,
    hyper: Hyperparams,
    decoder: Decoder,
    opts: SaddleOptions,
    allow_restart: bool,
    on_epoch: Optional[Callable[[int, pd.DataFrame], None]],
) -> TrainReport:
    rng = np.random.default_rng(hyper.seed)
    params = net.params()
    velocity = ParamSet.zeros_like(params)
    n = train_x.shape[0]
    cache: Optional[List[np.ndarray]] = None
    if decoder is Decoder.DPBN:
        cache = [np.full((n, layer.n_out), np.nan) for layer in net.layers]
    rows: List[Dict] = []
    skipped = 0

    for epoch in range(1, hyper.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        n_batches = (n + hyper.batch_size - 1) // hyper.batch_size
        for b in range(n_batches):
            idx = order[b * hyper.batch_size : (b + 1) * hyper.batch_size]
            warm = None if cache is None else [c[idx] for c in cache]
            try:
                result, grads = loss_and_gradients(
                    net, train_x[idx], decoder, hyper.grad_mode, opts, warm
                )
            except AllSamplesFailedError:
                skipped += 1
                logger.warning("epoch %d batch %d: every sample failed, batch skipped", epoch, b)
                continue
            except (ActivationDomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            if not (np.isfinite(result.mse) and grads.all_finite()):
                raise TrainingDivergedError(epoch, b, "non-finite loss or gradient")
            if result.n_ok < len(idx):
                n_bad = len(idx) - result.n_ok
                logger.debug(
                    "epoch %d batch %d: %d of %d samples failed", epoch, b, n_bad, len(idx)
                )
            if cache is not None:
                for c, h in zip(cache, result.latents):
                    good = np.all(np.isfinite(h), axis=1)
                    c[idx[good]] = h[good]
            _sgd_step(params, grads, velocity, hyper)
            if not params.all_finite():
                raise TrainingDivergedError(epoch, b, "non-finite parameters")
            net = net.with_params(params)

        for split, data in (("train", train_x), ("test", test_x)):
            if data is None or len(data) == 0:
                continue
            m = evaluate(net, data, decoder, opts)
            rows.append(
                {
                    "epoch": epoch,
                    "split": split,
                    "mse": m["mse"],
                    "sampling_efficiency": m["sampling_efficiency"],
                    "seconds": 0.0,
                }
            )
        seconds = time.perf_counter() - t0 if hyper.record_time else 0.0
        for row in rows[-2:]:
            if row["epoch"] == epoch:
                row["seconds"] = seconds

        this_epoch = [r for r in rows if r["epoch"] == epoch]
        summary = ", ".join(
            f"{r['split']} mse={r['mse']:.6g} eff={r['sampling_efficiency']:.3f}"
            for r in this_epoch
        )
        logger.info("epoch %d/%d: %s (%.1fs)", epoch, hyper.epochs, summary, seconds)
        if on_epoch is not None:
            on_epoch(epoch, pd.DataFrame(rows, columns=METRIC_COLUMNS))

        if epoch == 1 and allow_restart:
            train_eff = next(r["sampling_efficiency"] for r in this_epoch if r["split"] == "train")
            if train_eff < hyper.restart_efficiency:
                raise _RestartRequested()

    history = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    return TrainReport(history=history, net=net, skipped_batches=skipped)


def train(
    net: Network,
    train_x: np.ndarray,
    test_x: Optional[np.ndarray],
    hyper: Hyperparams,
    decoder=Decoder.DPBN,
    opts: Optional[SaddleOptions] = None,
    reinit: Optional[Callable[[float], Network]] = None,
    on_epoch: Optional[Callable[[int, pd.DataFrame], None]] = None,
) -> TrainReport:
    """
    Train a network to minimize reconstruction MSE.

    Multi-layer D-PBN training starts over when the training-set sampling
    efficiency after the first epoch is below hyper.restart_efficiency: the
    network is rebuilt by reinit(scale) with the initial weight scale halved,
    at most hyper.max_restarts times. Without reinit no restart happens.

    Args:
        net: initial network (dense layers)
        train_x: (n, N) training vectors
        test_x: (n_test, N) test vectors, or None
        hyper: optimizer settings
        decoder: Decoder.DPBN or Decoder.AEC
        opts: saddle options
        reinit: factory building a fresh network for a given weight-scale multiplier
        on_epoch: callback receiving (epoch, history so far)

    Returns:
        TrainReport

    Raises:
        TrainingDivergedError: non-finite loss, gradient or parameters
    """
    decoder = as_decoder(decoder)
    opts = opts or SaddleOptions()
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    if test_x is not None:
        test_x = np.atleast_2d(np.asarray(test_x, dtype=np.float64))

    scale = 1.0
    for attempt in range(hyper.max_restarts + 1):
        allow = (
            decoder is Decoder.DPBN
            and net.depth > 1
            and reinit is not None
            and attempt < hyper.max_restarts
        )
        try:
            report = _train_once(net, train_x, test_x, hyper, decoder, opts, allow, on_epoch)
            report.restarts = attempt
            return report
        except _RestartRequested:
            scale *= 0.5
            logger.warning(
                "sampling efficiency below %.2f after epoch 1; restarting with weight scale %.4g",
                hyper.restart_efficiency,
                scale,
            )
            net = reinit(scale)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    from maxent.activations import DataRange
    from network.layers import NetworkConfig, init_params

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    print("=" * 50)
    print("Training a small D-PBN and AEC on random unit-range data")
    print("=" * 50)
    rng = np.random.default_rng(0)
    data = rng.uniform(0.05, 0.95, size=(200, 16))
    cfg = NetworkConfig(n_input=16, nodes=[4], input_range=DataRange.UNIT)
    hp = Hyperparams(learning_rate=0.05, epochs=3, batch_size=20)
    for dec in (Decoder.DPBN, Decoder.AEC):
        rep = train(init_params(cfg, 0), data[:150], data[150:], hp, dec)
        print(f"\n{dec.value}:")
        print(rep.history.to_string(index=False))
