"""
Experiment runs: data preparation, training, artifacts and the run registry.
"""

import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import yaml

from db_schema import EpochMetric, ExperimentRun, get_session, init_db
from experiments.config import ExperimentConfig
from ingest.mnist import Dataset, prepare_dataset, read_mnist, select_subset
from maxent.activations import DataRange
from models.gradients import Decoder
from models.store import read_model, write_model
from models.train import TrainReport, evaluate, train
from network.layers import Network, decode_aec, encode, init_params, reconstruct_dpbn
from report.images import write_pgm_grid
from report.metrics import write_metrics_csv

logger = logging.getLogger(__name__)

MODEL_FILE = "model.dpbn"
METRICS_FILE = "metrics.csv"
GRID_FILE = "reconstructions.pgm"
MNIST_SHAPE = (28, 28)


@dataclass
class RunArtifacts:
    report: TrainReport
    model_path: str
    metrics_path: str
    grid_path: str
    run_id: Optional[int] = None


def load_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Read MNIST, keep the configured classes and map both splits into the data range."""
    paths = cfg.data.paths()
    train_raw = read_mnist(paths["train_images"], paths["train_labels"])
    test_raw = read_mnist(paths["test_images"], paths["test_labels"])
    train_raw, test_raw = select_subset(
        train_raw, test_raw, cfg.data.classes, cfg.data.per_class_train
    )
    kind = cfg.input_kind
    # test dither stream is keyed by seed + 1 so it never coincides with training's
    train_set = prepare_dataset(train_raw, kind, cfg.seed, cfg.data.dither_mean, cfg.data.clamp_eps)
    test_set = prepare_dataset(
        test_raw, kind, cfg.seed + 1, cfg.data.dither_mean, cfg.data.clamp_eps
    )
    logger.info(
        "data: %d training and %d test vectors in %s range",
        len(train_set),
        len(test_set),
        cfg.data_range.value,
    )
    return train_set, test_set


def grid_value_range(data_range: DataRange, x: np.ndarray) -> Tuple[float, float]:
    if data_range is DataRange.UNIT:
        return 0.0, 1.0
    if data_range is DataRange.POSITIVES:
        return 0.0, float(np.max(x))
    return float(np.min(x)), float(np.max(x))


def reconstruction_grid(
    net: Network,
    x: np.ndarray,
    decoder: Decoder,
    path: str,
    columns: int = 10,
    seed: int = 0,
    opts=None,
) -> np.ndarray:
    """Write `columns` random test samples above their reconstructions (failed ones blank)."""
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(x.shape[0], size=min(columns, x.shape[0]), replace=False))
    sample = x[pick]
    z = encode(net, sample).z_top
    if decoder is Decoder.AEC:
        recon = decode_aec(net, z)
    else:
        recon = reconstruct_dpbn(net, z, opts).x_bar
    lo, hi = grid_value_range(net.input_range, sample)
    shape = MNIST_SHAPE if x.shape[1] == 784 else None
    if shape is None:
        side = int(round(np.sqrt(x.shape[1])))
        shape = (side, x.shape[1] // side)
    return write_pgm_grid(list(sample) + list(recon), len(pick), path, (lo, hi), shape)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[str] = None,
    datasets: Optional[Tuple[Dataset, Dataset]] = None,
    register: bool = True,
) -> RunArtifacts:
    """
    Train per config and write the model, metrics CSV and reconstruction grid.

    Args:
        cfg: experiment configuration
        out_dir: output directory (cfg.output.dir when None)
        datasets: pre-built (train, test) datasets, mainly for tests
        register: record the run in the registry database

    Returns:
        RunArtifacts
    """
    out_dir = out_dir or cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    train_set, test_set = datasets if datasets is not None else load_datasets(cfg)
    n_input = train_set.vectors.shape[1]
    net_cfg = cfg.network_config(n_input)

    def reinit(scale: float) -> Network:
        return init_params(net_cfg, cfg.seed, cfg.weight_scale * scale)

    logger.info(
        "training %s: %s decoder, layers %s, %d epochs",
        cfg.name,
        cfg.decoder.value,
        [n_input] + list(cfg.nodes),
        cfg.hyper.epochs,
    )
    report = train(
        reinit(1.0),
        train_set.vectors,
        test_set.vectors,
        cfg.hyper,
        cfg.decoder,
        cfg.saddle,
        reinit=reinit,
    )

    model_path = os.path.join(out_dir, MODEL_FILE)
    metrics_path = os.path.join(out_dir, METRICS_FILE)
    grid_path = os.path.join(out_dir, GRID_FILE)
    write_model(report.net, model_path)
    write_metrics_csv(report, metrics_path)
    reconstruction_grid(
        report.net,
        test_set.vectors,
        cfg.decoder,
        grid_path,
        cfg.output.grid_columns,
        cfg.seed,
        cfg.saddle,
    )
    artifacts = RunArtifacts(report, model_path, metrics_path, grid_path)
    if register:
        artifacts.run_id = register_run(cfg, artifacts, out_dir)
    return artifacts


def register_run(cfg: ExperimentConfig, artifacts: RunArtifacts, out_dir: str) -> int:
    """
    Store the run and its epoch metrics in the registry database.

    Without output.database_url or DPBN_DATABASE_URL the registry is runs.db
    next to the run directory, so runs/<name> runs share runs/runs.db.
    """
    url = cfg.output.database_url or os.getenv("DPBN_DATABASE_URL")
    if not url:
        parent = os.path.dirname(os.path.abspath(out_dir))
        url = "sqlite:///" + os.path.join(parent, "runs.db")
    engine = init_db(url)
    session = get_session(engine)
    try:
        report = artifacts.report
        train_last = report.last("train")
        test_last = report.last("test")
        run = ExperimentRun(
            name=cfg.name,
            data_range=cfg.data_range.value,
            decoder=cfg.decoder.value,
            nodes=",".join(str(n) for n in cfg.nodes),
            l2_weight=cfg.hyper.l2_weight,
            seed=cfg.seed,
            epochs=cfg.hyper.epochs,
            restarts=report.restarts,
            train_mse=float(train_last["mse"]),
            test_mse=float(test_last["mse"]),
            train_efficiency=float(train_last["sampling_efficiency"]),
            test_efficiency=float(test_last["sampling_efficiency"]),
            model_path=artifacts.model_path,
            metrics_path=artifacts.metrics_path,
            grid_path=artifacts.grid_path,
            config_yaml=yaml.safe_dump(cfg.source, sort_keys=False),
        )
        for row in report.history.itertuples(index=False):
            run.epoch_metrics.append(
                EpochMetric(
                    epoch=int(row.epoch),
                    split=row.split,
                    mse=float(row.mse),
                    sampling_efficiency=float(row.sampling_efficiency),
                    seconds=float(row.seconds),
                )
            )
        session.add(run)
        session.commit()
        logger.info("registered run %d in %s", run.run_id, engine.url)
        return run.run_id
    finally:
        session.close()


def evaluate_model(
    model_path: str,
    cfg: ExperimentConfig,
    decoder: Optional[Decoder] = None,
    datasets: Optional[Tuple[Dataset, Dataset]] = None,
) -> Dict[str, float]:
    """
    Train/test MSE and sampling efficiency of a saved model on the configured data.

    Uses the same cold-start evaluation as the training loop, so a fresh model
    reproduces the last epoch of its metrics.
    """
    net = read_model(model_path)
    decoder = decoder or cfg.decoder
    train_set, test_set = datasets if datasets is not None else load_datasets(cfg)
    out = {}
    for split, ds in (("train", train_set), ("test", test_set)):
        m = evaluate(net, ds.vectors, decoder, cfg.saddle)
        out[f"{split}_mse"] = m["mse"]
        out[f"{split}_sampling_efficiency"] = m["sampling_efficiency"]
    return out
