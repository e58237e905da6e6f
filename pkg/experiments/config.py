"""
Experiment configuration.

Experiments are described by YAML files (see config.yaml and configs/) or by
plain-text files with [section] headers and key = value lines (see parse_ini).
Every key is checked against the schema below; an unknown key anywhere is an
error naming its dotted path. Data paths left empty are resolved inside
MNIST_DIR (from the environment or a .env file, default data/mnist).
"""

import configparser
import os
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from ingest.mnist import DEFAULT_CLAMP_EPS, DEFAULT_DITHER_MEAN, default_paths
from maxent.activations import ActivationKind, DataRange
from maxent.errors import ConfigError
from maxent.saddle import SaddleOptions
from models.gradients import Decoder, GradMode
from models.train import Hyperparams
from network.layers import NetworkConfig

load_dotenv()

DEFAULT_MNIST_DIR = "data/mnist"

# Allowed keys per section; a nested dict means a nested section
SCHEMA: Dict[str, Any] = {
    "name": None,
    "seed": None,
    "range": None,
    "decoder": None,
    "data": {
        "mnist_dir": None,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
        "classes": None,
        "per_class_train": None,
        "dither_mean": None,
        "clamp_eps": None,
    },
    "network": {
        "nodes": None,
        "sigma_sq": None,
        "weight_scale": None,
    },
    "train": {
        "learning_rate": None,
        "momentum": None,
        "batch_size": None,
        "epochs": None,
        "l2_weight": None,
        "grad_mode": None,
        "unroll_k": None,
        "max_restarts": None,
        "restart_efficiency": None,
    },
    "saddle": {
        "max_iters": None,
        "residual_tol": None,
        "fail_tol": None,
        "step_scale": None,
        "backtrack_factor": None,
        "max_backtracks": None,
        "inner_solver": None,
        "cholesky_max_dim": None,
        "cg_tol": None,
        "cg_max_iters": None,
    },
    "output": {
        "dir": None,
        "grid_columns": None,
        "record_time": None,
        "database_url": None,
    },
}


@dataclass
class DataConfig:
    mnist_dir: str = DEFAULT_MNIST_DIR
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    classes: List[int] = field(default_factory=lambda: [3, 8, 9])
    per_class_train: int = 500
    dither_mean: float = DEFAULT_DITHER_MEAN
    clamp_eps: float = DEFAULT_CLAMP_EPS

    def paths(self) -> Dict[str, str]:
        found = default_paths(self.mnist_dir)
        for key in found:
            value = getattr(self, key)
            if value:
                found[key] = value
        return found


@dataclass
class OutputConfig:
    dir: str = "runs/default"
    grid_columns: int = 10
    record_time: bool = True
    database_url: Optional[str] = None


@dataclass
class ExperimentConfig:
    """A fully resolved experiment."""

    name: str
    seed: int
    data_range: DataRange
    decoder: Decoder
    data: DataConfig
    nodes: List[int]
    sigma_sq: Any
    weight_scale: float
    hyper: Hyperparams
    saddle: SaddleOptions
    output: OutputConfig
    source: Dict = field(default_factory=dict)

    @property
    def input_kind(self) -> ActivationKind:
        sig = self.sigma_sq[0] if isinstance(self.sigma_sq, list) else self.sigma_sq
        return ActivationKind.for_range(self.data_range, sig)

    def network_config(self, n_input: int) -> NetworkConfig:
        return NetworkConfig(
            n_input=n_input,
            nodes=list(self.nodes),
            input_range=self.data_range,
            sigma_sq=self.sigma_sq,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        hyper = replace(self.hyper, seed=seed)
        return replace(self, seed=seed, hyper=hyper)


def check_keys(raw: Dict, schema: Dict = SCHEMA, prefix: str = "") -> None:
    """Raise ConfigError naming the first key not in the schema."""
    if not isinstance(raw, dict):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a mapping")
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {path}")
        sub = schema[key]
        if isinstance(sub, dict):
            check_keys(value or {}, sub, path + ".")


def _get(section: Dict, key: str, default, cast, path: str):
    if key not in section or section[key] is None:
        return default
    try:
        return cast(section[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {path}{key}: {section[key]!r}") from exc


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    raise ValueError("expected true or false")


def parse_config(raw: Dict, name: str = "experiment") -> ExperimentConfig:
    """Build an ExperimentConfig from a loaded YAML or INI mapping."""
    raw = raw or {}
    check_keys(raw)
    try:
        data_range = DataRange(raw.get("range", "unit"))
    except ValueError as exc:
        got = raw.get("range")
        raise ConfigError(f"range must be reals, positives or unit, got {got!r}") from exc
    try:
        decoder = Decoder(raw.get("decoder", "dpbn"))
    except ValueError as exc:
        raise ConfigError(f"decoder must be dpbn or aec, got {raw.get('decoder')!r}") from exc
    seed = _get(raw, "seed", 0, int, "")

    d = raw.get("data") or {}
    data = DataConfig(
        mnist_dir=_get(d, "mnist_dir", os.getenv("MNIST_DIR", DEFAULT_MNIST_DIR), str, "data."),
        train_images=_get(d, "train_images", None, str, "data."),
        train_labels=_get(d, "train_labels", None, str, "data."),
        test_images=_get(d, "test_images", None, str, "data."),
        test_labels=_get(d, "test_labels", None, str, "data."),
        classes=_get(d, "classes", [3, 8, 9], lambda v: [int(c) for c in v], "data."),
        per_class_train=_get(d, "per_class_train", 500, int, "data."),
        dither_mean=_get(d, "dither_mean", DEFAULT_DITHER_MEAN, float, "data."),
        clamp_eps=_get(d, "clamp_eps", DEFAULT_CLAMP_EPS, float, "data."),
    )

    n = raw.get("network") or {}
    nodes = _get(n, "nodes", [24], lambda v: [int(x) for x in v], "network.")
    sigma_sq = n.get("sigma_sq", 1.0)
    if isinstance(sigma_sq, list):
        sigma_sq = [float(s) for s in sigma_sq]
    else:
        sigma_sq = _get(n, "sigma_sq", 1.0, float, "network.")
    weight_scale = _get(n, "weight_scale", 1.0, float, "network.")

    t = raw.get("train") or {}
    mode = _get(t, "grad_mode", "implicit", str, "train.")
    k = _get(t, "unroll_k", 3, int, "train.")
    try:
        grad_mode = GradMode(mode, k)
        hyper = Hyperparams(
            learning_rate=_get(t, "learning_rate", 0.05, float, "train."),
            epochs=_get(t, "epochs", 20, int, "train."),
            batch_size=_get(t, "batch_size", 50, int, "train."),
            momentum=_get(t, "momentum", 0.9, float, "train."),
            l2_weight=_get(t, "l2_weight", 0.0, float, "train."),
            grad_mode=grad_mode,
            seed=seed,
            max_restarts=_get(t, "max_restarts", 3, int, "train."),
            restart_efficiency=_get(t, "restart_efficiency", 0.5, float, "train."),
            record_time=_get(raw.get("output") or {}, "record_time", True, _as_bool, "output."),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc

    s = raw.get("saddle") or {}
    defaults = SaddleOptions()
    try:
        saddle = SaddleOptions(
            max_iters=_get(s, "max_iters", defaults.max_iters, int, "saddle."),
            residual_tol=_get(s, "residual_tol", defaults.residual_tol, float, "saddle."),
            fail_tol=_get(s, "fail_tol", defaults.fail_tol, float, "saddle."),
            step_scale=_get(s, "step_scale", defaults.step_scale, float, "saddle."),
            backtrack_factor=_get(
                s, "backtrack_factor", defaults.backtrack_factor, float, "saddle."
            ),
            max_backtracks=_get(s, "max_backtracks", defaults.max_backtracks, int, "saddle."),
            inner_solver=_get(s, "inner_solver", defaults.inner_solver, str, "saddle."),
            cholesky_max_dim=_get(s, "cholesky_max_dim", defaults.cholesky_max_dim, int, "saddle."),
            cg_tol=_get(s, "cg_tol", defaults.cg_tol, float, "saddle."),
            cg_max_iters=_get(s, "cg_max_iters", defaults.cg_max_iters, int, "saddle."),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid saddle section: {exc}") from exc

    o = raw.get("output") or {}
    output = OutputConfig(
        dir=_get(o, "dir", os.path.join("runs", name), str, "output."),
        grid_columns=_get(o, "grid_columns", 10, int, "output."),
        record_time=hyper.record_time,
        database_url=_get(o, "database_url", os.getenv("DPBN_DATABASE_URL"), str, "output."),
    )
    cfg = ExperimentConfig(
        name=_get(raw, "name", name, str, ""),
        seed=seed,
        data_range=data_range,
        decoder=decoder,
        data=data,
        nodes=nodes,
        sigma_sq=sigma_sq,
        weight_scale=weight_scale,
        hyper=hyper,
        saddle=saddle,
        output=output,
        source=raw,
    )
    # surfaces sigma_sq length errors at load time
    cfg.network_config(1).kinds()
    return cfg


# Keys of the [experiment] section of a plain-text config; they sit at the
# top level of the parsed mapping
TOP_LEVEL_KEYS = ("name", "seed", "range", "decoder")
LIST_KEYS = {"data.classes", "network.nodes", "network.sigma_sq"}
BOOL_KEYS = {"output.record_time"}
INI_SUFFIXES = (".ini", ".cfg", ".conf")
YAML_SUFFIXES = (".yaml", ".yml")
_SECTION_HEADER = re.compile(r"^\s*\[[A-Za-z_][\w.-]*\]\s*(#.*)?$", re.MULTILINE)


def _ini_value(path: str, value: str):
    value = value.strip()
    if value == "":
        return None
    if path in BOOL_KEYS:
        state = configparser.ConfigParser.BOOLEAN_STATES.get(value.lower())
        if state is None:
            raise ConfigError(f"invalid value for {path}: {value!r}")
        return state
    if path in LIST_KEYS and ("," in value or path != "network.sigma_sq"):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def parse_ini(text: str, source: str = "<string>") -> Dict:
    """
    Read a plain-text config into the mapping parse_config takes.

    Sections are [experiment] (name, seed, range, decoder) and the YAML
    section names. Lists are comma-separated (nodes = 48,24), '#' starts a
    comment, and values stay strings until parse_config casts them.
    """
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), default_section="\0"
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config {source}: {exc}") from exc
    raw: Dict[str, Any] = {}
    for section in parser.sections():
        items = parser.items(section)
        if section == "experiment":
            for key, value in items:
                if key not in TOP_LEVEL_KEYS:
                    raise ConfigError(f"unknown config key: {key}")
                raw[key] = _ini_value(key, value)
            continue
        if not isinstance(SCHEMA.get(section), dict):
            raise ConfigError(f"unknown config key: {section}")
        raw[section] = {key: _ini_value(f"{section}.{key}", value) for key, value in items}
    return raw


def _is_ini(path: str, text: str) -> bool:
    suffix = os.path.splitext(path)[1].lower()
    if suffix in INI_SUFFIXES:
        return True
    if suffix in YAML_SUFFIXES:
        return False
    return bool(_SECTION_HEADER.search(text))


def load_config(path: str) -> ExperimentConfig:
    """
    Load and validate an experiment file.

    .yaml/.yml files are YAML; .ini/.cfg/.conf files (or any other file with
    [section] headers) use the plain-text format read by parse_ini.

    Raises:
        ConfigError: unreadable file, bad syntax, unknown key or invalid value
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if _is_ini(path, text):
        raw = parse_ini(text, path)
    else:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_config(raw, name)
