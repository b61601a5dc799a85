"""Experiment configuration and single-run driver shared by the CLI and benchmarks.

A config is a JSON object with four sections, every key optional::

    {
      "data":  {"source": "synthetic", "class_count": 4, "n_per_class": 500, "dim": 2,
                "separation": 4.0, "label_noise": 0.2, "test_fraction": 0.2, "seed": null},
      "model": {"hidden_dims": [32], "activation": "relu"},
      "train": {... any TrainConfig field ...},
      "sweep": {"objectives": null, "lambdas": [10.0], "seeds": [0], "workers": 1},
      "out": "runs/default"
    }

``data.seed = null`` ties the dataset to the run seed, so a seed sweep also
resamples the data.  CSV sources use ``{"source": "csv", "path": ..., "label_column": ...}``.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .data import Dataset, load_csv, split, standardize, synth_gaussian_blobs
from .models import MlpSpec
from .training import OBJECTIVES, TrainConfig, train


class ConfigError(ValueError):
    pass


DATA_DEFAULTS = {
    "synthetic": {"source": "synthetic", "class_count": 4, "n_per_class": 500, "dim": 2,
                  "separation": 4.0, "label_noise": 0.2, "test_fraction": 0.2, "seed": None},
    "csv": {"source": "csv", "path": None, "label_column": "label", "class_count": None,
            "test_fraction": 0.2, "seed": None},
}
MODEL_DEFAULTS = {"hidden_dims": [32], "activation": "relu"}
SWEEP_DEFAULTS = {"objectives": None, "lambdas": [10.0], "seeds": [0], "workers": 1}
TRAIN_FIELDS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: dict(DATA_DEFAULTS["synthetic"]))
    model: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS))
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: dict = field(default_factory=lambda: copy.deepcopy(SWEEP_DEFAULTS))
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return {"data": dict(self.data), "model": dict(self.model), "train": self.train.to_dict(),
                "sweep": copy.deepcopy(self.sweep), "out": self.out}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=int(seed)))

    def with_train(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **kw))


def _merge(section: str, given, defaults: dict) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def parse_config(raw: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate a raw config object and fill every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - {"data", "model", "train", "sweep", "out"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")

    source = (raw.get("data") or {}).get("source", "synthetic")
    if source not in DATA_DEFAULTS:
        raise ConfigError(f"data.source must be one of {sorted(DATA_DEFAULTS)}, got {source!r}")
    data = _merge("data", raw.get("data"), DATA_DEFAULTS[source])
    if source == "csv":
        if not data["path"] or data["class_count"] is None:
            raise ConfigError("data: csv source needs path and class_count")
        path = Path(data["path"])
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"data.path does not exist: {path}")
        data["path"] = str(path)
    if not 0 < data["test_fraction"] < 1:
        raise ConfigError("data.test_fraction must be in (0, 1)")

    model = _merge("model", raw.get("model"), MODEL_DEFAULTS)
    model["hidden_dims"] = [int(h) for h in model["hidden_dims"]]

    train_raw = _merge("train", raw.get("train"), TRAIN_FIELDS)
    try:
        tcfg = TrainConfig(**train_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    sweep = _merge("sweep", raw.get("sweep"), SWEEP_DEFAULTS)
    if not sweep["seeds"]:
        raise ConfigError("sweep.seeds must be non-empty")
    if not sweep["lambdas"]:
        raise ConfigError("sweep.lambdas must be non-empty")
    if any(l < 0 for l in sweep["lambdas"]):
        raise ConfigError("sweep.lambdas must be non-negative")
    if sweep["objectives"] is not None and any(o not in OBJECTIVES for o in sweep["objectives"]):
        raise ConfigError(f"sweep.objectives must be drawn from {OBJECTIVES}")
    if int(sweep["workers"]) < 1:
        raise ConfigError("sweep.workers must be >= 1")
    sweep["lambdas"] = [float(l) for l in sweep["lambdas"]]
    sweep["seeds"] = [int(s) for s in sweep["seeds"]]

    out = raw.get("out", "runs/default")
    if not isinstance(out, str):
        raise ConfigError("out must be a path string")
    cfg = ExperimentConfig(data, model, tcfg, sweep, out)
    # the spec is derived from the data; build it now so bad shapes fail early
    try:
        MlpSpec(1, tuple(model["hidden_dims"]), 2, model["activation"])
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return parse_config(raw, path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


# -- data and model ---------------------------------------------------------

def prepare_data(cfg: ExperimentConfig):
    """Build, split and standardize the dataset for the run seed."""
    d = cfg.data
    seed = cfg.train.seed if d["seed"] is None else int(d["seed"])
    if d["source"] == "synthetic":
        ds = synth_gaussian_blobs(int(d["class_count"]), int(d["n_per_class"]), int(d["dim"]),
                                  float(d["separation"]), float(d["label_noise"]), seed)
    else:
        ds = load_csv(d["path"], d["label_column"], int(d["class_count"]))
    tr, te = split(ds, float(d["test_fraction"]), seed)
    return standardize(tr, te)


def model_spec(cfg: ExperimentConfig, ds: Dataset) -> MlpSpec:
    return MlpSpec(ds.dim, tuple(cfg.model["hidden_dims"]), ds.class_count, cfg.model["activation"])


def run(cfg: ExperimentConfig):
    """Train one configuration; returns (spec, state, log, test dataset)."""
    tr, te = prepare_data(cfg)
    spec = model_spec(cfg, tr)
    state, log = train(spec, tr, te, cfg.train)
    return spec, state, log, te


def sweep_cells(cfg: ExperimentConfig):
    """Grid in (objective, lambda, seed) order.  fnn and bnn ignore lambda, so
    they get a single lambda = 0 cell per seed."""
    objectives = cfg.sweep["objectives"] or [cfg.train.objective]
    cells = []
    for o in objectives:
        lambdas = cfg.sweep["lambdas"] if o.startswith("ca-") else [0.0]
        cells += [(o, lam, seed) for lam in lambdas for seed in cfg.sweep["seeds"]]
    return cells


def run_cell(cfg: ExperimentConfig, objective: str, lam: float, seed: int) -> dict:
    """One sweep cell; failures are reported in the row, never raised."""
    row = {"objective": objective, "lambda": lam, "seed": seed, "accuracy": None, "ece": None}
    try:
        cell = cfg.with_train(objective=objective, lam=lam, seed=seed)
        _, _, log, _ = run(cell)
        if log.records:
            row["accuracy"] = log.records[-1].test_acc
            row["ece"] = log.records[-1].test_ece
        row["status"] = "ok"
    except Exception as exc:  # noqa: BLE001 - a cell failure must not stop the grid
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> List[dict]:
    """Run the grid; rows come back in grid order whatever the completion order."""
    tasks = [(cfg, o, lam, seed) for o, lam, seed in sweep_cells(cfg)]
    if workers <= 1 or len(tasks) <= 1:
        return [_run_cell_args(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_args, tasks))


# -- output -----------------------------------------------------------------

def atomic_write(path, data) -> None:
    """Write to a temp file next to ``path`` and rename over it."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
