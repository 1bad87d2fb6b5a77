"""Experiment harness: config parsing, baseline orchestration, artifact export.

A :class:`RunConfig` describes one experiment: a dataset source, a
(d, c_i, n_ij) partition, protocol parameters, and the methods to compare.
:func:`run_experiment` runs every requested method on the *same* partition
and holdout, collects convergence histories, and optionally writes
deterministic artifacts (history CSVs, a summary JSON, the communication
ledger, and model checkpoints).
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bus import CommLedger
from .datahub import (
    Block,
    CsvSchema,
    LabeledTable,
    PartitionedDataset,
    Task,
    load_csv,
    load_idx_images,
    partition_iid,
)
from .errors import ConfigError, ParameterError
from .nnet import MlpModel, TrainConfig, evaluate, init_model, save_model, train_local
from .protocol import ProtocolConfig, run_dc_baseline, run_feddcl, run_federated
from .rng import RngStream
from .synth import SynthSpec, synth_dataset

METHOD_CENTRALIZED = "centralized"
METHOD_LOCAL = "local"
METHOD_FEDAVG = "fedavg"
METHOD_DC = "dc"
METHOD_FEDDCL = "feddcl"
ALL_METHODS = (METHOD_CENTRALIZED, METHOD_LOCAL, METHOD_FEDAVG, METHOD_DC, METHOD_FEDDCL)

# methods whose history has one snapshot per epoch vs one per round
_PER_EPOCH = {METHOD_CENTRALIZED, METHOD_LOCAL, METHOD_DC}


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one experiment run."""

    dataset: dict
    d: int
    c: tuple[int, ...]
    n_ij: int
    m_tilde: int
    hidden: tuple[int, ...]
    m_hat: int | None = None
    r: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.01
    epochs: int = 40
    rounds: int = 20
    epochs_per_round: int = 4
    methods: tuple[str, ...] = ALL_METHODS
    test_samples: int = 1000
    master_seed: int = 0
    partition_seed: int | None = None
    anchor_seed: int | None = None
    mapping_seed: int | None = None
    e1_seed: int | None = None
    e2_seed: int | None = None
    out_dir: str | None = None

    def root_stream(self) -> RngStream:
        return RngStream(self.master_seed)

    @property
    def m_hat_effective(self) -> int:
        return self.m_tilde if self.m_hat is None else self.m_hat

    @property
    def n_institutions(self) -> int:
        return sum(self.c)

    def train_rows_needed(self) -> int:
        return self.n_ij * self.n_institutions

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        out["c"] = list(self.c)
        out["hidden"] = list(self.hidden)
        out["methods"] = list(self.methods)
        return out


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def config_from_dict(raw: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig` from a parsed JSON object."""
    _require(isinstance(raw, dict), "<root>", "config must be a JSON object")
    dataset = raw.get("dataset")
    _require(isinstance(dataset, dict), "dataset", "must be an object")
    kind = dataset.get("kind")
    _require(kind in ("synthetic", "csv", "idx"), "dataset.kind",
             f"must be one of synthetic/csv/idx, got {kind!r}")
    if kind == "synthetic":
        task = dataset.get("task")
        _require(task in ("regression", "classification"), "dataset.task",
                 f"must be regression or classification, got {task!r}")
        if task == "classification":
            _require(isinstance(dataset.get("classes"), int) and dataset["classes"] >= 2,
                     "dataset.classes", "classification needs classes >= 2")
    elif kind == "csv":
        for key in ("path", "target", "task"):
            _require(key in dataset, f"dataset.{key}", "required for csv datasets")
    else:
        for key in ("images", "labels"):
            _require(key in dataset, f"dataset.{key}", "required for idx datasets")

    partition = raw.get("partition")
    _require(isinstance(partition, dict), "partition", "must be an object")
    d = partition.get("d")
    _require(isinstance(d, int) and d >= 1, "partition.d", "must be an integer >= 1")
    c_raw = partition.get("c")
    if isinstance(c_raw, int):
        c = tuple([c_raw] * d)
    elif isinstance(c_raw, list) and all(isinstance(v, int) for v in c_raw):
        c = tuple(c_raw)
    else:
        raise ConfigError("partition.c: must be an integer or a list of integers")
    _require(len(c) == d, "partition.c", f"needs {d} entries, got {len(c)}")
    _require(all(ci >= 1 for ci in c), "partition.c", "every group needs >= 1 institution")
    n_ij = partition.get("n_ij")
    _require(isinstance(n_ij, int) and n_ij >= 1, "partition.n_ij",
             "must be an integer >= 1")

    mapping = raw.get("mapping", {})
    m_tilde = mapping.get("m_tilde")
    _require(isinstance(m_tilde, int) and m_tilde >= 1, "mapping.m_tilde",
             "must be an integer >= 1")
    alignment = raw.get("alignment", {})
    m_hat = alignment.get("m_hat")
    _require(m_hat is None or (isinstance(m_hat, int) and m_hat >= 1),
             "alignment.m_hat", "must be an integer >= 1 when given")

    anchor = raw.get("anchor", {})
    r = anchor.get("r", 2000)
    _require(isinstance(r, int) and r >= 1, "anchor.r", "must be an integer >= 1")

    network = raw.get("network", {})
    hidden_raw = network.get("hidden", [])
    _require(isinstance(hidden_raw, list) and all(isinstance(h, int) and h >= 1
                                                  for h in hidden_raw),
             "network.hidden", "must be a list of integers >= 1")

    training = raw.get("training", {})
    batch_size = training.get("batch_size", 32)
    learning_rate = training.get("learning_rate", 0.01)
    epochs = training.get("epochs", 40)
    rounds = training.get("rounds", 20)
    epochs_per_round = training.get("epochs_per_round", 4)
    _require(isinstance(batch_size, int) and batch_size >= 1,
             "training.batch_size", "must be an integer >= 1")
    _require(isinstance(learning_rate, (int, float)) and learning_rate > 0,
             "training.learning_rate", "must be > 0")
    for name, val in (("epochs", epochs), ("rounds", rounds),
                      ("epochs_per_round", epochs_per_round)):
        _require(isinstance(val, int) and val >= 1, f"training.{name}",
                 "must be an integer >= 1")

    methods_raw = raw.get("methods", list(ALL_METHODS))
    _require(isinstance(methods_raw, list), "methods", "must be a list")
    for m in methods_raw:
        _require(m in ALL_METHODS, "methods", f"unknown method {m!r}")

    test_samples = raw.get("test_samples", 1000)
    _require(isinstance(test_samples, int) and test_samples >= 1, "test_samples",
             "must be an integer >= 1")
    master_seed = raw.get("master_seed", 0)
    _require(isinstance(master_seed, int) and master_seed >= 0, "master_seed",
             "must be an integer >= 0")

    return RunConfig(
        dataset=dict(dataset),
        d=d,
        c=c,
        n_ij=n_ij,
        m_tilde=m_tilde,
        hidden=tuple(hidden_raw),
        m_hat=m_hat,
        r=r,
        batch_size=batch_size,
        learning_rate=float(learning_rate),
        epochs=epochs,
        rounds=rounds,
        epochs_per_round=epochs_per_round,
        methods=tuple(methods_raw),
        test_samples=test_samples,
        master_seed=master_seed,
        partition_seed=partition.get("seed"),
        anchor_seed=anchor.get("seed"),
        mapping_seed=mapping.get("seed"),
        e1_seed=alignment.get("e1_seed"),
        e2_seed=alignment.get("e2_seed"),
        out_dir=raw.get("out_dir"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def _build_table(config: RunConfig) -> tuple[LabeledTable, LabeledTable | None]:
    """Returns (train table, explicit test table or None)."""
    ds = config.dataset
    kind = ds["kind"]
    if kind == "synthetic":
        task = (Task.regression() if ds["task"] == "regression"
                else Task.classification(ds["classes"]))
        n = ds.get("n")
        if n is None:
            n = config.train_rows_needed() + config.test_samples
        seed = ds.get("seed")
        if seed is None:
            seed = config.root_stream().child("dataset").seed
        spec = SynthSpec(
            n=n, m=ds["m"], task=task, noise=ds.get("noise", 0.0), seed=seed,
            latent=ds.get("latent"), link=ds.get("link", "tanh"),
            feature_noise=ds.get("feature_noise", 0.02),
            scale_floor=ds.get("scale_floor", 0.3),
        )
        return synth_dataset(spec), None
    if kind == "csv":
        schema = CsvSchema(target=ds["target"], task=ds["task"],
                           features=tuple(ds["features"]) if ds.get("features") else None)
        return load_csv(ds["path"], schema), None
    train = load_idx_images(ds["images"], ds["labels"],
                            num_classes=ds.get("classes", 10))
    test = None
    if ds.get("test_images") and ds.get("test_labels"):
        test = load_idx_images(ds["test_images"], ds["test_labels"],
                               num_classes=ds.get("classes", 10))
    return train, test


def prepare_partition(config: RunConfig) -> PartitionedDataset:
    """Load the dataset, partition it, and pin the holdout to ``test_samples`` rows."""
    table, test_table = _build_table(config)
    seed = config.partition_seed
    if seed is None:
        seed = config.root_stream().child("partition").seed
    parts = partition_iid(table, config.d, list(config.c), config.n_ij, seed)
    if test_table is not None:
        if test_table.n_rows < config.test_samples:
            raise ConfigError(
                f"test_samples={config.test_samples} exceeds the test table "
                f"({test_table.n_rows} rows)"
            )
        holdout = Block(x=test_table.x[:config.test_samples].copy(),
                        y=test_table.y[:config.test_samples].copy())
    else:
        if parts.holdout.n_rows < config.test_samples:
            raise ConfigError(
                f"test_samples={config.test_samples} exceeds the holdout pool "
                f"({parts.holdout.n_rows} rows); enlarge the dataset"
            )
        holdout = Block(x=parts.holdout.x[:config.test_samples].copy(),
                        y=parts.holdout.y[:config.test_samples].copy())
    return dataclasses.replace(parts, holdout=holdout)


def protocol_config_for(parts: PartitionedDataset, config: RunConfig) -> ProtocolConfig:
    """Protocol-level view of a run config, with layers sized for the data."""
    return ProtocolConfig(
        m_tilde=config.m_tilde,
        layers=(config.m_hat_effective, *config.hidden, parts.n_outputs),
        m_hat=config.m_hat,
        r=config.r,
        rounds=config.rounds,
        epochs_per_round=config.epochs_per_round,
        baseline_epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        master_seed=config.master_seed,
        anchor_seed=config.anchor_seed,
        mapping_seed=config.mapping_seed,
        e1_seed=config.e1_seed,
        e2_seed=config.e2_seed,
    )


@dataclass
class MethodResult:
    """One method's convergence history and final metric on the shared holdout."""

    method: str
    metric_kind: str
    snapshots: list[float]
    final: float
    wall_seconds: float
    partition_fingerprint: str
    epoch_stride: int = 1
    unit_curves: dict[str, list[float]] | None = None
    spread: tuple[float, float] | None = None
    models: dict[str, MlpModel] = field(default_factory=dict)
    ledger: CommLedger | None = None
    report: dict | None = None


def _raw_layers(parts: PartitionedDataset, config: RunConfig) -> tuple[int, ...]:
    return (parts.n_features, *config.hidden, parts.n_outputs)


def _metric_kind(task: Task) -> str:
    return "rmse" if task.kind == "regression" else "accuracy"


def _run_centralized(parts: PartitionedDataset, config: RunConfig,
                     fingerprint: str) -> MethodResult:
    x = np.vstack([b.x for _, _, b in parts.iter_blocks()])
    y = np.vstack([b.y for _, _, b in parts.iter_blocks()])
    root = config.root_stream()
    curve: list[float] = []

    def on_epoch(_, model):
        curve.append(evaluate(model, parts.holdout.x, parts.holdout.y, parts.task).value)

    cfg = TrainConfig(epochs=config.epochs, learning_rate=config.learning_rate,
                      batch_size=config.batch_size,
                      shuffle_seed=root.child("shuffle", "centralized").seed)
    model = train_local(init_model(_raw_layers(parts, config), parts.task.kind,
                                   root.child("init", "centralized").seed),
                        x, y, cfg, on_epoch=on_epoch)
    return MethodResult(
        method=METHOD_CENTRALIZED, metric_kind=_metric_kind(parts.task),
        snapshots=curve, final=curve[-1], wall_seconds=0.0,
        partition_fingerprint=fingerprint, models={"shared": model},
    )


def _run_local(parts: PartitionedDataset, config: RunConfig,
               fingerprint: str) -> MethodResult:
    root = config.root_stream()
    unit_curves: dict[str, list[float]] = {}
    models: dict[str, MlpModel] = {}
    for i, j, block in parts.iter_blocks():
        curve: list[float] = []

        def on_epoch(_, model, curve=curve):
            curve.append(evaluate(model, parts.holdout.x, parts.holdout.y,
                                  parts.task).value)

        cfg = TrainConfig(epochs=config.epochs, learning_rate=config.learning_rate,
                          batch_size=config.batch_size,
                          shuffle_seed=root.child("shuffle", "local", i, j).seed)
        model = train_local(init_model(_raw_layers(parts, config), parts.task.kind,
                                       root.child("init", "local", i, j).seed),
                            block.x, block.y, cfg, on_epoch=on_epoch)
        unit_curves[f"{i}:{j}"] = curve
        models[f"{i}:{j}"] = model
    mean_curve = [float(np.mean([unit_curves[k][e] for k in unit_curves]))
                  for e in range(config.epochs)]
    finals = [unit_curves[k][-1] for k in sorted(unit_curves)]
    return MethodResult(
        method=METHOD_LOCAL, metric_kind=_metric_kind(parts.task),
        snapshots=mean_curve, final=mean_curve[-1], wall_seconds=0.0,
        partition_fingerprint=fingerprint, unit_curves=unit_curves,
        spread=(float(np.min(finals)), float(np.max(finals))), models=models,
    )


def _run_fedavg(parts: PartitionedDataset, config: RunConfig,
                fingerprint: str) -> MethodResult:
    """Conventional federated averaging: every institution is a client."""
    root = config.root_stream()
    xs = [b.x for _, _, b in parts.iter_blocks()]
    ys = [b.y for _, _, b in parts.iter_blocks()]
    curve: list[float] = []

    def on_round(_, model):
        value = evaluate(model, parts.holdout.x, parts.holdout.y, parts.task).value
        curve.append(value)
        return value

    cfg = TrainConfig(epochs=config.epochs_per_round, learning_rate=config.learning_rate,
                      batch_size=config.batch_size,
                      shuffle_seed=root.child("shuffle", "fedavg").seed)
    model, _ = run_federated(xs, ys, _raw_layers(parts, config), config.rounds, cfg,
                             parts.task.kind, root.child("init", "fedavg").seed,
                             on_round=on_round)
    return MethodResult(
        method=METHOD_FEDAVG, metric_kind=_metric_kind(parts.task),
        snapshots=curve, final=curve[-1], wall_seconds=0.0,
        partition_fingerprint=fingerprint, epoch_stride=config.epochs_per_round,
        models={"shared": model},
    )


def _run_dc(parts: PartitionedDataset, config: RunConfig,
            fingerprint: str) -> MethodResult:
    run = run_dc_baseline(parts, protocol_config_for(parts, config))
    curve = [snap.mean for snap in run.history]
    finals = run.history[-1].per_unit
    return MethodResult(
        method=METHOD_DC, metric_kind=run.history[-1].kind,
        snapshots=curve, final=curve[-1], wall_seconds=0.0,
        partition_fingerprint=fingerprint,
        unit_curves={f"{i}:{j}": [s.per_unit[idx] for s in run.history]
                     for idx, (i, j) in enumerate(sorted(run.models))},
        spread=(float(np.min(finals)), float(np.max(finals))),
        models={"shared": run.shared_model},
    )


def _run_feddcl(parts: PartitionedDataset, config: RunConfig,
                fingerprint: str) -> MethodResult:
    run = run_feddcl(parts, protocol_config_for(parts, config))
    curve = [snap.mean for snap in run.history]
    finals = run.history[-1].per_unit
    return MethodResult(
        method=METHOD_FEDDCL, metric_kind=run.history[-1].kind,
        snapshots=curve, final=curve[-1], wall_seconds=0.0,
        partition_fingerprint=fingerprint, epoch_stride=config.epochs_per_round,
        unit_curves={f"{i}:{j}": [s.per_unit[idx] for s in run.history]
                     for idx, (i, j) in enumerate(sorted(run.models))},
        spread=(float(np.min(finals)), float(np.max(finals))),
        models={"shared": run.shared_model},
        ledger=run.ledger, report=run.report(),
    )


_RUNNERS = {
    METHOD_CENTRALIZED: _run_centralized,
    METHOD_LOCAL: _run_local,
    METHOD_FEDAVG: _run_fedavg,
    METHOD_DC: _run_dc,
    METHOD_FEDDCL: _run_feddcl,
}


def run_experiment(config: RunConfig, out_dir=None) -> dict[str, MethodResult]:
    """Run every configured method on one shared partition and holdout.

    Artifacts are written when ``out_dir`` (or ``config.out_dir``) is set.
    Wall-clock seconds live only in the returned objects; written artifacts
    are byte-identical across reruns of the same config.
    """
    parts = prepare_partition(config)
    fingerprint = parts.fingerprint()
    results: dict[str, MethodResult] = {}
    for method in config.methods:
        started = time.perf_counter()
        result = _RUNNERS[method](parts, config, fingerprint)
        result.wall_seconds = time.perf_counter() - started
        expected = config.epochs if method in _PER_EPOCH else config.rounds
        if len(result.snapshots) != expected:
            raise ParameterError(
                f"{method}: expected {expected} snapshots, got {len(result.snapshots)}"
            )
        results[method] = result
    target = out_dir if out_dir is not None else config.out_dir
    if target is not None:
        emit_history(results, target, config=config)
    return results


def emit_history(results: dict[str, MethodResult], out_dir,
                 config: RunConfig | None = None) -> list[Path]:
    """Write one history CSV per method plus a summary JSON; returns the paths.

    Output is deterministic: stable field ordering, repr-formatted floats, no
    timestamps.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for method in sorted(results):
        res = results[method]
        path = out / f"history_{method}.csv"
        lines = ["snapshot_index,epoch_equivalent,metric"]
        for idx, value in enumerate(res.snapshots):
            lines.append(f"{idx},{(idx + 1) * res.epoch_stride},{value!r}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
        for name, model in sorted(res.models.items()):
            suffix = "" if name == "shared" else f"_{name.replace(':', '_')}"
            ckpt = out / f"model_{method}{suffix}.ckpt"
            save_model(model, ckpt)
            written.append(ckpt)
        if res.ledger is not None:
            ledger_path = out / "ledger.csv"
            res.ledger.to_csv(ledger_path)
            written.append(ledger_path)

    summary = {
        "config": config.echo() if config is not None else None,
        "methods": {
            method: {
                "metric": res.metric_kind,
                "final": res.final,
                "snapshots": len(res.snapshots),
                "epoch_stride": res.epoch_stride,
                "spread": list(res.spread) if res.spread else None,
                "unit_finals": ({k: v[-1] for k, v in sorted(res.unit_curves.items())}
                                if res.unit_curves else None),
                "fingerprint": res.partition_fingerprint,
            }
            for method, res in sorted(results.items())
        },
        "protocol": next((res.report for res in results.values()
                          if res.report is not None), None),
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    written.append(summary_path)
    return written
