"""Experiment configuration, the federated round loop, and parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import metrics
from .data import Dataset, load_csv, partition_dirichlet, partition_iid, split_tasks, synth_blobs
from .errors import ConfigError, FCLError, UndefinedMetricError
from .federation import (
    ServerKind,
    ServerOptState,
    StragglerPolicy,
    Weighting,
    aggregate_pseudo_gradient,
    apply_stragglers,
    comm_bytes,
    local_train,
    server_step,
)
from .metrics import AccuracyMatrix, DriftSeries
from .model import BackboneSpec, GlobalModel, adapter_layout, init_model
from .numerics import (
    PURPOSE_DATA,
    PURPOSE_INIT,
    PURPOSE_PARTITION,
    PURPOSE_SPLIT,
    PURPOSE_STRAGGLER,
    PURPOSE_TRAIN,
    derive_stream,
    layout_size,
)
from .schedule import OrderingCase, Schedule, build_schedule, dump_schedule, participants, schedule_stream
from .svg import emit_svg


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synthetic"  # "synthetic" or a CSV path
    classes: int = 20
    dim: int = 32
    per_class: int = 100
    spread: float = 0.45
    test_fraction: float = 0.2
    shuffle_classes: bool = False
    # federation
    tasks: int = 10
    clients: int = 5
    rounds: int = 300
    local_epochs: int = 2
    case: str = "async_fcl"
    client_lr: float = 0.05
    batch_size: int = 4  # 0 means full batch
    server: str = "fedadam"
    eta: float = 0.5
    beta1: float | None = None  # None: 0.9 for adaptive kinds, 0 for fedsgd
    beta2: float = 0.99
    tau: float = 1e-3
    weighting: str = "sample_weighted"
    partition: str = "iid"
    alpha: float = 1.0
    drop_prob: float = 0.0
    # model
    layer_dims: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    skip_window: int = 1
    # output
    bwt_mode: str = "literal"
    seed: int = 0
    output_dir: str | None = None
    emit_svg: bool = False

    @property
    def Q(self) -> int:
        return self.rounds // self.tasks

    @property
    def server_beta1(self) -> float:
        if self.beta1 is not None:
            return self.beta1
        return 0.0 if self.server == ServerKind.FEDSGD.value else 0.9

    def validate(self) -> "ExperimentConfig":
        for name in ("tasks", "clients", "rounds", "local_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.rounds % self.tasks:
            raise ConfigError(f"rounds: {self.rounds} is not divisible by tasks={self.tasks}")
        for name in ("eta", "spread"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not self.client_lr >= 0:  # zero gives a no-training baseline
            raise ConfigError("client_lr must be >= 0")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if not 0 <= self.drop_prob <= 1:
            raise ConfigError("drop_prob must lie in [0, 1]")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.partition not in ("iid", "dirichlet"):
            raise ConfigError(f"partition: unknown value {self.partition!r}")
        if self.partition == "dirichlet" and not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.bwt_mode not in ("literal", "boundary"):
            raise ConfigError(f"bwt_mode: unknown value {self.bwt_mode!r}")
        try:
            self.case = OrderingCase.parse(self.case).value
            ServerKind(self.server)
            Weighting(self.weighting)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.dataset == "synthetic" and self.classes % self.tasks:
            raise ConfigError(f"classes: {self.classes} is not divisible by tasks={self.tasks}")
        ServerOptState(ServerKind(self.server), self.eta, self.server_beta1, self.beta2, self.tau)
        BackboneSpec(self.dim, self.layer_dims, self.activation, self.skip_window)
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}

AXIS_ALIASES = {
    "eta": "eta", "η": "eta",
    "mu": "client_lr", "μ": "client_lr", "client_lr": "client_lr",
    "K": "local_epochs", "local_epochs": "local_epochs",
    "R": "rounds", "rounds": "rounds",
    "N": "clients", "clients": "clients",
    "alpha": "alpha",
    "drop_prob": "drop_prob",
    "server": "server",
    "case": "case",
}


def _coerce(key: str, value: Any) -> Any:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = _FIELD_TYPES[key]
    bad = ConfigError(f"{key}: expected {kind}, got {value!r}")
    if value is None:
        if "None" in kind:
            return None
        raise bad
    if kind.startswith("bool"):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise bad
    if kind.startswith("int"):
        if isinstance(value, bool):
            raise bad
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                raise bad from None
        raise bad
    if kind.startswith("float"):
        if isinstance(value, bool):
            raise bad
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise bad from None
        raise bad
    if kind.startswith("tuple"):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        if isinstance(value, (list, tuple)):
            try:
                return tuple(int(v) for v in value)
            except (TypeError, ValueError):
                raise bad from None
        raise bad
    if not isinstance(value, str):
        raise bad
    return value


def parse_config_text(text: str, suffix: str = "") -> dict[str, Any]:
    if not text.strip():
        return {}
    if suffix == ".json" or text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML config: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a flat key-value document")
    for k, v in doc.items():
        if isinstance(v, dict):
            raise ConfigError(f"{k}: nested tables are not supported")
    return doc


def load_config(path: str | Path | None = None, cli_overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Build a config from file values, then command-line overrides, over the defaults."""
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        values.update(parse_config_text(p.read_text(), p.suffix))
    values.update({k: v for k, v in (cli_overrides or {}).items() if v is not None})
    kwargs = {k: _coerce(k, v) for k, v in values.items()}
    return ExperimentConfig(**kwargs).validate()


@dataclass
class RunResult:
    acc: float
    bwt_f: float | None
    total_c2s_bytes: int
    total_s2c_bytes: int
    per_task_final: list[float]
    paths: dict[str, Path]
    wall_seconds: float
    accuracy: AccuracyMatrix = field(repr=False)
    drift: DriftSeries = field(repr=False)
    updated: np.ndarray = field(repr=False)  # T x R, task received a server step
    model: GlobalModel = field(repr=False)
    schedule: Schedule = field(repr=False)
    epochs_per_client: list[int] = field(repr=False)

    def summary(self, config: ExperimentConfig) -> dict[str, Any]:
        return {
            "acc": self.acc,
            "bwt_f": self.bwt_f,
            "bwt_mode": config.bwt_mode,
            "per_task_final": self.per_task_final,
            "total_c2s_bytes": self.total_c2s_bytes,
            "total_s2c_bytes": self.total_s2c_bytes,
            "config_echo": config.to_dict(),
            "master_seed": config.seed,
        }


def build_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "synthetic":
        rng = derive_stream(config.seed, 0, 0, PURPOSE_DATA)
        return synth_blobs(config.classes, config.dim, config.per_class, config.spread, rng)
    return load_csv(config.dataset)


RoundHook = Callable[[int, GlobalModel], None]


def run_experiment(config: ExperimentConfig, round_hook: RoundHook | None = None) -> RunResult:
    """Run the full federated continual-learning loop for one config and seed."""
    t0 = time.perf_counter()
    config.validate()
    seed = config.seed
    ds = build_dataset(config)
    split = split_tasks(ds, config.tasks, config.test_fraction, derive_stream(seed, 0, 0, PURPOSE_SPLIT),
                        shuffle_classes=config.shuffle_classes)
    prng = derive_stream(seed, 0, 0, PURPOSE_PARTITION)
    if config.partition == "iid":
        part = partition_iid(split, config.clients, prng)
    else:
        part = partition_dirichlet(split, config.clients, config.alpha, prng)

    spec = BackboneSpec(ds.dim, config.layer_dims, config.activation, config.skip_window)
    model = init_model(spec, config.tasks, split.classes_per_task, derive_stream(seed, 0, 0, PURPOSE_INIT))
    schedule = build_schedule(config.rounds, config.tasks, config.clients, config.case, schedule_stream(seed))
    state = ServerOptState(ServerKind(config.server), config.eta, config.server_beta1, config.beta2, config.tau)
    policy = StragglerPolicy(config.drop_prob)
    weighting = Weighting(config.weighting)
    adapter_size = layout_size(adapter_layout(spec, split.classes_per_task))

    T, R, N, K = config.tasks, config.rounds, config.clients, config.local_epochs
    A = AccuracyMatrix(T, R)
    drift = DriftSeries(T)
    updated = np.zeros((T, R), dtype=bool)
    comm_rows: list[tuple[int, int]] = []
    epochs = [0] * N
    shards = {
        key: (split[key[0]].train.X[idx], split[key[0]].train.y[idx]) for key, idx in part.shards.items()
    }

    for r in range(1, R + 1):
        survivors = apply_stragglers(range(N), policy, derive_stream(seed, r, 0, PURPOSE_STRAGGLER))
        groups = participants(schedule, r, survivors)
        new_model = model
        round_updates = []
        samples = []
        for t, clients in groups.items():
            task_updates = []
            for c in clients:
                try:
                    res = local_train(model, t, shards[(t, c)], K, config.client_lr, config.batch_size,
                                      derive_stream(seed, r, c, PURPOSE_TRAIN), client_id=c)
                except FCLError as exc:
                    raise type(exc)(f"round {r}, client {c}, task {t}: {exc}") from exc
                if res is None:
                    continue
                update, drift_samples = res
                task_updates.append(update)
                samples.append(drift_samples)
                epochs[c] += K
            g = aggregate_pseudo_gradient(task_updates, weighting)
            if g is None:
                continue
            state, vec = server_step(state, model.adapter_vector(t), t, g)
            new_model = new_model.with_adapter_vector(t, vec)
            updated[t, r - 1] = True
            round_updates.extend(task_updates)
        comm_rows.append(comm_bytes(round_updates, adapter_size, recipients=len(survivors)))
        cos = metrics.cosine_drift(model, new_model)
        model = new_model
        metrics.record_round(A, r, model, split)
        drift.append(metrics.round_drift(samples, K), cos)
        if round_hook is not None:
            round_hook(r, model)

    final_acc = metrics.acc(A)
    try:
        bwt = metrics.bwt_f(A, config.Q, config.bwt_mode)
    except UndefinedMetricError:
        bwt = None
    result = RunResult(
        acc=final_acc,
        bwt_f=bwt,
        total_c2s_bytes=sum(c for c, _ in comm_rows),
        total_s2c_bytes=sum(s for _, s in comm_rows),
        per_task_final=[float(v) for v in A.A[:, -1]],
        paths={},
        wall_seconds=0.0,
        accuracy=A,
        drift=drift,
        updated=updated,
        model=model,
        schedule=schedule,
        epochs_per_client=epochs,
    )
    if config.output_dir is not None:
        result.paths = write_outputs(config, result, comm_rows, part)
    result.wall_seconds = time.perf_counter() - t0
    return result


def write_outputs(config: ExperimentConfig, result: RunResult, comm_rows, part) -> dict[str, Path]:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "accuracy_matrix": out / "accuracy_matrix.csv",
        "drift": out / "drift.csv",
        "comm": out / "comm.csv",
        "summary": out / "summary.json",
        "schedule": out / "schedule.json",
        "partition": out / "partition.json",
    }
    result.accuracy.write_csv(paths["accuracy_matrix"])
    result.drift.write_csv(paths["drift"])
    with open(paths["comm"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "c2s_bytes", "s2c_bytes"])
        for r, (c2s, s2c) in enumerate(comm_rows, start=1):
            w.writerow([r, c2s, s2c])
    paths["summary"].write_text(json.dumps(result.summary(config), indent=2, sort_keys=True) + "\n")
    dump_schedule(result.schedule, paths["schedule"])
    part.write_manifest(paths["partition"])
    if config.emit_svg:
        acc_series = {f"task {t + 1}": list(result.accuracy.A[t]) for t in range(config.tasks)}
        paths["accuracy_svg"] = emit_svg(acc_series, out / "accuracy.svg", title="Test accuracy per task",
                                         ylabel="accuracy")
        cos = result.drift.cosine_matrix()
        cos_series = {f"task {t + 1}": list(cos[t]) for t in range(config.tasks)}
        paths["drift_svg"] = emit_svg(cos_series, out / "cosine_drift.svg",
                                      title="Consecutive-round cosine distance", ylabel="cosine distance")
    return paths


def sweep(
    base: ExperimentConfig, axis: str, values: Sequence[Any], seeds: Sequence[int],
    output_dir: str | Path | None = None,
) -> list[dict[str, Any]]:
    """Run every (value, seed) pair; rows come back sorted by value then seed."""
    if axis not in AXIS_ALIASES:
        raise ConfigError(f"axis {axis!r} is not sweepable (choose from {sorted(set(AXIS_ALIASES.values()))})")
    key = AXIS_ALIASES[axis]
    rows = []
    for value in values:
        v = _coerce(key, value)
        for seed in seeds:
            changes: dict[str, Any] = {key: v, "seed": int(seed)}
            if key == "alpha":
                changes["partition"] = "dirichlet"
            run_dir = None if output_dir is None else str(Path(output_dir) / f"{key}={v}" / f"seed={seed}")
            changes["output_dir"] = run_dir
            cfg = dataclasses.replace(base, **changes).validate()
            res = run_experiment(cfg)
            rows.append({"axis": key, "value": v, "seed": int(seed), "acc": res.acc, "bwt_f": res.bwt_f})
    rows.sort(key=lambda row: (row["value"], row["seed"]))
    if output_dir is not None:
        write_sweep_csv(rows, Path(output_dir) / "sweep.csv")
    return rows


def write_sweep_csv(rows: Sequence[Mapping[str, Any]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "seed", "acc", "bwt_f"])
        for row in rows:
            w.writerow([row["axis"], row["value"], row["seed"], metrics.fmt(row["acc"]), metrics.fmt(row["bwt_f"])])
