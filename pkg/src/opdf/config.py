"""Experiment configuration: strict JSON parsing, defaults, overrides, echo."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .distill import METHODS, OpdfConfig, TeacherConfig
from .errors import ConfigError
from .model import ACTIVATIONS, LayerScheme

REFERENCE_TASK = {
    "generator": "gaussian-blobs",
    "n_train": 2000,
    "n_eval": 500,
    "classes": 3,
    "dim": 2,
    "sigma": 0.7,
    "radius": 1.0,
}


@dataclass
class StudentSpec:
    hidden: list[int] = field(default_factory=lambda: [16])
    activation: str = "tanh"


@dataclass
class SchemeSpec:
    layer: int
    in_dims: list[int]
    out_dims: list[int]
    bond_cap: int | None = None


@dataclass
class DistillSpec:
    temperature: float = 2.0
    alpha: float = 0.5
    lambda_aux: float = 1.0
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.01
    optimizer: str = "adam"
    normalize_cores: bool = False
    strict_matching: bool = False
    schemes: list[SchemeSpec] | None = None


@dataclass
class ExperimentConfig:
    method: str = "opdf"
    seed: int = 0
    output_dir: str | None = None
    task: dict = field(default_factory=lambda: dict(REFERENCE_TASK))
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentSpec = field(default_factory=StudentSpec)
    distill: DistillSpec = field(default_factory=DistillSpec)

    def validate(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for who, act in (("teacher", self.teacher.activation), ("student", self.student.activation)):
            if act not in ACTIVATIONS:
                raise ConfigError(f"{who}.activation must be one of {ACTIVATIONS}")
        if "csv" not in self.task and "generator" not in self.task:
            raise ConfigError("task needs either 'generator' or 'csv'")
        try:
            self.opdf_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def opdf_config(self) -> OpdfConfig:
        d = self.distill
        schemes = None
        if d.schemes is not None:
            schemes = [LayerScheme(s.layer, tuple(s.in_dims), tuple(s.out_dims), s.bond_cap) for s in d.schemes]
        return OpdfConfig(
            method=self.method,
            temperature=d.temperature,
            alpha=d.alpha,
            lambda_aux=d.lambda_aux,
            epochs=d.epochs,
            batch_size=d.batch_size,
            learning_rate=d.learning_rate,
            optimizer=d.optimizer,
            seed=self.seed,
            schemes=schemes,
            student_hidden=list(self.student.hidden),
            student_activation=self.student.activation,
            normalize_cores=d.normalize_cores,
            strict_matching=d.strict_matching,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TYPES = {
    "ExperimentConfig": ExperimentConfig,
    "TeacherConfig": TeacherConfig,
    "StudentSpec": StudentSpec,
    "DistillSpec": DistillSpec,
    "SchemeSpec": SchemeSpec,
}


def _coerce(value: Any, annotation: str, where: str):
    ann = annotation.replace(" ", "")
    optional = ann.endswith("|None")
    if optional:
        if value is None:
            return None
        ann = ann[: -len("|None")]
    if ann in _TYPES:
        return _build(_TYPES[ann], value, where)
    if ann.startswith("list["):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        inner = ann[5:-1]
        return [_coerce(v, inner, f"{where}[{k}]") for k, v in enumerate(value)]
    if ann == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return copy.deepcopy(value)
    if ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if ann == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if ann == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if ann == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    raise ConfigError(f"{where}: unsupported field type {annotation}")


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, str(fields[name].type), f"{where}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config").validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.key=json_value`` overrides; bare strings are accepted as strings."""
    data = cfg.to_dict()
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"override {key!r}: '{part}' is not a section")
            node = node[part]
        node[parts[-1]] = value
    return from_dict(data)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def reference_config(method: str = "opdf", seed: int = 0) -> ExperimentConfig:
    """The desk-scale reference experiment: 3-class blobs, 2-64-64-3 teacher, 2-16-3 student."""
    return from_dict({
        "method": method,
        "seed": seed,
        "task": dict(REFERENCE_TASK),
        "teacher": {"hidden": [64, 64], "activation": "tanh", "epochs": 30,
                    "batch_size": 64, "learning_rate": 0.01, "optimizer": "adam"},
        "student": {"hidden": [16], "activation": "tanh"},
        "distill": {
            "temperature": 2.0, "alpha": 0.5, "lambda_aux": 1.0, "epochs": 50,
            "batch_size": 64, "learning_rate": 0.01, "optimizer": "adam",
            "schemes": [
                {"layer": 0, "in_dims": [2, 1, 1], "out_dims": [4, 1, 4]},
                {"layer": 1, "in_dims": [4, 1, 4], "out_dims": [1, 1, 3]},
            ],
        },
    })
