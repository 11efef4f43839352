"""Over-parameterized distillation: layer matching, auxiliary-core alignment, training loops."""

from __future__ import annotations

import math
import time
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import mpo
from .data import Dataset
from .errors import DataShapeMismatch, NoMatchableLayers, NumericalError, PlanMismatch
from .model import (
    FactoredLinearLayer,
    LayerScheme,
    Mlp,
    Optimizer,
    accuracy,
    added_params,
    contract_model,
    copy_model,
    forward,
    overparameterize,
    overparameterize_svd,
    predict,
)
from .rng import Rng64

METHODS = ("vanilla-kd", "opdf", "svd-op")


@dataclass
class TeacherConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    optimizer: str = "adam"


@dataclass
class OpdfConfig:
    method: str = "opdf"
    temperature: float = 2.0
    alpha: float = 0.5
    lambda_aux: float = 1.0
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    # None selects every hidden layer with an automatic scheme; [] selects none
    schemes: list[LayerScheme] | None = None
    student_hidden: list[int] = field(default_factory=lambda: [16])
    student_activation: str = "tanh"
    normalize_cores: bool = False
    strict_matching: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lambda_aux < 0:
            raise ValueError("lambda_aux must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")


@dataclass
class MetricsRecord:
    epoch: int
    task_loss: float
    kd_loss: float
    aux_loss: float
    total_loss: float
    train_acc: float
    eval_acc: float
    wall_ms: float
    seed: int

    def deterministic_dict(self) -> dict:
        """Every field except wall-clock time."""
        d = asdict(self)
        del d["wall_ms"]
        return d


@dataclass
class LayerMatch:
    pairs: list[tuple[int, int, mpo.MpoPlan]]
    unmatched: list[int]


@dataclass
class EquivalenceCheck:
    epoch: int
    max_abs_logit_diff: float
    argmax_equal: bool


@dataclass
class DistillRunResult:
    metrics: list[MetricsRecord]
    student_factored: Mlp
    student_contracted: Mlp
    student_best: Mlp
    best_epoch: int
    teacher: Mlp
    match: LayerMatch
    original_params: int
    added_params: int
    checks: list[EquivalenceCheck]


def default_schemes(student: Mlp) -> list[LayerScheme]:
    """An automatic two-factor scheme with one (1, 1) pair for every hidden layer."""
    out = []
    for k, layer in enumerate(student.layers[:-1]):
        ins, outs = mpo.auto_scheme(layer.in_dim, layer.out_dim, ones=1)
        out.append(LayerScheme(k, ins, outs))
    return out


def match_layers(
    student: Mlp,
    teacher: Mlp,
    schemes: Sequence[LayerScheme],
    lambda_aux: float = 0.0,
    strict: bool = False,
) -> LayerMatch:
    """Pair each scheme's student layer with a same-shape teacher layer.

    Within a group of equal weight shapes, the k-th (1-based) student layer maps
    to teacher layer ``ceil(k * T / S)`` of that group, where S and T count the
    group's student and teacher layers.  Student layers without a same-shape
    teacher layer are reported as unmatched.
    """
    teacher_groups = defaultdict(list)
    for t, layer in enumerate(teacher.layers):
        teacher_groups[(layer.in_dim, layer.out_dim)].append(t)
    student_groups = defaultdict(list)
    for s in schemes:
        layer = student.layers[s.layer]
        student_groups[(layer.in_dim, layer.out_dim)].append(s)
    pairs, unmatched = [], []
    for shape, group in student_groups.items():
        candidates = teacher_groups.get(shape, [])
        if not candidates:
            unmatched.extend(s.layer for s in group)
            continue
        S, T = len(group), len(candidates)
        for k, s in enumerate(group, start=1):
            t = candidates[math.ceil(k * T / S) - 1]
            p = mpo.plan(shape[0], shape[1], s.in_dims, s.out_dims, s.bond_cap)
            pairs.append((s.layer, t, p))
    pairs.sort(key=lambda x: x[0])
    unmatched.sort()
    if unmatched:
        warnings.warn(f"student layers {unmatched} have no same-shape teacher layer; no alignment term")
    if not pairs and lambda_aux > 0 and strict:
        raise NoMatchableLayers("no student layer has a same-shape teacher layer")
    return LayerMatch(pairs, unmatched)


def aux_loss(pairs: Sequence[tuple[Sequence[ad.Node], Sequence[np.ndarray]]]) -> ad.Node:
    """Mean over matched matrices of the mean MSE between paired auxiliary cores.

    Each pair is (student core nodes, teacher core arrays).  Central cores are left
    out, so the alignment term never sends gradient to a student central core.
    """
    terms = []
    for student_cores, teacher_cores in pairs:
        s_shapes = [c.shape for c in student_cores]
        t_shapes = [np.shape(c) for c in teacher_cores]
        if s_shapes != t_shapes:
            raise PlanMismatch(f"student cores {s_shapes} vs teacher cores {t_shapes}")
        center = mpo.central_index_of(teacher_cores)
        mses = [
            ad.mse_loss(sc, ad.constant(tc))
            for k, (sc, tc) in enumerate(zip(student_cores, teacher_cores))
            if k != center
        ]
        terms.append(ad.scalar_mul(ad.add_n(mses), 1.0 / len(mses)) if mses else ad.constant(0.0))
    if not terms:
        return ad.constant(0.0)
    return ad.scalar_mul(ad.add_n(terms), 1.0 / len(terms))


def total_loss(task: ad.Node, kd: ad.Node, aux: ad.Node, cfg: OpdfConfig) -> ad.Node:
    return ad.add_n([
        ad.scalar_mul(task, 1.0 - cfg.alpha),
        ad.scalar_mul(kd, cfg.alpha),
        ad.scalar_mul(aux, cfg.lambda_aux),
    ])


def _check_data(data: Dataset, model: Mlp | None = None) -> None:
    if data.x_train.ndim != 2 or data.x_train.shape[0] != data.y_train.shape[0]:
        raise DataShapeMismatch("train features and labels disagree in length")
    if data.x_eval.ndim != 2 or data.x_eval.shape[0] != data.y_eval.shape[0]:
        raise DataShapeMismatch("eval features and labels disagree in length")
    if data.x_eval.shape[1] != data.x_train.shape[1]:
        raise DataShapeMismatch("train and eval feature widths differ")
    if model is not None and model.input_dim != data.input_dim:
        raise DataShapeMismatch(f"model expects {model.input_dim} features, data has {data.input_dim}")
    if model is not None and model.class_count < data.class_count:
        raise DataShapeMismatch(f"model has {model.class_count} classes, data needs {data.class_count}")


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_teacher(cfg: TeacherConfig, data: Dataset, seed: int) -> tuple[Mlp, list[MetricsRecord]]:
    """Supervised cross-entropy training; with zero epochs one epoch-0 record is emitted."""
    _check_data(data)
    rng = Rng64(seed)
    widths = [data.input_dim, *cfg.hidden, data.class_count]
    model = Mlp.build(widths, cfg.activation, rng.child("init.teacher"))
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    params = model.parameters()
    n = len(data.y_train)
    records = []
    if cfg.epochs == 0:
        t0 = time.perf_counter()
        loss = float(ad.softmax_ce_loss(forward(model, data.x_train), data.y_train).value)
        records.append(MetricsRecord(
            0, loss, 0.0, 0.0, loss,
            accuracy(model, data.x_train, data.y_train), accuracy(model, data.x_eval, data.y_eval),
            (time.perf_counter() - t0) * 1e3, seed,
        ))
        return model, records
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.child(f"shuffle.teacher.{epoch}").permutation(n)
        task_sum = 0.0
        for idx in _batches(n, cfg.batch_size, order):
            loss = ad.softmax_ce_loss(forward(model, data.x_train[idx]), data.y_train[idx])
            ad.backward(loss)
            opt.step(params)
            model.zero_grad()
            task_sum += float(loss.value) * len(idx)
        task = task_sum / n
        records.append(MetricsRecord(
            epoch, task, 0.0, 0.0, task,
            accuracy(model, data.x_train, data.y_train), accuracy(model, data.x_eval, data.y_eval),
            (time.perf_counter() - t0) * 1e3, seed,
        ))
    return model, records


def equivalence_check(factored: Mlp, x: np.ndarray, epoch: int) -> EquivalenceCheck:
    a = predict(factored, x)
    b = predict(contract_model(factored), x)
    return EquivalenceCheck(
        epoch,
        float(np.max(np.abs(a - b))),
        bool(np.array_equal(np.argmax(a, axis=1), np.argmax(b, axis=1))),
    )


def prepare_student(cfg: OpdfConfig, teacher: Mlp, data: Dataset):
    """Build the student and its training parameterization.

    Returns (plain student, trainable student, layer match, teacher core constants per pair).
    """
    rng = Rng64(cfg.seed)
    widths = [data.input_dim, *cfg.student_hidden, data.class_count]
    student = Mlp.build(widths, cfg.student_activation, rng.child("init.student"))
    schemes = default_schemes(student) if cfg.schemes is None else list(cfg.schemes)
    match = LayerMatch([], [])
    teacher_cores: list[list[np.ndarray]] = []
    if cfg.method == "opdf":
        match = match_layers(student, teacher, schemes, cfg.lambda_aux, cfg.strict_matching)
        trainable = overparameterize(student, schemes, normalize=cfg.normalize_cores)
        for _, t, p in match.pairs:
            f = mpo.decompose(teacher.layers[t].dense_weight(), p, normalize=cfg.normalize_cores)
            teacher_cores.append(f.cores)
    elif cfg.method == "svd-op":
        trainable = overparameterize_svd(student, [s.layer for s in schemes])
    else:
        trainable = copy_model(student)
    return student, trainable, match, teacher_cores


def distill(cfg: OpdfConfig, teacher: Mlp, data: Dataset) -> DistillRunResult:
    """Train an (optionally over-parameterized) student against a frozen teacher, then contract it."""
    _check_data(data, teacher)
    student, trainable, match, teacher_cores = prepare_student(cfg, teacher, data)
    teacher_logits = predict(teacher, data.x_train)
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    params = trainable.parameters()
    aligned = [trainable.layers[s] for s, _, _ in match.pairs]
    rng = Rng64(cfg.seed)
    n = len(data.y_train)
    checks = [equivalence_check(trainable, data.x_eval, 0)]
    mid = max(1, cfg.epochs // 2)
    records: list[MetricsRecord] = []
    best, best_epoch, best_acc = copy_model(trainable), 0, -1.0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.child(f"shuffle.{epoch}").permutation(n)
        sums = np.zeros(4)
        for idx in _batches(n, cfg.batch_size, order):
            logits = forward(trainable, data.x_train[idx])
            task = ad.softmax_ce_loss(logits, data.y_train[idx])
            kd = ad.kl_distill_loss(logits, teacher_logits[idx], cfg.temperature)
            aux = aux_loss([(layer.cores, tc) for layer, tc in zip(aligned, teacher_cores)])
            total = total_loss(task, kd, aux, cfg)
            ad.backward(total)
            opt.step(params)
            trainable.zero_grad()
            sums += len(idx) * np.array([task.value, kd.value, aux.value, total.value], dtype=np.float64)
        task_l, kd_l, aux_l, total_l = (float(v) for v in sums / n)
        if not all(math.isfinite(v) for v in (task_l, kd_l, aux_l, total_l)):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        eval_acc = accuracy(trainable, data.x_eval, data.y_eval)
        records.append(MetricsRecord(
            epoch, task_l, kd_l, aux_l, total_l,
            accuracy(trainable, data.x_train, data.y_train), eval_acc,
            (time.perf_counter() - t0) * 1e3, cfg.seed,
        ))
        if eval_acc > best_acc:
            best, best_epoch, best_acc = copy_model(trainable), epoch, eval_acc
        if epoch == mid and epoch != cfg.epochs:
            checks.append(equivalence_check(trainable, data.x_eval, epoch))
    contracted = contract_model(trainable)
    checks.append(equivalence_check(trainable, data.x_eval, cfg.epochs))
    bad = [c for c in checks if not c.argmax_equal]
    if bad:
        raise NumericalError(f"factored and contracted students disagree at epochs {[c.epoch for c in bad]}")
    return DistillRunResult(
        metrics=records,
        student_factored=trainable,
        student_contracted=contracted,
        student_best=best,
        best_epoch=best_epoch,
        teacher=teacher,
        match=match,
        original_params=student.num_params(),
        added_params=added_params(trainable),
        checks=checks,
    )
