"""Plain and MPO-factored MLPs, over-parameterization, contraction, optimizers, checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from . import mpo
from . import tensor as tn
from .errors import DimProductMismatch, ExtentMismatch, FormatError
from .rng import Rng64

ACTIVATIONS = ("relu", "tanh", "none")


def _activate(z: ad.Node, activation: str) -> ad.Node:
    if activation == "tanh":
        return ad.tanh(z)
    if activation == "relu":
        return ad.relu(z)
    return z


@dataclass
class LinearLayer:
    weight: ad.Node  # [in, out]
    bias: ad.Node  # [out]
    activation: str = "none"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[ad.Node]:
        return [self.weight, self.bias]

    def dense_weight(self) -> np.ndarray:
        return self.weight.value


@dataclass
class FactoredLinearLayer:
    cores: list[ad.Node]
    bias: ad.Node
    plan: mpo.MpoPlan
    activation: str = "none"
    truncation: list[float] = field(default_factory=list)
    kind: str = "mpo"  # "mpo" or "svd"; bookkeeping only

    @property
    def in_dim(self) -> int:
        return self.plan.rows

    @property
    def out_dim(self) -> int:
        return self.plan.cols

    @property
    def central_index(self) -> int:
        return mpo.central_index_of([c.value for c in self.cores])

    @property
    def factors(self) -> mpo.MpoFactors:
        vals = [c.value.copy() for c in self.cores]
        return mpo.MpoFactors(vals, self.plan, list(self.truncation), mpo.central_index_of(vals))

    def parameters(self) -> list[ad.Node]:
        return list(self.cores) + [self.bias]

    def dense_weight(self) -> np.ndarray:
        return mpo.contract_cores([c.value for c in self.cores])


Layer = Union[LinearLayer, FactoredLinearLayer]


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ExtentMismatch(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[ad.Node]:
        return [p for layer in self.layers for p in layer.parameters()]

    def num_params(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @classmethod
    def build(cls, widths: Sequence[int], activation: str, rng: Rng64) -> "Mlp":
        """Glorot-normal weights, zero biases; the last layer has no activation."""
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            std = math.sqrt(2.0 / (fan_in + fan_out))
            w = rng.normal((fan_in, fan_out)) * std
            act = activation if k < len(widths) - 2 else "none"
            layers.append(LinearLayer(ad.param(w), ad.param(np.zeros(fan_out)), act))
        return cls(layers)


def forward(m: Mlp, x) -> ad.Node:
    """Logits node for a ``[batch, input_dim]`` input; factored weights contract on the fly."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise ExtentMismatch(f"input shape {x.shape} does not fit input width {m.input_dim}")
    h = ad.constant(x)
    for layer in m.layers:
        if isinstance(layer, FactoredLinearLayer):
            w = ad.contract_chain(layer.cores)
        else:
            w = layer.weight
        h = _activate(ad.add_rowwise(ad.matmul(h, w), layer.bias), layer.activation)
    return h


def predict(m: Mlp, x) -> np.ndarray:
    return forward(m, x).value


def accuracy(m: Mlp, x, y) -> float:
    return float(np.mean(np.argmax(predict(m, x), axis=1) == np.asarray(y)))


# -- over-parameterization ------------------------------------------------


@dataclass(frozen=True)
class LayerScheme:
    layer: int
    in_dims: tuple[int, ...]
    out_dims: tuple[int, ...]
    bond_cap: int | None = None


def _copy_layer(layer: Layer) -> Layer:
    if isinstance(layer, FactoredLinearLayer):
        return FactoredLinearLayer(
            [ad.param(c.value) for c in layer.cores],
            ad.param(layer.bias.value),
            layer.plan,
            layer.activation,
            list(layer.truncation),
            layer.kind,
        )
    return LinearLayer(ad.param(layer.weight.value), ad.param(layer.bias.value), layer.activation)


def copy_model(m: Mlp) -> Mlp:
    return Mlp([_copy_layer(layer) for layer in m.layers])


def factored_from(factors: mpo.MpoFactors, bias, activation: str, kind: str = "mpo") -> FactoredLinearLayer:
    return FactoredLinearLayer(
        [ad.param(c) for c in factors.cores],
        ad.param(bias),
        factors.plan,
        activation,
        list(factors.truncation),
        kind,
    )


def overparameterize(m: Mlp, schemes: Sequence[LayerScheme], normalize: bool = False) -> Mlp:
    """Replace each selected plain layer by a factored layer initialized from its weight."""
    out = copy_model(m)
    for s in schemes:
        if not 0 <= s.layer < len(out.layers):
            raise DimProductMismatch(f"scheme targets layer {s.layer}, model has {len(out.layers)}")
        layer = out.layers[s.layer]
        if isinstance(layer, FactoredLinearLayer):
            raise DimProductMismatch(f"layer {s.layer} is already factored")
        try:
            p = mpo.plan(layer.in_dim, layer.out_dim, s.in_dims, s.out_dims, s.bond_cap)
        except DimProductMismatch as exc:
            raise DimProductMismatch(f"layer {s.layer}: {exc}") from exc
        f = mpo.decompose(layer.weight.value, p, normalize=normalize)
        out.layers[s.layer] = factored_from(f, layer.bias.value, layer.activation)
    return out


def overparameterize_svd(m: Mlp, layers: Sequence[int]) -> Mlp:
    """Split each selected weight into a full-rank ``A @ B`` pair trained as two cores."""
    out = copy_model(m)
    for k in layers:
        layer = out.layers[k]
        if isinstance(layer, FactoredLinearLayer):
            raise DimProductMismatch(f"layer {k} is already factored")
        f = mpo.svd_factors(layer.weight.value)
        out.layers[k] = factored_from(f, layer.bias.value, layer.activation, kind="svd")
    return out


def contract_model(m: Mlp) -> Mlp:
    layers: list[Layer] = []
    for layer in m.layers:
        if isinstance(layer, FactoredLinearLayer):
            layers.append(
                LinearLayer(ad.param(layer.dense_weight()), ad.param(layer.bias.value), layer.activation)
            )
        else:
            layers.append(_copy_layer(layer))
    return Mlp(layers)


def added_params(m: Mlp) -> int:
    return sum(
        mpo.added_params(layer.plan) for layer in m.layers if isinstance(layer, FactoredLinearLayer)
    )


# -- optimizers -----------------------------------------------------------


@dataclass
class Optimizer:
    """SGD with momentum or Adam; per-parameter state keyed by position."""

    kind: str = "adam"
    learning_rate: float = 0.01
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def step(self, params: Sequence[ad.Node], grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
        if len(grads) != len(params):
            raise ExtentMismatch(f"{len(params)} params but {len(grads)} grads")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ExtentMismatch(f"param {p.shape} vs grad {np.shape(g)}")
        if not self.m:
            self.m = [np.zeros(p.shape) for p in params]
            self.v = [np.zeros(p.shape) for p in params]
        self.t += 1
        lr = self.learning_rate
        for k, (p, g) in enumerate(zip(params, grads)):
            if self.kind == "sgd":
                self.m[k] = self.momentum * self.m[k] + g
                p.value = p.value - lr * self.m[k]
            else:
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
                m_hat = self.m[k] / (1.0 - self.beta1**self.t)
                v_hat = self.v[k] / (1.0 - self.beta2**self.t)
                p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(m: Mlp, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    specs = []
    for k, layer in enumerate(m.layers):
        bias_name = f"layer_{k:03d}_bias.tnsr"
        tn.write_tnsr(directory / bias_name, layer.bias.value)
        spec = {"activation": layer.activation, "in_dim": layer.in_dim, "out_dim": layer.out_dim, "bias": bias_name}
        if isinstance(layer, FactoredLinearLayer):
            bundle = f"layer_{k:03d}_mpo"
            mpo.save_bundle(layer.factors, directory / bundle)
            spec.update(factored=True, kind=layer.kind, mpo=bundle)
        else:
            weight_name = f"layer_{k:03d}_weight.tnsr"
            tn.write_tnsr(directory / weight_name, layer.weight.value)
            spec.update(factored=False, weight=weight_name)
        specs.append(spec)
    manifest = {"input_dim": m.input_dim, "class_count": m.class_count, "layers": specs}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory) -> Mlp:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{directory}: unreadable checkpoint manifest ({exc})") from exc
    layers: list[Layer] = []
    for k, spec in enumerate(manifest["layers"]):
        bias = tn.read_tnsr(directory / spec["bias"])
        if spec["factored"]:
            f = mpo.load_bundle(directory / spec["mpo"])
            layer = factored_from(f, bias, spec["activation"], spec.get("kind", "mpo"))
        else:
            w = tn.read_tnsr(directory / spec["weight"])
            layer = LinearLayer(ad.param(w), ad.param(bias), spec["activation"])
        if (layer.in_dim, layer.out_dim) != (spec["in_dim"], spec["out_dim"]):
            raise FormatError(f"{directory}: layer {k} shape disagrees with manifest")
        layers.append(layer)
    m = Mlp(layers)
    if m.input_dim != manifest["input_dim"] or m.class_count != manifest["class_count"]:
        raise FormatError(f"{directory}: model dims disagree with manifest")
    return m
