"""Minimal reverse-mode automatic differentiation over float64 arrays.

Each :class:`Node` records its parents and a closure mapping the upstream adjoint
to one adjoint per parent.  No broadcasting: shapes must agree exactly, and bias
addition goes through :func:`add_rowwise`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import mpo
from .errors import ExtentMismatch, LabelOutOfRange, NonPositiveTemperature, NonScalarLoss


class Node:
    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", backward=None, requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def param(x) -> Node:
    return Node(np.array(x, dtype=np.float64, copy=True), requires_grad=True)


def _same_shape(a: Node, b: Node, what: str):
    if a.shape != b.shape:
        raise ExtentMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


# -- primitives -----------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    return Node(a.value + b.value, (a, b), "add", lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b, "sub")
    return Node(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product."""
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), "mul", lambda g: (g * bv, g * av))


def scalar_mul(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, (a,), "scalar_mul", lambda g: (g * c,))


def sum_all(a: Node) -> Node:
    shape = a.shape
    return Node(np.sum(a.value), (a,), "sum", lambda g: (np.full(shape, float(g)),))


def mean_all(a: Node) -> Node:
    return scalar_mul(sum_all(a), 1.0 / a.value.size)


def add_n(nodes: Sequence[Node]) -> Node:
    out = nodes[0]
    for n in nodes[1:]:
        out = add(out, n)
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ExtentMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return Node(av @ bv, (a, b), "matmul", lambda g: (g @ bv.T, av.T @ g))


def add_rowwise(x: Node, b: Node) -> Node:
    """``x[r, :] + b`` for every row ``r``."""
    if x.value.ndim != 2 or b.value.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ExtentMismatch(f"add_rowwise: cannot add bias {b.shape} to {x.shape}")
    return Node(x.value + b.value, (x, b), "add_rowwise", lambda g: (g, g.sum(axis=0)))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), (a,), "relu", lambda g: (g * mask,))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return Node(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ExtentMismatch(f"log_softmax expects [batch, classes], got {a.shape}")
    y = _log_softmax(a.value)
    p = np.exp(y)
    return Node(y, (a,), "log_softmax", lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def gather_rows(a: Node, index) -> Node:
    """Rows ``a[index]``; repeated indices accumulate on the way back."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Node(a.value[index], (a,), "gather_rows", back)


def contract_chain(cores: Sequence[Node]) -> Node:
    """Dense ``[prod(i), prod(j)]`` matrix from a chain of 4-order MPO cores.

    The forward value is exactly :func:`opdf.mpo.contract_cores`, so a factored
    layer and its contracted twin see bitwise-identical weights.
    """
    vals = [c.value for c in cores]
    mpo.check_bonds(vals)
    n = len(vals)
    in_dims = [v.shape[1] for v in vals]
    out_dims = [v.shape[2] for v in vals]
    weight = mpo.contract_cores(vals)

    def back(g):
        # upstream adjoint in interleaved (i_1, j_1, ..., i_n, j_n) order
        gi = g.reshape(in_dims + out_dims)
        gi = np.ascontiguousarray(np.transpose(gi, [a for k in range(n) for a in (k, n + k)]))
        gi = gi.reshape(-1)
        lefts = [np.ones((1, 1))]
        for v in vals[:-1]:
            nxt = lefts[-1] @ v.reshape(v.shape[0], -1)
            lefts.append(nxt.reshape(-1, v.shape[3]))
        rights = [np.ones((1, 1))]
        for v in reversed(vals[1:]):
            nxt = v.reshape(-1, v.shape[3]) @ rights[-1]
            rights.append(nxt.reshape(v.shape[0], -1))
        rights.reverse()
        grads = []
        for k, v in enumerate(vals):
            left, right = lefts[k], rights[k]
            dl, i, j, dr = v.shape
            g3 = gi.reshape(left.shape[0], -1)
            tmp = (left.T @ g3).reshape(dl * i * j, right.shape[1])
            grads.append((tmp @ right.T).reshape(dl, i, j, dr))
        return tuple(grads)

    return Node(weight, tuple(cores), "contract_chain", back)


# -- losses ---------------------------------------------------------------


def mse_loss(a: Node, b: Node) -> Node:
    _same_shape(a, b, "mse_loss")
    diff = a.value - b.value
    count = diff.size

    def back(g):
        ga = (2.0 * float(g) / count) * diff
        return ga, -ga

    return Node(np.mean(diff * diff), (a, b), "mse", back)


def softmax_ce_loss(logits: Node, labels) -> Node:
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.value
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ExtentMismatch(f"softmax_ce_loss: logits {z.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {z.shape[1]})")
    rows = np.arange(z.shape[0])
    logp = _log_softmax(z)
    batch = z.shape[0]

    def back(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (float(g) / batch),)

    return Node(-np.mean(logp[rows, labels]), (logits,), "softmax_ce", back)


def kl_distill_loss(student_logits: Node, teacher_logits, temperature: float) -> Node:
    """Batch mean of ``T^2 * KL(softmax(teacher/T) || softmax(student/T))``."""
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    t = float(temperature)
    teacher = np.asarray(teacher_logits, dtype=np.float64)
    s = student_logits.value
    if s.ndim != 2 or teacher.shape != s.shape:
        raise ExtentMismatch(f"kl_distill_loss: student {s.shape} vs teacher {teacher.shape}")
    log_pt = _log_softmax(teacher / t)
    log_ps = _log_softmax(s / t)
    pt = np.exp(log_pt)
    batch = s.shape[0]
    kl = np.sum(pt * (log_pt - log_ps), axis=1)
    value = t * t * np.mean(kl)

    def back(g):
        return ((np.exp(log_ps) - pt) * (t * float(g) / batch),)

    return Node(value, (student_logits,), "kl_distill", back)


# -- backward -------------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every ``requires_grad`` ancestor."""
    if loss.value.size != 1 or loss.value.ndim != 0:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    adjoint = {id(loss): np.ones(())}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            g = np.zeros(node.shape)
        if node.grad is None:
            node.grad = np.zeros(node.shape)
        node.grad = node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            adjoint[key] = adjoint[key] + pg if key in adjoint else pg


def grad_check(
    f: Callable[[list[Node]], Node],
    params: Sequence[np.ndarray],
    h: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a list of parameter nodes to a scalar loss node.  The denominator
    of each relative error is floored at 1e-8.
    """
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    nodes = [param(p) for p in params]
    backward(f(nodes))
    worst = 0.0
    for k, p in enumerate(params):
        analytic = nodes[k].grad if nodes[k].grad is not None else np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = float(f([constant(q) for q in plus]).value)
            fm = float(f([constant(q) for q in minus]).value)
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
