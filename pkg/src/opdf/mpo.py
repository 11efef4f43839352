"""Matrix product operator (tensor-train operator) factorization of weight matrices.

A matrix ``W`` of shape ``[I, J]`` with ``I = prod(in_dims)`` and ``J = prod(out_dims)``
is written as a chain of 4-order cores ``T_k[d_{k-1}, i_k, j_k, d_k]``.  Indices are
interleaved as ``(i_1, j_1, ..., i_n, j_n)`` before the left-to-right SVD sweep.
Core positions are 0-based throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tn
from .errors import (
    BondMismatch,
    DimProductMismatch,
    EmptyFactorization,
    FormatError,
    ShapeMismatch,
)
from .linalg import svd, truncated_svd

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class MpoPlan:
    rows: int
    cols: int
    in_dims: tuple[int, ...]
    out_dims: tuple[int, ...]
    bond_dims: tuple[int, ...]
    bond_cap: int | None = None

    @property
    def n(self) -> int:
        return len(self.in_dims)

    def core_shapes(self) -> list[tuple[int, int, int, int]]:
        d = self.bond_dims
        return [(d[k], self.in_dims[k], self.out_dims[k], d[k + 1]) for k in range(self.n)]


@dataclass
class MpoFactors:
    cores: list[np.ndarray]
    plan: MpoPlan
    truncation: list[float] = field(default_factory=list)
    central_index: int = 0

    @property
    def bond_dims(self) -> tuple[int, ...]:
        """Actual bond extents, read from the cores (may sit below the plan)."""
        return tuple(c.shape[0] for c in self.cores) + (self.cores[-1].shape[3],)

    def num_params(self) -> int:
        return sum(c.size for c in self.cores)


def plan(
    rows: int,
    cols: int,
    in_dims: Sequence[int],
    out_dims: Sequence[int],
    bond_cap: int | None = None,
) -> MpoPlan:
    in_dims = tuple(int(x) for x in in_dims)
    out_dims = tuple(int(x) for x in out_dims)
    if not in_dims or not out_dims:
        raise EmptyFactorization("in_dims and out_dims must each hold at least one factor")
    if len(in_dims) != len(out_dims):
        raise DimProductMismatch(
            f"in_dims {in_dims} and out_dims {out_dims} have different lengths"
        )
    if any(x < 1 for x in in_dims + out_dims):
        raise DimProductMismatch("all factor dims must be >= 1")
    if math.prod(in_dims) != rows or math.prod(out_dims) != cols:
        raise DimProductMismatch(
            f"prod(in_dims)={math.prod(in_dims)}, prod(out_dims)={math.prod(out_dims)} "
            f"do not match matrix shape [{rows}, {cols}]"
        )
    if bond_cap is not None and bond_cap < 1:
        raise DimProductMismatch(f"bond_cap must be >= 1, got {bond_cap}")
    site = [i * j for i, j in zip(in_dims, out_dims)]
    n = len(site)
    bonds = []
    for k in range(n + 1):
        d = min(math.prod(site[:k]), math.prod(site[k:]))
        if bond_cap is not None:
            d = min(d, bond_cap)
        bonds.append(d)
    return MpoPlan(rows, cols, in_dims, out_dims, tuple(bonds), bond_cap)


def added_params(p: MpoPlan) -> int:
    """Parameter growth of the factored form over the dense matrix (negative under tight caps)."""
    total = sum(math.prod(s) for s in p.core_shapes())
    return total - p.rows * p.cols


def _interleave_axes(n: int) -> list[int]:
    # (i_1..i_n, j_1..j_n) -> (i_1, j_1, ..., i_n, j_n)
    return [a for k in range(n) for a in (k, n + k)]


def central_index_of(cores: Sequence[np.ndarray]) -> int:
    """Index of the core with the most elements; the lowest index wins ties."""
    sizes = [c.size for c in cores]
    return sizes.index(max(sizes))


def normalize_cores(cores: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Rescale cores to a common Frobenius norm without changing their product."""
    norms = [tn.frobenius_norm(c) for c in cores]
    if min(norms) == 0.0:
        return [c.copy() for c in cores]
    target = math.exp(sum(math.log(x) for x in norms) / len(norms))
    return [c * (target / x) for c, x in zip(cores, norms)]


def decompose(
    w: np.ndarray,
    p: MpoPlan,
    tol: float | None = None,
    normalize: bool = False,
) -> MpoFactors:
    """Sequential-SVD sweep of ``w`` into ``p.n`` cores.

    Split ``k`` keeps at most ``p.bond_dims[k + 1]`` singular triplets and, when ``tol``
    is given, drops a tail of norm up to ``tol``.  The discarded tail norm of every
    split is recorded in ``truncation``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (p.rows, p.cols):
        raise ShapeMismatch(f"matrix shape {w.shape} does not match plan [{p.rows}, {p.cols}]")
    n = p.n
    t = tn.permute(tn.reshape(w, p.in_dims + p.out_dims), _interleave_axes(n))
    carry = t.reshape(1, -1)
    cores: list[np.ndarray] = []
    eps: list[float] = []
    d_prev = 1
    for k in range(n - 1):
        i_k, j_k = p.in_dims[k], p.out_dims[k]
        m = carry.reshape(d_prev * i_k * j_k, -1)
        tr = truncated_svd(m, max_rank=p.bond_dims[k + 1], tol=tol)
        r = tr.kept_rank
        cores.append(tr.kept.u.reshape(d_prev, i_k, j_k, r))
        carry = tr.kept.s[:, None] * tr.kept.vt
        eps.append(tr.epsilon)
        d_prev = r
    cores.append(np.ascontiguousarray(carry).reshape(d_prev, p.in_dims[-1], p.out_dims[-1], 1))
    if normalize:
        cores = normalize_cores(cores)
    return MpoFactors(cores=cores, plan=p, truncation=eps, central_index=central_index_of(cores))


def check_bonds(cores: Sequence[np.ndarray]) -> None:
    if not cores:
        raise EmptyFactorization("no cores")
    for k, c in enumerate(cores):
        if c.ndim != 4:
            raise BondMismatch(f"core {k} has order {c.ndim}, expected 4")
    if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
        raise BondMismatch("boundary bonds must be 1")
    for k in range(len(cores) - 1):
        if cores[k].shape[3] != cores[k + 1].shape[0]:
            raise BondMismatch(
                f"bond between cores {k} and {k + 1}: {cores[k].shape[3]} != {cores[k + 1].shape[0]}"
            )


def contract_cores(cores: Sequence[np.ndarray]) -> np.ndarray:
    """Contract a core chain back to a dense ``[prod(i), prod(j)]`` matrix."""
    check_bonds(cores)
    n = len(cores)
    in_dims = [c.shape[1] for c in cores]
    out_dims = [c.shape[2] for c in cores]
    acc = cores[0].reshape(-1, cores[0].shape[3])
    for c in cores[1:]:
        acc = acc @ c.reshape(c.shape[0], -1)
        acc = acc.reshape(-1, c.shape[3])
    interleaved = acc.reshape([d for k in range(n) for d in (in_dims[k], out_dims[k])])
    back = tn.inverse_permutation(_interleave_axes(n))
    return tn.permute(interleaved, back).reshape(math.prod(in_dims), math.prod(out_dims))


def reconstruct(f: MpoFactors) -> np.ndarray:
    return contract_cores(f.cores)


def error_bound(f: MpoFactors) -> float:
    """Upper bound on ``||W - reconstruct(f)||_F`` from the per-split tail norms."""
    return math.sqrt(sum(e * e for e in f.truncation))


def split_cores(f: MpoFactors) -> tuple[np.ndarray, list[tuple[int, np.ndarray]]]:
    """Return the central core and the ``(index, core)`` list of auxiliary cores."""
    aux = [(k, c) for k, c in enumerate(f.cores) if k != f.central_index]
    return f.cores[f.central_index], aux


def svd_overparam(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-rank split ``w = a @ b`` with ``a = U sqrt(S)`` and ``b = sqrt(S) V^T``."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {w.shape}")
    res = svd(w)
    root = np.sqrt(res.s)
    return res.u * root, root[:, None] * res.vt


def svd_factors(w: np.ndarray) -> MpoFactors:
    """The SVD split as a two-core chain with ``in_dims=(I, 1)``, ``out_dims=(1, J)``."""
    rows, cols = np.shape(w)
    a, b = svd_overparam(w)
    r = a.shape[1]
    p = plan(rows, cols, (rows, 1), (1, cols))
    cores = [a.reshape(1, rows, 1, r), b.reshape(r, 1, cols, 1)]
    return MpoFactors(cores=cores, plan=p, truncation=[0.0], central_index=central_index_of(cores))


def auto_scheme(rows: int, cols: int, ones: int = 1) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Two-way split of each side near its square root, with ``ones`` (1, 1) pairs in between."""

    def split(x: int) -> tuple[int, int]:
        a = next(d for d in range(math.isqrt(x), 0, -1) if x % d == 0)
        return x // a, a

    i1, i2 = split(rows)
    j1, j2 = split(cols)
    return (i1,) + (1,) * ones + (i2,), (j1,) + (1,) * ones + (j2,)


# -- bundle files ---------------------------------------------------------


def save_bundle(f: MpoFactors, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, c in enumerate(f.cores):
        name = f"core_{k:03d}.tnsr"
        tn.write_tnsr(directory / name, c)
        names.append(name)
    manifest = {
        "source_shape": [f.plan.rows, f.plan.cols],
        "in_dims": list(f.plan.in_dims),
        "out_dims": list(f.plan.out_dims),
        "bond_dims": list(f.bond_dims),
        "planned_bond_dims": list(f.plan.bond_dims),
        "bond_cap": f.plan.bond_cap,
        "central_index": f.central_index,
        "truncation": [float(e) for e in f.truncation],
        "cores": names,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return directory


def load_bundle(directory) -> MpoFactors:
    directory = Path(directory)
    try:
        m = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{directory}: unreadable manifest ({exc})") from exc
    for key in ("source_shape", "in_dims", "out_dims", "bond_dims", "central_index", "truncation", "cores"):
        if key not in m:
            raise FormatError(f"{directory}: manifest missing '{key}'")
    rows, cols = m["source_shape"]
    p = plan(rows, cols, m["in_dims"], m["out_dims"], m.get("bond_cap"))
    if "planned_bond_dims" in m and tuple(m["planned_bond_dims"]) != p.bond_dims:
        raise FormatError(f"{directory}: planned bonds disagree with in/out dims")
    cores = [tn.read_tnsr(directory / name) for name in m["cores"]]
    bonds = m["bond_dims"]
    if len(cores) != p.n or len(bonds) != p.n + 1:
        raise FormatError(f"{directory}: expected {p.n} cores")
    for k, c in enumerate(cores):
        expected = (bonds[k], p.in_dims[k], p.out_dims[k], bonds[k + 1])
        if c.shape != expected:
            raise FormatError(f"{directory}: core {k} has shape {c.shape}, manifest says {expected}")
    check_bonds(cores)
    return MpoFactors(
        cores=cores,
        plan=p,
        truncation=[float(e) for e in m["truncation"]],
        central_index=int(m["central_index"]),
    )
