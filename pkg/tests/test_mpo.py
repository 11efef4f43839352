import json
import math

import numpy as np
import pytest

from opdf import mpo
from opdf import tensor as tn
from opdf.errors import BondMismatch, DimProductMismatch, EmptyFactorization, FormatError, ShapeMismatch


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def brute_bonds(ins, outs):
    """Recompute planned bonds by listing site sizes, independent of the library."""
    sites = [i * j for i, j in zip(ins, outs)]
    return tuple(min(math.prod(sites[:k]), math.prod(sites[k:])) for k in range(len(sites) + 1))


def random_factorization(rng, x, n):
    """Split integer ``x`` into ``n`` ordered factors (possibly 1)."""
    dims = [1] * n
    for p in (2, 3, 5, 7):
        while x % p == 0:
            x //= p
            dims[int(rng.integers(n))] *= p
    dims[int(rng.integers(n))] *= x
    return tuple(dims)


class TestPlan:
    def test_768x3072_two_core(self):
        p = mpo.plan(768, 3072, (32, 24), (64, 48))
        assert p.bond_dims == (1, 1152, 1)

    def test_single_core(self):
        assert mpo.plan(5, 7, (5,), (7,)).bond_dims == (1, 1)

    def test_inserted_ones(self):
        assert mpo.plan(768, 3072, (32, 1, 24), (64, 1, 48)).bond_dims == (1, 1152, 1152, 1)

    def test_cap(self):
        assert mpo.plan(768, 3072, (32, 1, 24), (64, 1, 48), bond_cap=100).bond_dims == (1, 100, 100, 1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            rows, cols = int(rng.integers(1, 200)), int(rng.integers(1, 200))
            ins, outs = random_factorization(rng, rows, n), random_factorization(rng, cols, n)
            assert mpo.plan(rows, cols, ins, outs).bond_dims == brute_bonds(ins, outs)

    def test_errors(self):
        with pytest.raises(DimProductMismatch):
            mpo.plan(768, 3072, (32, 25), (64, 48))
        with pytest.raises(DimProductMismatch):
            mpo.plan(6, 6, (2, 3), (6,))
        with pytest.raises(EmptyFactorization):
            mpo.plan(6, 6, (), ())


class TestAddedParams:
    def test_single_core_zero(self):
        assert mpo.added_params(mpo.plan(12, 8, (12,), (8,))) == 0

    def test_768x3072_two_core(self):
        p = mpo.plan(768, 3072, (32, 24), (64, 48))
        assert 2048 * 1152 + 1152 * 1152 == 3_686_400
        assert mpo.added_params(p) == 3_686_400 - 2_359_296 == 1_327_104

    def test_768x3072_five_core(self):
        p = mpo.plan(768, 3072, (32, 1, 1, 1, 24), (64, 1, 1, 1, 48))
        assert p.bond_dims == (1, 1152, 1152, 1152, 1152, 1)
        total = 768 * 3072 + mpo.added_params(p)
        assert total == 2048 * 1152 + 3 * 1152 * 1152 + 1152 * 1152 == 7_667_712
        assert total / (768 * 3072) == pytest.approx(3.25, abs=0.01)

    def test_negative_under_cap(self):
        assert mpo.added_params(mpo.plan(64, 64, (8, 8), (8, 8), bond_cap=2)) < 0

    def test_ones_strictly_increase(self):
        base = mpo.plan(48, 60, (4, 12), (5, 12))
        more = mpo.plan(48, 60, (4, 1, 12), (5, 1, 12))
        assert mpo.added_params(more) > mpo.added_params(base)


class TestDecompose:
    def test_identity(self):
        f = mpo.decompose(np.eye(4), mpo.plan(4, 4, (2, 2), (2, 2)))
        assert np.abs(mpo.reconstruct(f) - np.eye(4)).max() <= 1e-12
        assert all(e <= 1e-12 for e in f.truncation)

    def test_random_48x60(self):
        w = np.random.default_rng(1).standard_normal((48, 60))
        p = mpo.plan(48, 60, (4, 3, 4), (5, 4, 3))
        f = mpo.decompose(w, p)
        assert rel(mpo.reconstruct(f), w) <= 1e-12
        # generic full-rank input: actual bonds equal the min-form plan
        assert f.bond_dims == p.bond_dims == brute_bonds((4, 3, 4), (5, 4, 3))
        for c, shape in zip(f.cores, p.core_shapes()):
            assert c.shape == shape

    def test_low_rank_under_cap(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((64, 4)) @ rng.standard_normal((4, 64))
        # in=(I,1)/out=(1,J) makes the split unfolding equal w itself, so matrix rank 4
        # means bond rank 4; interleaved (8,8)/(8,8) unfoldings are not low-rank
        f = mpo.decompose(w, mpo.plan(64, 64, (64, 1), (1, 64), bond_cap=4))
        assert f.bond_dims == (1, 4, 1)
        assert np.linalg.norm(mpo.reconstruct(f) - w) <= 1e-10 * np.linalg.norm(w)

    def test_96x96_roundtrip(self):
        w = np.random.default_rng(3).standard_normal((96, 96))
        f = mpo.decompose(w, mpo.plan(96, 96, (4, 4, 6), (6, 4, 4)))
        assert rel(mpo.reconstruct(f), w) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mpo.decompose(np.zeros((4, 5)), mpo.plan(4, 4, (2, 2), (2, 2)))

    def test_deterministic(self):
        w = np.random.default_rng(4).standard_normal((12, 12))
        p = mpo.plan(12, 12, (3, 4), (4, 3))
        a, b = mpo.decompose(w, p), mpo.decompose(w, p)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.cores, b.cores))

    def test_normalize_keeps_product(self):
        w = np.random.default_rng(5).standard_normal((24, 24)) * 7.0
        p = mpo.plan(24, 24, (2, 3, 4), (4, 3, 2))
        f = mpo.decompose(w, p, normalize=True)
        norms = [tn.frobenius_norm(c) for c in f.cores]
        assert max(norms) - min(norms) <= 1e-9 * max(norms)
        assert rel(mpo.reconstruct(f), w) <= 1e-12

    def test_roundtrip_random_family(self):
        rng = np.random.default_rng(6)
        for _ in range(40):
            rows, cols = int(rng.integers(2, 100)), int(rng.integers(2, 100))
            n = int(rng.integers(1, 5))
            ins, outs = random_factorization(rng, rows, n), random_factorization(rng, cols, n)
            w = rng.standard_normal((rows, cols))
            f = mpo.decompose(w, mpo.plan(rows, cols, ins, outs))
            assert rel(mpo.reconstruct(f), w) <= 1e-12

    def test_rank_deficient_accounting_inequality(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((16, 2)) @ rng.standard_normal((2, 16))
        p = mpo.plan(16, 16, (16, 1), (1, 16))
        f = mpo.decompose(w, p, tol=1e-10)
        assert f.bond_dims[1] == 2
        assert f.num_params() - 256 <= mpo.added_params(p)
        assert rel(mpo.reconstruct(f), w) <= 1e-10


class TestReconstruct:
    def test_single_core_bitwise(self):
        w = np.random.default_rng(8).standard_normal((5, 7))
        f = mpo.decompose(w, mpo.plan(5, 7, (5,), (7,)))
        assert mpo.reconstruct(f).tobytes() == w.tobytes()
        assert f.truncation == []

    def test_bond_mismatch(self):
        cores = [np.zeros((1, 2, 2, 3)), np.zeros((2, 2, 2, 1))]
        with pytest.raises(BondMismatch):
            mpo.contract_cores(cores)

    def test_truncated_diag(self):
        w = np.diag([5.0, 4.0, 3.0, 2.0])
        f = mpo.decompose(w, mpo.plan(4, 4, (2, 2), (2, 2), bond_cap=2))
        err = np.linalg.norm(w - mpo.reconstruct(f))
        assert err <= mpo.error_bound(f) + 1e-9
        assert err > 0


class TestErrorBound:
    def _factors(self, eps):
        cores = [np.ones((1, 1, 1, 1))] * (len(eps) + 1)
        p = mpo.plan(1, 1, (1,) * len(cores), (1,) * len(cores))
        return mpo.MpoFactors(cores=cores, plan=p, truncation=list(eps))

    def test_zero(self):
        assert mpo.error_bound(self._factors([0.0, 0.0])) == 0.0

    def test_pythagorean(self):
        assert mpo.error_bound(self._factors([3.0, 4.0])) == 5.0

    def test_bound_holds_100_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            w = rng.standard_normal((24, 18))
            cap = int(rng.integers(1, 12))
            f = mpo.decompose(w, mpo.plan(24, 18, (2, 3, 4), (3, 2, 3), bond_cap=cap))
            assert np.linalg.norm(w - mpo.reconstruct(f)) <= mpo.error_bound(f) + 1e-9

    def test_bound_with_tolerance(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            w = rng.standard_normal((16, 16))
            f = mpo.decompose(w, mpo.plan(16, 16, (4, 4), (4, 4)), tol=float(rng.uniform(0.5, 5.0)))
            assert np.linalg.norm(w - mpo.reconstruct(f)) <= mpo.error_bound(f) + 1e-9


class TestSplitCores:
    def test_middle_largest(self):
        w = np.random.default_rng(9).standard_normal((8, 8))
        f = mpo.decompose(w, mpo.plan(8, 8, (2, 2, 2), (2, 2, 2)))
        sizes = [c.size for c in f.cores]
        assert sizes[1] == max(sizes) and sizes.count(max(sizes)) == 1
        central, aux = mpo.split_cores(f)
        assert f.central_index == 1  # 0-based: second of three
        assert central is f.cores[1]
        assert [k for k, _ in aux] == [0, 2]

    def test_single_core(self):
        f = mpo.decompose(np.ones((3, 3)), mpo.plan(3, 3, (3,), (3,)))
        central, aux = mpo.split_cores(f)
        assert central.shape == (1, 3, 3, 1) and aux == []

    def test_five_core_follows_max_count_rule(self):
        p = mpo.plan(768, 3072, (32, 1, 1, 1, 24), (64, 1, 1, 1, 48))
        counts = [math.prod(s) for s in p.core_shapes()]
        assert counts == [2048 * 1152, 1152 * 1152, 1152 * 1152, 1152 * 1152, 1152 * 1152]
        cores = [np.zeros(s) for s in p.core_shapes()]
        assert mpo.central_index_of(cores) == 0

    def test_tie_lowest_index(self):
        assert mpo.central_index_of([np.zeros((1, 2, 2, 2)), np.zeros((2, 2, 2, 1))]) == 0


class TestSvdOverparam:
    def test_identity(self):
        a, b = mpo.svd_overparam(np.eye(5))
        assert np.abs(a @ b - np.eye(5)).max() <= 1e-12

    def test_scalar(self):
        a, b = mpo.svd_overparam(np.array([[4.0]]))
        assert a.tolist() == [[2.0]] and b.tolist() == [[2.0]]

    def test_random_12x8_params(self):
        w = np.random.default_rng(10).standard_normal((12, 8))
        a, b = mpo.svd_overparam(w)
        assert rel(a @ b, w) <= 1e-10
        assert a.size + b.size == 12 * 8 + 8 * 8
        f = mpo.svd_factors(w)
        assert f.num_params() == a.size + b.size
        assert rel(mpo.reconstruct(f), w) <= 1e-10
        # the SVD split adds fewer parameters than a three-core MPO of the same matrix
        assert f.num_params() - 96 < mpo.added_params(mpo.plan(12, 8, (3, 1, 4), (4, 1, 2)))


def test_accounting_identity_random_family():
    rng = np.random.default_rng(11)
    for _ in range(30):
        rows, cols = int(rng.integers(2, 60)), int(rng.integers(2, 60))
        n = int(rng.integers(1, 4))
        ins, outs = random_factorization(rng, rows, n), random_factorization(rng, cols, n)
        p = mpo.plan(rows, cols, ins, outs)
        f = mpo.decompose(rng.standard_normal((rows, cols)), p)
        assert f.num_params() - rows * cols == mpo.added_params(p)


def test_inserting_ones_pair_keeps_output():
    w = np.random.default_rng(12).standard_normal((48, 60))
    base = mpo.decompose(w, mpo.plan(48, 60, (4, 12), (5, 12)))
    more = mpo.decompose(w, mpo.plan(48, 60, (4, 1, 12), (5, 1, 12)))
    assert np.abs(mpo.reconstruct(base) - mpo.reconstruct(more)).max() <= 1e-12
    assert more.num_params() > base.num_params()


def test_auto_scheme():
    ins, outs = mpo.auto_scheme(768, 3072)
    assert math.prod(ins) == 768 and math.prod(outs) == 3072
    assert ins[1] == outs[1] == 1 and len(ins) == 3


class TestBundle:
    def test_roundtrip(self, tmp_path):
        w = np.random.default_rng(13).standard_normal((12, 10))
        f = mpo.decompose(w, mpo.plan(12, 10, (3, 4), (5, 2)))
        mpo.save_bundle(f, tmp_path / "b")
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        for key in ("source_shape", "in_dims", "out_dims", "bond_dims", "central_index", "truncation", "cores"):
            assert key in manifest
        assert manifest["source_shape"] == [12, 10]
        g = mpo.load_bundle(tmp_path / "b")
        assert all(x.tobytes() == y.tobytes() for x, y in zip(f.cores, g.cores))
        assert g.central_index == f.central_index and g.truncation == f.truncation

    def test_manifest_shape_disagreement(self, tmp_path):
        w = np.random.default_rng(14).standard_normal((4, 4))
        f = mpo.decompose(w, mpo.plan(4, 4, (2, 2), (2, 2)))
        mpo.save_bundle(f, tmp_path / "b")
        path = tmp_path / "b" / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["bond_dims"] = [1, 3, 1]
        path.write_text(json.dumps(manifest))
        with pytest.raises((FormatError, BondMismatch)):
            mpo.load_bundle(tmp_path / "b")
