import numpy as np
import pytest

from fairdg.data import (DomainDataset, LabeledExample, SplitPlan, concat, dependence_score,
                         load_tabular, save_tabular, split)
from fairdg.errors import EmptyGroup, FormatError, TooSmall
from fairdg.metrics import rho


def make(domain, rows, d=2, rng=None):
    rng = rng or np.random.default_rng(0)
    z = [r[0] for r in rows]
    y = [r[1] for r in rows]
    return DomainDataset(domain, rng.normal(size=(len(rows), d)), z, y)


def random_dataset(n=100, seed=0, domain="A", d=3):
    rng = np.random.default_rng(seed)
    z = rng.choice([-1, 1], size=n)
    y = rng.integers(0, 2, size=n)
    return DomainDataset(domain, rng.normal(size=(n, d)), z, y)


class TestDependenceScore:
    def test_perfect(self):
        assert dependence_score(make("a", [(1, 1), (1, 1), (-1, 0), (-1, 0)])) == 1.0

    def test_independent(self):
        assert dependence_score(make("a", [(1, 1), (1, 0), (-1, 1), (-1, 0)])) == 0.0

    def test_worked_example(self):
        ds = make("a", [(1, 1), (1, 0), (-1, 0), (-1, 0)])
        assert dependence_score(ds) == pytest.approx(0.5, abs=1e-15)

    def test_missing_group(self):
        with pytest.raises(EmptyGroup):
            dependence_score(make("a", [(1, 1), (1, 0)]))

    @pytest.mark.parametrize("seed", range(10))
    def test_equals_rho_of_labels(self, seed):
        ds = random_dataset(57, seed)
        assert abs(dependence_score(ds) - rho(ds.label, ds.sensitive)) <= 1e-12


class TestValidation:
    def test_bad_sensitive(self):
        with pytest.raises(ValueError):
            DomainDataset("a", np.zeros((2, 1)), [0, 1], [0, 1])

    def test_bad_label(self):
        with pytest.raises(ValueError):
            DomainDataset("a", np.zeros((2, 1)), [1, 1], [0, 2])

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            DomainDataset("a", np.array([[np.nan], [0.0]]), [1, -1], [0, 1])

    def test_immutable(self):
        ds = random_dataset(10)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0

    def test_from_examples(self):
        ex = [LabeledExample(np.array([1.0, 2.0]), 1, 0), LabeledExample(np.array([3.0, 4.0]), -1, 1)]
        ds = DomainDataset.from_examples("a", ex)
        assert ds.dim == 2 and len(ds) == 2
        assert [e.sensitive for e in ds] == [1, -1]

    def test_concat_dim_mismatch(self):
        with pytest.raises(ValueError):
            concat([random_dataset(10, d=2), random_dataset(10, d=3)])


class TestSplit:
    def test_deterministic(self):
        ds = random_dataset(100)
        a = split(ds, SplitPlan(0.8, 0.1, 7))
        b = split(ds, SplitPlan(0.8, 0.1, 7))
        assert all(x == y for x, y in zip(a, b))

    def test_different_seed_differs(self):
        ds = random_dataset(100)
        a = split(ds, SplitPlan(0.8, 0.1, 7))
        b = split(ds, SplitPlan(0.8, 0.1, 8))
        assert a[0] != b[0]

    def test_boundary_empty_test(self):
        train, val, test = split(random_dataset(100), SplitPlan(0.5, 0.5, 0))
        assert len(test) == 0
        assert len(train) + len(val) == 100

    def test_disjoint_exhaustive(self):
        ds = random_dataset(203, seed=3)
        # tag rows so they can be traced through the split
        tagged = DomainDataset("A", np.arange(len(ds), dtype=float).reshape(-1, 1), ds.sensitive, ds.label)
        parts = split(tagged, SplitPlan(0.6, 0.25, 1))
        ids = np.concatenate([p.features[:, 0] for p in parts])
        assert sorted(ids.tolist()) == list(range(len(ds)))

    @pytest.mark.parametrize("seed", range(5))
    def test_stratified(self, seed):
        ds = random_dataset(400, seed)
        train, val, test = split(ds, SplitPlan(0.8, 0.1, seed))
        for z in (-1, 1):
            for y in (0, 1):
                total = np.sum((ds.sensitive == z) & (ds.label == y))
                got = np.sum((train.sensitive == z) & (train.label == y))
                assert abs(got - 0.8 * total) <= 1

    def test_too_small(self):
        ds = make("a", [(1, 1), (1, 0), (-1, 0), (-1, 1), (-1, 1)])
        with pytest.raises(TooSmall):
            split(ds, SplitPlan(0.6, 0.2, 0))

    def test_invalid_plan(self):
        with pytest.raises(ValueError):
            SplitPlan(0.8, 0.3, 0)


class TestTabular:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        a = DomainDataset("R", rng.normal(size=(20, 3)) * 1e3, rng.choice([-1, 1], 20), rng.integers(0, 2, 20), 0.11)
        b = DomainDataset("G", rng.normal(size=(7, 3)) / 7.0, rng.choice([-1, 1], 7), rng.integers(0, 2, 7), 0.43)
        p = tmp_path / "d.csv"
        save_tabular([a, b], p)
        loaded = load_tabular(p)
        assert loaded == [a, b]
        q = tmp_path / "e.csv"
        save_tabular(loaded, q)
        assert load_tabular(q) == loaded
        assert p.read_bytes() == q.read_bytes()

    def test_first_appearance_order(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("domain,z,y,x0\nB,1,0,0.5\nA,-1,1,1.5\nB,-1,0,2.0\n")
        out = load_tabular(p)
        assert [d.domain_id for d in out] == ["B", "A"]
        assert [len(d) for d in out] == [2, 1]

    def test_bad_sensitive_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("domain,z,y,x0\nA,1,0,0.5\nA,0,1,1.5\n")
        with pytest.raises(ValueError, match="row 3"):
            load_tabular(p)

    def test_bad_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("domain,z,y,x0\nA,1,3,0.5\n")
        with pytest.raises(ValueError, match="row 2"):
            load_tabular(p)

    @pytest.mark.parametrize("body", ["A,1,0\n", "A,1,0,abc\n", "A,1,0,inf\n", "A,x,0,1.0\n"])
    def test_malformed(self, tmp_path, body):
        p = tmp_path / "d.csv"
        p.write_text("domain,z,y,x0\n" + body)
        with pytest.raises(FormatError) as err:
            load_tabular(p)
        assert err.value.row == 2

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("dom,z,y,x0\nA,1,0,1.0\n")
        with pytest.raises(FormatError):
            load_tabular(p)
