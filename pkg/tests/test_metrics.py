import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairdg.errors import DegenerateGroup, EmptyGroup, EmptySources
from fairdg.metrics import (JS_MAX, DiscreteJoint, MetricsReport, auc_fair, dp_ratio,
                            fairness_upper_bound, group_gap, js_distance, rho)


def brute_auc(scores, z):
    neg = [s for s, g in zip(scores, z) if g == -1]
    pos = [s for s, g in zip(scores, z) if g == 1]
    total = 0.0
    for a in neg:
        for b in pos:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(neg) * len(pos))


def rate_gap(yhat, z):
    yhat, z = np.asarray(yhat), np.asarray(z)
    return abs(yhat[z == 1].mean() - yhat[z == -1].mean())


def point_mass(atom):
    return DiscreteJoint((atom,), np.array([1.0]))


def random_joint(rng, atoms):
    p = rng.dirichlet(np.ones(len(atoms)))
    return DiscreteJoint(tuple(atoms), p / p.sum())


ATOMS = [(x, z, y) for x in range(3) for z in (-1, 1) for y in (0, 1)]


class TestGroupGap:
    def test_balanced_positive(self):
        assert group_gap(1, 1, 0.5) == 2.0

    @pytest.mark.parametrize("z,p1", [(1, 0.3), (-1, 0.7), (1, 0.5)])
    def test_zero_prediction(self, z, p1):
        assert group_gap(0, z, p1) == 0.0

    def test_negative_group(self):
        assert group_gap(1, -1, 0.25) == pytest.approx(-4.0 / 3.0, abs=1e-15)

    @pytest.mark.parametrize("p1", [0.0, 1.0, -0.1, 1.5])
    def test_degenerate(self, p1):
        with pytest.raises(DegenerateGroup):
            group_gap(1, 1, p1)


class TestRho:
    def test_equal_rates(self):
        assert rho([1, 0, 1, 0], [1, 1, -1, -1]) == 0.0

    def test_worked_example(self):
        # brute-force mean of g with p1 = 0.5: (2 + 0 + 0 + 0) / 4
        assert rho([1, 0, 0, 0], [1, 1, -1, -1]) == pytest.approx(0.5, abs=1e-15)

    def test_max_disparity(self):
        assert rho([1, 1, 0, 0], [1, 1, -1, -1]) == pytest.approx(1.0, abs=1e-15)

    def test_missing_group(self):
        with pytest.raises(EmptyGroup):
            rho([1, 0], [1, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from([-1, 1])), min_size=2, max_size=60))
    def test_matches_rate_difference(self, rows):
        yhat, z = zip(*rows)
        if len(set(z)) < 2:
            return
        assert abs(rho(yhat, z) - rate_gap(yhat, z)) <= 1e-12


class TestDPRatio:
    def test_equal(self):
        # 3/10 positives in each group
        yhat = [1] * 3 + [0] * 7 + [1] * 3 + [0] * 7
        z = [-1] * 10 + [1] * 10
        assert dp_ratio(yhat, z) == 1.0

    def test_half(self):
        yhat = [1] * 2 + [0] * 8 + [1] * 4 + [0] * 6
        z = [-1] * 10 + [1] * 10
        assert dp_ratio(yhat, z) == pytest.approx(0.5)

    def test_one_sided_zero(self):
        yhat = [0] * 10 + [1] * 4 + [0] * 6
        z = [-1] * 10 + [1] * 10
        assert dp_ratio(yhat, z) == 0.0

    def test_both_zero(self):
        assert dp_ratio([0, 0, 0, 0], [1, 1, -1, -1]) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from([-1, 1])), min_size=2, max_size=40))
    def test_range_and_equality(self, rows):
        yhat, z = zip(*rows)
        if len(set(z)) < 2:
            return
        v = dp_ratio(yhat, z)
        assert 0.0 <= v <= 1.0
        assert (v == 1.0) == (rate_gap(yhat, z) == 0.0)


class TestAUCFair:
    def test_identical_distributions(self):
        assert auc_fair([0.1, 0.7, 0.1, 0.7], [-1, -1, 1, 1]) == 0.5

    def test_enumerated_pairs(self):
        scores = [0.9, 0.8, 0.1, 0.2]
        z = [-1, -1, 1, 1]
        assert brute_auc(scores, z) == 1.0
        assert auc_fair(scores, z) == 1.0
        assert auc_fair(scores, [-v for v in z]) == 0.0

    def test_empty_group(self):
        with pytest.raises(EmptyGroup):
            auc_fair([0.2, 0.3], [-1, -1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1),
                              st.sampled_from([-1, 1])), min_size=2, max_size=30))
    def test_brute_force_and_complement(self, rows):
        s, z = zip(*rows)
        if len(set(z)) < 2:
            return
        a = auc_fair(s, z)
        assert a == pytest.approx(brute_auc(s, z), abs=1e-12)
        assert a + auc_fair(s, [-v for v in z]) == pytest.approx(1.0, abs=1e-12)


class TestJSDistance:
    def test_identical(self):
        rng = np.random.default_rng(1)
        p = random_joint(rng, ATOMS)
        assert js_distance(p, p) == 0.0

    def test_disjoint_point_masses(self):
        d = js_distance(point_mass((0, 1, 1)), point_mass((1, -1, 0)))
        assert d == pytest.approx(math.sqrt(math.log(2.0)), abs=1e-15)
        assert d == pytest.approx(0.832555, abs=1e-6)

    def test_symmetry_triangle_and_ceiling(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            atoms = [ATOMS[i] for i in rng.choice(len(ATOMS), size=rng.integers(2, len(ATOMS)), replace=False)]
            p, q, r = (random_joint(rng, atoms) for _ in range(3))
            assert js_distance(p, q) == pytest.approx(js_distance(q, p), abs=1e-15)
            assert js_distance(p, r) <= js_distance(p, q) + js_distance(q, r) + 1e-9
            assert js_distance(p, q) <= JS_MAX + 1e-12

    def test_union_support_padding(self):
        p = DiscreteJoint(((0, 1, 1), (1, 1, 1)), [0.5, 0.5])
        q = DiscreteJoint(((1, 1, 1), (2, 1, 1)), [0.5, 0.5])
        # midpoint (.25, .5, .25): KL(p||m) = 0.5 ln 2 + 0.5 ln 1 ; same for q
        expected = math.sqrt(0.5 * math.log(2.0))
        assert js_distance(p, q) == pytest.approx(expected, abs=1e-15)


class TestUpperBound:
    def test_single_identical_source(self):
        rng = np.random.default_rng(3)
        p = random_joint(rng, ATOMS)
        assert fairness_upper_bound([0.3], [p], p) == pytest.approx(0.3, abs=1e-15)

    def test_two_identical_sources(self):
        rng = np.random.default_rng(3)
        p = random_joint(rng, ATOMS)
        assert fairness_upper_bound([0.2, 0.4], [p, p], p) == pytest.approx(0.3, abs=1e-15)

    def test_terms(self):
        a, b = point_mass((0, 1, 1)), point_mass((1, -1, 0))
        # target equals a: min distance 0, spread sqrt(ln 2)
        v = fairness_upper_bound([0.1, 0.3], [a, b], a)
        assert v == pytest.approx(0.2 + math.sqrt(2.0) * math.sqrt(math.log(2.0)), abs=1e-14)

    def test_no_sources(self):
        with pytest.raises(EmptySources):
            fairness_upper_bound([], [], point_mass((0, 1, 1)))


def test_joint_validation():
    with pytest.raises(ValueError):
        DiscreteJoint(((0, 1, 1), (1, 1, 1)), [0.6, 0.6])
    with pytest.raises(ValueError):
        DiscreteJoint(((0, 0, 1),), [1.0])


def test_joint_rho_matches_enumeration():
    rng = np.random.default_rng(11)
    j = random_joint(rng, ATOMS)
    table = j.as_dict()
    for labels in itertools.product((0, 1), repeat=3):
        pos = sum(p for (x, z, y), p in table.items() if z == 1)
        r1 = sum(p * labels[x] for (x, z, y), p in table.items() if z == 1) / pos
        r0 = sum(p * labels[x] for (x, z, y), p in table.items() if z == -1) / (1 - pos)
        assert j.rho(lambda x, z, y: labels[x]) == pytest.approx(abs(r1 - r0), abs=1e-12)


def test_report_keys_sorted():
    r = MetricsReport("R", 0.9, 0.1, 0.8, 0.55)
    assert list(r.to_dict()) == sorted(r.to_dict())
    assert MetricsReport.from_dict(r.to_dict()) == r
