"""Group-fairness metrics, Jensen-Shannon distance and the target-domain bound.

Sensitive attributes are coded in {-1, +1} throughout.  ``p1`` is the
proportion of the z = +1 group (demographic parity convention).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from itertools import combinations
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateGroup, EmptyGroup, EmptySources

# Upper limit of the JS distance with natural logarithms.
JS_MAX = math.sqrt(math.log(2.0))


def _groups(sensitives):
    z = np.asarray(sensitives).reshape(-1)
    pos, neg = z == 1, z == -1
    if not np.all(pos | neg):
        raise ValueError("sensitive values must be in {-1, +1}")
    if not pos.any() or not neg.any():
        raise EmptyGroup("both sensitive groups must be present")
    return z, pos, neg


def group_gap(prediction, sensitive, p1):
    """Linear fairness function ``g(prediction, z)`` for a group proportion ``p1``.

    Works elementwise on arrays as well as on scalars.
    """
    if not 0.0 < p1 < 1.0:
        raise DegenerateGroup(f"p1={p1} must lie strictly between 0 and 1")
    z = np.asarray(sensitive, dtype=np.float64)
    yhat = np.asarray(prediction, dtype=np.float64)
    return ((z + 1.0) / 2.0 - p1) * yhat / (p1 * (1.0 - p1))


def rho(predictions, sensitives) -> float:
    """Absolute mean of ``group_gap`` with p1 estimated from ``sensitives``.

    ``predictions`` may be hard labels or scores in [0, 1].
    """
    yhat = np.asarray(predictions, dtype=np.float64).reshape(-1)
    z, pos, _ = _groups(sensitives)
    if len(yhat) != len(z):
        raise ValueError("predictions and sensitives differ in length")
    p1 = pos.mean()
    return float(abs(np.mean(group_gap(yhat, z, p1))))


def positive_rates(binary_predictions, sensitives):
    """Return ``(P(yhat=1 | z=-1), P(yhat=1 | z=+1))``."""
    yhat = np.asarray(binary_predictions).reshape(-1)
    _, pos, neg = _groups(sensitives)
    return float(yhat[neg].mean()), float(yhat[pos].mean())


def dp_ratio(binary_predictions, sensitives) -> float:
    """Demographic-parity ratio ``min(k, 1/k)`` of the group positive rates.

    Both rates zero gives 1.0 (identical behaviour); exactly one rate zero
    gives 0.0.
    """
    r_neg, r_pos = positive_rates(binary_predictions, sensitives)
    if r_neg == 0.0 and r_pos == 0.0:
        return 1.0
    if r_neg == 0.0 or r_pos == 0.0:
        return 0.0
    k = r_neg / r_pos
    return float(min(k, 1.0 / k))


def auc_fair(scores, sensitives) -> float:
    """Probability that a z=-1 score exceeds a z=+1 score, ties counting one half.

    Computed from average ranks (the Mann-Whitney U statistic), which is
    identical to the pairwise double sum.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    z, pos, neg = _groups(sensitives)
    if len(s) != len(z):
        raise ValueError("scores and sensitives differ in length")
    n_neg, n_pos = int(neg.sum()), int(pos.sum())
    ranks = rankdata(s)
    u = ranks[neg].sum() - n_neg * (n_neg + 1) / 2.0
    return float(u / (n_neg * n_pos))


def accuracy(binary_predictions, labels) -> float:
    yhat = np.asarray(binary_predictions).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    return float(np.mean(yhat == y))


@dataclass(frozen=True)
class MetricsReport:
    target_domain: str
    accuracy: float
    rho: float
    dp_ratio: float
    auc_fair: float

    def to_dict(self) -> dict:
        return dict(sorted(asdict(self).items()))

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    @classmethod
    def evaluate(cls, target_domain, labels, sensitives, hard, scores) -> "MetricsReport":
        return cls(
            target_domain=target_domain,
            accuracy=accuracy(hard, labels),
            rho=rho(hard, sensitives),
            dp_ratio=dp_ratio(hard, sensitives),
            auc_fair=auc_fair(scores, sensitives),
        )


METRIC_NAMES = ("accuracy", "rho", "dp_ratio", "auc_fair")


def average_report(reports: Sequence[MetricsReport], name="average") -> MetricsReport:
    if not reports:
        raise ValueError("no reports to average")
    return MetricsReport(name, *(float(np.mean([getattr(r, m) for r in reports])) for m in METRIC_NAMES))


Atom = tuple  # (x_cell, z, y)


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Finite joint distribution over ``(x_cell, z, y)`` atoms."""

    support: tuple
    probabilities: np.ndarray

    def __post_init__(self):
        support = tuple(tuple(a) for a in self.support)
        p = np.array(self.probabilities, dtype=np.float64).reshape(-1)
        if len(support) != len(p):
            raise ValueError("support and probabilities differ in length")
        if len(set(support)) != len(support):
            raise ValueError("support atoms must be distinct")
        for _, z, y in support:
            if z not in (-1, 1) or y not in (0, 1):
                raise ValueError(f"bad atom z={z}, y={y}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probabilities", p)

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probabilities))

    @property
    def cells(self) -> list:
        seen = {}
        for x, _, _ in self.support:
            seen.setdefault(x, None)
        return list(seen)

    def p_positive(self) -> float:
        return float(sum(p for (x, z, y), p in zip(self.support, self.probabilities) if z == 1))

    def dependence_score(self) -> float:
        """Population ``|P(Y=1|Z=1) - P(Y=1|Z=-1)|``."""
        return self.rho(lambda x, z, y: y)

    def rho(self, predictor) -> float:
        """Population rho of ``predictor(x, z, y) -> {0,1}`` (or a score)."""
        p1 = self.p_positive()
        total = 0.0
        for (x, z, y), p in zip(self.support, self.probabilities):
            total += p * float(group_gap(predictor(x, z, y), z, p1))
        return abs(total)


def _aligned(p: DiscreteJoint, q: DiscreteJoint):
    atoms = list(dict.fromkeys(p.support + q.support))
    pm, qm = p.as_dict(), q.as_dict()
    return (np.array([pm.get(a, 0.0) for a in atoms]),
            np.array([qm.get(a, 0.0) for a in atoms]))


def _kl(a, b):
    mask = a > 0
    return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))


def js_distance(p: DiscreteJoint, q: DiscreteJoint) -> float:
    """Jensen-Shannon distance (natural log), zero-padding the union of supports."""
    a, b = _aligned(p, q)
    m = 0.5 * (a + b)
    div = 0.5 * _kl(a, m) + 0.5 * _kl(b, m)
    return math.sqrt(max(div, 0.0))


def fairness_upper_bound(source_rhos, source_joints: Sequence[DiscreteJoint],
                         target_joint: DiscreteJoint) -> float:
    """Bound on the target-domain rho from source rhos and JS distances.

    mean(source rho) + sqrt(2) * min_i dist(target, source_i)
                     + sqrt(2) * max_{i,j} dist(source_i, source_j)
    """
    rhos = list(source_rhos)
    joints = list(source_joints)
    if not joints:
        raise EmptySources("at least one source domain is required")
    if len(rhos) != len(joints):
        raise ValueError("source_rhos and source_joints are not aligned")
    to_target = min(js_distance(target_joint, s) for s in joints)
    spread = max((js_distance(a, b) for a, b in combinations(joints, 2)), default=0.0)
    return float(np.mean(rhos) + math.sqrt(2.0) * to_target + math.sqrt(2.0) * spread)


def joint_from_table(table: Mapping[Hashable, float]) -> DiscreteJoint:
    atoms = sorted(table)
    return DiscreteJoint(tuple(atoms), np.array([table[a] for a in atoms]))
