"""Multi-domain fairness datasets: containers, splitting and the CSV format.

A dataset row is ``(features, sensitive, label)`` with the sensitive
attribute in {-1, +1} and the label in {0, 1}.  Datasets are immutable;
every operation returns new objects.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EmptyGroup, FormatError, TooSmall

SENSITIVE_VALUES = (-1, 1)
LABEL_VALUES = (0, 1)


class LabeledExample(NamedTuple):
    features: np.ndarray
    sensitive: int
    label: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """All examples of one domain, stored column-wise.

    ``declared_rho`` is generator metadata only; metrics always recompute
    the dependence score from the rows.
    """

    domain_id: str
    features: np.ndarray
    sensitive: np.ndarray
    label: np.ndarray
    declared_rho: float | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if len(x) else x.reshape(0, 0)
        z = np.asarray(self.sensitive).astype(np.int64).reshape(-1)
        y = np.asarray(self.label).astype(np.int64).reshape(-1)
        if x.ndim != 2 or not (len(x) == len(z) == len(y)):
            raise ValueError(
                f"domain {self.domain_id!r}: features/sensitive/label lengths differ "
                f"({len(x)}, {len(z)}, {len(y)})"
            )
        if not np.all(np.isin(z, SENSITIVE_VALUES)):
            raise ValueError(f"domain {self.domain_id!r}: sensitive values must be in {{-1, 1}}")
        if not np.all(np.isin(y, LABEL_VALUES)):
            raise ValueError(f"domain {self.domain_id!r}: labels must be in {{0, 1}}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"domain {self.domain_id!r}: features contain non-finite values")
        if self.declared_rho is not None and not 0.0 <= self.declared_rho <= 1.0:
            raise ValueError("declared_rho must lie in [0, 1]")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "sensitive", _frozen(z))
        object.__setattr__(self, "label", _frozen(y))

    @classmethod
    def from_examples(cls, domain_id, examples: Sequence[LabeledExample], declared_rho=None):
        examples = list(examples)
        if not examples:
            raise ValueError("from_examples needs at least one example")
        x = np.stack([np.asarray(e.features, dtype=np.float64) for e in examples])
        z = [e.sensitive for e in examples]
        y = [e.label for e in examples]
        return cls(domain_id, x, z, y, declared_rho)

    def __len__(self) -> int:
        return len(self.label)

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield LabeledExample(self.features[i], int(self.sensitive[i]), int(self.label[i]))

    @property
    def examples(self) -> list[LabeledExample]:
        return list(self)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index, domain_id=None) -> "DomainDataset":
        index = np.asarray(index, dtype=np.int64)
        return DomainDataset(
            self.domain_id if domain_id is None else domain_id,
            self.features[index].reshape(len(index), self.dim),
            self.sensitive[index],
            self.label[index],
            self.declared_rho,
        )

    def __eq__(self, other):
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.domain_id == other.domain_id
            and self.declared_rho == other.declared_rho
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.sensitive, other.sensitive)
            and np.array_equal(self.label, other.label)
        )

    __hash__ = None


def concat(datasets: Sequence[DomainDataset], domain_id="pooled") -> DomainDataset:
    dims = {d.dim for d in datasets}
    if len(dims) != 1:
        raise ValueError(f"datasets disagree on feature dimension: {sorted(dims)}")
    return DomainDataset(
        domain_id,
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.sensitive for d in datasets]),
        np.concatenate([d.label for d in datasets]),
    )


def dependence_score(dataset: DomainDataset) -> float:
    """Label/sensitive dependence ``|P(Y=1|Z=1) - P(Y=1|Z=-1)|`` of a domain."""
    z, y = dataset.sensitive, dataset.label
    pos, neg = z == 1, z == -1
    if not pos.any() or not neg.any():
        raise EmptyGroup(f"domain {dataset.domain_id!r} lacks one sensitive group")
    return float(abs(y[pos].mean() - y[neg].mean()))


@dataclass(frozen=True)
class SplitPlan:
    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1 or not 0 < self.validation_fraction < 1:
            raise ValueError("split fractions must lie in (0, 1)")
        if self.train_fraction + self.validation_fraction > 1 + 1e-12:
            raise ValueError("train_fraction + validation_fraction must not exceed 1")

    @property
    def test_fraction(self) -> float:
        return max(0.0, 1.0 - self.train_fraction - self.validation_fraction)


def split(dataset: DomainDataset, plan: SplitPlan):
    """Stratified split on the four (z, y) cells.

    Returns ``(train, validation, test)``.  Each cell is shuffled with the
    plan's seed and cut at rounded cumulative fractions, so per-cell counts
    are within one example of the requested fraction.
    """
    if len(dataset) == 0:
        raise TooSmall("cannot split an empty dataset")
    rng = np.random.default_rng(plan.seed)
    cut_train = plan.train_fraction
    cut_val = min(1.0, plan.train_fraction + plan.validation_fraction)
    needed = 2 + (plan.test_fraction > 1e-12)
    parts: list[list[np.ndarray]] = [[], [], []]
    for z in SENSITIVE_VALUES:
        for y in LABEL_VALUES:
            cell = np.flatnonzero((dataset.sensitive == z) & (dataset.label == y))
            n = len(cell)
            if n == 0:
                continue
            if n < needed:
                raise TooSmall(f"cell (z={z}, y={y}) has {n} examples; {needed} splits need one each")
            cell = cell[rng.permutation(n)]
            a = int(math.floor(cut_train * n + 0.5))
            b = int(math.floor(cut_val * n + 0.5))
            parts[0].append(cell[:a])
            parts[1].append(cell[a:b])
            parts[2].append(cell[b:])
    return tuple(
        dataset.subset(np.sort(np.concatenate(p)) if p else np.array([], dtype=np.int64))
        for p in parts
    )


def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def save_tabular(datasets: Sequence[DomainDataset], path, extra_manifest: dict | None = None):
    """Write datasets to ``path`` as CSV plus a JSON sidecar manifest.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    path = Path(path)
    dims = {d.dim for d in datasets}
    if len(dims) > 1:
        raise ValueError(f"datasets disagree on feature dimension: {sorted(dims)}")
    d = dims.pop() if dims else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "z", "y"] + [f"x{j}" for j in range(d)])
        for ds in datasets:
            for i in range(len(ds)):
                w.writerow(
                    [ds.domain_id, int(ds.sensitive[i]), int(ds.label[i])]
                    + [repr(float(v)) for v in ds.features[i]]
                )
    manifest = {
        "dim": d,
        "domains": [{"domain_id": ds.domain_id, "declared_rho": ds.declared_rho, "n": len(ds)}
                    for ds in datasets],
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    _manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_int(text, row, name, allowed):
    try:
        v = int(text)
    except ValueError:
        raise FormatError(f"column {name} is not an integer: {text!r}", row) from None
    if v not in allowed:
        raise FormatError(f"{name}={v} not in {set(allowed)}", row)
    return v


def load_tabular(path) -> list[DomainDataset]:
    """Read a CSV written by :func:`save_tabular`; domains keep first-appearance order."""
    path = Path(path)
    rows: dict[str, tuple[list, list, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("file is empty", 1) from None
        if header[:3] != ["domain", "z", "y"] or header[3:] != [f"x{j}" for j in range(len(header) - 3)]:
            raise FormatError(f"bad header {header!r}", 1)
        ncol = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != ncol:
                raise FormatError(f"expected {ncol} columns, got {len(rec)}", lineno)
            z = _parse_int(rec[1], lineno, "z", SENSITIVE_VALUES)
            y = _parse_int(rec[2], lineno, "y", LABEL_VALUES)
            try:
                x = [float(v) for v in rec[3:]]
            except ValueError:
                raise FormatError("feature is not a number", lineno) from None
            if not all(math.isfinite(v) for v in x):
                raise FormatError("non-finite feature value", lineno)
            xs, zs, ys = rows.setdefault(rec[0], ([], [], []))
            xs.append(x)
            zs.append(z)
            ys.append(y)
    declared = {}
    mpath = _manifest_path(path)
    if mpath.exists():
        for entry in json.loads(mpath.read_text()).get("domains", []):
            declared[entry["domain_id"]] = entry.get("declared_rho")
    d = ncol - 3
    return [
        DomainDataset(k, np.array(xs, dtype=np.float64).reshape(len(xs), d), zs, ys, declared.get(k))
        for k, (xs, zs, ys) in rows.items()
    ]


def read_manifest(path) -> dict:
    mpath = _manifest_path(Path(path))
    return json.loads(mpath.read_text()) if mpath.exists() else {}
