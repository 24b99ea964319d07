"""Synthetic multi-domain data with separately controlled covariate and dependence shift.

Every domain shares the same class-conditional semantic content.  A domain
differs from another only through

* its style, an affine map applied to the features (covariate shift), and
* its target dependence score rho, realised as
  ``P(Y=1|Z=+1) = 0.5 + rho/2`` and ``P(Y=1|Z=-1) = 0.5 - rho/2`` with
  ``P(Z=+1) = 0.5`` fixed (dependence shift with unchanged P(Z) and P(Y)).
  Group sizes and per-group positive counts are fixed by rounding, so the
  realised score matches the target up to ``O(1/n)``.

Two families are provided: continuous tabular domains for training, and
discrete domains over a small cyclic feature alphabet whose exact joint
distribution can be enumerated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import DomainDataset
from .errors import InvalidSpec
from .metrics import DiscreteJoint



def class_means(mu: float, label_dims: int = 4, dim: int = 8) -> tuple:
    """Class-0 / class-1 means ``-mu`` / ``+mu`` on the first ``label_dims`` features, 0 elsewhere."""
    rest = (0.0,) * (dim - label_dims)
    return ((-mu,) * label_dims + rest, (mu,) * label_dims + rest)


# dims 0-3 carry the label, dims 4-6 receive the sensitive effect, dim 7 is pure noise.
DEFAULT_CLASS_MEAN = 1.0
DEFAULT_CLASS_MEANS = class_means(DEFAULT_CLASS_MEAN)
DEFAULT_SENSITIVE_EFFECT = (0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0)
DEFAULT_STYLE_DIMS = (0, 1, 2, 3, 7)
DEFAULT_RHOS = (0.11, 0.43, 0.87)
DEFAULT_DOMAIN_IDS = ("R", "G", "B")


@dataclass(frozen=True)
class Style:
    """Affine style map ``x -> scale * R(angle) x + shift`` on a subset of features.

    ``R`` rotates consecutive pairs of the selected features by ``angle``;
    an odd trailing feature is left unrotated.  Features outside ``dims``
    (the sensitive block, by default) are not touched.
    """

    angle: float = 0.0
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidSpec("style scale must be positive")

    def as_vector(self) -> list[float]:
        return [self.angle, self.scale, self.shift]

    @classmethod
    def from_vector(cls, v) -> "Style":
        v = list(v)
        if len(v) != 3:
            raise InvalidSpec("style vector is (angle, scale, shift)")
        return cls(*map(float, v))

    @staticmethod
    def _rotate(x, angle):
        out = x.copy()
        c, s = math.cos(angle), math.sin(angle)
        for j in range(0, x.shape[1] - 1, 2):
            a, b = x[:, j], x[:, j + 1]
            out[:, j] = c * a - s * b
            out[:, j + 1] = s * a + c * b
        return out

    def apply(self, x: np.ndarray, dims=None) -> np.ndarray:
        dims = list(range(x.shape[1])) if dims is None else list(dims)
        out = np.array(x, dtype=np.float64, copy=True)
        out[:, dims] = self.scale * self._rotate(out[:, dims], self.angle) + self.shift
        return out

    def invert(self, x: np.ndarray, dims=None) -> np.ndarray:
        dims = list(range(x.shape[1])) if dims is None else list(dims)
        out = np.array(x, dtype=np.float64, copy=True)
        out[:, dims] = self._rotate((out[:, dims] - self.shift) / self.scale, -self.angle)
        return out


DEFAULT_STYLES = (
    Style(0.0, 1.0, 0.0),
    Style(math.pi / 8, 1.1, 0.2),
    Style(-math.pi / 8, 1.0 / 1.1, -0.2),
)


@dataclass(frozen=True)
class SyntheticDomainSpec:
    domain_id: str
    target_rho: float
    style: Style = Style()
    sensitive_effect: tuple = DEFAULT_SENSITIVE_EFFECT
    n_examples: int = 2000
    seed: int = 0
    class_means: tuple = DEFAULT_CLASS_MEANS
    noise: float = 1.0
    style_dims: tuple = DEFAULT_STYLE_DIMS

    def validate(self):
        if not 0.0 <= self.target_rho <= 1.0:
            raise InvalidSpec(f"{self.domain_id}: target_rho must lie in [0, 1]")
        if self.n_examples < 4:
            raise InvalidSpec(f"{self.domain_id}: need at least 4 examples")
        if len(self.class_means) != 2 or len(self.class_means[0]) != len(self.class_means[1]):
            raise InvalidSpec("class_means must hold two equal-length vectors")
        if len(self.sensitive_effect) != self.dim:
            raise InvalidSpec("sensitive_effect length must equal the feature dimension")
        if not self.noise > 0:
            raise InvalidSpec("noise must be positive")
        if any(not 0 <= j < self.dim for j in self.style_dims):
            raise InvalidSpec("style_dims out of range")

    @property
    def dim(self) -> int:
        return len(self.class_means[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["style"] = self.style.as_vector()
        return d

    @classmethod
    def from_dict(cls, d) -> "SyntheticDomainSpec":
        d = dict(d)
        d["style"] = Style.from_vector(d["style"])
        d["sensitive_effect"] = tuple(d["sensitive_effect"])
        d["class_means"] = tuple(tuple(m) for m in d["class_means"])
        d["style_dims"] = tuple(d["style_dims"])
        return cls(**d)


def _conditional_rates(rho):
    """``(P(Y=1|Z=-1), P(Y=1|Z=+1))`` for a target dependence score."""
    return 0.5 - rho / 2.0, 0.5 + rho / 2.0


def _exact_counts(n, rho, rng):
    """Shuffled (z, y) with group sizes and per-group positives fixed by rounding.

    Independent draws would put the realised dependence score within about
    one standard error (0.01 at n = 10000) of the target; fixing the counts
    brings it to within rounding of ``1/n``.
    """
    n_pos = n // 2
    rate_neg, rate_pos = _conditional_rates(rho)
    z = np.repeat([1, -1], [n_pos, n - n_pos])
    y = np.zeros(n, dtype=np.int64)
    for group, size, rate in ((1, n_pos, rate_pos), (-1, n - n_pos, rate_neg)):
        labels = np.zeros(size, dtype=np.int64)
        labels[: int(math.floor(rate * size + 0.5))] = 1
        y[z == group] = rng.permutation(labels)
    order = rng.permutation(n)
    return z[order], y[order]


def gen_tabular_domain(spec: SyntheticDomainSpec, return_base: bool = False):
    """Sample one domain.

    With ``return_base`` the pre-style, pre-sensitive base features are also
    returned, so callers can check that the semantic content is shared.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_examples
    z, y = _exact_counts(n, spec.target_rho, rng)
    means = np.asarray(spec.class_means, dtype=np.float64)
    base = means[y] + spec.noise * rng.standard_normal((n, spec.dim))
    x = base + np.outer(z == 1, np.asarray(spec.sensitive_effect, dtype=np.float64))
    x = spec.style.apply(x, spec.style_dims)
    ds = DomainDataset(spec.domain_id, x, z, y, declared_rho=spec.target_rho)
    return (ds, base) if return_base else ds


def benchmark_specs(rhos: Sequence[float] = DEFAULT_RHOS, styles: Sequence[Style] = DEFAULT_STYLES,
                    n_per_domain: int = 2000, seed: int = 0, domain_ids=None,
                    **spec_kwargs) -> list[SyntheticDomainSpec]:
    rhos, styles = list(rhos), list(styles)
    if len(rhos) != len(styles):
        raise InvalidSpec("rhos and styles must be aligned")
    if domain_ids is None:
        domain_ids = DEFAULT_DOMAIN_IDS if len(rhos) == 3 else [f"d{i}" for i in range(len(rhos))]
    seeds = np.random.SeedSequence(seed).generate_state(len(rhos))
    return [
        SyntheticDomainSpec(str(i), float(r), s, n_examples=n_per_domain, seed=int(sd), **spec_kwargs)
        for i, r, s, sd in zip(domain_ids, rhos, styles, seeds)
    ]


def gen_benchmark(rhos: Sequence[float] = DEFAULT_RHOS, styles: Sequence[Style] = DEFAULT_STYLES,
                  n_per_domain: int = 2000, seed: int = 0, **kwargs) -> list[DomainDataset]:
    """One dataset per aligned (rho, style) pair, all sharing the semantic means."""
    return [gen_tabular_domain(s) for s in benchmark_specs(rhos, styles, n_per_domain, seed, **kwargs)]


def benchmark_manifest(specs: Sequence[SyntheticDomainSpec]) -> dict:
    return {"generator": "tabular", "specs": [s.to_dict() for s in specs]}


# --- discrete domains -------------------------------------------------------

MAX_CELLS = 16


@dataclass(frozen=True)
class DiscreteDomainSpec:
    """Domain over ``n_cells`` feature values arranged on a circle.

    ``P(x | y, z)`` is a discretised Gaussian centred at
    ``class_centers[y] + sensitive_shift * [z = +1] + style_shift`` (mod
    ``n_cells``) with spread ``width``; the style is the pair
    (style_shift, width).
    """

    domain_id: str
    target_rho: float
    n_cells: int = 8
    style_shift: int = 0
    width: float = 1.0
    class_centers: tuple = (1.0, 4.0)
    sensitive_shift: float = 2.0

    def validate(self):
        if not 0.0 <= self.target_rho <= 1.0:
            raise InvalidSpec("target_rho must lie in [0, 1]")
        if not 2 <= self.n_cells <= MAX_CELLS:
            raise InvalidSpec(f"feature alphabet must have 2..{MAX_CELLS} cells")
        if not self.width > 0:
            raise InvalidSpec("width must be positive")

    def cell_distribution(self, y: int, z: int) -> np.ndarray:
        k = np.arange(self.n_cells, dtype=np.float64)
        center = self.class_centers[y] + (self.sensitive_shift if z == 1 else 0.0) + self.style_shift
        diff = np.abs(k - center) % self.n_cells
        circ = np.minimum(diff, self.n_cells - diff)
        w = np.exp(-0.5 * (circ / self.width) ** 2)
        return w / w.sum()


def exact_joint(spec) -> DiscreteJoint:
    """Exact ``P(x_cell, z, y)`` implied by a discrete spec's sampling process."""
    if not isinstance(spec, DiscreteDomainSpec):
        raise InvalidSpec("exact_joint needs a spec with a finite feature alphabet")
    spec.validate()
    rate_neg, rate_pos = _conditional_rates(spec.target_rho)
    atoms, probs = [], []
    for x in range(spec.n_cells):
        for z in (-1, 1):
            for y in (0, 1):
                rate = rate_pos if z == 1 else rate_neg
                p_y = rate if y == 1 else 1.0 - rate
                atoms.append((x, z, y))
                probs.append(0.5 * p_y * spec.cell_distribution(y, z)[x])
    probs = np.array(probs)
    return DiscreteJoint(tuple(atoms), probs / probs.sum())


def sample_discrete_domain(spec: DiscreteDomainSpec, n: int, seed: int = 0) -> DomainDataset:
    """Draw ``n`` rows from a discrete spec; the single feature is the cell index."""
    spec.validate()
    joint = exact_joint(spec)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(joint.support), size=n, p=joint.probabilities)
    atoms = np.array(joint.support)[idx]
    return DomainDataset(spec.domain_id, atoms[:, :1].astype(np.float64), atoms[:, 1], atoms[:, 2],
                         declared_rho=spec.target_rho)


def random_discrete_triple(rng: np.random.Generator, n_cells: int = 8) -> list[DiscreteDomainSpec]:
    """Three domains with independent rho, style shift and width.

    The first one is meant as the target, the other two as sources.
    """
    return [
        DiscreteDomainSpec(
            domain_id=name,
            target_rho=float(rng.uniform(0.0, 1.0)),
            n_cells=n_cells,
            style_shift=int(rng.integers(n_cells)),
            width=float(rng.uniform(0.5, 2.0)),
        )
        for name in ("target", "source_0", "source_1")
    ]
