"""Primal-dual training of a fair, transformation-invariant classifier.

Each minibatch is paired with an augmented copy moved to a random
synthetic domain by the transformation model.  The classifier minimises

    L_cls + lambda1 * L_inv + lambda2 * L_fair

with one Adam step, after which the multipliers take a projected ascent
step ``lambda <- max(lambda + eta_d * (loss - gamma), 0)``.

Ablation modes:

``no-ea``     style-only augmentation ``G_o(E_m(x), s')`` with z kept; the
              augmented batch adds a second classification loss; only the
              fairness multiplier is used.
``no-t``      no augmentation at all; ``L_cls + lambda2 * L_fair`` on the raw batch.
``no-lfair``  full augmentation but ``L_cls + lambda1 * L_inv`` only.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import DomainDataset, concat
from .errors import DimensionMismatch, LengthMismatch
from .nets import (DTYPE, Batch, BatchSampler, as_tensor, check_finite, generator,
                   load_state_strict, mlp, read_checkpoint, save_checkpoint)
from .transform import TransformModel, augment, augment_outer

MODES = ("full", "no-ea", "no-t", "no-lfair")
MODE_ALIASES = {
    "ablate_no_Ea": "no-ea",
    "ablate_no_T": "no-t",
    "ablate_no_Lfair": "no-lfair",
}
TRACE_HEADER = ("iter", "L_cls", "L_inv", "L_fair", "lambda1", "lambda2")


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class ClassifierShape:
    input_dim: int
    hidden: tuple = (32, 32)


class Classifier(nn.Module):
    """MLP producing two-class logits."""

    def __init__(self, shape: ClassifierShape, seed: int = 0):
        super().__init__()
        self.shape = shape
        self.net = mlp((shape.input_dim, *shape.hidden, 2), generator(seed))

    def forward(self, x):
        return self.net(x)


@dataclass(frozen=True)
class DualState:
    lambda1: float = 1.0
    lambda2: float = 1.0
    gamma1: float = 0.025
    gamma2: float = 0.025
    eta_primal: float = 1e-3
    eta_dual: float = 0.05

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("multipliers must be nonnegative")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("slack constants must be nonnegative")
        if not (self.eta_primal > 0 and self.eta_dual > 0):
            raise ValueError("learning rates must be positive")


def dual_step(state: DualState, inv_loss: float, fair_loss: float,
              update_lambda1: bool = True, update_lambda2: bool = True) -> DualState:
    """Projected gradient ascent on both multipliers."""
    l1, l2 = state.lambda1, state.lambda2
    if update_lambda1:
        l1 = max(l1 + state.eta_dual * (inv_loss - state.gamma1), 0.0)
    if update_lambda2:
        l2 = max(l2 + state.eta_dual * (fair_loss - state.gamma2), 0.0)
    return replace(state, lambda1=l1, lambda2=l2)


@dataclass(frozen=True)
class FedoraConfig:
    iterations: int = 1000
    batch_size: int = 128
    seed: int = 0
    lr: float = 1e-3
    eta_dual: float = 0.05
    gamma1: float = 0.025
    gamma2: float = 0.025
    lambda1: float = 1.0
    lambda2: float = 1.0
    update_lambda1: bool = True
    update_lambda2: bool = True
    mode: str = "full"
    hidden: tuple = (32, 32)
    # snapshot interval for model selection; 0 means every 10% of iterations
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", canonical_mode(self.mode))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")
        if not (self.lr > 0 and self.eta_dual > 0):
            raise ValueError("learning rates must be positive")
        if min(self.gamma1, self.gamma2, self.lambda1, self.lambda2) < 0:
            raise ValueError("slacks and initial multipliers must be nonnegative")

    @property
    def snapshot_interval(self) -> int:
        return self.checkpoint_every or max(1, self.iterations // 10)

    def dual_state(self) -> DualState:
        return DualState(self.lambda1, self.lambda2, self.gamma1, self.gamma2, self.lr, self.eta_dual)


def _probs(params: Classifier, x):
    return F.softmax(params(x), dim=-1)


def classification_loss(params: Classifier, batch: Batch) -> torch.Tensor:
    """Mean cross-entropy of the softmaxed logits."""
    return F.cross_entropy(params(batch.x), batch.y)


def kl_rows(p_log: torch.Tensor, q_log: torch.Tensor) -> torch.Tensor:
    return (p_log.exp() * (p_log - q_log)).sum(dim=-1)


def invariance_loss(params: Classifier, batch: Batch, augmented: Batch) -> torch.Tensor:
    """Mean ``KL(f(x) || f(x'))`` over aligned pairs; the original is the reference."""
    if len(batch) != len(augmented):
        raise LengthMismatch(f"batch has {len(batch)} rows, augmented batch {len(augmented)}")
    return kl_rows(F.log_softmax(params(batch.x), -1), F.log_softmax(params(augmented.x), -1)).mean()


def batch_gap(scores: torch.Tensor, z: torch.Tensor):
    """``|mean g(score, z)|`` with the batch's own p1, or None if a group is missing."""
    p1 = float((z == 1).to(DTYPE).mean())
    if p1 <= 0.0 or p1 >= 1.0:
        return None
    return ((((z + 1.0) / 2.0 - p1) * scores).mean() / (p1 * (1.0 - p1))).abs()


class FairnessTerms(NamedTuple):
    value: torch.Tensor
    degenerate: int


def _fair(params, batches: Sequence[Batch]) -> FairnessTerms:
    total = torch.zeros((), dtype=DTYPE)
    degenerate = 0
    for b in batches:
        gap = batch_gap(_probs(params, b.x)[:, 1], b.z)
        if gap is None:
            degenerate += 1
        else:
            total = total + gap
    return FairnessTerms(total, degenerate)


def fairness_loss(params: Classifier, batch: Batch, augmented: Batch | None = None) -> torch.Tensor:
    """Sum of ``|mean g|`` over the original and the augmented batch.

    Soft scores ``P(y=1)`` are used.  A batch missing one sensitive group
    contributes 0.
    """
    batches = [batch] if augmented is None else [batch, augmented]
    return _fair(params, batches).value


class TraceRow(NamedTuple):
    iter: int
    L_cls: float
    L_inv: float
    L_fair: float
    lambda1: float
    lambda2: float


@dataclass
class FedoraResult:
    params: Classifier
    trace: list
    config: FedoraConfig
    snapshots: list = field(default_factory=list)  # (iteration, state_dict)
    degenerate_batches: int = 0
    augment_calls: int = 0

    @property
    def final_dual(self) -> tuple:
        last = self.trace[-1]
        return last.lambda1, last.lambda2


def _mode_augmenter(mode: str, transform: TransformModel | None) -> Callable | None:
    if mode == "no-t":
        return None
    if transform is None:
        raise ValueError(f"mode {mode!r} needs a trained transformation model")
    if mode == "no-ea":
        return lambda b, rng: Batch(*augment_outer(transform, b.x, b.z, b.y, rng))
    return lambda b, rng: Batch(*augment(transform, b.x, b.z, b.y, rng))


def train_fedora(transform: TransformModel | None, datasets: Sequence[DomainDataset],
                 config: FedoraConfig, augmenter: Callable | None = None) -> FedoraResult:
    """Run the primal-dual loop (or an ablation, per ``config.mode``).

    ``augmenter(batch, rng) -> Batch`` overrides the mode's default
    augmentation; it is never called in mode ``no-t``.
    """
    if not datasets:
        raise ValueError("need at least one source domain")
    mode = config.mode
    pooled = concat(list(datasets))
    model = Classifier(ClassifierShape(pooled.dim, config.hidden), seed=config.seed)
    aug = None if mode == "no-t" else (augmenter or _mode_augmenter(mode, transform))
    rng = generator(config.seed + 1)
    sampler = BatchSampler(pooled, config.batch_size, generator(config.seed + 2))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)

    use_inv = mode in ("full", "no-lfair")
    use_fair = mode in ("full", "no-ea", "no-t")
    upd1 = config.update_lambda1 and use_inv
    upd2 = config.update_lambda2 and use_fair
    state = config.dual_state()
    result = FedoraResult(model, [], config)
    every = config.snapshot_interval
    zero = torch.zeros((), dtype=DTYPE)

    for it in range(config.iterations):
        batch = sampler.next()
        augmented = None
        if aug is not None:
            augmented = aug(batch, rng)
            result.augment_calls += 1

        l_cls = classification_loss(model, batch)
        if mode == "no-ea":
            l_cls = l_cls + classification_loss(model, augmented)
        l_inv = invariance_loss(model, batch, augmented) if use_inv else zero
        if use_fair:
            fair_batches = [batch, augmented] if mode == "full" else [batch]
            terms = _fair(model, fair_batches)
            l_fair = terms.value
            result.degenerate_batches += terms.degenerate
        else:
            l_fair = zero

        lagrangian = l_cls + state.lambda1 * l_inv + state.lambda2 * l_fair
        check_finite(lagrangian, it, "Lagrangian")
        opt.zero_grad(set_to_none=True)
        lagrangian.backward()
        opt.step()

        inv_v, fair_v = float(l_inv.detach()), float(l_fair.detach())
        state = dual_step(state, inv_v, fair_v, upd1, upd2)
        result.trace.append(TraceRow(it, float(l_cls.detach()), inv_v, fair_v, state.lambda1, state.lambda2))
        if (it + 1) % every == 0 or it + 1 == config.iterations:
            result.snapshots.append((it + 1, copy.deepcopy(model.state_dict())))
    return result


train_ablation = train_fedora


@torch.no_grad()
def predict(params: Classifier, x):
    """Return ``(hard_label, score)`` with ``score = P(y=1)`` and a 0.5 threshold."""
    xt = as_tensor(x)
    single = xt.dim() == 1
    if single:
        xt = xt.unsqueeze(0)
    if xt.shape[-1] != params.shape.input_dim:
        raise DimensionMismatch(f"x has dimension {xt.shape[-1]}, classifier expects {params.shape.input_dim}")
    score = _probs(params, xt)[:, 1].numpy()
    hard = (score >= 0.5).astype(np.int64)
    if single:
        return int(hard[0]), float(score[0])
    return hard, score


def write_trace(trace: Sequence[TraceRow], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in trace:
            w.writerow([row.iter] + [repr(float(v)) for v in row[1:]])


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        return [TraceRow(int(r[0]), *map(float, r[1:])) for r in reader]


def save_classifier(params: Classifier, path, config: FedoraConfig | None = None):
    save_checkpoint(params, path, "classifier", {
        "shape": {"input_dim": params.shape.input_dim, "hidden": list(params.shape.hidden)},
        "config": asdict(config) if config is not None else None,
    })


def load_classifier(path) -> Classifier:
    meta, state = read_checkpoint(path, "classifier")
    shape = ClassifierShape(meta["shape"]["input_dim"], tuple(meta["shape"]["hidden"]))
    model = Classifier(shape)
    load_state_strict(model, state, path)
    return model
