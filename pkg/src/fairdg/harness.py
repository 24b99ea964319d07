"""Leave-one-domain-out experiments, lambda2 sweeps, bound audits and reports.

Output layout under an experiment's output directory::

    reports/<experiment>/fold_<domain>.json
    reports/<experiment>/average.json
    traces/<experiment>/fold_<domain>.csv
    plots/<experiment>/*.png
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.stats import spearmanr

from . import metrics
from .data import DomainDataset, SplitPlan, split
from .errors import EmptySources
from .metrics import DiscreteJoint, MetricsReport, average_report, fairness_upper_bound
from .synth import DiscreteDomainSpec, exact_joint, random_discrete_triple
from .trainer import Classifier, FedoraConfig, FedoraResult, predict, train_fedora, write_trace
from .transform import TransformModel, TransformShape, TransformTrainConfig, train_transform

log = logging.getLogger(__name__)

DEFAULT_LAMBDA2_SWEEP = (0.01, 0.05, 0.1, 1.0, 10.0)

# Desk-scale transform settings for the synthetic benchmark.  beta3 = 5 is
# inside the {1, 5, 10} weight grid; rates are raised from 1e-4 because the
# toy runs for thousands, not hundreds of thousands, of iterations.
TOY_TRANSFORM = TransformTrainConfig(
    beta1=10.0, beta2=1.0, beta3=5.0, beta4=1.0,
    lr_discriminator=1e-3, lr_autoencoder=1e-3, lr_sensitive=1e-2,
    iterations=2000, batch_size=64,
)
TOY_FEDORA = FedoraConfig(iterations=1000, batch_size=128, lr=1e-3)


def fold_seed(base_seed: int, domain_id: str) -> int:
    """Seed derived from (base seed, domain id) so folds do not depend on order."""
    digest = hashlib.sha256(f"{base_seed}:{domain_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class ExperimentPlan:
    datasets: list
    fedora: FedoraConfig = TOY_FEDORA
    transform: TransformTrainConfig = TOY_TRANSFORM
    repeats: int = 3
    seed: int = 0
    split: SplitPlan = SplitPlan(0.7, 0.15, 0)
    rho_cap: float = 0.1
    name: str = "experiment"
    output_dir: Path | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    @property
    def mode(self) -> str:
        return self.fedora.mode


@dataclass
class FoldRun:
    target: str
    repeat: int
    seed: int
    report: MetricsReport
    selected_iteration: int
    trace: list


@dataclass
class LodoResult:
    reports: list  # one MetricsReport per target, averaged over repeats
    average: MetricsReport
    spread: dict  # target (or "average") -> metric -> std over repeats
    runs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def all_reports(self) -> list:
        return list(self.reports) + [self.average]


def _std(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _evaluate(model: Classifier, ds: DomainDataset, name=None) -> MetricsReport:
    hard, score = predict(model, ds.features)
    return MetricsReport.evaluate(name or ds.domain_id, ds.label, ds.sensitive, hard, score)


def select_snapshot(result: FedoraResult, validation: Sequence[DomainDataset], rho_cap: float):
    """Pick the snapshot with the best mean source-validation accuracy among
    those whose mean validation rho is at most ``rho_cap``.  If none
    qualifies the cap is dropped and the most accurate snapshot wins; ties go
    to the later snapshot.  Returns ``(iteration, model)``.
    """
    model = Classifier(result.params.shape)
    scored = []
    for iteration, state in result.snapshots:
        model.load_state_dict(state)
        reps = [_evaluate(model, v) for v in validation]
        scored.append((iteration, float(np.mean([r.accuracy for r in reps])),
                       float(np.mean([r.rho for r in reps]))))
    best = choose_snapshot(scored, rho_cap)
    model.load_state_dict(result.snapshots[best][1])
    return scored[best][0], model


def choose_snapshot(scored: Sequence[tuple], rho_cap: float) -> int:
    """Index of the winner among ``(iteration, accuracy, rho)`` triples (see select_snapshot)."""
    if not scored:
        raise ValueError("no snapshots to choose from")
    index = range(len(scored))
    feasible = [i for i in index if scored[i][2] <= rho_cap] or list(index)
    return max(feasible, key=lambda i: (scored[i][1], scored[i][0]))


class TransformCache:
    """Memoises transformation models per (seed, sources, config, level)."""

    def __init__(self):
        self._store = {}

    def get(self, seed, sources: Sequence[DomainDataset], config: TransformTrainConfig,
            inner_level: bool) -> TransformModel:
        key = (seed, tuple(d.domain_id for d in sources), config, inner_level)
        if key not in self._store:
            shape = TransformShape(input_dim=sources[0].dim, inner_level=inner_level)
            self._store[key] = train_transform(sources, replace(config, seed=seed), shape)
        return self._store[key]


def run_fold(plan: ExperimentPlan, target_index: int, repeat: int, cache: TransformCache) -> FoldRun:
    base = plan.seed + repeat
    target = plan.datasets[target_index]
    seed = fold_seed(base, target.domain_id)
    splits = {
        d.domain_id: split(d, replace(plan.split, seed=fold_seed(base, "split:" + d.domain_id)))
        for d in plan.datasets
    }
    # sorted so that results do not depend on the order the domains were listed in
    sources = sorted((d for i, d in enumerate(plan.datasets) if i != target_index), key=lambda d: d.domain_id)
    if not sources:
        raise EmptySources("leave-one-domain-out needs at least two domains")
    train = [splits[d.domain_id][0] for d in sources]
    val = [splits[d.domain_id][1] for d in sources]
    test = splits[target.domain_id][2]
    if len(test) == 0:
        test = splits[target.domain_id][1]
    mode = plan.fedora.mode
    transform = None
    if mode != "no-t":
        transform = cache.get(seed, train, plan.transform, inner_level=(mode != "no-ea"))
    result = train_fedora(transform, train, replace(plan.fedora, seed=seed))
    iteration, model = select_snapshot(result, val, plan.rho_cap)
    report = _evaluate(model, test, target.domain_id)
    return FoldRun(target.domain_id, repeat, seed, report, iteration, result.trace)


def leave_one_domain_out(plan: ExperimentPlan, cache: TransformCache | None = None) -> LodoResult:
    """Hold out each domain in turn, train on the rest, evaluate on its test split."""
    if len(plan.datasets) < 2:
        raise EmptySources("leave-one-domain-out needs at least two domains")
    cache = cache or TransformCache()
    runs, failures = [], []
    for repeat in range(plan.repeats):
        for t in range(len(plan.datasets)):
            try:
                runs.append(run_fold(plan, t, repeat, cache))
            except Exception as exc:  # keep the remaining folds going
                log.warning("fold %s repeat %d failed: %s", plan.datasets[t].domain_id, repeat, exc)
                failures.append({"target": plan.datasets[t].domain_id, "repeat": repeat, "error": str(exc)})
    reports, spread = [], {}
    for d in plan.datasets:
        fold_runs = [r for r in runs if r.target == d.domain_id]
        if not fold_runs:
            continue
        reports.append(average_report([r.report for r in fold_runs], d.domain_id))
        spread[d.domain_id] = {m: _std([getattr(r.report, m) for r in fold_runs]) for m in metrics.METRIC_NAMES}
    if not reports:
        raise RuntimeError(f"every fold failed: {failures}")
    average = average_report(reports)
    per_repeat = []
    for repeat in range(plan.repeats):
        rr = [r.report for r in runs if r.repeat == repeat]
        if len(rr) == len(plan.datasets):
            per_repeat.append(average_report(rr))
    spread["average"] = {m: _std([getattr(r, m) for r in per_repeat]) for m in metrics.METRIC_NAMES}
    return LodoResult(reports, average, spread, runs, failures)


@dataclass
class SweepRow:
    lambda2: float
    accuracy: float
    dp_ratio: float
    rho: float
    auc_fair: float


@dataclass
class SweepResult:
    rows: list
    results: dict  # lambda2 -> LodoResult

    def spearman(self, metric: str) -> float:
        """Rank correlation of lambda2 with ``metric`` in the repeat-averaged table."""
        lam = [r.lambda2 for r in self.rows]
        vals = [getattr(r, metric) for r in self.rows]
        return float(spearmanr(lam, vals).statistic)

    def spearman_by_repeat(self, metric: str) -> list[float]:
        """One rank correlation per repeat, each over that repeat's averaged reports."""
        lams = sorted(self.results)
        n_repeats = min(len({r.repeat for r in res.runs}) for res in self.results.values())
        out = []
        for k in range(n_repeats):
            vals = []
            for lam in lams:
                reps = [r.report for r in self.results[lam].runs if r.repeat == k]
                vals.append(getattr(average_report(reps), metric))
            out.append(float(spearmanr(lams, vals).statistic))
        return out


def sweep_lambda2(plan: ExperimentPlan, lambda2_values: Sequence[float] = DEFAULT_LAMBDA2_SWEEP,
                  cache: TransformCache | None = None) -> SweepResult:
    """Leave-one-domain-out at each fixed lambda2 (its dual update frozen)."""
    if any(not v > 0 for v in lambda2_values):
        raise ValueError("lambda2 values must be positive")
    cache = cache or TransformCache()
    rows, results = [], {}
    for v in lambda2_values:
        fcfg = replace(plan.fedora, lambda2=float(v), update_lambda2=False, mode="full")
        res = leave_one_domain_out(replace(plan, fedora=fcfg), cache)
        results[float(v)] = res
        a = res.average
        rows.append(SweepRow(float(v), a.accuracy, a.dp_ratio, a.rho, a.auc_fair))
    return SweepResult(rows, results)


# --- bound audit -------------------------------------------------------------

@dataclass(frozen=True)
class AuditResult:
    rho_target: float
    bound: float
    satisfied: bool


def _as_predictor(classifier) -> Callable:
    if callable(classifier):
        return lambda x, z, y: classifier(x)
    table = dict(classifier)
    return lambda x, z, y: table[x]


def bound_audit(sources: Sequence[DiscreteJoint], target: DiscreteJoint, classifier) -> AuditResult:
    """Compare the classifier's target rho with the bound computed from its source rhos.

    ``classifier`` is a callable ``x_cell -> {0,1}`` or a mapping from cell to label.
    """
    if not sources:
        raise EmptySources("bound_audit needs at least one source")
    pred = _as_predictor(classifier)
    source_rhos = [s.rho(pred) for s in sources]
    rho_t = target.rho(pred)
    bound = fairness_upper_bound(source_rhos, sources, target)
    return AuditResult(rho_t, bound, rho_t <= bound + 1e-9)


def all_classifier_rhos(joint: DiscreteJoint, cells: Sequence, table: np.ndarray) -> np.ndarray:
    """Rho of every row of a 0/1 ``table`` (classifiers x cells), vectorised."""
    index = {c: i for i, c in enumerate(cells)}
    w = np.zeros(len(cells))
    p1 = joint.p_positive()
    for (x, z, _), p in zip(joint.support, joint.probabilities):
        w[index[x]] += p * ((z + 1) / 2.0 - p1) / (p1 * (1.0 - p1))
    return np.abs(table @ w)


@dataclass
class EnumeratedAudit:
    specs: list
    n_classifiers: int
    violations: int
    max_excess: float  # max of rho_target - bound over classifiers

    def to_dict(self):
        return {
            "specs": [asdict(s) for s in self.specs],
            "n_classifiers": self.n_classifiers,
            "violations": self.violations,
            "max_excess": self.max_excess,
        }


def audit_all_classifiers(target: DiscreteDomainSpec, sources: Sequence[DiscreteDomainSpec]) -> EnumeratedAudit:
    """Check the bound for every deterministic classifier on the feature cells."""
    tj = exact_joint(target)
    sj = [exact_joint(s) for s in sources]
    cells = sorted(set(tj.cells).union(*(j.cells for j in sj)))
    table = np.array(list(itertools.product((0, 1), repeat=len(cells))), dtype=np.float64)
    rho_t = all_classifier_rhos(tj, cells, table)
    rho_s = np.mean([all_classifier_rhos(j, cells, table) for j in sj], axis=0)
    # distance terms do not depend on the classifier
    dist_terms = fairness_upper_bound([0.0] * len(sj), sj, tj)
    excess = rho_t - (rho_s + dist_terms)
    return EnumeratedAudit([target, *sources], len(table), int(np.sum(excess > 1e-9)), float(excess.max()))


def random_audits(n_triples: int = 5, n_cells: int = 8, seed: int = 0) -> list[EnumeratedAudit]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_triples):
        target, *sources = random_discrete_triple(rng, n_cells)
        out.append(audit_all_classifiers(target, sources))
    return out


# --- persistence -------------------------------------------------------------

def _dump_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def emit_report(result: LodoResult, out_dir, experiment: str) -> list[Path]:
    """Write per-fold and averaged JSON reports plus per-fold traces."""
    out_dir = Path(out_dir)
    written = []
    rdir = out_dir / "reports" / experiment
    tdir = out_dir / "traces" / experiment
    try:
        for rep in result.reports:
            runs = [r for r in result.runs if r.target == rep.target_domain]
            payload = {
                "metrics": rep.to_dict(),
                "std": dict(sorted(result.spread.get(rep.target_domain, {}).items())),
                "runs": [{"repeat": r.repeat, "seed": r.seed, "selected_iteration": r.selected_iteration,
                          "metrics": r.report.to_dict()} for r in runs],
            }
            p = rdir / f"fold_{rep.target_domain}.json"
            _dump_json(payload, p)
            written.append(p)
            for r in runs:
                suffix = "" if r.repeat == 0 else f"_rep{r.repeat}"
                tp = tdir / f"fold_{r.target}{suffix}.csv"
                write_trace(r.trace, tp)
                written.append(tp)
        p = rdir / "average.json"
        _dump_json({
            "metrics": result.average.to_dict(),
            "std": dict(sorted(result.spread.get("average", {}).items())),
            "folds": [r.to_dict() for r in result.reports],
            "failures": result.failures,
        }, p)
        written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    return written


def emit_sweep(sweep: SweepResult, out_dir, experiment: str) -> Path:
    p = Path(out_dir) / "reports" / experiment / "sweep.json"
    _dump_json({
        "rows": [asdict(r) for r in sweep.rows],
        "spearman": {m: sweep.spearman(m) for m in ("accuracy", "dp_ratio", "rho")},
    }, p)
    return p


def emit_plots(out_dir, experiment: str, sweep: SweepResult | None = None,
               traces: dict | None = None) -> list[Path]:
    """Tradeoff scatter (if a sweep is given) and loss-trajectory line plots."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pdir = Path(out_dir) / "plots" / experiment
    pdir.mkdir(parents=True, exist_ok=True)
    written = []
    meta = {"Software": None}
    if sweep is not None:
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        acc = [r.accuracy for r in sweep.rows]
        dp = [r.dp_ratio for r in sweep.rows]
        ax.scatter(dp, acc)
        for r in sweep.rows:
            ax.annotate(f"{r.lambda2:g}", (r.dp_ratio, r.accuracy), fontsize=8)
        ax.set_xlabel("DP ratio")
        ax.set_ylabel("accuracy")
        ax.set_title("lambda2 tradeoff")
        fig.tight_layout()
        p = pdir / "tradeoff.png"
        fig.savefig(p, dpi=80, metadata=meta)
        plt.close(fig)
        written.append(p)
    for name, trace in (traces or {}).items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        it = [r[0] for r in trace]
        for j, col in enumerate(("L_cls", "L_inv", "L_fair"), start=1):
            ax.plot(it, [r[j] for r in trace], label=col, lw=0.8)
        ax.set_xlabel("iteration")
        ax.legend()
        fig.tight_layout()
        p = pdir / f"trace_{name}.png"
        fig.savefig(p, dpi=80, metadata=meta)
        plt.close(fig)
        written.append(p)
    return written
