"""Command-line entry point: ``fairdg <command> [--config FILE] [--seed N] [--out DIR] [--mode M]``.

Commands: ``gen``, ``train-transform``, ``train``, ``eval``, ``sweep``,
``audit-bound``.  Settings come from built-in defaults, then an INI-style
config file (or a previous run's ``run_manifest.json``), then flags.
Every run writes ``run_manifest.json`` into its output directory; passing
that file back as ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness, synth
from .data import SplitPlan, load_tabular, save_tabular
from .errors import ConfigError, FairDGError, MissingInput
from .trainer import MODES, FedoraConfig, save_classifier, train_fedora, write_trace
from .transform import (TransformShape, TransformTrainConfig, load_transform, save_transform,
                        train_transform)

MANIFEST = "run_manifest.json"
COMMANDS = ("gen", "train-transform", "train", "eval", "sweep", "audit-bound")

DATA_DEFAULTS = {
    "path": "",
    "rhos": tuple(synth.DEFAULT_RHOS),
    "styles": tuple(tuple(s.as_vector()) for s in synth.DEFAULT_STYLES),
    "n_per_domain": 2000,
    "class_mean": synth.DEFAULT_CLASS_MEAN,
    "holdout": "",
}
EXPERIMENT_DEFAULTS = {
    "name": "experiment",
    "repeats": 3,
    "rho_cap": 0.1,
    "train_fraction": 0.7,
    "validation_fraction": 0.15,
    "lambda2_values": tuple(harness.DEFAULT_LAMBDA2_SWEEP),
    "transform": "",
}
AUDIT_DEFAULTS = {"n_triples": 5, "n_cells": 8}


def _dataclass_defaults(cls, base, skip=()):
    return {f.name: getattr(base, f.name) for f in dataclasses.fields(cls) if f.name not in skip}


SECTIONS = {
    "data": DATA_DEFAULTS,
    "transform": _dataclass_defaults(TransformTrainConfig, harness.TOY_TRANSFORM, skip=("seed",)),
    "classifier": _dataclass_defaults(FedoraConfig, harness.TOY_FEDORA, skip=("seed",)),
    "experiment": EXPERIMENT_DEFAULTS,
    "audit": AUDIT_DEFAULTS,
}


def _coerce(section, key, raw, default):
    """Parse ``raw`` (string from INI, or a JSON value) to the type of ``default``."""
    where = f"[{section}] {key}"
    try:
        if isinstance(raw, str) and not isinstance(default, str):
            raw = raw.strip()
            if isinstance(default, bool):
                low = raw.lower()
                if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                    raise ValueError(raw)
                return low in ("true", "yes", "1", "on")
            if isinstance(default, tuple):
                if key == "styles":
                    return tuple(tuple(float(v) for v in part.split(",")) for part in raw.split(";") if part.strip())
                conv = int if key.endswith("_hidden") or key == "hidden" else float
                return tuple(conv(v) for v in raw.split(",") if v.strip())
            return type(default)(raw)
        if isinstance(default, tuple):
            if key == "styles":
                return tuple(tuple(float(v) for v in s) for s in raw)
            return tuple(raw)
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                raise ValueError(raw)
            return raw
        if isinstance(default, float):
            return float(raw)
        return type(default)(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _merge(settings, section, items):
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    for key, raw in items:
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown config key '{key}' in [{section}]")
        settings[section][key] = _coerce(section, key, raw, SECTIONS[section][key])


def load_settings(path=None):
    """Return ``(settings, seed, command)`` with seed/command None unless a manifest sets them."""
    settings = {name: dict(defaults) for name, defaults in SECTIONS.items()}
    if path is None:
        return settings, None, None
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"config file not found: {path}")
    if path.suffix == ".json":
        try:
            manifest = json.loads(path.read_text())
            sections = manifest["config"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from exc
        for section, values in sections.items():
            _merge(settings, section, values.items())
        return settings, manifest.get("seed"), manifest.get("command")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        _merge(settings, section, parser.items(section))
    return settings, None, None


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


@dataclasses.dataclass
class RunConfig:
    command: str
    seed: int
    out: Path
    settings: dict

    @property
    def data(self):
        return self.settings["data"]

    @property
    def experiment(self):
        return self.settings["experiment"]

    def transform_config(self) -> TransformTrainConfig:
        try:
            return TransformTrainConfig(seed=self.seed, **self.settings["transform"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[transform]: {exc}") from exc

    def fedora_config(self) -> FedoraConfig:
        try:
            return FedoraConfig(seed=self.seed, **self.settings["classifier"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[classifier]: {exc}") from exc

    def split_plan(self) -> SplitPlan:
        try:
            return SplitPlan(self.experiment["train_fraction"], self.experiment["validation_fraction"], 0)
        except ValueError as exc:
            raise ConfigError(f"[experiment]: {exc}") from exc

    def validate(self):
        self.transform_config()
        self.fedora_config()
        self.split_plan()
        d = self.data
        if len(d["rhos"]) != len(d["styles"]):
            raise ConfigError("[data] rhos and styles must have the same number of entries")
        if any(len(s) != 3 for s in d["styles"]):
            raise ConfigError("[data] styles: each style is 'angle,scale,shift', separated by ';'")
        if d["n_per_domain"] < 4:
            raise ConfigError("[data] n_per_domain must be at least 4")
        if self.experiment["repeats"] < 1:
            raise ConfigError("[experiment] repeats must be at least 1")
        if any(not v > 0 for v in self.experiment["lambda2_values"]):
            raise ConfigError("[experiment] lambda2_values must be positive")
        if not 2 <= self.settings["audit"]["n_cells"] <= synth.MAX_CELLS:
            raise ConfigError(f"[audit] n_cells must lie in 2..{synth.MAX_CELLS}")

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "config": {s: {k: _jsonable(v) for k, v in sorted(vals.items())}
                       for s, vals in sorted(self.settings.items())},
        }

    def write_manifest(self) -> Path:
        p = self.out / MANIFEST
        p.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return p


# --- commands ----------------------------------------------------------------

def _benchmark_specs(cfg: RunConfig):
    d = cfg.data
    styles = [synth.Style.from_vector(s) for s in d["styles"]]
    return synth.benchmark_specs(d["rhos"], styles, d["n_per_domain"], cfg.seed,
                                 class_means=synth.class_means(d["class_mean"]))


def _load_data(cfg: RunConfig):
    path = cfg.data["path"]
    if not path:
        raise ConfigError("no dataset given: set [data] path or pass --data")
    if not Path(path).is_file():
        raise MissingInput(f"dataset not found: {path}")
    return load_tabular(path)


def _sources(cfg: RunConfig, datasets):
    hold = cfg.data["holdout"]
    if hold and hold not in {d.domain_id for d in datasets}:
        raise ConfigError(f"[data] holdout: no domain named {hold!r}")
    return [d for d in datasets if d.domain_id != hold]


def cmd_gen(cfg: RunConfig):
    specs = _benchmark_specs(cfg)
    datasets = [synth.gen_tabular_domain(s) for s in specs]
    path = cfg.out / "data.csv"
    save_tabular(datasets, path, extra_manifest=synth.benchmark_manifest(specs))
    return [path]


def cmd_train_transform(cfg: RunConfig):
    sources = _sources(cfg, _load_data(cfg))
    tcfg = cfg.transform_config()
    inner = cfg.settings["classifier"]["mode"] != "no-ea"
    shape = TransformShape(sources[0].dim, inner_level=inner)
    model = train_transform(sources, tcfg, shape)
    path = cfg.out / "transform.zip"
    save_transform(model, path)
    trace_path = cfg.out / "transform_trace.csv"
    keys = list(model.trace[0]) if model.trace else []
    with open(trace_path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in model.trace:
            fh.write(",".join(str(row[k]) if k == "iter" else repr(float(row[k])) for k in keys) + "\n")
    return [path, trace_path]


def cmd_train(cfg: RunConfig):
    sources = _sources(cfg, _load_data(cfg))
    fcfg = cfg.fedora_config()
    transform = None
    if fcfg.mode != "no-t":
        tpath = cfg.experiment["transform"]
        if not tpath:
            raise ConfigError(f"mode {fcfg.mode} needs a transform: set [experiment] transform or pass --transform")
        if not Path(tpath).is_file():
            raise MissingInput(f"transform checkpoint not found: {tpath}")
        transform = load_transform(tpath)
        if fcfg.mode != "no-ea" and not transform.inner_level:
            raise ConfigError(f"mode {fcfg.mode} needs a transform trained with the inner level")
    result = train_fedora(transform, sources, fcfg)
    path = cfg.out / "classifier.zip"
    save_classifier(result.params, path, fcfg)
    trace_path = cfg.out / "trace.csv"
    write_trace(result.trace, trace_path)
    return [path, trace_path]


def _plan(cfg: RunConfig, datasets) -> harness.ExperimentPlan:
    e = cfg.experiment
    return harness.ExperimentPlan(
        datasets=datasets, fedora=cfg.fedora_config(), transform=cfg.transform_config(),
        repeats=e["repeats"], seed=cfg.seed, split=cfg.split_plan(), rho_cap=e["rho_cap"],
        name=e["name"], output_dir=cfg.out,
    )


def cmd_eval(cfg: RunConfig):
    plan = _plan(cfg, _load_data(cfg))
    result = harness.leave_one_domain_out(plan)
    written = harness.emit_report(result, cfg.out, plan.name)
    traces = {r.target: r.trace for r in result.runs if r.repeat == 0}
    written += harness.emit_plots(cfg.out, plan.name, traces=traces)
    return written


def cmd_sweep(cfg: RunConfig):
    plan = _plan(cfg, _load_data(cfg))
    sweep = harness.sweep_lambda2(plan, cfg.experiment["lambda2_values"])
    written = [harness.emit_sweep(sweep, cfg.out, plan.name)]
    written += harness.emit_plots(cfg.out, plan.name, sweep=sweep)
    return written


def cmd_audit_bound(cfg: RunConfig):
    a = cfg.settings["audit"]
    audits = harness.random_audits(a["n_triples"], a["n_cells"], cfg.seed)
    path = cfg.out / "audit.json"
    payload = {
        "audits": [x.to_dict() for x in audits],
        "total_violations": sum(x.violations for x in audits),
        "max_excess": max(x.max_excess for x in audits),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return [path]


HANDLERS = {
    "gen": cmd_gen,
    "train-transform": cmd_train_transform,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "audit-bound": cmd_audit_bound,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairdg", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file or a previous run_manifest.json")
        p.add_argument("--seed", type=int, help="base seed (default 0)")
        p.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
        p.add_argument("--mode", choices=MODES, help="training mode")
        p.add_argument("--data", help="dataset CSV (overrides [data] path)")
        p.add_argument("--transform", help="transform checkpoint (overrides [experiment] transform)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args) -> RunConfig:
    settings, seed, command = load_settings(args.config)
    if command is not None and command != args.command:
        raise ConfigError(f"manifest was written by '{command}', not '{args.command}'")
    if args.seed is not None:
        seed = args.seed
    if args.mode is not None:
        settings["classifier"]["mode"] = args.mode
    if args.data is not None:
        settings["data"]["path"] = args.data
    if args.transform is not None:
        settings["experiment"]["transform"] = args.transform
    out = Path(args.out) if args.out else Path("runs") / args.command
    cfg = RunConfig(args.command, int(seed or 0), out, settings)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        written = HANDLERS[args.command](cfg)
        cfg.write_manifest()
    except ConfigError as exc:
        print(f"fairdg {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (FairDGError, OSError, ValueError) as exc:
        print(f"fairdg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
