"""Command-line entry point: ``engage <stage> [options]``.

Stages talk to each other only through their output directories. Each stage
writes ``run_manifest.json`` holding its arguments, the full run config and
sha256 digests of everything it read and wrote, so ``engage rerun`` can
replay it and check the outputs byte for byte.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import analytics_bundle, write_analytics
from .config import ConfigError, RunConfig
from .core import DomainError, Taxonomy, UsageEvent, UserProfile, default_taxonomy
from .evaluation import paired_ttest, write_report
from .features import (
    FeatureSpace,
    InstanceMatrix,
    SchemaError,
    context_for,
    query_instance,
    write_instances,
)
from .ingest import filter_engaged_users, parse_log, write_log
from .pipeline import evaluate as run_evaluation
from .pipeline import prepare
from .predictors import load_bundle, save_bundle, train_joint
from .sessionizer import QuantileTable, aggregate_dwell, build_dwell_records, sessionize
from .synthgen import (
    GeneratorConfig,
    benchmark_config,
    continuous_config,
    effects_config,
    generate,
    periodic_config,
    write_corpus,
)

log = logging.getLogger("appengage")

MANIFEST = "run_manifest.json"
PRESETS = {
    "benchmark": benchmark_config,
    "effects": effects_config,
    "periodic": periodic_config,
    "continuous": continuous_config,
}
TASKS = ("app", "level", "joint")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class ReproducibilityError(RuntimeError):
    """A replayed stage produced different bytes than its manifest records."""


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _clean(obj):
    """Make an object strict-JSON friendly: NaN/inf to null, numpy scalars to Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class Stage:
    """Book-keeping for one stage run: inputs read, outputs written, the manifest."""

    def __init__(self, name: str, args: dict, cfg: RunConfig, out: Path):
        self.name, self.args, self.cfg, self.out = name, args, cfg, out
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def read(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"required input {path} does not exist")
        self.inputs[str(path)] = sha256_file(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.outputs.append(p)
        return p

    def wrote(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def finish(self) -> dict:
        outputs = {str(p.relative_to(self.out)): sha256_file(p) for p in sorted(set(self.outputs))}
        manifest = {
            "tool": "appengage",
            "version": __version__,
            "stage": self.name,
            "args": self.args,
            "config": self.cfg.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outputs,
        }
        (self.out / MANIFEST).write_text(dump_json(manifest))
        log.info("%s: wrote %d file(s) to %s", self.name, len(outputs), self.out)
        return manifest


# -- shared helpers -------------------------------------------------------------

def _load_taxonomy(stage: Stage, path: str | Path | None) -> Taxonomy:
    if path is None:
        return default_taxonomy()
    names = json.loads(stage.read(path).read_text(encoding="utf-8"))
    if not isinstance(names, list):
        raise DomainError(f"taxonomy file {path} must hold a JSON list of category names")
    return Taxonomy(names)


def _ingested(stage: Stage, directory: str | Path):
    d = Path(directory)
    taxonomy = _load_taxonomy(stage, d / "taxonomy.json")
    corpus = parse_log(stage.read(d / "events.csv"), "csv", taxonomy)
    return corpus


def _prepare(stage: Stage, directory: str | Path):
    cfg = stage.cfg
    corpus = _ingested(stage, directory)
    return prepare(corpus, cfg.ingest.min_categories, cfg.split.train_fraction, cfg.split.mode,
                   cfg.session.gap_seconds, cfg.session.tz_offset_minutes, cfg.seed)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- stages ---------------------------------------------------------------------

def cmd_generate(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("generate", args, cfg, Path(args["out"]))
    preset = cfg.generate.preset
    if preset not in PRESETS:
        raise ConfigError(f"unknown generator preset {preset!r}; known: {sorted(PRESETS)}")
    base = PRESETS[preset]().to_dict()
    base.update(cfg.generate.overrides)
    if args.get("seed") is not None:
        base["seed"] = int(args["seed"])
    gcfg = GeneratorConfig.from_dict(base)
    corpus = generate(gcfg)
    digests = write_corpus(corpus, stage.out, cfg.generate.format)
    stage.wrote(*(stage.out / name for name in digests))
    return stage.finish()


def cmd_ingest(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("ingest", args, cfg, Path(args["out"]))
    src = Path(args["input"])
    tax_path = args.get("taxonomy")
    if tax_path is None and (src.parent / "taxonomy.json").is_file():
        tax_path = str(src.parent / "taxonomy.json")
    taxonomy = _load_taxonomy(stage, tax_path)
    corpus = parse_log(stage.read(src), cfg.ingest.format, taxonomy, cfg.ingest.tolerance)
    corpus = filter_engaged_users(corpus, cfg.ingest.min_categories)
    events = [e for u in corpus.users for e in corpus.events[u]]
    write_log(stage.out / "events.csv", events, corpus.profiles, "csv")
    stage.wrote(stage.out / "events.csv")
    stage.write_text("taxonomy.json", json.dumps(list(taxonomy.names), indent=2) + "\n")
    records = build_dwell_records(corpus, cfg.session.gap_seconds, cfg.session.tz_offset_minutes)
    header = ["user_id", "app_id", "category", "session_index", "start", "dwell_seconds",
              "hour_of_day", "day_of_week", "end"]
    rows = [[r.to_dict()[k] for k in header] for u in sorted(records) for r in records[u]]
    stage.write_text("records.csv", _csv_text(header, rows))
    summary = {
        "provenance": {k: v for k, v in corpus.provenance.items() if k != "source"},
        "users": len(corpus.users),
        "events": corpus.n_events,
        "records": len(rows),
        "sessions": sum(len({r.session_index for r in recs}) for recs in records.values()),
    }
    stage.write_text("ingest.json", dump_json(summary))
    return stage.finish()


def cmd_analyze(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("analyze", args, cfg, Path(args["out"]))
    prep = _prepare(stage, args["input"])
    bundle = analytics_bundle(prep.records, prep.corpus.profiles, prep.table, prep.corpus.taxonomy)
    stage.wrote(*write_analytics(bundle, stage.out))
    stage.write_text("quantiles.json", prep.table.to_json() + "\n")
    return stage.finish()


def cmd_featurize(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("featurize", args, cfg, Path(args["out"]))
    prep = _prepare(stage, args["input"])
    for name, M in (("train", prep.train), ("test", prep.test)):
        write_instances(stage.out / f"{name}_instances.csv", M, prep.space)
        stage.wrote(stage.out / f"{name}_instances.csv")
    stage.write_text("space.json", dump_json(prep.space.to_dict()))
    stage.write_text("quantiles.json", prep.table.to_json() + "\n")
    stage.write_text("split.json", dump_json({"counts": prep.split.counts(), "mode": prep.split.mode,
                                              "train_fraction": prep.split.train_fraction}))
    return stage.finish()


def cmd_train(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("train", args, cfg, Path(args["out"]))
    prep = _prepare(stage, args["input"])
    strategies = cfg.strategies()
    models = train_joint(prep.train, strategies, cfg.joint_config())
    for name, model in models.items():
        save_bundle(model, stage.out / name, {"space_digest": _space_digest(prep.space)})
        stage.wrote(*sorted((stage.out / name).glob("*.json")))
    stage.write_text("space.json", dump_json(prep.space.to_dict()))
    stage.write_text("quantiles.json", prep.table.to_json() + "\n")
    return stage.finish()


def _space_digest(space: FeatureSpace) -> str:
    return hashlib.sha256(json.dumps(space.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _load_models(stage: Stage, directory: str | Path, strategies) -> dict:
    d = Path(directory)
    models = {}
    for name in strategies:
        if not (d / name / "manifest.json").is_file():
            continue
        for f in sorted((d / name).glob("*.json")):
            stage.read(f)
        models[name], _ = load_bundle(d / name)
    if not models:
        raise FileNotFoundError(f"no trained strategy bundles found under {d}")
    return models


def _check_space(stage: Stage, model_dir: str | Path, space: FeatureSpace) -> None:
    stored = json.loads(stage.read(Path(model_dir) / "space.json").read_text())
    if json.dumps(stored, sort_keys=True) != json.dumps(_clean(space.to_dict()), sort_keys=True):
        raise SchemaError("feature space of the models does not match the prepared data; "
                          "train and evaluate must use the same corpus and config")


def cmd_evaluate(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("evaluate", args, cfg, Path(args["out"]))
    task = args.get("task") or "joint"
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    prep = _prepare(stage, args["input"])
    _check_space(stage, args["models"], prep.space)
    models = _load_models(stage, args["models"], cfg.strategies())
    # baselines ride along with full comparisons; single-strategy runs stay single-row
    result = run_evaluation(prep, cfg.joint_config(), tuple(models), baselines=cfg.strategy == "all", models=models)
    reports = {"app": result.app, "level": result.level, "joint": result.joint}[task]
    rows = []
    reference = "sequential" if "sequential" in result.per_user_joint else None
    for name in sorted(reports, key=_row_order):
        r = reports[name]
        prefix = stage.out / f"{task}_{_slug(name)}"
        write_report(r, str(prefix))
        stage.wrote(f"{prefix}.json", f"{prefix}_confusion.csv")
        row = {"model": name, "n": r.n, "accuracy": r.accuracy, "precision": r.precision,
               "recall": r.recall, "f1": r.f1, "p_value": None}
        if task == "joint" and reference and name in result.per_user_joint and name != reference:
            row["p_value"] = paired_ttest(result.per_user_joint[name], result.per_user_joint[reference])[1]
        rows.append(row)
    extras = {}
    if task == "level":
        extras["adjacency"] = {m: {lv: vars(a) for lv, a in adj.items()} for m, adj in result.adjacency.items()}
    if task == "joint" and result.attribution is not None:
        names = prep.corpus.taxonomy.names
        extras["attribution"] = {"changed": result.attribution.n_changed,
                                 "by_category": {names[c]: v for c, v in sorted(result.attribution.by_category.items())}}
    summary = {"task": task, "rows": rows, **extras}
    stage.write_text("summary.json", dump_json(summary))
    if (args.get("format") or "json") == "csv":
        keys = ["model", "n", "accuracy", "precision", "recall", "f1", "p_value"]
        stage.write_text("summary.csv", _csv_text(keys, [[_fmt(r[k]) for k in keys] for r in rows]))
    return stage.finish()


def _row_order(name: str):
    from .predictors import STRATEGIES

    if name == "hybrid":
        return (0, -1)
    return (0, STRATEGIES.index(name)) if name in STRATEGIES else (1, name)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower()


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def _read_snapshot(stage: Stage, path: str | Path, taxonomy: Taxonomy) -> list[dict]:
    """A snapshot is one object (or a list) with user_id, profile, events and an optional ``at``."""
    doc = json.loads(stage.read(path).read_text(encoding="utf-8"))
    items = doc if isinstance(doc, list) else [doc]
    out = []
    for k, item in enumerate(items):
        try:
            user = str(item["user_id"])
            profile = UserProfile(user, **{f: item["profile"][f] for f in ("age_band", "gender", "device_type", "os")})
            events = sorted(
                (UsageEvent(user, int(e["timestamp"]), str(e["app_id"]), taxonomy.by_name(e["category"]),
                            float(e["duration_seconds"])) for e in item["events"]),
                key=lambda e: e.timestamp)
        except (KeyError, TypeError) as exc:
            raise DomainError(f"snapshot item {k} is missing field {exc}") from exc
        at = item.get("at")
        if at is None:
            at = math.ceil(events[-1].end) + 1 if events else 0
        if events and at < events[-1].end:
            raise DomainError(f"snapshot item {k}: prediction time {at} precedes the end of its history")
        out.append({"user_id": user, "profile": profile, "events": events, "at": float(at)})
    return out


def cmd_predict(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("predict", args, cfg, Path(args["out"]))
    mdir = Path(args["models"])
    space = FeatureSpace.from_dict(json.loads(stage.read(mdir / "space.json").read_text()))
    table = QuantileTable.from_json(stage.read(mdir / "quantiles.json").read_text())
    models = _load_models(stage, mdir, cfg.strategies())
    results = []
    for snap in _read_snapshot(stage, args["context"], space.taxonomy):
        history = []
        for i, session in enumerate(sessionize(snap["events"], space.gap_seconds)):
            history.extend(aggregate_dwell(session, i, space.tz_offset_minutes))
        ctx = context_for(history, table, space, snap["user_id"])
        M = InstanceMatrix([query_instance(ctx, snap["profile"], snap["at"], space)])
        entry = {"user_id": snap["user_id"], "at": snap["at"], "predictions": {}}
        for name, model in models.items():
            p = model.predict(M)
            entry["predictions"][name] = {
                "app": str(p.apps[0]),
                "category": space.taxonomy.by_id(int(p.categories[0])).name,
                "level": ("light", "medium", "intensive")[int(p.levels[0])],
            }
        results.append(entry)
    stage.write_text("predictions.json", dump_json(results))
    return stage.finish()


def cmd_report(args: dict, cfg: RunConfig) -> dict:
    stage = Stage("report", args, cfg, Path(args["out"]))
    wanted = set(cfg.strategies()) if cfg.strategy != "all" else None
    tables: dict[str, list[dict]] = {}
    for run in args["runs"]:
        summary = json.loads(stage.read(Path(run) / "summary.json").read_text())
        for row in summary["rows"]:
            if wanted is not None and row["model"] not in wanted and _row_order(row["model"])[0] == 0:
                continue
            rows = tables.setdefault(summary["task"], [])
            if all(r["model"] != row["model"] for r in rows):
                rows.append(row)
    if not tables:
        raise DomainError("no evaluation summaries to report")
    lines = []
    for task in sorted(tables, key=TASKS.index):
        rows = tables[task]
        ref = rows[0]["f1"]
        keys = ["model", "accuracy", "precision", "recall", "f1", "delta_f1", "p_value"]
        body = [[r["model"], *(_fmt(r[k]) for k in ("accuracy", "precision", "recall", "f1")),
                 _fmt(r["f1"] - ref), _fmt(r.get("p_value"))] for r in rows]
        stage.write_text(f"comparison_{task}.csv", _csv_text(keys, body))
        widths = [max(len(k), *(len(b[i]) for b in body)) for i, k in enumerate(keys)]
        lines.append(f"[{task}] delta is F1 relative to {rows[0]['model']}")
        lines.append("  ".join(k.ljust(w) for k, w in zip(keys, widths)).rstrip())
        lines.extend("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip() for b in body)
        lines.append("")
    stage.write_text("comparison.txt", "\n".join(lines))
    return stage.finish()


STAGES = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "analyze": cmd_analyze,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "report": cmd_report,
}


def cmd_rerun(manifest_path: str | Path, out: str | None = None, check: bool = True) -> dict:
    """Replay a stage from its manifest; with ``check`` the new outputs must match byte for byte."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    stage = manifest.get("stage")
    if stage not in STAGES:
        raise DomainError(f"{manifest_path} is not a stage manifest")
    args = dict(manifest["args"])
    if out is not None:
        args["out"] = out
    fresh = STAGES[stage](args, RunConfig.from_dict(manifest["config"]))
    if check and fresh["outputs"] != manifest["outputs"]:
        diff = sorted(k for k in set(fresh["outputs"]) | set(manifest["outputs"])
                      if fresh["outputs"].get(k) != manifest["outputs"].get(k))
        raise ReproducibilityError(f"rerun of {stage} changed {len(diff)} output(s): {diff[:5]}")
    return fresh


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    common.add_argument("--strategy", choices=("sequential", "stacking", "boosting", "all"))
    common.add_argument("--task", choices=TASKS)
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(prog="engage", description="Next-app and engagement-level prediction toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic usage corpus")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p = sub.add_parser("ingest", parents=[common], help="parse, filter and sessionize a usage log")
    p.add_argument("--input", required=True, help="usage log (csv or jsonl)")
    p.add_argument("--taxonomy", help="JSON list of category names")
    p.add_argument("--input-format", choices=("csv", "jsonl"))
    p = sub.add_parser("analyze", parents=[common], help="descriptive analytics of an ingested corpus")
    p.add_argument("--input", required=True, help="ingest output directory")
    p = sub.add_parser("featurize", parents=[common], help="write instance matrices as CSV")
    p.add_argument("--input", required=True, help="ingest output directory")
    p = sub.add_parser("train", parents=[common], help="train joint prediction strategies")
    p.add_argument("--input", required=True, help="ingest output directory")
    p = sub.add_parser("evaluate", parents=[common], help="score trained strategies and baselines")
    p.add_argument("--input", required=True, help="ingest output directory")
    p.add_argument("--models", required=True, help="train output directory")
    p = sub.add_parser("predict", parents=[common], help="one-shot predictions from a context snapshot")
    p.add_argument("--models", required=True, help="train output directory")
    p.add_argument("--context", required=True, help="snapshot JSON with user_id, profile, events[, at]")
    p = sub.add_parser("report", parents=[common], help="collate evaluation summaries into tables")
    p.add_argument("--runs", nargs="+", required=True, help="evaluate output directories")

    p = sub.add_parser("rerun", help="replay a stage from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this directory instead of the original one")
    p.add_argument("--no-check", action="store_true", help="do not compare output digests")
    return parser


def resolve(ns: argparse.Namespace) -> tuple[str, dict, RunConfig]:
    """Merge config file and flags into the stage arguments and RunConfig stored in manifests."""
    cfg = RunConfig.load(ns.config)
    if ns.seed is not None and ns.command != "generate":
        cfg.seed = ns.seed
    if ns.threads is not None:
        cfg.threads = ns.threads
    if ns.strategy is not None:
        cfg.strategy = ns.strategy
    if getattr(ns, "preset", None):
        cfg.generate.preset = ns.preset
    if getattr(ns, "input_format", None):
        cfg.ingest.format = ns.input_format
    if ns.command == "generate" and ns.format:
        cfg.generate.format = "jsonl" if ns.format == "json" else "csv"
    cfg.strategies()  # validate early
    skip = {"command", "config", "threads", "strategy", "preset", "input_format"}
    args = {k: v for k, v in vars(ns).items() if k not in skip}
    if ns.command != "generate":
        args.pop("seed", None)
    return ns.command, args, cfg


def _setup_logging() -> None:
    level = os.environ.get("ENGAGE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if ns.command == "rerun":
            cmd_rerun(ns.manifest, ns.out, not ns.no_check)
        else:
            command, args, cfg = resolve(ns)
            STAGES[command](args, cfg)
    except ConfigError as exc:
        print(f"engage: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, FileNotFoundError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"engage: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violations and anything unexpected
        log.debug("internal error", exc_info=True)
        print(f"engage: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
