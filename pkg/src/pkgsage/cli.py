"""Command-line pipeline: synth → summarize/enrich → build-graphs → train → ablate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .ablation import generate_plans, load_conditions, load_plan, run_sweep
from .errors import PkgSageError, WriteError
from .gnn import TrainConfig, save_model, train
from .graph import build_graphs, read_graphs, write_graphs
from .ingest import (
    ConceptDictionary,
    assess_missingness,
    enrich_social,
    guess_format,
    label_readmissions,
    parse_cohort,
    summarize,
    write_cohort,
)
from .report import rank_facets, results_csv, results_json, results_markdown
from .schema import default_schema, load_schema
from .synth import SyntheticConfig, generate_cohort

log = logging.getLogger("pkgsage")


def atomic_write(path, writer) -> None:
    """Run `writer(tmp_path)` and move the result onto `path`."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def atomic_text(path, text: str) -> None:
    atomic_write(path, lambda tmp: Path(tmp).write_text(text, encoding="utf-8"))


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise PkgSageError(f"input file not found: {p}")
    return p


class Run:
    """Collects what a command read and wrote and emits the manifests."""

    def __init__(self, args):
        self.args = args
        self.start = time.monotonic()
        self.inputs = {}
        self.outputs = []

    def read(self, role, path):
        if path is not None:
            self.inputs[role] = str(_require(path))
        return path

    def wrote(self, path):
        self.outputs.append(str(path))

    def finish(self):
        manifest = {
            "command": self.args.command,
            "config": getattr(self.args, "config", None) or getattr(self.args, "train_config", None),
            "seeds": getattr(self.args, "seeds", None),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": __version__,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "duration_s": round(time.monotonic() - self.start, 3),
        }
        text = json.dumps(manifest, indent=2) + "\n"
        for out in self.outputs:
            atomic_text(f"{out}.manifest.json", text)


def _schema(args, run):
    if getattr(args, "schema", None):
        schema = load_schema(run.read("schema", args.schema))
    else:
        schema = default_schema()
    version = getattr(args, "version", None)
    return schema.with_version(version) if version else schema


def _cohort(args, run, label=True):
    path = run.read("cohort", args.cohort)
    cohort = parse_cohort(path, guess_format(path))
    return label_readmissions(cohort, args.window) if label else cohort


def _train_config(args, run) -> TrainConfig:
    if args.train_config:
        return TrainConfig.load(run.read("train_config", args.train_config))
    return TrainConfig()


def cmd_synth(args, run):
    cfg = SyntheticConfig.load(run.read("config", args.config))
    cohort = generate_cohort(cfg)
    atomic_write(args.out, lambda tmp: write_cohort(cohort, tmp, guess_format(args.out)))
    run.wrote(args.out)


def cmd_summarize(args, run):
    schema = _schema(args, run)
    cohort = _cohort(args, run)
    doc = {
        "summary": summarize(cohort, schema).to_dict(),
        "missingness": assess_missingness(cohort, schema).to_dict(),
        "n_excluded_patients": cohort.n_excluded_patients,
        "window_days": args.window,
    }
    atomic_text(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    run.wrote(args.out)


def cmd_enrich(args, run):
    cohort = _cohort(args, run, label=False)
    dictionary = ConceptDictionary.load(run.read("dict", args.dict))
    enriched = enrich_social(cohort, dictionary)
    atomic_write(args.out, lambda tmp: write_cohort(enriched, tmp, guess_format(args.out)))
    run.wrote(args.out)


def cmd_build_graphs(args, run):
    schema = _schema(args, run)
    cohort = _cohort(args, run)
    graphs = build_graphs(cohort.labeled_pairs(), schema)
    atomic_write(args.out, lambda tmp: write_graphs(graphs, tmp))
    run.wrote(args.out)


def cmd_train(args, run):
    graphs = read_graphs(run.read("graphs", args.graphs))
    config = _train_config(args, run)
    if args.seed is not None:
        config.seed = args.seed
    result = train(graphs, config)
    atomic_write(args.out, lambda tmp: save_model(result.model, tmp))
    run.wrote(args.out)
    if args.metrics:
        atomic_text(args.metrics, json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
        run.wrote(args.metrics)
    if not args.quiet and result.test_metrics is not None:
        m = result.test_metrics
        print(f"test accuracy {m.accuracy:.4f}  f1 {m.f1:.4f}")


def cmd_ablate(args, run):
    schema = _schema(args, run)
    cohort = _cohort(args, run)
    config = _train_config(args, run)
    if args.plan:
        plan = load_plan(run.read("plan", args.plan), schema)
    else:
        conditions = None
        if args.conditions:
            conditions = load_conditions(run.read("conditions", args.conditions))
        plan = generate_plans(schema, conditions)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    results = run_sweep(cohort, schema, plan, config, seeds, jobs=args.jobs)
    ranking = rank_facets(results)
    atomic_text(args.out, results_json(results))
    run.wrote(args.out)
    if args.report:
        atomic_text(args.report, results_csv(results))
        run.wrote(args.report)
    if args.markdown:
        atomic_text(args.markdown, results_markdown(results, ranking))
        run.wrote(args.markdown)
    if not args.quiet:
        for i, e in enumerate(ranking[:10], start=1):
            acc = "n/a" if e.pct_decrease_accuracy is None else f"{e.pct_decrease_accuracy:7.3f}%"
            print(f"{i:2d}. {e.name:32s} accuracy decrease {acc}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkgsage", description=__doc__)
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cohort=True, schema=True):
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
        if cohort:
            p.add_argument("--cohort", required=True, help="cohort CSV or JSONL")
            p.add_argument("--window", type=int, default=30, help="readmission window in days")
        if schema:
            p.add_argument("--schema", help="schema JSON (default: built-in 11-facet schema)")

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p, cohort=False, schema=False)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("summarize", help="label, assess missingness and summarize")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("enrich", help="fill social facets from note text")
    common(p, schema=False)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("build-graphs", help="write one graph per index admission")
    common(p)
    p.add_argument("--version", choices=["V1", "V3"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("train", help="train a SAGE model on prebuilt graphs")
    common(p, cohort=False, schema=False)
    p.add_argument("--graphs", required=True)
    p.add_argument("--train-config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the exclusion sweep")
    common(p)
    p.add_argument("--version", choices=["V1", "V3"])
    p.add_argument("--train-config")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--conditions")
    p.add_argument("--plan", help="JSON list overriding the generated plan")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--markdown")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args)
    try:
        args.func(args, run)
        run.finish()
    except (PkgSageError, OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
