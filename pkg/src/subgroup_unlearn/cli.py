"""Command line interface for subgroup_unlearn.

Every experiment command reads a run configuration and writes into the
run directory ``<out_dir>/<run-id>/`` shared by all commands of that
configuration, recording inputs and outputs in its ``manifest.json``.

Usage examples::

    # Pre-train the original dual encoder on the synthetic benchmark
    python -m subgroup_unlearn.cli pretrain --config configs/default-1.0.yaml

    # Forget the configured subgroup (select -> forget -> remind -> restore)
    python -m subgroup_unlearn.cli unlearn --config configs/default-1.0.yaml

    # Run one reference baseline
    python -m subgroup_unlearn.cli baseline --config configs/default-1.0.yaml --method GA

    # Score any checkpoint against the original on a saved task archive
    python -m subgroup_unlearn.cli eval --original runs/<id>/checkpoints/original.ckpt \
        --candidate runs/<id>/checkpoints/restored.ckpt --task runs/<id>/data/task --out reports/

    # Ablation over the merge weight
    python -m subgroup_unlearn.cli sweep --config configs/default-1.0.yaml --axis alpha_merge

Exit codes: 0 success, 2 configuration error, 3 training failure,
4 incompatible artifacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .baselines.registry import METHODS, run_baseline
from .core.config import load_config
from .core.errors import EXIT_OK, ConfigurationError, MergeError, UnlearnError
from .core.hashing import derive_seed
from .core.logs import setup_logging
from .core.types import RunConfig, StageLog
from .data.archive import load_task, save_task
from .data.dataset import concat
from .data.split import UnlearnTask, reference_datasets, split_style_task, split_unlearn_task
from .data.styles import with_all_styles
from .data.synthetic import generate_synthetic
from .evaluate.published import load_published, score_rows
from .evaluate.report import EvalReport, build_report, class_accuracy_table, class_suites, report_from_suites
from .evaluate.retrieval import retrieval_summary
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.dual_encoder import pretrain_toy
from .model.params import ParameterSet
from .renderers.report_html import render_html
from .store.artifacts import ManifestEntry, RunStore, atomic_write_text, read_json, write_json
from .unlearn.pipeline import run_pipeline
from .unlearn.restore import continuous_merge
from .unlearn.sweep import SWEEP_COLUMNS, sweep_alpha_merge, sweep_remind_steps

logger = logging.getLogger(__name__)


def _wrote(path: Path) -> None:
    print(f"Wrote {path}")


def _config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, seed=args.seed, out_dir=args.out_dir)


def _store(cfg: RunConfig) -> RunStore:
    return RunStore(Path(cfg.out_dir), cfg.name, cfg.content_hash)


def _to_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()


def build_task(cfg: RunConfig) -> UnlearnTask:
    """Carve the configured unlearning task out of a fresh benchmark draw."""
    dataset, evaluation, ood = reference_datasets(cfg.taxonomy, cfg.eval.ood_suites, cfg.eval.ood_images_per_subgroup,
                                                  cfg.eval.images_per_subgroup)
    seed = derive_seed(cfg.seed, "split")
    target = cfg.task
    if target.target_style is not None:
        return split_style_task(with_all_styles(dataset), target.target_subgroup, target.target_style,
                                target.fractions, seed, ood, with_all_styles(evaluation))
    return split_unlearn_task(dataset, target.target_subgroup, target.fractions, seed, ood, evaluation)


def _task(cfg: RunConfig, store: RunStore, entry: ManifestEntry) -> UnlearnTask:
    directory = store.path("data", "task")
    manifest = directory / "manifest.json"
    if manifest.exists():
        task = load_task(directory)
        store.add_input(entry, "task", manifest)
        return task
    task = build_task(cfg)
    save_task(task, directory)
    for path in sorted(directory.iterdir()):
        store.add_output(entry, path)
    _wrote(manifest)
    return task


def _original(cfg: RunConfig, store: RunStore, args: argparse.Namespace, entry: ManifestEntry) -> ParameterSet:
    path = Path(getattr(args, "original", None) or cfg.original_checkpoint or store.path("checkpoints", "original.ckpt"))
    if not path.exists():
        raise ConfigurationError(f"original checkpoint {path} not found; run 'pretrain' first")
    params = load_checkpoint(path)
    if params.meta.fingerprint != cfg.model.fingerprint():
        raise MergeError(f"checkpoint {path} does not match the configured model")
    store.add_input(entry, "original", path)
    return params


def _save_log(store: RunStore, entry: ManifestEntry, log: StageLog, name: str) -> None:
    path = write_json(store.path("logs", f"{name}.json"), log.to_dict(), schema="stage_log")
    store.add_output(entry, path)
    entry.timings[log.stage] = log.seconds


def _save_checkpoint(store: RunStore, entry: ManifestEntry, params: ParameterSet, name: str) -> Path:
    path = save_checkpoint(params, store.path("checkpoints", f"{name}.ckpt"))
    store.add_output(entry, path)
    _wrote(path)
    return path


def _write_report(store: RunStore, entry: ManifestEntry, report: EvalReport, stem: str) -> None:
    for path in report.write(store.root / "reports", stem):
        store.add_output(entry, path)
        _wrote(path)


def _cmd_pretrain(args: argparse.Namespace) -> None:
    """Handler for the ``pretrain`` subcommand."""
    cfg = _config(args)
    store = _store(cfg)
    entry = store.begin("pretrain")
    entry.seeds.update(root=cfg.seed, pretrain=cfg.pretrain.seed)
    data = generate_synthetic(cfg.taxonomy, sample="pretrain")
    if cfg.task.target_style is not None:
        data = with_all_styles(data)
    log = StageLog("pretrain")
    params = pretrain_toy(cfg.model, data, cfg.pretrain, log)
    _save_checkpoint(store, entry, params, "original")
    _save_log(store, entry, log, "pretrain")
    store.commit(entry)


def _cmd_unlearn(args: argparse.Namespace) -> None:
    """Handler for the ``unlearn`` subcommand."""
    cfg = _config(args)
    store = _store(cfg)
    entry = store.begin("unlearn")
    original = _original(cfg, store, args, entry)
    task = _task(cfg, store, entry)
    entry.seeds.update(root=cfg.seed, split=task.seed, forget=cfg.forget.seed, remind=cfg.remind.seed,
                       restore=cfg.restore.seed)
    result = run_pipeline(original, task, cfg)

    target: Dict[str, Any] = {"target_subgroup": task.target_subgroup}
    if task.target_style is not None:
        target["target_style"] = task.target_style
    restored = result.restored.retag("restored", **target)
    _save_checkpoint(store, entry, result.forgotten.retag("forgotten", **target), "forgotten")
    _save_checkpoint(store, entry, result.reminded.retag("reminded", **target), "reminded")
    _save_checkpoint(store, entry, restored, "restored")
    for name, log in result.logs.items():
        _save_log(store, entry, log, name)

    scores = write_json(store.path("reports", "layer_scores.json"), result.scores.to_dict(result.selected),
                        schema="layer_scores")
    store.add_output(entry, scores)
    _write_report(store, entry, build_report(original, restored, task), "restored")

    suites = [task.eval_suites[n].dataset for n in ("target", "retain")
              if n in task.eval_suites and len(task.eval_suites[n].dataset)]
    if suites:
        positives = task.eval_suites["target"].dataset.ids.tolist() if "target" in task.eval_suites else []
        summary = retrieval_summary({"original": original, "restored": restored}, concat(suites, "gallery"),
                                    task.taxonomy.superclass_prompt(task.target_superclass), positives,
                                    cfg.eval.retrieval_k)
        path = write_json(store.path("reports", "retrieval.json"), summary)
        store.add_output(entry, path)
        _wrote(path)
    store.commit(entry)


def _cmd_baseline(args: argparse.Namespace) -> None:
    """Handler for the ``baseline`` subcommand."""
    cfg = _config(args)
    bcfg = cfg.baseline(args.method)
    store = _store(cfg)
    entry = store.begin(f"baseline:{args.method}")
    original = _original(cfg, store, args, entry)
    task = _task(cfg, store, entry)
    entry.seeds.update(root=cfg.seed, split=task.seed, baseline=bcfg.seed)
    log = StageLog(f"baseline:{args.method}")
    params = run_baseline(args.method, original, task, bcfg, log)
    stem = f"baseline-{args.method}"
    _save_checkpoint(store, entry, params, stem)
    _save_log(store, entry, log, stem)
    _write_report(store, entry, build_report(original, params, task), stem)
    store.commit(entry)


def _cmd_eval(args: argparse.Namespace) -> None:
    """Handler for the ``eval`` subcommand."""
    original = load_checkpoint(args.original)
    candidate = load_checkpoint(args.candidate)
    task = load_task(args.task)
    if tuple(original.spec.vocab) != tuple(task.taxonomy.vocab()):
        raise MergeError("checkpoint vocabulary does not match the task taxonomy")
    report = build_report(original, candidate, task, args.suites)
    out_dir = Path(args.output)
    stem = args.name or Path(args.candidate).stem
    for path in report.write(out_dir, stem):
        _wrote(path)
    if args.html:
        _wrote(render_html([report.to_dict()], out_dir / f"{stem}.html"))


def _cmd_sweep(args: argparse.Namespace) -> None:
    """Handler for the ``sweep`` subcommand."""
    cfg = _config(args)
    store = _store(cfg)
    entry = store.begin(f"sweep:{args.axis}")
    original = _original(cfg, store, args, entry)
    task = _task(cfg, store, entry)
    entry.seeds.update(root=cfg.seed, split=task.seed, forget=cfg.forget.seed, remind=cfg.remind.seed)
    if args.axis == "remind_steps":
        rows = sweep_remind_steps(original, task, cfg, args.values or cfg.sweep.remind_steps)
    else:
        rows = sweep_alpha_merge(original, task, cfg, args.values or cfg.sweep.alpha_merge)
    table = atomic_write_text(store.path("reports", f"sweep-{args.axis}.csv"), _to_csv(rows, SWEEP_COLUMNS))
    data = write_json(store.path("reports", f"sweep-{args.axis}.json"), {"axis": args.axis, "rows": rows})
    for path in (table, data):
        store.add_output(entry, path)
        _wrote(path)
    store.commit(entry)


def _cmd_continuous(args: argparse.Namespace) -> None:
    """Handler for the ``continuous`` subcommand."""
    cfg = _config(args)
    store = _store(cfg)
    entry = store.begin("continuous")
    reference = load_checkpoint(args.reference)
    if tuple(reference.spec.vocab) != tuple(cfg.taxonomy.vocab()):
        raise MergeError("reference checkpoint vocabulary does not match the configured taxonomy")
    store.add_input(entry, "reference", Path(args.reference))
    models: Dict[str, ParameterSet] = {}
    for i, path in enumerate(args.checkpoints):
        models[f"{i}:{Path(path).stem}"] = load_checkpoint(path)
        store.add_input(entry, f"checkpoint:{i}", Path(path))

    targets: List[Optional[int]] = list(args.targets) if args.targets else [
        m.meta.extra.get("target_subgroup") for m in models.values()
    ]
    if len(targets) != len(models) or any(t is None for t in targets):
        raise ConfigurationError("cannot tell which subgroup each checkpoint forgot; pass --targets")
    merged = continuous_merge(list(models.values()), reference).retag("merged", targets=[int(t) for t in targets])
    _save_checkpoint(store, entry, merged, "continuous")

    data = generate_synthetic(cfg.taxonomy, sample="continuous", images_per_subgroup=cfg.eval.images_per_subgroup)
    _write_report(store, entry, report_from_suites(reference, merged, class_suites(data, targets)), "continuous")
    rows = class_accuracy_table({"original": reference, **models, "merged": merged}, data)
    table = atomic_write_text(store.path("reports", "continuous-table.csv"),
                              _to_csv(rows, ["model"] + cfg.taxonomy.subgroup_names()))
    store.add_output(entry, table)
    _wrote(table)
    store.commit(entry)


def _cmd_scores(args: argparse.Namespace) -> None:
    """Handler for the ``scores`` subcommand."""
    rows = score_rows(load_published(args.tables))
    for r in rows:
        status = "ok" if r["matches"] else ("misprint" if r["misprint"] else "MISMATCH")
        print(f"{r['table']:15s} {r['backbone']:10s} {r['method']:13s} "
              f"printed {r['printed']:5.1f} recomputed {r['recomputed']:7.3f} {status}")
        if not r["matches"] and not r["misprint"]:
            logger.warning("%s/%s/%s does not reproduce its printed Score", r["table"], r["backbone"], r["method"])
    if args.output:
        columns = ("table", "backbone", "method", "printed", "recomputed", "matches", "misprint")
        _wrote(atomic_write_text(Path(args.output), _to_csv(rows, columns)))


def _cmd_render_html(args: argparse.Namespace) -> None:
    """Handler for the ``render-html`` subcommand."""
    reports = [read_json(Path(p)) for p in args.inputs]
    _wrote(render_html(reports, Path(args.output), title=args.title, template=args.template))


def build_parser() -> argparse.ArgumentParser:
    verbosity = argparse.ArgumentParser(add_help=False)
    verbosity.add_argument("-v", "--verbose", action="count", default=0, help="More logging (DEBUG)")
    verbosity.add_argument("-q", "--quiet", action="count", default=0, help="Less logging (WARNING)")

    run = argparse.ArgumentParser(add_help=False, parents=[verbosity])
    run.add_argument("--config", required=True, help="Run configuration (YAML)")
    run.add_argument("--out-dir", dest="out_dir", default=None, help="Override run.out_dir")
    run.add_argument("--seed", type=int, default=None, help="Override the root seed")

    parser = argparse.ArgumentParser(description="Subgroup unlearning for contrastive dual encoders")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p_pretrain = subparsers.add_parser("pretrain", parents=[run], help="Pre-train the original model")
    p_pretrain.set_defaults(func=_cmd_pretrain)

    p_unlearn = subparsers.add_parser("unlearn", parents=[run], help="Run select -> forget -> remind -> restore")
    p_unlearn.add_argument("--original", default=None, help="Original checkpoint (default: run store)")
    p_unlearn.set_defaults(func=_cmd_unlearn)

    p_baseline = subparsers.add_parser("baseline", parents=[run], help="Run a reference baseline")
    p_baseline.add_argument("--method", required=True, help=f"One of {', '.join(METHODS)}")
    p_baseline.add_argument("--original", default=None, help="Original checkpoint (default: run store)")
    p_baseline.set_defaults(func=_cmd_baseline)

    p_eval = subparsers.add_parser("eval", parents=[verbosity], help="Evaluate a checkpoint against the original")
    p_eval.add_argument("--original", required=True, help="Original checkpoint")
    p_eval.add_argument("--candidate", required=True, help="Checkpoint to evaluate")
    p_eval.add_argument("--task", required=True, help="Dataset archive directory (or its manifest.json)")
    p_eval.add_argument("--out", dest="output", required=True, help="Output directory")
    p_eval.add_argument("--name", default=None, help="Report file stem (default: candidate file stem)")
    p_eval.add_argument("--suites", nargs="+", default=None, help="Subset of suites to evaluate")
    p_eval.add_argument("--html", action="store_true", help="Also render an HTML table")
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = subparsers.add_parser("sweep", parents=[run], help="Ablation sweep")
    p_sweep.add_argument("--axis", required=True, choices=["remind_steps", "alpha_merge"])
    p_sweep.add_argument("--values", nargs="+", type=float, default=None, help="Override the configured values")
    p_sweep.add_argument("--original", default=None, help="Original checkpoint (default: run store)")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cont = subparsers.add_parser("continuous", parents=[run], help="Merge single-target unlearned checkpoints")
    p_cont.add_argument("--checkpoints", nargs="+", required=True, help="Unlearned checkpoints")
    p_cont.add_argument("--reference", required=True, help="Original checkpoint")
    p_cont.add_argument("--targets", nargs="+", type=int, default=None,
                        help="Forgotten subgroup of each checkpoint (default: read from the checkpoints)")
    p_cont.set_defaults(func=_cmd_continuous)

    p_scores = subparsers.add_parser("scores", parents=[verbosity], help="Recompute the published Scores")
    p_scores.add_argument("--tables", default=None, help="Score tables YAML (default: shipped tables)")
    p_scores.add_argument("--out", dest="output", default=None, help="Optional CSV output")
    p_scores.set_defaults(func=_cmd_scores)

    p_render = subparsers.add_parser("render-html", parents=[verbosity], help="Render reports as an HTML table")
    p_render.add_argument("--in", dest="inputs", nargs="+", required=True, help="Report JSON files")
    p_render.add_argument("--out", dest="output", required=True, help="Output HTML file")
    p_render.add_argument("--title", default="Resultados de desaprendizaje", help="Page title")
    p_render.add_argument("--template", default=None, help="Jinja2 template file")
    p_render.set_defaults(func=_cmd_render_html)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point for the CLI.

    Args:
        argv: Optional list of arguments. If None, ``sys.argv[1:]`` is used.

    Returns:
        The process exit code.
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose - args.quiet)
    try:
        args.func(args)
    except UnlearnError as exc:
        logger.error("%s: %s", exc.code.value, exc)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
