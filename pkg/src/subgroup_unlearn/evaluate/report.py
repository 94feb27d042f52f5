"""Evaluation reports.

An :class:`EvalReport` holds, per suite, the zero-shot accuracy of the
original and of the candidate model, the restoration ratio and the
direction the ratio enters the Score with. Reports serialize to JSON
(``schemas/eval_report-1.0.schema.json``) and to a CSV table with one
row per suite and a Score footer.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from ..core.errors import ConfigurationError
from ..data.dataset import LabeledDataset
from ..data.split import FORGET, RETAIN, EvalSuite, UnlearnTask
from ..model.params import ParameterSet
from ..store.artifacts import atomic_write_text, write_json
from .metrics import accuracy, aggregate_score, restoration_ratio

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("suite", "direction", "acc_ori", "acc_unlearn", "ratio")


def percent(value: float) -> float:
    """Fraction to a percentage rounded to one decimal."""
    return round(100.0 * value, 1)


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    direction: str
    granularity: str
    size: int
    acc_ori: float
    acc_unlearn: float
    ratio: float
    fingerprint: str

    @property
    def arrow(self) -> str:
        return "↓" if self.direction == FORGET else "↑"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "suite": self.suite,
            "direction": self.direction,
            "granularity": self.granularity,
            "size": self.size,
            "acc_ori": self.acc_ori,
            "acc_unlearn": self.acc_unlearn,
            "ratio": self.ratio,
            "fingerprint": self.fingerprint,
        }


@dataclass(frozen=True)
class EvalReport:
    provenance: str
    method: Optional[str]
    original_fingerprint: str
    original_checksum: str
    candidate_checksum: str
    suites: Tuple[SuiteResult, ...]
    score: float

    def suite(self, name: str) -> SuiteResult:
        for result in self.suites:
            if result.suite == name:
                return result
        raise KeyError(name)

    @property
    def label(self) -> str:
        return self.method or self.provenance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": "1.0",
            "provenance": self.provenance,
            "method": self.method,
            "original_fingerprint": self.original_fingerprint,
            "original_checksum": self.original_checksum,
            "candidate_checksum": self.candidate_checksum,
            "suites": [s.to_dict() for s in self.suites],
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalReport":
        return cls(
            provenance=data["provenance"],
            method=data.get("method"),
            original_fingerprint=data["original_fingerprint"],
            original_checksum=data["original_checksum"],
            candidate_checksum=data["candidate_checksum"],
            suites=tuple(SuiteResult(**s) for s in data["suites"]),
            score=float(data["score"]),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in self.suites:
            writer.writerow([s.suite, s.direction, percent(s.acc_ori), percent(s.acc_unlearn), percent(s.ratio)])
        writer.writerow(["Score", "", "", "", round(self.score, 1)])
        return buf.getvalue()

    def write(self, directory: Path, stem: str) -> List[Path]:
        """Write ``<stem>.json`` (schema-checked) and ``<stem>.csv``."""
        directory = Path(directory)
        return [
            write_json(directory / f"{stem}.json", self.to_dict(), schema="eval_report"),
            atomic_write_text(directory / f"{stem}.csv", self.to_csv()),
        ]


def report_from_suites(
    original: ParameterSet, candidate: ParameterSet, suites: Mapping[str, EvalSuite]
) -> EvalReport:
    """Score ``candidate`` against ``original`` on every non-empty suite.

    Raises:
        MergeError: If the models are not merge-compatible.
        ConfigurationError: If no suite has an example.
        UndefinedBaselineError: If the original scores zero on a suite.
    """
    original.check_compatible(candidate)
    results: List[SuiteResult] = []
    for name, suite in suites.items():
        if len(suite.dataset) == 0:
            logger.warning("suite %s is empty and is left out of the report", name)
            continue
        acc_ori = accuracy(original, suite.dataset, suite.granularity)
        acc_new = accuracy(candidate, suite.dataset, suite.granularity)
        results.append(SuiteResult(
            suite=name,
            direction=suite.direction,
            granularity=suite.granularity,
            size=len(suite.dataset),
            acc_ori=acc_ori,
            acc_unlearn=acc_new,
            ratio=restoration_ratio(acc_new, acc_ori),
            fingerprint=suite.dataset.fingerprint(),
        ))
        logger.debug("suite %s: %.4f -> %.4f", name, acc_ori, acc_new)
    if not results:
        raise ConfigurationError("evaluation needs at least one non-empty suite")
    score = aggregate_score((r.ratio, r.direction) for r in results)
    return EvalReport(
        provenance=candidate.meta.provenance,
        method=candidate.meta.extra.get("method"),
        original_fingerprint=original.meta.fingerprint,
        original_checksum=original.checksum(),
        candidate_checksum=candidate.checksum(),
        suites=tuple(results),
        score=score,
    )


def build_report(
    original: ParameterSet,
    candidate: ParameterSet,
    task: UnlearnTask,
    suites: Optional[Sequence[str]] = None,
) -> EvalReport:
    """Report over the task's evaluation suites (all of them by default).

    Raises:
        ConfigurationError: If ``suites`` is empty or names an unknown suite.
    """
    names = list(task.eval_suites) if suites is None else list(suites)
    if not names:
        raise ConfigurationError("suite list is empty")
    unknown = [n for n in names if n not in task.eval_suites]
    if unknown:
        raise ConfigurationError("unknown evaluation suites", unknown)
    report = report_from_suites(original, candidate, {n: task.eval_suites[n] for n in names})
    logger.info("report %s: Score %.1f", report.label, report.score)
    return report


def class_suites(dataset: LabeledDataset, targets: Iterable[int]) -> Dict[str, EvalSuite]:
    """One coarse-prompt suite per subgroup; ``targets`` are forget-direction."""
    forget = set(int(t) for t in targets)
    names = dataset.taxonomy.subgroup_names()
    coarse = dataset.with_prompts("coarse")
    out: Dict[str, EvalSuite] = {}
    for g, name in enumerate(names):
        direction = FORGET if g in forget else RETAIN
        out[name] = EvalSuite(name, coarse.where(coarse.subgroup == g, name), direction)
    return out


def class_accuracy_table(
    models: Mapping[str, ParameterSet], dataset: LabeledDataset
) -> List[Dict[str, Any]]:
    """Per-subgroup superclass accuracy (percent) of each model, one row per model."""
    names = dataset.taxonomy.subgroup_names()
    coarse = dataset.with_prompts("coarse")
    rows = []
    for label, params in models.items():
        row: Dict[str, Any] = {"model": label}
        for g, name in enumerate(names):
            part = coarse.where(coarse.subgroup == g, name)
            row[name] = percent(accuracy(params, part)) if len(part) else None
        rows.append(row)
    return rows
