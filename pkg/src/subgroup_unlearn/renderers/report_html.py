"""HTML comparison tables for evaluation reports.

The context builder works on report dictionaries (the JSON form) so a
table can be rendered straight from files on disk.
"""

from __future__ import annotations

import html
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from jinja2 import Environment, FileSystemLoader, select_autoescape

from ..core.errors import ConfigurationError
from ..store.artifacts import atomic_write_text

# templates live at the project root: renderers -> subgroup_unlearn -> src -> root
TEMPLATE_PATH = Path(__file__).resolve().parents[3] / "templates" / "eval_report.jinja.html"


def render_cell(suite: Dict[str, Any]) -> str:
    """One table cell: accuracy in percent with the ratio as subscript."""
    acc = 100.0 * float(suite["acc_unlearn"])
    ratio = 100.0 * float(suite["ratio"])
    css = "forget" if suite["direction"] == "forget" else "retain"
    return f'<span class="acc {css}">{acc:.1f}<sub class="ratio">{ratio:.1f}</sub></span>'


def build_report_context(reports: Sequence[Dict[str, Any]], title: str = "Resultados de desaprendizaje") -> Dict[str, Any]:
    """Context for the comparison template.

    Args:
        reports: Evaluation report dictionaries; the column set is taken
            from the first report and later reports must share it.
        title: Page title.

    Returns:
        A dictionary with ``title``, ``columns`` (name and direction
        arrow) and ``rows`` (label, pre-rendered cells and Score).
    """
    if not reports:
        return {"title": title, "columns": [], "rows": []}
    names = [s["suite"] for s in reports[0]["suites"]]
    columns = [
        {"name": s["suite"], "arrow": "↓" if s["direction"] == "forget" else "↑"}
        for s in reports[0]["suites"]
    ]
    rows: List[Dict[str, Any]] = []
    for report in reports:
        by_name = {s["suite"]: s for s in report["suites"]}
        if sorted(by_name) != sorted(names):
            raise ConfigurationError(f"report {report.get('method') or report['provenance']} has different suites")
        rows.append({
            "label": html.escape(report.get("method") or report["provenance"]),
            "cells": [render_cell(by_name[n]) for n in names],
            "score": f"{float(report['score']):.1f}",
        })
    return {"title": title, "columns": columns, "rows": rows}


def render_html(
    reports: Sequence[Dict[str, Any]],
    out_path: Union[str, Path],
    title: str = "Resultados de desaprendizaje",
    template: Optional[Union[str, Path]] = None,
) -> Path:
    template_path = Path(template).resolve() if template is not None else TEMPLATE_PATH
    env = Environment(
        loader=FileSystemLoader(str(template_path.parent)),
        autoescape=select_autoescape(["html", "xml"]),
    )
    page = env.get_template(template_path.name).render(table=build_report_context(reports, title))
    return atomic_write_text(Path(out_path), page)
