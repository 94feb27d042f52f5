"""Published comparison tables and their Score recomputation.

The tables ship as ``tables/published_scores-1.0.yaml`` at the project
root. Each row carries the printed suite ratios (percent) and the
printed Score; :func:`recompute_score` applies :func:`aggregate_score`
to the ratios so the directional-mean formula can be checked against
every printed value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from ..core.errors import ConfigurationError
from ..data.split import FORGET, RETAIN
from .metrics import aggregate_score

# tables live at the project root: evaluate -> subgroup_unlearn -> src -> root
TABLES_PATH = Path(__file__).resolve().parents[3] / "tables" / "published_scores-1.0.yaml"


@dataclass(frozen=True)
class PublishedRow:
    backbone: str
    method: str
    ratios: Tuple[float, ...]
    score: float
    tolerance: float
    misprint: bool = False


@dataclass(frozen=True)
class PublishedTable:
    name: str
    description: str
    columns: Tuple[str, ...]
    forget_columns: Tuple[int, ...]
    rows: Tuple[PublishedRow, ...]

    def directions(self) -> List[str]:
        return [FORGET if i in self.forget_columns else RETAIN for i in range(len(self.columns))]


def load_published(path: Optional[Union[str, Path]] = None) -> List[PublishedTable]:
    """Parse the published score tables.

    Raises:
        ConfigurationError: If a row's ratio count differs from its table's columns.
    """
    path = Path(path) if path is not None else TABLES_PATH
    with path.open("r", encoding="utf-8") as f:
        data: Dict[str, Any] = yaml.safe_load(f)
    default_tol = float(data.get("default_tolerance", 0.05))
    tables: List[PublishedTable] = []
    for name, block in data["tables"].items():
        columns = tuple(block["columns"])
        rows = []
        for row in block["rows"]:
            if len(row["ratios"]) != len(columns):
                raise ConfigurationError(f"{name}/{row['backbone']}/{row['method']}: expected {len(columns)} ratios")
            rows.append(PublishedRow(
                backbone=row["backbone"],
                method=row["method"],
                ratios=tuple(float(r) for r in row["ratios"]),
                score=float(row["score"]),
                tolerance=float(row.get("tolerance", default_tol)),
                misprint=bool(row.get("misprint", False)),
            ))
        tables.append(PublishedTable(name, block.get("description", ""), columns,
                                     tuple(block["forget_columns"]), tuple(rows)))
    return tables


def recompute_score(table: PublishedTable, row: PublishedRow) -> float:
    return aggregate_score(zip((r / 100.0 for r in row.ratios), table.directions()))


def score_rows(tables: List[PublishedTable]) -> List[Dict[str, Any]]:
    """One record per published row with the recomputed Score and whether it matches."""
    out = []
    for table in tables:
        for row in table.rows:
            value = recompute_score(table, row)
            out.append({
                "table": table.name,
                "backbone": row.backbone,
                "method": row.method,
                "printed": row.score,
                "recomputed": round(value, 3),
                "matches": abs(value - row.score) <= row.tolerance + 1e-9,
                "misprint": row.misprint,
            })
    return out
