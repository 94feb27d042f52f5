"""JSON schema validation utilities.

This module provides a thin wrapper around the ``jsonschema`` library
to validate configuration documents and generated artifacts against
the schemas shipped in ``schemas/``. A custom exception is raised on
validation errors to allow callers to handle them appropriately.
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import jsonschema

from ..core.errors import SchemaValidationError

# schema files live at the project root: validate -> subgroup_unlearn -> src -> root
SCHEMAS_DIR = Path(__file__).resolve().parents[3] / "schemas"


def schema_path(name: str) -> Path:
    """Return the path of a project schema, e.g. ``schema_path("eval_report")``."""
    return SCHEMAS_DIR / f"{name}-1.0.schema.json"


@lru_cache(maxsize=None)
def _load_schema(path: str) -> Dict[str, Any]:
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)


def iter_violations(data: Any, schema: Union[str, Path]) -> List[Tuple[Tuple[Any, ...], str]]:
    """List every violation of ``data`` against ``schema``.

    Returns:
        ``(path, message)`` pairs sorted by path, where ``path`` is the
        tuple of keys/indices leading to the offending value.
    """
    validator_cls = jsonschema.validators.validator_for(_load_schema(str(schema)))
    validator = validator_cls(_load_schema(str(schema)))
    found = []
    for err in validator.iter_errors(data):
        found.append((tuple(err.absolute_path), err.message))
    return sorted(found, key=lambda item: [str(p) for p in item[0]])


def validate(data: Dict[str, Any], schema: Union[str, Path]) -> None:
    """Validate ``data`` against the JSON schema at ``schema``.

    Args:
        data: Parsed JSON document to validate.
        schema: Path to the JSON schema file.

    Raises:
        SchemaValidationError: If validation fails.
    """
    try:
        jsonschema.validate(instance=data, schema=_load_schema(str(schema)))
    except jsonschema.ValidationError as exc:
        # Collect messages from nested contexts if available
        errors = [exc.message]
        for e in getattr(exc, "context", []) or []:
            errors.append(e.message)
        raise SchemaValidationError(
            f"JSON document failed schema validation ({Path(schema).name})", errors
        ) from exc
