"""Filesystem artifact store and run manifests.

A run directory is ``<out_dir>/<run-id>/`` with ``manifest.json`` and
the ``checkpoints/``, ``logs/``, ``reports/`` and ``data/``
sub-directories. The run id is derived from the run name and the
configuration content hash, so every command run with the same
configuration shares one directory. Files are written atomically
(temporary file in the target directory, then ``os.replace``).
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.errors import MergeError
from ..core.hashing import sha256_file
from ..validate.schema_validate import schema_path, validate

logger = logging.getLogger(__name__)

SUBDIRS = ("checkpoints", "logs", "reports", "data")


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, data: Any, schema: Optional[str] = None) -> Path:
    """Validate ``data`` against a project schema (if named) and write it."""
    if schema is not None:
        validate(data, schema_path(schema))
    return atomic_write_text(path, json.dumps(data, ensure_ascii=False, indent=2, sort_keys=False) + "\n")


def read_json(path: Path) -> Any:
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)


@dataclass
class ManifestEntry:
    """One command execution recorded in a run manifest."""
    command: str
    inputs: Dict[str, Dict[str, str]] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "started": self.started,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": {k: round(v, 3) for k, v in self.timings.items()},
            "seeds": self.seeds,
        }


class RunManifest:
    """Append-only record of the commands run in one run directory."""

    def __init__(self, path: Path, run_id: str, config_hash: str) -> None:
        self.path = Path(path)
        self.run_id = run_id
        self.config_hash = config_hash
        self.entries: List[Dict[str, Any]] = []
        if self.path.exists():
            data = read_json(self.path)
            validate(data, schema_path("run_manifest"))
            if data["config_hash"] != config_hash:
                raise MergeError(f"manifest {self.path} belongs to another configuration")
            self.entries = list(data["entries"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": "1.0",
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "entries": self.entries,
        }

    def append(self, entry: ManifestEntry) -> None:
        self.entries.append(entry.to_dict())
        write_json(self.path, self.to_dict(), schema="run_manifest")

    def verify(self, root: Path) -> List[str]:
        """List output artifacts that are missing or whose hash changed.

        A path written by several commands is checked against the most
        recent entry that wrote it.
        """
        latest: Dict[str, str] = {}
        for entry in self.entries:
            latest.update(entry["outputs"])
        problems = []
        for rel, digest in latest.items():
            target = Path(root) / rel
            if not target.exists():
                problems.append(f"{rel}: missing")
            elif sha256_file(target) != digest:
                problems.append(f"{rel}: hash mismatch")
        return problems


class RunStore:
    """Run directory of one configuration."""

    def __init__(self, out_dir: Path, run_name: str, config_hash: str) -> None:
        self.run_id = f"{run_name}-{config_hash[:12]}"
        self.root = Path(out_dir) / self.run_id
        for sub in SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(self.root / "manifest.json", self.run_id, config_hash)

    def path(self, kind: str, name: str) -> Path:
        return self.root / kind / name

    def relative(self, path: Path) -> str:
        return Path(path).resolve().relative_to(self.root.resolve()).as_posix()

    def begin(self, command: str) -> ManifestEntry:
        return ManifestEntry(command=command)

    def add_input(self, entry: ManifestEntry, name: str, path: Path) -> None:
        entry.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}

    def add_output(self, entry: ManifestEntry, path: Path) -> None:
        entry.outputs[self.relative(path)] = sha256_file(path)

    def commit(self, entry: ManifestEntry) -> None:
        self.manifest.append(entry)
        logger.info("run %s: recorded %s (%d outputs)", self.run_id, entry.command, len(entry.outputs))
