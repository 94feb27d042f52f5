"""Dataset archives.

An archive is a directory holding ``manifest.json`` (taxonomy, seed,
target, fractions, split membership by example id and per-split
fingerprints) and one ``<split>.bin`` file per split, written with the
checkpoint tensor record format.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Union

from ..core.errors import ConfigurationError
from ..core.types import SplitFractions, TaxonomySpec
from ..model.checkpoint import read_records, write_records
from ..store.artifacts import atomic_write_bytes, read_json, write_json
from .dataset import LabeledDataset
from .split import EvalSuite, UnlearnTask

ARCHIVE_MAGIC = b"SGUDATA1"
_COLUMNS = ("images", "superclass", "subgroup", "style", "ids", "prompts")


def _encode_split(ds: LabeledDataset) -> bytes:
    fh = io.BytesIO()
    fh.write(ARCHIVE_MAGIC)
    name = ds.name.encode("utf-8")
    fh.write(struct.pack("<I", len(name)))
    fh.write(name)
    write_records(fh, [(col, getattr(ds, col)) for col in _COLUMNS])
    return fh.getvalue()


def _decode_split(data: bytes, taxonomy: TaxonomySpec) -> LabeledDataset:
    fh = io.BytesIO(data)
    if fh.read(len(ARCHIVE_MAGIC)) != ARCHIVE_MAGIC:
        raise ConfigurationError("not a dataset archive split (bad magic)")
    (n,) = struct.unpack("<I", fh.read(4))
    name = fh.read(n).decode("utf-8")
    columns = dict(read_records(fh))
    missing = [c for c in _COLUMNS if c not in columns]
    if missing:
        raise ConfigurationError(f"archive split {name} lacks columns {missing}")
    return LabeledDataset(*(columns[c] for c in _COLUMNS), taxonomy=taxonomy, name=name)


def save_task(task: UnlearnTask, directory: Union[str, Path]) -> Path:
    """Write ``task`` as a dataset archive; returns the manifest path."""
    directory = Path(directory)
    splits: Dict[str, Any] = {}
    named = {"forget": task.forget_set, "retain": task.retain_set, "calibration": task.calibration_set}
    for name, suite in task.eval_suites.items():
        named[f"suite.{name}"] = suite.dataset
    for name, ds in named.items():
        atomic_write_bytes(directory / f"{name}.bin", _encode_split(ds))
        entry = {"file": f"{name}.bin", "ids": ds.ids.tolist(), "fingerprint": ds.fingerprint()}
        if name.startswith("suite."):
            suite = task.eval_suites[name[len("suite."):]]
            entry.update(direction=suite.direction, granularity=suite.granularity)
        splits[name] = entry
    manifest = {
        "format_version": "1.0",
        "taxonomy": task.taxonomy.to_dict(),
        "seed": task.seed,
        "target_subgroup": task.target_subgroup,
        "target_style": task.target_style,
        "fractions": asdict(task.fractions),
        "splits": splits,
    }
    return write_json(directory / "manifest.json", manifest)


def load_task(directory: Union[str, Path]) -> UnlearnTask:
    """Read an archive written by :func:`save_task`.

    Raises:
        ConfigurationError: If a split file is missing or its
            fingerprint differs from the manifest.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json" if directory.is_dir() else directory
    directory = manifest_path.parent
    try:
        manifest = read_json(manifest_path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read dataset archive {manifest_path}: {exc}") from exc
    taxonomy = TaxonomySpec(**manifest["taxonomy"])
    loaded: Dict[str, LabeledDataset] = {}
    for name, entry in manifest["splits"].items():
        path = directory / entry["file"]
        if not path.exists():
            raise ConfigurationError(f"dataset archive is missing {path}")
        ds = _decode_split(path.read_bytes(), taxonomy)
        if ds.fingerprint() != entry["fingerprint"]:
            raise ConfigurationError(f"split {name} does not match its recorded fingerprint")
        loaded[name] = ds
    suites = {
        name[len("suite."):]: EvalSuite(name[len("suite."):], loaded[name], entry["direction"], entry["granularity"])
        for name, entry in manifest["splits"].items()
        if name.startswith("suite.")
    }
    return UnlearnTask(
        forget_set=loaded["forget"],
        retain_set=loaded["retain"],
        calibration_set=loaded["calibration"],
        eval_suites=suites,
        taxonomy=taxonomy,
        target_subgroup=int(manifest["target_subgroup"]),
        target_style=manifest.get("target_style"),
        seed=int(manifest["seed"]),
        fractions=SplitFractions(**manifest["fractions"]),
    )
