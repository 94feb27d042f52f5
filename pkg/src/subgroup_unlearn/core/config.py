"""Loading and validation of run configuration files.

A configuration file is a YAML document with one section per stage
(see ``configs/default-1.0.yaml``). The document is validated against
``schemas/run_config-1.0.schema.json``; every violation is reported
with the line it comes from so that a broken config can be fixed in
one pass. Missing optional keys take the defaults of the dataclasses in
:mod:`subgroup_unlearn.core.types`.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import yaml

from ..validate.schema_validate import iter_violations, schema_path
from .errors import ConfigurationError
from .hashing import derive_seed
from .types import (
    BASELINE_METHODS,
    DEFAULT_MERGE_GRID,
    AdapterConfig,
    BaselineConfig,
    BlockSpec,
    EvalConfig,
    ModelSpec,
    RunConfig,
    SelectionConfig,
    SplitFractions,
    StageConfig,
    SweepConfig,
    TaskConfig,
    TaxonomySpec,
    TrainConfig,
    canonical_json,
)

_BASELINE_EPOCH_KEYS = {"FT": "ft_epochs", "GA": "ga_epochs", "LIP": "lip_epochs", "EMMN": "emmn_epochs"}
_BASELINE_DEFAULT_EPOCHS = {"FT": 2, "GA": 2, "LIP": 2, "EMMN": 5, "FISHER_NOISE": 0}


def _line_of(node: Optional[yaml.Node], path: Sequence[Any]) -> int:
    """Return the 1-based line of the deepest YAML node reachable along ``path``."""
    if node is None:
        return 1
    line = node.start_mark.line + 1
    current = node
    for key in path:
        nxt = None
        if isinstance(current, yaml.MappingNode):
            for key_node, value_node in current.value:
                if key_node.value == str(key):
                    nxt = value_node
                    break
        elif isinstance(current, yaml.SequenceNode) and isinstance(key, int) and key < len(current.value):
            nxt = current.value[key]
        if nxt is None:
            break
        current = nxt
        line = current.start_mark.line + 1
    return line


def _parse(text: str, source: str) -> Tuple[Dict[str, Any], Optional[yaml.Node]]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark is not None else source
        raise ConfigurationError(f"cannot parse configuration {source}", [f"{where}: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"configuration {source} must be a mapping of sections")
    return data, node


def load_config(
    path: Union[str, Path],
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> RunConfig:
    """Load, validate and resolve a configuration file.

    Args:
        path: YAML configuration file.
        seed: Optional root seed override (applied before hashing).
        out_dir: Optional artifact store override (applied before hashing).

    Returns:
        The resolved :class:`RunConfig`.

    Raises:
        ConfigurationError: On YAML syntax errors, schema violations
            (one diagnostic per violation, with line numbers) or invalid
            values.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    return load_config_text(text, source=str(path), seed=seed, out_dir=out_dir)


def load_config_text(
    text: str,
    source: str = "<config>",
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> RunConfig:
    """Same as :func:`load_config` for an in-memory document."""
    data, node = _parse(text, source)
    violations = iter_violations(data, schema_path("run_config"))
    if violations:
        details = [
            f"{source}:{_line_of(node, where)}: {'.'.join(str(p) for p in where) or '<root>'}: {msg}"
            for where, msg in violations
        ]
        raise ConfigurationError(f"invalid configuration {source}", details)
    if seed is not None:
        data["run"]["seed"] = int(seed)
    if out_dir is not None:
        data["run"]["out_dir"] = str(out_dir)
    return build_run_config(data)


def _stage(section: Dict[str, Any], seed: int, **defaults: Any) -> StageConfig:
    values = dict(defaults)
    values.update(section)
    if "merge_grid" in values:
        values["merge_grid"] = tuple(float(a) for a in values["merge_grid"])
    return StageConfig(seed=seed, **values)


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    """Resolve a schema-valid configuration document into dataclasses."""
    run = data["run"]
    root = int(run["seed"])
    tax_section = dict(data.get("taxonomy", {}))
    taxonomy = TaxonomySpec(seed=root, **tax_section)

    model_section = data["model"]
    model = ModelSpec(
        blocks=tuple(BlockSpec(int(w), int(k), int(s), bool(bn)) for w, k, s, bn in model_section["blocks"]),
        embed_dim=int(model_section["embed_dim"]),
        vocab=taxonomy.vocab(),
        temperature=float(model_section.get("temperature", 0.07)),
        image_size=taxonomy.image_size,
    )

    split = dict(data.get("split", {}))
    target_subgroup = int(split.pop("target_subgroup", 0))
    target_style = split.pop("target_style", None)
    if target_subgroup >= taxonomy.n_subgroups:
        raise ConfigurationError(
            f"target_subgroup {target_subgroup} outside taxonomy with {taxonomy.n_subgroups} subgroups"
        )
    task = TaskConfig(target_subgroup=target_subgroup, target_style=target_style, fractions=SplitFractions(**split))

    pretrain = TrainConfig(seed=derive_seed(root, "pretrain"), **data.get("pretrain", {}))
    selection = SelectionConfig(**data.get("selection", {}))
    adapters = AdapterConfig(**data.get("adapters", {}))
    forget = _stage(data.get("forget", {}), derive_seed(root, "forget"))
    remind = _stage(data.get("remind", {}), derive_seed(root, "remind"))
    restore = _stage(data.get("restore", {}), derive_seed(root, "restore"), merge_grid=DEFAULT_MERGE_GRID)

    shared = dict(data.get("baselines", {}))
    epochs = {m: int(shared.pop(key, _BASELINE_DEFAULT_EPOCHS[m])) for m, key in _BASELINE_EPOCH_KEYS.items()}
    epochs["FISHER_NOISE"] = 0
    baselines = {
        method: BaselineConfig(
            method=method, epochs=epochs[method], seed=derive_seed(root, f"baseline:{method}"), **shared
        )
        for method in BASELINE_METHODS
    }

    ev = dict(data.get("eval", {}))
    if "ood_suites" in ev:
        ev["ood_suites"] = tuple(ev["ood_suites"])
    sw = dict(data.get("sweep", {}))
    for key in ("remind_steps", "alpha_merge"):
        if key in sw:
            sw[key] = tuple(sw[key])

    cfg = RunConfig(
        name=str(run["name"]),
        seed=root,
        out_dir=str(run.get("out_dir", "runs")),
        original_checkpoint=run.get("original_checkpoint"),
        model=model,
        taxonomy=taxonomy,
        task=task,
        pretrain=pretrain,
        selection=selection,
        adapters=adapters,
        forget=forget,
        remind=remind,
        restore=restore,
        baselines=baselines,
        eval=EvalConfig(**ev),
        sweep=SweepConfig(**sw),
        raw=data,
    )
    digest = hashlib.sha256(canonical_json(resolved_document(cfg)).encode("utf-8")).hexdigest()
    object.__setattr__(cfg, "content_hash", digest)
    return cfg


def resolved_document(cfg: RunConfig) -> Dict[str, Any]:
    """All resolved values of ``cfg`` as plain JSON data (what gets hashed)."""
    doc = asdict(cfg)
    doc.pop("raw", None)
    doc.pop("content_hash", None)
    # the artifact store location does not change any result
    doc.pop("out_dir", None)
    return doc
