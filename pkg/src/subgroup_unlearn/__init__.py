"""Top-level package for the subgroup_unlearn project.

This package provides command line tools and a programmatic API to
run subgroup unlearning experiments on small contrastive dual-encoder
models: pre-training, the forget/remind/restore pipeline, the baseline
unlearning methods and the evaluation protocol. The pipeline is broken
into several sub-packages under ``subgroup_unlearn`` (see the
``README.md`` for an overview).

The version defined here follows semantic versioning and will be
incremented as the project evolves.
"""

from importlib.metadata import version as _version

__all__ = ["__version__"]

try:
    # Installed metadata wins; fall back to the source version during development.
    __version__: str = _version("subgroup_unlearn")  # type: ignore[no-untyped-call]
except Exception:
    __version__ = "1.0.0"
