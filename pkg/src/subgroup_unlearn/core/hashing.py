"""Content hashing and seed derivation.

Every artifact written by the project is identified by the SHA-256 of
its bytes, and every stage draws its randomness from a seed derived
from the single root seed of the run configuration. Both functions are
pure: the same input always yields the same output.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Union

_CHUNK = 1 << 20


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    """Return the hex SHA-256 digest of the file at ``path``."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(root: int, label: str) -> int:
    """Fan a root seed out to a named stage.

    Args:
        root: Root seed of the run.
        label: Stage label, e.g. ``"forget"`` or ``"baseline:GA"``.

    Returns:
        A non-negative 63-bit integer seed.
    """
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)
