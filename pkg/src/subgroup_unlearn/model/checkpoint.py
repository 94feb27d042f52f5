"""Binary checkpoint codec.

Layout (all integers little-endian)::

    b"SGUCKPT1"
    u32 header length, UTF-8 JSON header
    u32 record count
    per record: u32 name length, UTF-8 name, u8 dtype code, u8 rank,
                rank x u64 dims, row-major payload

The header records the architecture fingerprint, the model spec and
vocabulary, the seed, the provenance tag and the BatchNorm layer list.
Adapted models add an ``adapters`` block and ``adapter.<layer>.A|B``
records. The tensor record section is shared with dataset archives.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Tuple, Union

import numpy as np
import torch

from ..core.errors import MergeError
from ..core.types import ModelSpec
from ..store.artifacts import atomic_write_bytes
from .params import ParameterMeta, ParameterSet

MAGIC = b"SGUCKPT1"
FORMAT_VERSION = "1.0"

DTYPE_CODES: Dict[torch.dtype, int] = {torch.float64: 1, torch.float32: 2, torch.int64: 3}
_NUMPY_DTYPES: Dict[int, str] = {1: "<f8", 2: "<f4", 3: "<i8"}
_TORCH_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}

Records = List[Tuple[str, torch.Tensor]]


def write_records(fh: BinaryIO, records: Records) -> None:
    fh.write(struct.pack("<I", len(records)))
    for name, tensor in records:
        if tensor.dtype not in DTYPE_CODES:
            raise MergeError(f"record {name}: unsupported dtype {tensor.dtype}")
        code = DTYPE_CODES[tensor.dtype]
        raw_name = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw_name)))
        fh.write(raw_name)
        fh.write(struct.pack("<BB", code, tensor.dim()))
        if tensor.dim():
            fh.write(struct.pack(f"<{tensor.dim()}Q", *tensor.shape))
        payload = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=_NUMPY_DTYPES[code])
        fh.write(payload.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise MergeError("truncated checkpoint file")
    return data


def read_records(fh: BinaryIO) -> Records:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    records: Records = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
        name = _read_exact(fh, name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", _read_exact(fh, 2))
        if code not in _NUMPY_DTYPES:
            raise MergeError(f"record {name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
        dtype = np.dtype(_NUMPY_DTYPES[code])
        count_items = int(np.prod(dims)) if dims else 1
        buf = _read_exact(fh, count_items * dtype.itemsize)
        array = np.frombuffer(buf, dtype=dtype).reshape(dims).copy()
        records.append((name, torch.from_numpy(array).to(_TORCH_DTYPES[code])))
    return records


def encode(header: Dict[str, Any], records: Records) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    write_records(fh, records)
    return fh.getvalue()


def decode(data: bytes) -> Tuple[Dict[str, Any], Records]:
    fh = io.BytesIO(data)
    if _read_exact(fh, len(MAGIC)) != MAGIC:
        raise MergeError("not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
    header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
    return header, read_records(fh)


def checkpoint_header(params: ParameterSet) -> Dict[str, Any]:
    spec = params.spec
    return {
        "format_version": FORMAT_VERSION,
        "fingerprint": params.meta.fingerprint,
        "model_spec": spec.to_dict(),
        "vocab": list(spec.vocab),
        "seed": params.meta.seed,
        "provenance": params.meta.provenance,
        "bn_layers": spec.bn_layers(),
        "extra": dict(params.meta.extra),
    }


def params_from(header: Dict[str, Any], records: Records) -> ParameterSet:
    spec = ModelSpec.from_dict(header["model_spec"])
    if spec.fingerprint() != header["fingerprint"]:
        raise MergeError("checkpoint fingerprint does not match its model spec")
    meta = ParameterMeta(spec=spec, seed=int(header["seed"]), provenance=header["provenance"],
                         extra=header.get("extra", {}))
    entries = {name: t for name, t in records if not name.startswith("adapter.")}
    return ParameterSet(entries, meta)


def save_checkpoint(params: ParameterSet, path: Union[str, Path]) -> Path:
    """Write ``params`` atomically; returns the path written."""
    return atomic_write_bytes(Path(path), encode(checkpoint_header(params), list(params.items())))


def load_checkpoint(path: Union[str, Path]) -> ParameterSet:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        MergeError: On a malformed file or a fingerprint mismatch.
    """
    header, records = decode(Path(path).read_bytes())
    return params_from(header, records)


def read_header(path: Union[str, Path]) -> Dict[str, Any]:
    with Path(path).open("rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise MergeError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
        return json.loads(_read_exact(fh, header_len).decode("utf-8"))
