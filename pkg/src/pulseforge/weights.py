"""ModelWeights file format.

Layout: one line of UTF-8 JSON, then the raw little-endian row-major payload
of every tensor in header order::

    {"tensors": [{"name": ..., "shape": [...], "dtype": "float32"}, ...], "config": {...}}\\n
    <payload 0><payload 1>...

Model configs ride along in the header under a model-specific key.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFileError

_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class ModelWeights:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries = []
        payload = []
        for name, arr in self.tensors.items():
            dt = np.dtype(arr.dtype).name
            if dt not in _DTYPES:
                raise ValueError(f"{name}: unsupported dtype {dt}")
            entries.append({"name": name, "shape": list(arr.shape), "dtype": dt})
            payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes())
        header = {"tensors": entries, **self.meta}
        line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
        return line.encode("utf-8") + b"".join(payload)

    @classmethod
    def from_bytes(cls, raw: bytes) -> ModelWeights:
        nl = raw.find(b"\n")
        if nl < 0:
            raise CorruptFileError("weights file has no header line")
        try:
            header = json.loads(raw[:nl].decode("utf-8"))
            entries = header.pop("tensors")
        except (ValueError, KeyError) as exc:
            raise CorruptFileError(f"bad weights header: {exc}") from exc
        body = memoryview(raw)[nl + 1:]
        sizes = [int(np.prod(e["shape"], dtype=np.int64)) * np.dtype(_DTYPES[e["dtype"]]).itemsize for e in entries]
        if sum(sizes) != len(body):
            raise CorruptFileError(f"payload is {len(body)} bytes, header declares {sum(sizes)}")
        tensors = {}
        off = 0
        for e, n in zip(entries, sizes):
            arr = np.frombuffer(body[off:off + n], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
            tensors[e["name"]] = arr.astype(e["dtype"])
            off += n
        return cls(tensors, header)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> ModelWeights:
        return cls.from_bytes(Path(path).read_bytes())
