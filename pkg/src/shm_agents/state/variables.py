"""Session data store: descriptors, payloads, transforms, SHMVAR files.

Every variable produced during a run is recorded as a descriptor (name,
description, storage location, dtype, shape) plus the payload it describes.
Payload kinds map to dtypes: f64/i64 -> numpy arrays, text -> str,
record-table -> list of row dicts.

On-disk format (SHMVAR v1): a single header line
``SHMVAR v1 {json descriptor}`` followed by the raw payload, little-endian
for numeric dtypes, UTF-8 for text, CSV for record tables.
"""

from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from ..errors import RegistrationError, TransformError, UnknownVariableError

DTYPES = ("f64", "i64", "text", "record-table")
_NUMPY_DTYPE = {"f64": np.dtype("<f8"), "i64": np.dtype("<i8")}

Payload = Union[np.ndarray, str, list]


@dataclass
class VariableDescriptor:
    name: str
    description: str = ""
    location: str = "memory"        # "memory" or a file path
    dtype: str = "f64"
    shape: list[int] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "location": self.location,
            "dtype": self.dtype,
            "shape": list(self.shape),
        }


def element_count(dtype: str, payload: Payload) -> int:
    if dtype in ("f64", "i64"):
        return int(np.asarray(payload).size)
    if dtype == "text":
        return 1
    return len(payload)  # record-table rows


def _shape_product(shape: list[int]) -> int:
    out = 1
    for s in shape:
        out *= int(s)
    return out


def validate_descriptor(desc: VariableDescriptor, payload: Payload) -> Payload:
    """Check descriptor invariants against the payload; returns the payload
    normalized to its canonical in-memory type."""
    if not desc.name or not desc.name.strip():
        raise RegistrationError("variable name must be non-empty")
    if desc.dtype not in DTYPES:
        raise RegistrationError(f"unknown dtype {desc.dtype!r}; expected one of {DTYPES}")
    if desc.dtype in ("f64", "i64"):
        arr = np.asarray(payload, dtype=_NUMPY_DTYPE[desc.dtype])
        if _shape_product(desc.shape) != arr.size:
            raise RegistrationError(
                f"shape {desc.shape} implies {_shape_product(desc.shape)} elements, payload has {arr.size}"
            )
        return arr.reshape(desc.shape) if desc.shape else arr.reshape(())
    if desc.dtype == "text":
        if not isinstance(payload, str):
            raise RegistrationError("text payload must be a str")
        if desc.shape not in ([], [1]):
            raise RegistrationError("text variables use shape [1]")
        return payload
    if not isinstance(payload, list) or not all(isinstance(r, dict) for r in payload):
        raise RegistrationError("record-table payload must be a list of row dicts")
    if desc.shape != [len(payload)]:
        raise RegistrationError(f"record-table shape must be [{len(payload)}]")
    return payload


@dataclass
class Variable:
    descriptor: VariableDescriptor
    payload: Payload


class DataStore:
    """Per-session variable manager. Name collisions are resolved by
    suffixing _2, _3, ... Concurrent access is serialized."""

    def __init__(self) -> None:
        self._vars: dict[str, Variable] = {}
        self._lock = threading.RLock()

    def register(self, descriptor: VariableDescriptor, payload: Payload) -> str:
        payload = validate_descriptor(descriptor, payload)
        with self._lock:
            name = self._free_name(descriptor.name)
            desc = replace(descriptor, name=name, shape=list(descriptor.shape) or
                           ([1] if descriptor.dtype == "text" else []))
            self._vars[name] = Variable(desc, payload)
            return name

    def _free_name(self, base: str) -> str:
        if base not in self._vars:
            return base
        k = 2
        while f"{base}_{k}" in self._vars:
            k += 1
        return f"{base}_{k}"

    def exists(self, name: str) -> bool:
        with self._lock:
            return name in self._vars

    def fetch(self, name: str) -> Variable:
        with self._lock:
            if name not in self._vars:
                raise UnknownVariableError(f"no variable named {name!r}")
            var = self._vars[name]
        if var.descriptor.location != "memory":
            path = Path(var.descriptor.location)
            if not path.exists():
                raise UnknownVariableError(f"variable {name!r} points at missing file {path}")
        return var

    def get(self, name: str) -> Payload:
        return self.fetch(name).payload

    def query(self, filter: Optional[str] = None) -> list[VariableDescriptor]:
        with self._lock:
            descs = [v.descriptor for v in self._vars.values()]
        if filter is None or filter == "":
            return descs
        needle = filter.lower()
        return [d for d in descs if needle in d.name.lower() or needle in d.description.lower()]

    def transform(self, name: str, target: dict[str, Any]) -> str:
        """Deterministic conversion: channel_selection -> transpose ->
        reshape -> dtype cast -> unit scale. Unreachable targets raise a
        resolvable TransformError naming the violated constraint."""
        var = self.fetch(name)
        desc, payload = var.descriptor, var.payload
        if desc.dtype not in ("f64", "i64"):
            raise TransformError(f"variable {name!r} has dtype {desc.dtype}; only numeric variables transform")
        arr = np.asarray(payload)

        if (sel := target.get("channel_selection")) is not None:
            if arr.ndim != 2:
                raise TransformError("channel_selection needs a 2-d channels x samples variable")
            sel = [int(s) for s in (sel if isinstance(sel, (list, tuple)) else [sel])]
            if any(s < 0 or s >= arr.shape[0] for s in sel):
                raise TransformError(f"channel index out of range 0..{arr.shape[0]-1}")
            arr = arr[sel, :]

        if target.get("transpose"):
            arr = arr.T

        if (shape := target.get("shape")) is not None:
            shape = [int(s) for s in shape]
            if _shape_product(shape) != arr.size:
                raise TransformError(
                    f"cannot reshape {arr.size} elements into {shape} "
                    f"({_shape_product(shape)} elements); element count must match"
                )
            arr = arr.reshape(shape)  # row-major

        dtype = target.get("dtype", desc.dtype)
        if dtype not in ("f64", "i64"):
            raise TransformError(f"numeric variables cast only to f64/i64, not {dtype!r}")

        if (scale := target.get("scale_factor")) is not None:
            arr = arr * float(scale)

        arr = np.ascontiguousarray(arr, dtype=_NUMPY_DTYPE[dtype])
        new_desc = VariableDescriptor(
            name=f"{name}_transformed",
            description=f"transform of {name}: {json.dumps(target, sort_keys=True)}",
            dtype=dtype,
            shape=list(arr.shape),
        )
        return self.register(new_desc, arr)

    def save(self, name: str, path: Union[str, Path]) -> str:
        """Write the SHMVAR container and repoint the descriptor at it."""
        var = self.fetch(name)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(dump_shmvar(var.descriptor, var.payload))
        with self._lock:
            self._vars[name] = Variable(replace(var.descriptor, location=str(path)), var.payload)
        return str(path)


# --- SHMVAR v1 container -------------------------------------------------

def dump_shmvar(descriptor: VariableDescriptor, payload: Payload) -> bytes:
    meta = {
        "name": descriptor.name,
        "description": descriptor.description,
        "dtype": descriptor.dtype,
        "shape": list(descriptor.shape),
    }
    header = f"SHMVAR v1 {json.dumps(meta, ensure_ascii=False)}\n".encode("utf-8")
    if descriptor.dtype in ("f64", "i64"):
        body = np.ascontiguousarray(payload, dtype=_NUMPY_DTYPE[descriptor.dtype]).tobytes()
    elif descriptor.dtype == "text":
        body = str(payload).encode("utf-8")
    else:
        body = _rows_to_csv(payload).encode("utf-8")
    return header + body


def load_shmvar(raw: bytes) -> tuple[VariableDescriptor, Payload]:
    newline = raw.find(b"\n")
    if newline < 0 or not raw.startswith(b"SHMVAR v1 "):
        raise RegistrationError("not a SHMVAR v1 container")
    meta = json.loads(raw[len(b"SHMVAR v1 "):newline].decode("utf-8"))
    body = raw[newline + 1:]
    desc = VariableDescriptor(
        name=meta["name"], description=meta.get("description", ""),
        dtype=meta["dtype"], shape=[int(s) for s in meta["shape"]],
    )
    if desc.dtype in ("f64", "i64"):
        arr = np.frombuffer(body, dtype=_NUMPY_DTYPE[desc.dtype]).copy()
        payload: Payload = arr.reshape(desc.shape)
    elif desc.dtype == "text":
        payload = body.decode("utf-8")
    else:
        payload = _csv_to_rows(body.decode("utf-8"))
    return desc, payload


def read_shmvar_file(path: Union[str, Path]) -> tuple[VariableDescriptor, Payload]:
    desc, payload = load_shmvar(Path(path).read_bytes())
    desc.location = str(path)
    return desc, payload


def _rows_to_csv(rows: list) -> str:
    import csv

    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _csv_to_rows(text: str) -> list:
    import csv

    if not text.strip():
        return []
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        parsed: dict[str, Any] = {}
        for key, val in row.items():
            try:
                parsed[key] = float(val)
            except (TypeError, ValueError):
                parsed[key] = val
        rows.append(parsed)
    return rows
