"""CSV and JSON emitters with provenance headers."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError


def entry_names(prefix: str, shape: Sequence[int]) -> list[str]:
    """Row-major column names, e.g. ``P11, P12, P21, P22`` for a 2x2 ``P``."""
    if len(shape) == 0:
        return [prefix]
    sep = "_" if max(shape) > 9 else ""
    idx = np.indices(shape).reshape(len(shape), -1).T + 1
    return [prefix + sep.join(str(i) for i in row) if len(shape) > 1 else f"{prefix}{row[0]}" for row in idx]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def config_digest(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[float]],
              meta: Mapping | None = None) -> Path:
    """Write a CSV with optional ``# key=value`` comment lines before the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return path


def write_path_csv(path, t: np.ndarray, columns: Mapping[str, np.ndarray], meta=None) -> Path:
    """Write grid-indexed paths; each entry of ``columns`` is ``(N + 1, *shape)``."""
    header = ["t"]
    blocks = [np.asarray(t)[:, None]]
    for prefix, values in columns.items():
        values = np.asarray(values)
        header += entry_names(prefix, values.shape[1:])
        blocks.append(values.reshape(values.shape[0], -1))
    table = np.hstack(blocks)
    return write_csv(path, header, table, meta)


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a CSV written by :func:`write_csv` (comment lines skipped)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: no header row")
    header = lines[0].strip().split(",")
    try:
        data = np.array([[float(v) for v in ln.strip().split(",")] for ln in lines[1:] if ln.strip()])
        return header, data.reshape(-1, len(header))
    except ValueError as exc:
        raise DataError(f"{path}: malformed numeric table ({exc})") from None


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: str | Path, doc: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")
    return path
