"""On-disk formats.

``DGFG`` binary arrays::

    b"DGFG" | version u32 | ndim u32 | dims u64 * ndim | float64 LE row-major

each with a JSON sidecar at ``<path>.json`` holding provenance. Laws are
stored as CSV, one sample per line, with the same kind of sidecar.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DGFG"
VERSION = 1
CONVENTIONS = {
    "log": "natural",
    "centering": "m_N = 2 sqrt(2/pi) (log N - 3/8 log log N)",
    "variance_normalization": "G = (I - P)^-1, unit conditional variance",
    "boundary": "outer ring of the box, field pinned to 0",
}


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _check_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass force=True to overwrite")


def encode_dgfg(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    head = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode_dgfg(buf: bytes) -> np.ndarray:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("missing DGFG magic bytes")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported DGFG version {version}")
    off = 12 + 8 * ndim
    if len(buf) < off:
        raise FormatError("truncated DGFG header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 12)
    count = int(np.prod(shape)) if ndim else 1
    if len(buf) != off + 8 * count:
        raise FormatError(f"DGFG payload has {len(buf) - off} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", offset=off, count=count).reshape(shape).astype(float)


def write_dgfg(path, array, meta: dict | None = None, force: bool = False) -> Path:
    path = Path(path)
    _check_overwrite(path, force)
    data = encode_dgfg(array)
    path.write_bytes(data)
    side = {"format": "DGFG", "version": VERSION, "shape": list(np.shape(array)),
            "sha256": hashlib.sha256(data).hexdigest(), "conventions": CONVENTIONS}
    side.update(meta or {})
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True, default=_json_default))
    return path


def read_dgfg(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    arr = decode_dgfg(path.read_bytes())
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return arr, meta


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path, obj, force: bool = False) -> Path:
    path = Path(path)
    _check_overwrite(path, force)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
    return path


def write_samples_csv(path, samples, meta: dict, force: bool = False) -> Path:
    path = Path(path)
    _check_overwrite(path, force)
    samples = np.asarray(samples, float)
    text = "".join(f"{x:.17g}\n" for x in samples)
    path.write_text(text)
    side = {"count": int(samples.size), "conventions": CONVENTIONS}
    side.update(meta)
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True, default=_json_default))
    return path


def read_samples_csv(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing sidecar {side.name} (field 'count')")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"unreadable sidecar: {e}") from None
    if "count" not in meta:
        raise FormatError("sidecar lacks required field 'count'")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    try:
        samples = np.array([float(ln) for ln in lines])
    except ValueError as e:
        raise FormatError(f"bad sample line: {e}") from None
    if samples.size != meta["count"]:
        raise FormatError(f"sidecar count {meta['count']} != {samples.size} samples in file")
    return samples, meta
