"""WGT1 tensor dumps and checkpoint directories.

WGT1 layout: magic ``b"WGT1"``, u32 LE rank, ``rank`` x u32 LE extents, then
the payload as little-endian float32 in row-major order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WGT1"


class FormatError(ValueError):
    pass


def encode_wgt1(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def decode_wgt1(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad WGT1 magic at offset 0: expected {MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < 8:
        raise FormatError("truncated WGT1 header at offset 4: missing rank")
    (rank,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"truncated WGT1 header at offset 8: need {rank} extents")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != end + 4 * count:
        raise FormatError(
            f"WGT1 payload at offset {end} has {len(buf) - end} bytes, expected {4 * count} for shape {shape}"
        )
    return np.frombuffer(buf, dtype="<f4", offset=end).reshape(shape).astype(np.float32)


def save_wgt1(path, array) -> None:
    Path(path).write_bytes(encode_wgt1(array))


def load_wgt1(path) -> np.ndarray:
    return decode_wgt1(Path(path).read_bytes())


def save_checkpoint(directory, state: list[tuple[str, np.ndarray]], config: dict) -> Path:
    """Write ``state`` as numbered WGT1 files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, arr) in enumerate(state):
        fname = f"{i:04d}.wgt1"
        save_wgt1(directory / fname, arr)
        entries.append({"name": name, "shape": list(np.shape(arr)), "file": fname})
    manifest = {"format": "WGT1", "version": 1, "config": config, "tensors": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[list[tuple[str, np.ndarray]], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    state = []
    for entry in manifest["tensors"]:
        arr = load_wgt1(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"{entry['file']}: shape {arr.shape} disagrees with manifest {entry['shape']}")
        state.append((entry["name"], arr))
    return state, manifest["config"]
