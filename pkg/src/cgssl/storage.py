"""Deterministic on-disk artifact helpers.

Every JSON document and npz archive written by the pipeline must be
byte-identical across reruns with the same config and seed, so JSON is
serialized canonically and npz archives are written with a frozen zip
timestamp instead of the wall clock.
"""

import hashlib
import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np
from PIL import Image

SCHEMA_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_npz(path, arrays: dict) -> None:
    """np.savez with a fixed zip timestamp so identical arrays give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_npz(path) -> dict:
    with np.load(path) as data:
        return {name: data[name] for name in data.files}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_image(path, pixels: np.ndarray) -> None:
    """Write an HxWxC float image in [0,1] as an 8-bit lossless PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def dir_checksum(root) -> str:
    """Order-independent checksum of a directory tree (paths + contents)."""
    root = Path(root)
    entries = []
    for p in sorted(root.rglob("*")):
        if p.is_file():
            entries.append(p.relative_to(root).as_posix() + ":" + sha256_file(p))
    h = hashlib.sha256("\n".join(entries).encode())
    return h.hexdigest()


def default_run_dir() -> str:
    return os.environ.get("CGSSL_RUN_DIR", "runs/latest")
