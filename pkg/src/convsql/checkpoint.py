"""Named-tensor checkpoint archive.

A checkpoint is a zip file holding one .npy entry per tensor plus a
manifest.json recording name, shape, dtype, and sha256 per tensor, a digest
over all tensors, a frozen flag, and arbitrary metadata (vocab, config).
Entries are written with fixed timestamps so identical tensors produce
byte-identical archives; checksums are verified on load.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _tensor_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def tensors_digest(tensors: dict[str, np.ndarray]) -> str:
    """Content hash over tensor names and bytes, order-independent."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(_tensor_bytes(np.ascontiguousarray(tensors[name])))
    return h.hexdigest()


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None, frozen: bool = False) -> str:
    """Write the archive; returns the content digest recorded in the manifest."""
    entries = []
    blobs: dict[str, bytes] = {}
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        blob = _tensor_bytes(arr)
        blobs[name] = blob
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
    digest = tensors_digest(tensors)
    manifest = {
        "format": "convsql-checkpoint-v1",
        "frozen": bool(frozen),
        "digest": digest,
        "tensors": entries,
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(manifest, indent=1, sort_keys=True))
        for name, blob in blobs.items():
            info = zipfile.ZipInfo(f"tensors/{name}.npy", date_time=_EPOCH)
            zf.writestr(info, blob)
    return digest


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read and checksum-verify the archive; returns (tensors, manifest)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != "convsql-checkpoint-v1":
                raise CheckpointError(f"{path}: unknown checkpoint format")
            tensors: dict[str, np.ndarray] = {}
            for entry in manifest["tensors"]:
                blob = zf.read(f"tensors/{entry['name']}.npy")
                if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
                    raise CheckpointError(
                        f"{path}: checksum mismatch for tensor {entry['name']}")
                tensors[entry["name"]] = np.load(io.BytesIO(blob), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if manifest["digest"] != tensors_digest(tensors):
        raise CheckpointError(f"{path}: manifest digest mismatch")
    return tensors, manifest


def module_tensors(module) -> dict[str, np.ndarray]:
    """Torch state_dict as numpy arrays."""
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_tensors(module, tensors: dict[str, np.ndarray]) -> None:
    import torch

    state = module.state_dict()
    missing = set(state) - set(tensors)
    extra = set(tensors) - set(state)
    if missing or extra:
        raise CheckpointError(
            f"checkpoint/model mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    module.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
