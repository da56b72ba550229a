"""Named-tensor checkpoint archive (``.npz``) with an embedded JSON shape manifest."""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

MANIFEST_KEY = "__manifest__"
FORMAT_VERSION = 1


def save_checkpoint(state: nn.Module | dict[str, torch.Tensor], path: str | Path, meta: dict | None = None) -> Path:
    if isinstance(state, nn.Module):
        state = state.state_dict()
    arrays, entries = {}, []
    for name, tensor in state.items():
        if name == MANIFEST_KEY:
            raise ValueError(f"reserved tensor name {name!r}")
        arr = tensor.detach().cpu().numpy()
        arrays[name] = arr
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
    manifest = {"format": FORMAT_VERSION, "tensors": entries, "meta": meta or {}}
    arrays[MANIFEST_KEY] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def read_manifest(path: str | Path) -> dict:
    with np.load(path, allow_pickle=False) as npz:
        return json.loads(npz[MANIFEST_KEY].tobytes().decode())


def load_checkpoint(path: str | Path) -> dict[str, torch.Tensor]:
    """Return the state dict after checking every tensor against the manifest."""
    with np.load(path, allow_pickle=False) as npz:
        if MANIFEST_KEY not in npz.files:
            raise ValueError(f"{path}: no shape manifest")
        manifest = json.loads(npz[MANIFEST_KEY].tobytes().decode())
        names = [e["name"] for e in manifest["tensors"]]
        if set(names) != set(npz.files) - {MANIFEST_KEY}:
            raise ValueError(f"{path}: manifest and archive contents differ")
        state = {}
        for e in manifest["tensors"]:
            arr = npz[e["name"]]
            if list(arr.shape) != e["shape"] or arr.dtype.str != e["dtype"]:
                raise ValueError(f"{path}: tensor {e['name']!r} does not match the manifest")
            state[e["name"]] = torch.from_numpy(arr.copy())
    return state


def load_into(model: nn.Module, path: str | Path) -> nn.Module:
    model.load_state_dict(load_checkpoint(path), strict=True)
    return model
