"""Checkpoints: one params.npz plus a manifest.json per directory, written
atomically so an interrupted save never leaves a half-readable checkpoint."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from ..util import read_json, write_json
from .tape import Tensor


def save_checkpoint(
    dirpath,
    params: dict[str, Tensor],
    manifest: dict,
    optimizer_state: dict | None = None,
) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.data for name, t in params.items()}
    if optimizer_state is not None:
        arrays["__opt_step__"] = np.asarray(optimizer_state["step_count"], dtype=np.int64)
        for name, arr in optimizer_state["m"].items():
            arrays[f"__m__{name}"] = arr
        for name, arr in optimizer_state["v"].items():
            arrays[f"__v__{name}"] = arr

    fd, tmp = tempfile.mkstemp(dir=dirpath, suffix=".npz.tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, dirpath / "params.npz")
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    write_json(dirpath / "manifest.json", manifest)


def load_checkpoint(dirpath, params: dict[str, Tensor]) -> dict:
    """Load arrays into existing parameter tensors (shapes must match);
    returns the manifest. Optimizer slots, if present, are returned under
    manifest['__optimizer__']."""
    dirpath = Path(dirpath)
    manifest = read_json(dirpath / "manifest.json")
    with np.load(dirpath / "params.npz") as store:
        missing = [n for n in params if n not in store.files]
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, t in params.items():
            arr = store[name]
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arr.shape} != model shape {t.data.shape}"
                )
            t.data[...] = arr.astype(t.data.dtype, copy=False)
        if "__opt_step__" in store.files:
            manifest["__optimizer__"] = {
                "step_count": int(store["__opt_step__"]),
                "m": {n: store[f"__m__{n}"] for n in params if f"__m__{n}" in store.files},
                "v": {n: store[f"__v__{n}"] for n in params if f"__v__{n}" in store.files},
            }
    return manifest


def checkpoint_exists(dirpath) -> bool:
    dirpath = Path(dirpath)
    return (dirpath / "params.npz").exists() and (dirpath / "manifest.json").exists()
