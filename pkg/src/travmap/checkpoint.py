"""Single-file checkpoint container.

Layout: magic 'TVCK', u32 version, u64 manifest length, UTF-8 JSON
manifest, then raw little-endian tensor payloads. The manifest lists
(name, shape, dtype, offset, nbytes) for every tensor plus free-form
metadata (step counter, config hash, model settings, optimizer layout).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

MAGIC = b"TVCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "int32": np.int32,
    "uint8": np.uint8,
    "bool": np.bool_,
}


class CheckpointError(RuntimeError):
    pass


def _to_numpy(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype.name not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    return arr.copy() if arr.ndim == 0 else np.ascontiguousarray(arr)


@dataclass
class Checkpoint:
    tensors: dict
    meta: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    @classmethod
    def from_model(cls, model: torch.nn.Module, meta: dict, optimizer=None) -> "Checkpoint":
        tensors = {f"model.{k}": _to_numpy(v) for k, v in model.state_dict().items()}
        meta = dict(meta)
        if optimizer is not None:
            sd = optimizer.state_dict()
            meta["optimizer"] = {"param_groups": sd["param_groups"]}
            for idx, state in sd["state"].items():
                for key, val in state.items():
                    tensors[f"optim.{idx}.{key}"] = _to_numpy(val)
        return cls(tensors, meta)

    def save(self, path):
        names = sorted(self.tensors)
        entries = []
        offset = 0
        blobs = []
        for name in names:
            arr = self.tensors[name]
            blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
            entries.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": arr.dtype.name,
                    "offset": offset,
                    "nbytes": len(blob),
                }
            )
            offset += len(blob)
            blobs.append(blob)
        manifest = json.dumps({"version": VERSION, "meta": self.meta, "tensors": entries}).encode()
        with open(path, "wb") as f:
            f.write(_PREFIX.pack(MAGIC, VERSION, len(manifest)))
            f.write(manifest)
            for blob in blobs:
                f.write(blob)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            head = f.read(_PREFIX.size)
            if len(head) < _PREFIX.size:
                raise CheckpointError(f"{path}: truncated header")
            magic, version, mlen = _PREFIX.unpack(head)
            if magic != MAGIC:
                raise CheckpointError(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise CheckpointError(f"{path}: unsupported version {version}")
            manifest_raw = f.read(mlen)
            if len(manifest_raw) < mlen:
                raise CheckpointError(f"{path}: truncated manifest")
            manifest = json.loads(manifest_raw)
            payload = f.read()
        tensors = {}
        for entry in manifest["tensors"]:
            start, n = entry["offset"], entry["nbytes"]
            if start + n > len(payload):
                raise CheckpointError(
                    f"{path}: truncated payload for tensor {entry['name']}"
                )
            dtype = np.dtype(_DTYPES[entry["dtype"]]).newbyteorder("<")
            arr = np.frombuffer(payload[start : start + n], dtype=dtype)
            tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
        return cls(tensors, manifest["meta"])

    # -- model / optimizer round trips -------------------------------------

    def model_state(self) -> dict:
        return {
            k[len("model.") :]: v for k, v in self.tensors.items() if k.startswith("model.")
        }

    def apply_to_model(self, model: torch.nn.Module):
        """Load parameters/buffers, refusing shape mismatches by tensor name."""
        state = self.model_state()
        current = model.state_dict()
        missing = sorted(set(current) - set(state))
        extra = sorted(set(state) - set(current))
        if missing or extra:
            raise CheckpointError(
                f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}"
            )
        new_state = {}
        for name, arr in state.items():
            want = tuple(current[name].shape)
            if tuple(arr.shape) != want:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {tuple(arr.shape)}, model {want}"
                )
            new_state[name] = torch.as_tensor(arr)
        model.load_state_dict(new_state)
        return model

    def apply_to_optimizer(self, optimizer):
        layout = self.meta.get("optimizer")
        if layout is None:
            return optimizer
        sd = optimizer.state_dict()
        groups = layout["param_groups"]
        if len(groups) != len(sd["param_groups"]):
            raise CheckpointError("optimizer param group count mismatch")
        state = {}
        by_idx = {}
        for key, arr in self.tensors.items():
            if not key.startswith("optim."):
                continue
            _, idx, field_name = key.split(".", 2)
            by_idx.setdefault(int(idx), {})[field_name] = torch.as_tensor(arr)
        for idx, fields in by_idx.items():
            state[idx] = fields
        optimizer.load_state_dict({"state": state, "param_groups": groups})
        return optimizer


def save_checkpoint(ckpt: Checkpoint, path):
    ckpt.save(path)


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.load(path)
