"""Parameter storage, the Adam update, and the checkpoint file format.

Checkpoint layout::

    8 bytes   little-endian uint64, length L of the JSON header
    L bytes   UTF-8 JSON header: format_version, meta, tensors[name, shape,
              dtype, offset, nbytes]
    payload   raw little-endian float32 arrays in header order; offsets are
              relative to the start of the payload
"""
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class CheckpointError(IOError):
    pass


class ParamStore:
    """Named parameters plus Adam moments."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, dtype=np.asarray(value).dtype)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_arrays(self, arrays):
        for k, arr in arrays.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if self.params[k].shape != arr.shape:
                raise ValueError(f"shape mismatch for {k}: {self.params[k].shape} vs {arr.shape}")
            self.params[k].data = np.array(arr, dtype=self.params[k].dtype)

    def astype(self, dtype):
        out = ParamStore()
        for k, t in self.params.items():
            out.add(k, t.data.astype(dtype))
        return out


class Adam:
    def __init__(self, store, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        s = self.store
        s.step_count += 1
        t = s.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for name, p in s.params.items():
            g = p.grad
            if g is None:
                continue
            if name not in s.m:
                s.m[name] = np.zeros_like(p.data)
                s.v[name] = np.zeros_like(p.data)
            m, v = s.m[name], s.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def save_checkpoint(path, store, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, t in store.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": CHECKPOINT_VERSION, "meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path):
    """Return (ParamStore, meta)."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        (hlen,) = struct.unpack("<Q", buf[:8])
        header = json.loads(buf[8:8 + hlen].decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
        payload = memoryview(buf)[8 + hlen:]
        store = ParamStore()
        for e in header["tensors"]:
            chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise CheckpointError(f"{path}: truncated payload for {e['name']}")
            arr = np.frombuffer(chunk, dtype="<f4").reshape(e["shape"]).astype(np.float32)
            store.add(e["name"], arr)
    except (ValueError, KeyError, struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return store, header["meta"]


def checkpoint_id(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
