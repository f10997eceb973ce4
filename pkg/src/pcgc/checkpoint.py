"""Checkpoint serialization: binary manifest plus raw float32 tensor dumps.

Layout (little-endian):

    magic "PCGM" | version u8 | n_filters u32 | n_tensors u16
    per tensor: name_len u8 | name | ndim u8 | dims u32 * ndim | f32 data
    model_id 16B (recomputed and verified on load)
    optional training block:
        marker "TRN1" | step u32 | resolution u32 | n_tensors u16 | tensors

The training block carries the Adam moment buffers so ``--resume``
continues the optimizer exactly; it is ignored by compress/decompress.
"""

import struct
from typing import Optional, Tuple

import numpy as np

from .autodiff import AdamState, parameter
from .codec import ModelParams, init_model
from .errors import CorruptionError, ShapeError

_MAGIC = b"PCGM"
_TRAIN_MARKER = b"TRN1"
_VERSION = 1


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptionError("checkpoint file is truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    @property
    def exhausted(self):
        return self.pos == len(self.blob)


def _write_tensor(chunks, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f4")
    encoded = name.encode()
    chunks.append(struct.pack("<B", len(encoded)))
    chunks.append(encoded)
    chunks.append(struct.pack("<B", data.ndim))
    chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
    chunks.append(data.tobytes())


def _read_tensor(r: _Reader) -> Tuple[str, np.ndarray]:
    (name_len,) = r.unpack("<B")
    name = r.take(name_len).decode()
    (ndim,) = r.unpack("<B")
    dims = r.unpack(f"<{ndim}I") if ndim else ()
    count = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
    return name, data.copy()


def save_checkpoint(params: ModelParams, path, train_state: Optional[dict] = None):
    """Write a checkpoint; ``train_state`` holds step/resolution/Adam moments."""
    names = params.parameter_names()
    tensors = params.parameters()
    chunks = [_MAGIC, struct.pack("<BIH", _VERSION, params.n_filters, len(names))]
    for name, tensor in zip(names, tensors):
        _write_tensor(chunks, name, tensor.data)
    chunks.append(params.model_id)
    if train_state is not None:
        moments = list(train_state["m"]) + list(train_state["v"])
        labels = [f"m.{i}" for i in range(len(train_state["m"]))] + [
            f"v.{i}" for i in range(len(train_state["v"]))
        ]
        chunks.append(_TRAIN_MARKER)
        chunks.append(
            struct.pack(
                "<IIH",
                int(train_state["step"]),
                int(train_state["resolution"]),
                len(labels),
            )
        )
        for label, arr in zip(labels, moments):
            _write_tensor(chunks, label, arr)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _rebuild(n_filters: int, tensors: dict) -> ModelParams:
    params = init_model(n_filters=n_filters, seed=0)
    for name, tensor in zip(params.parameter_names(), params.parameters()):
        if name not in tensors:
            raise CorruptionError(f"checkpoint is missing tensor '{name}'")
        arr = tensors.pop(name)
        if arr.shape != tensor.shape:
            raise ShapeError(
                f"checkpoint tensor '{name}' has shape {arr.shape}, expected "
                f"{tensor.shape} for n_filters={n_filters}"
            )
        tensor.data = arr.astype(np.float32)
    if tensors:
        raise CorruptionError(
            f"checkpoint carries unexpected tensors: {sorted(tensors)}"
        )
    return params


def load_checkpoint(path) -> ModelParams:
    """Read model parameters; verifies the stored content hash."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != _MAGIC:
        raise CorruptionError(f"{path}: not a PCGM checkpoint")
    version, n_filters, n_tensors = r.unpack("<BIH")
    if version != _VERSION:
        raise CorruptionError(f"{path}: unsupported checkpoint version {version}")
    tensors = dict(_read_tensor(r) for _ in range(n_tensors))
    stored_id = r.take(16)
    params = _rebuild(n_filters, tensors)
    if params.model_id != stored_id:
        raise CorruptionError(f"{path}: model hash mismatch, file is corrupt")
    return params


def load_training_state(path) -> Optional[dict]:
    """Training block of a checkpoint, or None if absent."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != _MAGIC:
        raise CorruptionError(f"{path}: not a PCGM checkpoint")
    _, _, n_tensors = r.unpack("<BIH")
    for _ in range(n_tensors):
        _read_tensor(r)
    r.take(16)
    if r.exhausted:
        return None
    if r.take(4) != _TRAIN_MARKER:
        raise CorruptionError(f"{path}: malformed training block")
    step, resolution, count = r.unpack("<IIH")
    arrays = dict(_read_tensor(r) for _ in range(count))
    half = count // 2
    m = [arrays[f"m.{i}"] for i in range(half)]
    v = [arrays[f"v.{i}"] for i in range(half)]
    return {"step": step, "resolution": resolution, "m": m, "v": v}


def adam_state_from_training(train_state: dict, lr, beta1, beta2) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        t=train_state["step"],
        m=[a.astype(np.float32) for a in train_state["m"]],
        v=[a.astype(np.float32) for a in train_state["v"]],
    )
