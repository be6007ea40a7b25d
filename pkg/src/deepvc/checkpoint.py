"""Single-file checkpoint container.

Layout: magic ``UQC1`` | uint64 little-endian header length | JSON header |
raw tensor bytes. The header records the architecture, prior, epoch, config
hash, free-form metadata and an index of tensors (name, dtype, shape, offset).
Optimizer state is stored as an opaque ``torch.save`` blob.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .vae import ConvVAE, PriorSpec

MAGIC = b"UQC1"
FORMAT_VERSION = 1


class CheckpointVersionError(ValueError):
    """Unknown container format, or a checkpoint that does not fit the data."""


@dataclass
class Checkpoint:
    model: ConvVAE
    centroids: Optional[np.ndarray] = None
    optimizer_state: Optional[dict] = None
    epoch: int = 0
    config_hash: str = ""
    meta: dict = field(default_factory=dict)


def _tensor_bytes(t: torch.Tensor):
    arr = t.detach().cpu().contiguous().numpy()
    return arr.dtype.str, list(arr.shape), arr.tobytes()


def save_checkpoint(path, model: ConvVAE, centroids=None, optimizer_state=None, epoch: int = 0,
                    config_hash: str = "", meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0

    def add(name, dtype, shape, raw):
        nonlocal offset
        tensors.append({"name": name, "dtype": dtype, "shape": shape, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    for name, t in model.state_dict().items():
        add("model/" + name, *_tensor_bytes(t))
    if centroids is not None:
        c = np.ascontiguousarray(np.asarray(centroids, dtype=np.float64))
        add("centroids", c.dtype.str, list(c.shape), c.tobytes())
    if optimizer_state is not None:
        buf = io.BytesIO()
        torch.save(optimizer_state, buf)
        add("optimizer", "blob", [], buf.getvalue())

    header = {
        "format_version": FORMAT_VERSION,
        "architecture_tag": model.architecture_tag,
        "architecture": model.arch_args(),
        "prior": model.prior_spec.to_dict(),
        "epoch": int(epoch),
        "config_hash": config_hash,
        "meta": meta or {},
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path):
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint (magic {magic!r}, expected {MAGIC!r})")
    (n,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(n))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported format version {header.get('format_version')}")
    return header


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        payload = fh.read()
    arch = header["architecture"]
    model = ConvVAE(arch["side"], arch["latent_dim"], arch["widths"],
                    PriorSpec.from_dict(header["prior"]), image_side=arch["image_side"])
    if model.architecture_tag != header["architecture_tag"]:
        raise CheckpointVersionError(f"{path}: architecture tag {header['architecture_tag']!r} is not supported")
    state, centroids, opt_state = {}, None, None
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if entry["dtype"] == "blob":
            opt_state = torch.load(io.BytesIO(raw), weights_only=False)
            continue
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        if entry["name"] == "centroids":
            centroids = arr
        else:
            state[entry["name"][len("model/"):]] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(model, centroids, opt_state, header["epoch"], header["config_hash"], header["meta"])
