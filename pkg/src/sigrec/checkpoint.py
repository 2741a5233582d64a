"""Binary checkpoint format.

Layout (little-endian)::

    b"NMBS"  u16 version  u32 header_len  header (UTF-8 JSON)
    float32 tensors, in the order listed by header["tensors"]
    u32 CRC-32 over header + tensor bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .labels import NUM_CLASSES
from .model import ModelConfig, MtlGruModel
from .nn.core import DenseParams, GruLayerParams
from .tokenize import Vocabulary

MAGIC = b"NMBS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _header(model: MtlGruModel) -> dict:
    tensors = model.named_tensors()
    return {
        "format": "sigrec-checkpoint",
        "config": model.config.to_dict(),
        "vocab_sha256": model.vocab.digest(),
        "vocab": {"tokens": model.vocab.itos, "counts": model.vocab.counts.tolist()},
        "head_classes": {t: NUM_CLASSES[t] for t in model.tasks},
        "tensors": [[name, list(arr.shape)] for name, arr in tensors.items()],
        "created_by": f"sigrec {__version__}",
    }


def dumps(model: MtlGruModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = bytearray(header)
    for arr in model.named_tensors().values():
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return MAGIC + struct.pack("<HI", VERSION, len(header)) + bytes(payload) + struct.pack("<I", crc)


def save_checkpoint(model: MtlGruModel, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model))
    tmp.replace(path)


def loads(data: bytes, structure: str | None = None) -> MtlGruModel:
    if len(data) < 10 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body_start = 10
    if len(data) < body_start + hlen + 4:
        raise CheckpointError("truncated checkpoint")
    payload = data[body_start:-4]
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch (corrupt or truncated checkpoint)")
    try:
        header = json.loads(payload[:hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    if structure is not None and config.structure != structure:
        raise CheckpointError(f"checkpoint holds an {config.structure.upper()} model, expected {structure.upper()}")
    vocab = Vocabulary(header["vocab"]["tokens"], header["vocab"]["counts"])
    if vocab.digest() != header["vocab_sha256"]:
        raise CheckpointError("vocabulary hash mismatch")

    dt = config.dtype
    tensors = {}
    offset = hlen
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n
        if offset + nbytes > len(payload):
            raise CheckpointError("truncated tensor data")
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(shape).astype(dt)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("trailing bytes after tensor data")

    def gru(layer):
        t = {g: tensors[f"{layer}.{g}"] for g in GruLayerParams.TENSORS}
        return GruLayerParams(
            np.concatenate([t["W_z"], t["W_r"], t["W_h"]], axis=1),
            np.concatenate([t["U_z"], t["U_r"], t["U_h"]], axis=1),
            np.concatenate([t["b_z"], t["b_r"], t["b_h"]]),
        )

    try:
        heads = {task: DenseParams(tensors[f"head.{task}.W"], tensors[f"head.{task}.b"]) for task in config.tasks}
        model = MtlGruModel(config, vocab, tensors["embedding"], gru("gru1"), gru("gru2"), heads)
    except KeyError as exc:
        raise CheckpointError(f"missing tensor {exc}") from None
    for task, k in header["head_classes"].items():
        if model.heads[task].b.shape[0] != k:
            raise CheckpointError(f"head {task} has wrong class count")
    return model


def load_checkpoint(path: str | Path, structure: str | None = None) -> MtlGruModel:
    return loads(Path(path).read_bytes(), structure)
