"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic          8 bytes   b"LATALIGN"
    version        uint32    FORMAT_VERSION
    header_len     uint32
    header         header_len bytes of UTF-8 JSON: kind, step, model_config,
                   train_config, vocab tokens, extra, and the ordered list of
                   parameter names and shapes
    blocks         one per parameter, in header order:
                     name_len  uint16
                     name      name_len bytes UTF-8
                     ndim      uint8
                     dims      ndim x uint32
                     data      prod(dims) x float64, C order

Loading rebuilds the network from the echoed config and refuses any block
whose name or shape disagrees with it.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .alignment import Vocab
from .model import AlignmentScorer, CausalTeacher, ModelConfig

MAGIC = b"LATALIGN"
FORMAT_VERSION = 1
KINDS = ("ctc", "imputer", "teacher")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    net: nn.Module
    step: int = 0
    vocab: Vocab | None = None
    train_config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return self.net.config


def build_net(kind: str, config: ModelConfig) -> nn.Module:
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    return CausalTeacher(config) if kind == "teacher" else AlignmentScorer(config)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    params = [(name, p.detach().cpu().double().numpy()) for name, p in ckpt.net.state_dict().items()]
    header = {
        "kind": ckpt.kind,
        "step": int(ckpt.step),
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config,
        "vocab": None if ckpt.vocab is None else ckpt.vocab.tokens,
        "extra": ckpt.extra,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in params],
    }
    blob = json.dumps(header, sort_keys=True, default=str).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    for name, arr in params:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return _parse(data, path)
    except CheckpointError:
        raise
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None


def _parse(data: bytes, path) -> Checkpoint:
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    config = ModelConfig.from_dict(header["model_config"])
    net = build_net(header["kind"], config)
    expected = {n: tuple(p.shape) for n, p in net.state_dict().items()}
    pos = 16 + hlen
    state = {}
    for entry in header["params"]:
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        if name != entry["name"]:
            raise CheckpointError(f"{path}: block {name!r} out of header order")
        if name not in expected or expected[name] != tuple(shape):
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {tuple(shape)}, config expects {expected.get(name)}"
            )
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        state[name] = torch.from_numpy(arr.copy())
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    ref = net.state_dict()
    net.load_state_dict({k: v.to(ref[k].dtype) for k, v in state.items()})
    vocab = Vocab(header["vocab"]) if header.get("vocab") else None
    return Checkpoint(
        kind=header["kind"],
        net=net,
        step=header["step"],
        vocab=vocab,
        train_config=header.get("train_config", {}),
        extra=header.get("extra", {}),
    )
