"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"FGLC"  u32 version  u32 n_sections
    section*:
        u32 len, utf-8 name            "model" | "generator"
        u32 len, utf-8 JSON metadata   (architecture / generator settings)
        u32 n_records
        record*:
            u32 len, utf-8 name        "<layer>/<param>"
            u8  dtype code             1 = float64
            u32 rank, rank * u32 dims
            raw float64 values, row-major
"""
from __future__ import annotations

import dataclasses
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..dpnet import BackboneConfig, DpnetModel, build_model, clone_params, load_params
from ..fgl import ControlGenerator

MAGIC = b"FGLC"
VERSION = 1
DTYPE_F64 = 1


class CheckpointError(ValueError):
    pass


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _records(groups: dict[str, dict[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", sum(len(g) for g in groups.values()))]
    for layer, params in groups.items():
        for key, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            out.append(_str(f"{layer}/{key}"))
            out.append(struct.pack("<BI", DTYPE_F64, arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
    return b"".join(out)


def encode(sections: dict[str, tuple[dict, dict[str, dict[str, np.ndarray]]]]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, (meta, groups) in sections.items():
        parts.append(_str(name))
        parts.append(_str(json.dumps(meta, sort_keys=True)))
        parts.append(_records(groups))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode(data: bytes) -> dict[str, tuple[dict, dict[str, dict[str, np.ndarray]]]]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    sections = {}
    for _ in range(r.u32()):
        name = r.string()
        meta = json.loads(r.string())
        groups: dict[str, dict[str, np.ndarray]] = {}
        for _ in range(r.u32()):
            full = r.string()
            dtype, rank = struct.unpack("<BI", r.take(5))
            if dtype != DTYPE_F64:
                raise CheckpointError(f"unsupported dtype code {dtype}")
            dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
            layer, _, key = full.rpartition("/")
            groups.setdefault(layer, {})[key] = arr
        sections[name] = (meta, groups)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last section")
    return sections


def model_section(model: DpnetModel) -> tuple[dict, dict]:
    return {"config": dataclasses.asdict(model.config)}, clone_params(model)


def generator_section(gen: ControlGenerator) -> tuple[dict, dict]:
    meta = {"l_base": gen.l_base, "w_range": gen.w_range, "n_layers": gen.n}
    return meta, {"generator": {k: t.data.copy() for k, t in gen.named_parameters().items()}}


def model_from_section(meta: dict, groups: dict) -> DpnetModel:
    cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()}
    template = build_model(BackboneConfig(**cfg), seed=0)
    return load_params(template, groups)


def generator_from_section(meta: dict, groups: dict) -> ControlGenerator:
    g = groups["generator"]
    return ControlGenerator(
        *(Tensor(g[k].copy(), requires_grad=True) for k in ("w1", "b1", "w2", "b2")),
        l_base=meta["l_base"],
        w_range=meta["w_range"],
    )


def write_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save(path, model: DpnetModel | None = None, generator: ControlGenerator | None = None) -> None:
    sections = {}
    if model is not None:
        sections["model"] = model_section(model)
    if generator is not None:
        sections["generator"] = generator_section(generator)
    if not sections:
        raise CheckpointError("nothing to save")
    write_atomic(path, encode(sections))


def load(path) -> dict[str, tuple[dict, dict]]:
    return decode(Path(path).read_bytes())


def load_model(path) -> DpnetModel:
    sections = load(path)
    if "model" not in sections:
        raise CheckpointError(f"{path}: no model section")
    return model_from_section(*sections["model"])


def load_generator(path) -> ControlGenerator:
    sections = load(path)
    if "generator" not in sections:
        raise CheckpointError(f"{path}: no generator section")
    return generator_from_section(*sections["generator"])
