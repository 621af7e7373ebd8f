"""Versioned single-file checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"ANYRESG\\0"
    version    uint32
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON (sorted keys, compact)
    blobs      raw tensor bytes, concatenated in header order

The header carries ``meta`` (a CheckpointMeta), ``config_hash``, the
optimizer param groups and a ``blobs`` table of
``{name, dtype, shape, offset, nbytes}`` with offsets relative to the first
blob byte. Tensor names are prefixed ``G.``, ``D.``, ``T.`` (teacher) and
``opt.<name>.<param index>.<key>`` for optimizer moments.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import torch
from pydantic import ValidationError

from errors import CheckpointError, CheckpointVersionError
from models import CheckpointMeta
from netcore import Discriminator, Generator

LOG = logging.getLogger(__name__)

MAGIC = b"ANYRESG\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")

_DTYPES: Dict[torch.dtype, str] = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.float16: "float16",
    torch.int64: "int64",
    torch.int32: "int32",
    torch.uint8: "uint8",
    torch.bool: "bool",
}
_TORCH_DTYPES = {name: dtype for dtype, name in _DTYPES.items()}


@dataclass
class LoadedCheckpoint:
    meta: CheckpointMeta
    generator: Generator
    discriminator: Discriminator
    teacher: Optional[Generator] = None
    optimizer_states: Dict[str, dict] = field(default_factory=dict)


def _flatten_optimizer(
    name: str, state: Mapping[str, Any]
) -> Tuple[Dict[str, torch.Tensor], dict]:
    tensors: Dict[str, torch.Tensor] = {}
    scalars: Dict[str, Dict[str, Any]] = {}
    for index, entry in state["state"].items():
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                tensors[f"opt.{name}.{index}.{key}"] = value
            else:
                scalars.setdefault(str(index), {})[key] = value
    groups = json.loads(json.dumps(state["param_groups"]))
    return tensors, {"param_groups": groups, "scalars": scalars}


def _unflatten_optimizer(
    name: str, info: Mapping[str, Any], tensors: Mapping[str, torch.Tensor]
) -> dict:
    prefix = f"opt.{name}."
    state: Dict[int, Dict[str, Any]] = {}
    for key, value in tensors.items():
        if key.startswith(prefix):
            index, entry = key[len(prefix) :].split(".", 1)
            state.setdefault(int(index), {})[entry] = value
    for index, entries in info.get("scalars", {}).items():
        state.setdefault(int(index), {}).update(entries)
    groups = [dict(group) for group in info["param_groups"]]
    for group in groups:
        if "betas" in group:
            group["betas"] = tuple(group["betas"])
    return {"state": dict(sorted(state.items())), "param_groups": groups}


def write_container(
    path: Path | str,
    meta: CheckpointMeta,
    tensors: Mapping[str, torch.Tensor],
    optimizers: Optional[Mapping[str, dict]] = None,
) -> Path:
    names = sorted(tensors)
    blobs = []
    table = []
    offset = 0
    for name in names:
        tensor = tensors[name].detach().to("cpu").contiguous()
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {tensor.dtype} for {name}")
        data = tensor.numpy().tobytes()
        table.append(
            {
                "name": name,
                "dtype": _DTYPES[tensor.dtype],
                "shape": list(tensor.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "meta": meta.model_dump(mode="json"),
        "config_hash": meta.config_hash,
        "optimizers": dict(optimizers or {}),
        "blobs": table,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(encoded)))
            handle.write(encoded)
            for data in blobs:
                handle.write(data)
        os.replace(temp_path, target)
    except Exception:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise
    return target


def read_container(
    path: Path | str,
) -> Tuple[CheckpointMeta, Dict[str, torch.Tensor], Dict[str, Any]]:
    """Parse a checkpoint file; raises CheckpointError on any damage."""

    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"checkpoint {path} is truncated ({len(raw)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION)
    start = _PREFIX.size + header_len
    if start > len(raw):
        raise CheckpointError(f"checkpoint {path} is truncated inside the header")
    try:
        header = json.loads(raw[_PREFIX.size : start].decode("utf-8"))
        meta = CheckpointMeta.model_validate(header["meta"])
        table = header["blobs"]
    except (ValueError, KeyError, ValidationError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupt header: {exc}") from exc
    tensors: Dict[str, torch.Tensor] = {}
    for entry in table:
        begin = start + int(entry["offset"])
        end = begin + int(entry["nbytes"])
        if end > len(raw):
            raise CheckpointError(
                f"checkpoint {path} is truncated in blob {entry['name']}"
            )
        try:
            array = np.frombuffer(raw[begin:end], dtype=np.dtype(entry["dtype"]))
            array = array.reshape(entry["shape"])
        except (TypeError, ValueError) as exc:
            raise CheckpointError(
                f"checkpoint {path} has a corrupt blob: {exc}"
            ) from exc
        tensors[entry["name"]] = torch.from_numpy(array.copy())
    expected_end = start + sum(int(entry["nbytes"]) for entry in table)
    if expected_end != len(raw):
        raise CheckpointError(
            f"checkpoint {path} has {len(raw) - expected_end} unexpected trailing bytes"
        )
    return meta, tensors, header.get("optimizers", {})


def save_checkpoint(
    path: Path | str,
    meta: CheckpointMeta,
    generator: Generator,
    discriminator: Discriminator,
    teacher: Optional[Generator] = None,
    optimizer_states: Optional[Mapping[str, dict]] = None,
) -> Path:
    tensors: Dict[str, torch.Tensor] = {}
    for prefix, module in (("G", generator), ("D", discriminator), ("T", teacher)):
        if module is not None:
            for name, value in module.state_dict().items():
                tensors[f"{prefix}.{name}"] = value
    optimizers: Dict[str, dict] = {}
    for name, state in sorted((optimizer_states or {}).items()):
        flat, info = _flatten_optimizer(name, state)
        tensors.update(flat)
        optimizers[name] = info
    target = write_container(path, meta, tensors, optimizers)
    LOG.info(
        "Saved phase %d checkpoint at step %d to %s", meta.phase, meta.step, target
    )
    return target


def _module_state(
    tensors: Mapping[str, torch.Tensor], prefix: str
) -> Dict[str, torch.Tensor]:
    marker = prefix + "."
    return {k[len(marker) :]: v for k, v in tensors.items() if k.startswith(marker)}


def load_checkpoint(path: Path | str, device: str = "cpu") -> LoadedCheckpoint:
    meta, tensors, optimizer_info = read_container(path)
    generator = Generator(meta.generator)
    discriminator = Discriminator(meta.generator)
    try:
        generator.load_state_dict(_module_state(tensors, "G"), strict=True)
        discriminator.load_state_dict(_module_state(tensors, "D"), strict=True)
        teacher = None
        teacher_state = _module_state(tensors, "T")
        if teacher_state:
            teacher = Generator(meta.generator)
            teacher.load_state_dict(teacher_state, strict=True)
            teacher.requires_grad_(False)
    except RuntimeError as exc:
        raise CheckpointError(
            f"checkpoint {path} does not match its architecture: {exc}"
        ) from exc
    optimizer_states = {
        name: _unflatten_optimizer(name, info, tensors)
        for name, info in optimizer_info.items()
    }
    LOG.info(
        "Loaded phase %d checkpoint at step %d from %s", meta.phase, meta.step, path
    )
    return LoadedCheckpoint(
        meta=meta,
        generator=generator.to(device),
        discriminator=discriminator.to(device),
        teacher=teacher.to(device) if teacher is not None else None,
        optimizer_states=optimizer_states,
    )
