"""
Versioned .ockpt checkpoint files.

Layout:
    magic b"OCKPT\\0"
    u32   schema version
    u64   header length, then a UTF-8 JSON header (sorted keys)
    per tensor, in header order:
        u32 name length, name bytes, u64 payload length, little-endian payload

The header carries the run config, the seasonal basis, the domain/channel map,
the stages present and training metadata. Payloads are raw float64 / bool /
int64 bytes, so save -> load is bit-exact.
"""

import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import torch

from .config import RunConfig
from .errors import CheckpointError
from .model import OneCastModel
from .seasonal import SeasonalBasis

logger = logging.getLogger(__name__)

MAGIC = b"OCKPT\x00"
SCHEMA_VERSION = 1
_DTYPES = {
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    model: OneCastModel
    config: RunConfig
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def stages(self):
        return ["joint"] + (["diffusion"] if self.model.predictor is not None else [])


def _header(ckpt: Checkpoint, state: Dict[str, torch.Tensor]) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": ckpt.config.model_dump(mode="json"),
        "basis": {
            "frequencies": list(ckpt.model.basis.frequencies),
            "sample_rate_hint": ckpt.model.basis.sample_rate_hint,
        },
        "domains": ckpt.model.domains,
        "stages": ckpt.stages,
        "metadata": ckpt.metadata,
        "tensors": [{"name": n, "dtype": _DTYPES[t.dtype], "shape": list(t.shape)} for n, t in state.items()],
    }


def to_bytes(ckpt: Checkpoint) -> bytes:
    state = ckpt.model.state_dict()
    for name, tensor in state.items():
        if tensor.dtype not in _DTYPES:
            raise CheckpointError(f"cannot serialize {name} of dtype {tensor.dtype}")
    header = json.dumps(_header(ckpt, state), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", SCHEMA_VERSION, len(header)))
    buf.write(header)
    for name, tensor in state.items():
        payload = tensor.detach().contiguous().numpy().astype(_DTYPES[tensor.dtype], copy=False).tobytes()
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_bytes(ckpt)
    path.write_bytes(data)
    logger.info("Saved checkpoint %s (%d bytes, stages %s)", path, len(data), ckpt.stages)
    return path


def read_header(data: bytes) -> Dict[str, Any]:
    return _read(data)[0]


def _read(data: bytes):
    if not data.startswith(MAGIC):
        raise CheckpointError("not an .ockpt file (bad magic)")
    offset = len(MAGIC)
    version, header_len = struct.unpack_from("<IQ", data, offset)
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"checkpoint schema {version} is not supported (expected {SCHEMA_VERSION})")
    offset += struct.calcsize("<IQ")
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    tensors = {}
    for spec in header["tensors"]:
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name != spec["name"]:
            raise CheckpointError(f"section {name!r} out of order; header expects {spec['name']!r}")
        (size,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        array = np.frombuffer(data[offset : offset + size], dtype=spec["dtype"]).reshape(spec["shape"])
        tensors[name] = torch.from_numpy(array.copy())
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after the last section")
    return header, tensors


def from_bytes(data: bytes) -> Checkpoint:
    try:
        header, tensors = _read(data)
    except (struct.error, ValueError, KeyError) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}") from e
    config = RunConfig.model_validate(header["config"])
    basis = SeasonalBasis(
        frequencies=tuple(header["basis"]["frequencies"]),
        sample_rate_hint=header["basis"]["sample_rate_hint"],
    )
    model = OneCastModel(config.model, basis, config.train.history_length, config.train.horizon)
    for domain_id, channels in sorted(header["domains"].items()):
        model.register_domain(domain_id, channels)
    if "diffusion" in header["stages"]:
        model.build_predictor()
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint parameters do not match the model: {e}") from e
    return Checkpoint(model=model, config=config, metadata=header["metadata"])


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    ckpt = from_bytes(path.read_bytes())
    logger.info("Loaded checkpoint %s (stages %s)", path, ckpt.stages)
    return ckpt
