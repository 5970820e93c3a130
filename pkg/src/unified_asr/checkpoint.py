"""Checkpoint files.

Layout (little-endian throughout)::

    b"UASR"  u32 format_version
    repeated: u32 name_len, name (utf-8), u64 payload_len, payload

Sections, in order: ``config`` (JSON), ``stats`` (6 x f64: GMV means then
variances for primary, aux1, aux2), ``params`` (u32 count, then per
tensor: u32 name_len, name, u8 partition, u32 ndim, ndim x u64 dims, f64
data) and an empty ``end`` marker.  Float values are stored raw so a
round trip is bit-exact.
"""

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DataIOError, PartitionMissingError
from .features import NormalizationStats
from .model import MODE_PARTITIONS, PARTITIONS, ModelConfig, ParameterStore, UnifiedModel

MAGIC = b"UASR"
FORMAT_VERSION = 1
SECTIONS = ("config", "stats", "params", "end")


def _section(name, payload):
    n = name.encode()
    return struct.pack("<I", len(n)) + n + struct.pack("<Q", len(payload)) + payload


def _params_payload(params):
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params.tensors):
        arr = params.tensors[name]
        n = name.encode()
        buf.write(struct.pack("<I", len(n)) + n)
        buf.write(struct.pack("<B", PARTITIONS.index(params.partition_of[name])))
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def checkpoint_bytes(model):
    config = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    stats = np.concatenate([model.stats.mean, model.stats.variance]).astype("<f8").tobytes()
    body = b"".join(
        [
            _section("config", config),
            _section("stats", stats),
            _section("params", _params_payload(model.params)),
            _section("end", b""),
        ]
    )
    return MAGIC + struct.pack("<I", FORMAT_VERSION) + body


def save_checkpoint(model, path):
    path = Path(path)
    data = checkpoint_bytes(model)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, section):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated in section {section!r}", section=section)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, section):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), section))


def _parse_params(payload):
    r = _Reader(payload)
    store = ParameterStore()
    (count,) = r.unpack("<I", "params")
    for _ in range(count):
        (nlen,) = r.unpack("<I", "params")
        name = r.take(nlen, "params").decode()
        (part,) = r.unpack("<B", "params")
        if part >= len(PARTITIONS):
            raise CheckpointError(f"tensor {name!r} has unknown partition {part}", section="params")
        (ndim,) = r.unpack("<I", "params")
        shape = r.unpack(f"<{ndim}Q", "params")
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * size, "params"), dtype="<f8").reshape(shape).astype(np.float64)
        store.add(name, arr, PARTITIONS[part])
    if r.pos != len(payload):
        raise CheckpointError("trailing bytes in params section", section="params")
    return store


def parse_checkpoint(data):
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)", section="header")
    r = _Reader(data)
    r.take(4, "header")
    (version,) = r.unpack("<I", "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}", section="header")
    sections = {}
    expected = iter(SECTIONS)
    for want in expected:
        if r.pos == len(data):
            raise CheckpointError(f"checkpoint truncated: section {want!r} missing", section=want)
        (nlen,) = r.unpack("<I", want)
        name = r.take(nlen, want).decode(errors="replace")
        if name != want:
            raise CheckpointError(f"expected section {want!r}, found {name!r}", section=want)
        (plen,) = r.unpack("<Q", want)
        sections[name] = r.take(plen, want)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after end section", section="end")
    return sections


def load_checkpoint(path, mode=None):
    """Load a model; ``mode`` re-targets it (e.g. a unified checkpoint as sc_only)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    sec = parse_checkpoint(data)
    try:
        cfg_dict = json.loads(sec["config"].decode())
        if mode is not None:
            cfg_dict["mode"] = mode
        config = ModelConfig.from_dict(cfg_dict)
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"invalid config section: {exc}", section="config") from exc
    if len(sec["stats"]) != 48:
        raise CheckpointError("stats section must hold 6 float64 values", section="stats")
    s = np.frombuffer(sec["stats"], dtype="<f8").astype(np.float64)
    stats = NormalizationStats(s[:3], s[3:])
    params = _parse_params(sec["params"])
    for part in MODE_PARTITIONS[config.mode]:
        if part not in params.present_partitions():
            raise PartitionMissingError(part)
    if mode is not None:
        keep = ParameterStore(params.version)
        for n in params.names():
            if params.partition_of[n] in MODE_PARTITIONS[config.mode]:
                keep.add(n, params[n], params.partition_of[n])
        params = keep
    return UnifiedModel(config, params, stats)
