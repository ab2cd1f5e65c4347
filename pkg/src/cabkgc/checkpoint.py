"""Binary checkpoint format.

Layout, all integers little-endian::

    b"CABK"                         magic
    u32                             format version
    u64 + bytes                     header: UTF-8 ``key=value`` lines, keys sorted
    repeated n_tensors times:
        u64 + bytes                 tensor name (UTF-8)
        u64                         rank
        u64 * rank                  dims
        f64 * prod(dims)            row-major values
    u64                             checksum (blake2b-64 of every preceding byte)

The header carries the model config, the dataset fingerprint (64-bit hash of
both vocabularies), the token-layout version and the tensor count.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from .encoder import ModelConfig, check_parameters
from .exceptions import (
    CheckpointError,
    ChecksumMismatch,
    DataError,
    FormatVersionMismatch,
    ShapeMismatch,
    VocabularyMismatch,
)
from .sequencer import TOKEN_LAYOUT_VERSION

MAGIC = b"CABK"
FORMAT_VERSION = 1

_INT_FIELDS = ("token_vocab_size", "entity_count", "d_model", "n_layers", "n_heads",
               "ff_dim", "max_len", "seed")


def _checksum(data):
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _encode_header(header):
    for key, value in header.items():
        text = str(value)
        if "=" in key or "\n" in key or "\n" in text:
            raise ValueError(f"header entry {key!r} cannot be encoded")
    return "".join(f"{k}={header[k]}\n" for k in sorted(header)).encode("utf-8")


def _decode_header(raw):
    header = {}
    for line in raw.decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        header[key] = value
    return header


def save_checkpoint(path, params, model_cfg, fingerprint, extra=None):
    """Write ``params`` and their config to ``path``.

    ``extra`` holds additional string-valued header entries (context budgets
    and similar run settings).
    """
    header = {f"model.{k}": v for k, v in model_cfg.to_dict().items()}
    header.update({
        "dataset_fingerprint": f"{int(fingerprint):016x}",
        "token_layout_version": TOKEN_LAYOUT_VERSION,
        "n_tensors": len(params),
    })
    for key, value in (extra or {}).items():
        header[f"extra.{key}"] = value
    head = _encode_header(header)

    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(head)), head]
    for name, array in params.items():
        array = np.ascontiguousarray(array, dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<Q", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes(order="C"))
    payload = b"".join(chunks)
    data = payload + struct.pack("<Q", _checksum(payload))
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ChecksumMismatch("checkpoint payload ends early")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path, expected_fingerprint=None):
    """Read a checkpoint; returns ``(params, model_cfg, header)``.

    Raises :class:`VocabularyMismatch` when ``expected_fingerprint`` is given
    and differs from the stored dataset fingerprint.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 4 + 8:
        raise ChecksumMismatch("checkpoint is truncated")
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"checkpoint format version {version}, expected {FORMAT_VERSION}"
        )
    payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if _checksum(payload) != stored:
        raise ChecksumMismatch("checkpoint checksum does not match its contents")

    reader = _Reader(payload)
    reader.pos = 8
    header = _decode_header(reader.take(reader.u64()))
    if int(header.get("token_layout_version", -1)) != TOKEN_LAYOUT_VERSION:
        raise FormatVersionMismatch(
            f"token layout version {header.get('token_layout_version')}, "
            f"expected {TOKEN_LAYOUT_VERSION}"
        )
    fingerprint = int(header["dataset_fingerprint"], 16)
    if expected_fingerprint is not None and fingerprint != int(expected_fingerprint):
        raise VocabularyMismatch(
            f"checkpoint was trained on dataset {fingerprint:016x}, "
            f"current dataset is {int(expected_fingerprint):016x}"
        )

    params = {}
    for _ in range(int(header["n_tensors"])):
        name = reader.take(reader.u64()).decode("utf-8")
        rank = reader.u64()
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).copy()
    if reader.pos != len(payload):
        raise CheckpointError("trailing bytes after the last tensor")

    fields = {}
    for key, value in header.items():
        if key.startswith("model."):
            name = key[len("model."):]
            fields[name] = int(value) if name in _INT_FIELDS else float(value)
    model_cfg = ModelConfig(**fields)
    try:
        check_parameters(params, model_cfg)
    except ShapeMismatch as exc:
        raise CheckpointError(f"checkpoint tensors disagree with its header: {exc}") from exc
    return params, model_cfg, header
