"""Binary embedding files (EMB1) and corpus alignment checks.

Layout, all integers little-endian:

    magic "EMB1" | u32 dim | u32 tag_len | tag_len bytes UTF-8 source tag
    | u32 instance_count | per instance: u32 token_count followed by
    token_count * dim float32 values, row-major

No padding or checksum; corruption surfaces as truncation or non-finite
values. Vectors stay float32 on disk and in memory; the trainer upcasts.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Union

import numpy as np

from .corpus import Corpus
from .errors import AlignmentError, DataFormatError

MAGIC = b"EMB1"

# InstanceEmbeddings is a (token_count, dim) float32 matrix.
InstanceEmbeddings = np.ndarray


@dataclass(frozen=True)
class EmbeddingFile:
    dim: int
    per_instance: tuple[InstanceEmbeddings, ...]
    source_tag: str

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("embedding dimension must be positive")
        for i, mat in enumerate(self.per_instance):
            if mat.ndim != 2 or mat.shape[1] != self.dim:
                raise ValueError(
                    f"instance {i}: expected shape (*, {self.dim}), got {mat.shape}"
                )
            if mat.shape[0] == 0:
                raise ValueError(f"instance {i}: no token rows")
            if not np.isfinite(mat).all():
                raise ValueError(f"instance {i}: non-finite embedding values")

    def __len__(self) -> int:
        return len(self.per_instance)


Source = Union[bytes, bytearray, BinaryIO]


def _reader(source: Source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(bytes(source))
    return source


def _take(stream: BinaryIO, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated embedding file while reading {what}")
    return data


def read_emb(source: Source) -> EmbeddingFile:
    stream = _reader(source)
    if _take(stream, 4, "magic") != MAGIC:
        raise DataFormatError("bad magic: not an EMB1 file")
    dim, tag_len = struct.unpack("<II", _take(stream, 8, "header"))
    if dim == 0:
        raise DataFormatError("embedding dimension is zero")
    try:
        tag = _take(stream, tag_len, "source tag").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"source tag is not valid UTF-8: {exc}") from exc
    (count,) = struct.unpack("<I", _take(stream, 4, "instance count"))
    mats = []
    for i in range(count):
        (rows,) = struct.unpack("<I", _take(stream, 4, f"token count of instance {i}"))
        if rows == 0:
            raise DataFormatError(f"instance {i}: zero token rows")
        payload = _take(stream, rows * dim * 4, f"vectors of instance {i}")
        mat = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
        if not np.isfinite(mat).all():
            raise DataFormatError(f"instance {i}: non-finite embedding values")
        mats.append(mat)
    if stream.read(1):
        raise DataFormatError("trailing bytes after last instance")
    return EmbeddingFile(dim=int(dim), per_instance=tuple(mats), source_tag=tag)


def write_emb(ef: EmbeddingFile, sink: BinaryIO) -> None:
    tag = ef.source_tag.encode("utf-8")
    sink.write(MAGIC)
    sink.write(struct.pack("<II", ef.dim, len(tag)))
    sink.write(tag)
    sink.write(struct.pack("<I", len(ef.per_instance)))
    for mat in ef.per_instance:
        sink.write(struct.pack("<I", mat.shape[0]))
        sink.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def emb_to_bytes(ef: EmbeddingFile) -> bytes:
    buf = io.BytesIO()
    write_emb(ef, buf)
    return buf.getvalue()


def validate_alignment(c: Corpus, ef: EmbeddingFile) -> None:
    """Check that ef was exported against c: same instance order and lengths."""
    if len(c) != len(ef):
        raise AlignmentError(
            f"instance count mismatch: corpus {c.split_name!r} has {len(c)}, "
            f"embedding file has {len(ef)}"
        )
    for inst, mat in zip(c.instances, ef.per_instance):
        if mat.shape[0] != len(inst):
            raise AlignmentError(
                f"instance {inst.id!r}: expected {len(inst)} embedding rows, "
                f"found {mat.shape[0]}"
            )
