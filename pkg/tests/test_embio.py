import struct

import numpy as np
import pytest

from emphasel.embio import EmbeddingFile, emb_to_bytes, read_emb, validate_alignment, write_emb
from emphasel.errors import AlignmentError, DataFormatError

from _synth import make_corpus, random_embeddings


def hand_written_emb1(dim, tag, instances):
    """Independent encoder: builds EMB1 bytes directly from the documented layout."""
    out = b"EMB1"
    tag_bytes = tag.encode("utf-8")
    out += struct.pack("<II", dim, len(tag_bytes))
    out += tag_bytes
    out += struct.pack("<I", len(instances))
    for rows in instances:
        out += struct.pack("<I", len(rows))
        for row in rows:
            out += struct.pack(f"<{dim}f", *row)
    return out


def test_read_known_fixture():
    payload = [
        [1.0, -2.5, 0.25, 3.0],
        [0.0, 0.5, -0.125, 8.0],
        [4.0, 4.0, 4.0, 4.0],
    ]
    raw = hand_written_emb1(4, "fixture-tag", [payload])
    ef = read_emb(raw)
    assert ef.dim == 4
    assert ef.source_tag == "fixture-tag"
    assert len(ef) == 1
    assert ef.per_instance[0].dtype == np.float32
    np.testing.assert_array_equal(ef.per_instance[0], np.array(payload, dtype=np.float32))


def test_write_matches_hand_encoder():
    mats = (np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32),)
    ef = EmbeddingFile(2, mats, "t")
    assert emb_to_bytes(ef) == hand_written_emb1(2, "t", [[[1.5, -2.0], [0.25, 4.0]]])


def test_byte_roundtrip():
    c = make_corpus([[1, 2, 3], [4], [5, 6]])
    ef = random_embeddings(c, dim=7, seed=3)
    raw = emb_to_bytes(ef)
    again = read_emb(raw)
    assert emb_to_bytes(again) == raw
    assert again.dim == ef.dim and again.source_tag == ef.source_tag
    for a, b in zip(again.per_instance, ef.per_instance):
        np.testing.assert_array_equal(a, b)


def test_deterministic_bytes():
    c = make_corpus([[1, 2], [3]])
    ef = random_embeddings(c, dim=3, seed=11)
    assert emb_to_bytes(ef) == emb_to_bytes(ef)


def test_empty_file_is_header_plus_count():
    ef = EmbeddingFile(5, (), "tag")
    raw = emb_to_bytes(ef)
    # magic + dim + tag_len + tag + instance count
    assert len(raw) == 4 + 4 + 4 + len("tag") + 4
    assert len(read_emb(raw)) == 0


def test_bad_magic():
    with pytest.raises(DataFormatError, match="magic"):
        read_emb(b"NOPE" + b"\x00" * 20)


def test_truncated_stream():
    raw = hand_written_emb1(2, "t", [[[1.0, 2.0]]])
    with pytest.raises(DataFormatError, match="truncated"):
        read_emb(raw[:-3])


def test_instance_count_larger_than_content():
    raw = hand_written_emb1(2, "t", [[[1.0, 2.0]]])
    # bump the declared instance count from 1 to 2
    patched = raw[:13] + struct.pack("<I", 2) + raw[17:]
    with pytest.raises(DataFormatError, match="truncated"):
        read_emb(patched)


def test_trailing_bytes_rejected():
    raw = hand_written_emb1(2, "t", [[[1.0, 2.0]]])
    with pytest.raises(DataFormatError, match="trailing"):
        read_emb(raw + b"\x00")


def test_zero_dim_rejected():
    raw = hand_written_emb1(0, "t", [])
    with pytest.raises(DataFormatError, match="dimension"):
        read_emb(raw)


def test_non_finite_rejected():
    raw = hand_written_emb1(2, "t", [[[1.0, float("nan")]]])
    with pytest.raises(DataFormatError, match="non-finite"):
        read_emb(raw)
    with pytest.raises(ValueError, match="non-finite"):
        EmbeddingFile(1, (np.array([[np.inf]], dtype=np.float32),), "t")


def test_alignment_ok():
    c = make_corpus([[1, 2, 3]])
    ef = random_embeddings(c, dim=4, seed=0)
    validate_alignment(c, ef)  # must not raise


def test_alignment_row_mismatch_names_instance():
    c = make_corpus([[1, 2, 3]])
    ef = EmbeddingFile(4, (np.zeros((2, 4), dtype=np.float32) + 1,), "t")
    with pytest.raises(AlignmentError, match="'i0'.*3.*2"):
        validate_alignment(c, ef)


def test_alignment_count_mismatch():
    c = make_corpus([[1], [2]])
    ef = random_embeddings(make_corpus([[1]]), dim=4, seed=0)
    with pytest.raises(AlignmentError, match="count mismatch"):
        validate_alignment(c, ef)


def test_alignment_is_order_sensitive():
    c = make_corpus([[1, 2], [3, 4, 5]])
    ef = random_embeddings(c, dim=4, seed=0)
    flipped = EmbeddingFile(4, (ef.per_instance[1], ef.per_instance[0]), "t")
    with pytest.raises(AlignmentError):
        validate_alignment(c, flipped)
    both_flipped_c = make_corpus([[3, 4, 5], [1, 2]])
    validate_alignment(both_flipped_c, flipped)  # consistent permutation passes
