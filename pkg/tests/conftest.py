"""Shared fixtures, including discovery of the official task data.

The calibration tests need the real development split (and for some, exported
embedding files). Point EMPHASEL_DATA_DIR at a directory containing:

    train.tsv, dev.tsv          normalized five-column corpora
    train_bert.emb, dev_bert.emb   EMB1 exports (for the paper-scale checks)

Without it those tests skip; everything else is self-contained.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest


def _data_dir() -> Path | None:
    env = os.environ.get("EMPHASEL_DATA_DIR")
    if env:
        return Path(env)
    default = Path(__file__).resolve().parent.parent / "data"
    if default.is_dir():
        return default
    return None


@pytest.fixture(scope="session")
def official_dev_corpus():
    from emphasel.corpus import parse_corpus

    base = _data_dir()
    if base is None or not (base / "dev.tsv").is_file():
        pytest.skip("official dev data not available (set EMPHASEL_DATA_DIR)")
    return parse_corpus((base / "dev.tsv").read_bytes(), "dev")


@pytest.fixture(scope="session")
def official_train_corpus():
    from emphasel.corpus import parse_corpus

    base = _data_dir()
    if base is None or not (base / "train.tsv").is_file():
        pytest.skip("official train data not available (set EMPHASEL_DATA_DIR)")
    return parse_corpus((base / "train.tsv").read_bytes(), "train")


@pytest.fixture(scope="session")
def official_embeddings():
    """(train_ef, dev_ef) for frozen BERT exports, when present."""
    from emphasel.embio import read_emb

    base = _data_dir()
    if base is None:
        pytest.skip("official data not available (set EMPHASEL_DATA_DIR)")
    train_p = base / "train_bert.emb"
    dev_p = base / "dev_bert.emb"
    if not (train_p.is_file() and dev_p.is_file()):
        pytest.skip("exported embedding files not available")
    return read_emb(train_p.read_bytes()), read_emb(dev_p.read_bytes())
