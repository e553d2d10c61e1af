"""Combine per-token scores from several trained models.

Average mode weighs members equally; weighted mode weighs each member by its
dev match average (weights normalized to sum 1). Combination happens on the
output emphasis probabilities, not logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .embio import EmbeddingFile, read_emb, validate_alignment
from .errors import AlignmentError, DataFormatError
from .evaluation import Prediction
from .model import Checkpoint, load_checkpoint, model_from_checkpoint, predict_corpus

MODES = ("average", "weighted")


@dataclass(frozen=True)
class EnsembleMember:
    checkpoint: Checkpoint
    embeddings: EmbeddingFile


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[EnsembleMember, ...]
    mode: str

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def member_weights(spec: EnsembleSpec) -> np.ndarray:
    """Normalized member weights; they sum to 1 in both modes."""
    k = len(spec.members)
    if spec.mode == "average":
        return np.full(k, 1.0 / k)
    devs = np.array([m.checkpoint.dev_match_average for m in spec.members])
    if (devs <= 0.0).any():
        raise DataFormatError(
            "weighted ensembling requires every member's dev match average to be positive"
        )
    return devs / devs.sum()


def combine_predictions(
    member_preds: Sequence[Sequence[Prediction]], weights: np.ndarray
) -> list[Prediction]:
    """Per-token convex combination across members.

    Weighted terms are summed exactly (math.fsum), which makes the result
    independent of member order, and the sum is clamped into the per-token
    member envelope: the exact combination always lies there, so clamping
    only removes final-rounding drift and makes identical members combine
    to exactly their own scores.
    """
    first = member_preds[0]
    for preds in member_preds[1:]:
        if len(preds) != len(first) or any(len(a) != len(b) for a, b in zip(preds, first)):
            raise AlignmentError("ensemble members predict different shapes")
    ws = [float(w) for w in weights]
    out = []
    for i in range(len(first)):
        stack = [np.asarray(preds[i], dtype=np.float64) for preds in member_preds]
        lo = np.min(stack, axis=0)
        hi = np.max(stack, axis=0)
        acc = np.array(
            [
                math.fsum(w * float(column[k]) for w, column in zip(ws, stack))
                for k in range(len(first[i]))
            ]
        )
        out.append(np.minimum(np.maximum(acc, lo), hi))
    return out


def ensemble_predict(spec: EnsembleSpec, c: Corpus) -> list[Prediction]:
    """Combined scores for every instance of the corpus."""
    member_preds = []
    for member in spec.members:
        validate_alignment(c, member.embeddings)
        model = model_from_checkpoint(member.checkpoint)
        member_preds.append(predict_corpus(model, member.embeddings))
    return combine_predictions(member_preds, member_weights(spec))


def parse_ensemble_spec(path: Path) -> EnsembleSpec:
    """Load a spec file: a mode line plus one member line per model.

        mode=weighted
        member=<checkpoint path>\t<embedding path>

    Relative member paths resolve against the spec file's directory.
    """
    base = path.parent
    mode = None
    members = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}:{line_no}: expected key=value, got {line!r}")
        if key == "mode":
            mode = value
        elif key == "member":
            parts = value.split("\t")
            if len(parts) != 2:
                raise DataFormatError(
                    f"{path}:{line_no}: member needs '<checkpoint>\\t<embeddings>'"
                )
            ckpt_path = base / parts[0]
            emb_path = base / parts[1]
            members.append(
                EnsembleMember(
                    checkpoint=load_checkpoint(ckpt_path.read_bytes()),
                    embeddings=read_emb(emb_path.read_bytes()),
                )
            )
        else:
            raise DataFormatError(f"{path}:{line_no}: unknown key {key!r}")
    if mode is None:
        raise DataFormatError(f"{path}: missing mode line")
    if not members:
        raise DataFormatError(f"{path}: no member lines")
    try:
        return EnsembleSpec(tuple(members), mode)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
