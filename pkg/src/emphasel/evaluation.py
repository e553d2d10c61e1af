"""Match-m scoring and corpus analyses (POS, length buckets, random baseline).

Match-m semantics: the ground-truth set ranks tokens by annotator count and
keeps the top m plus every token tied with the m-th count; the predicted set
is exactly min(m, n) tokens, score ties broken toward the lower index. The
per-instance score is |pred & gold| / min(m, n), so instances shorter than m
still score. Reported scores are means over instances for m = 1..4 plus the
average of the four.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import AnnotatedInstance, Corpus, LengthBucket, length_bucket
from .errors import AlignmentError, DataFormatError
from .rng import SplitMix64, derive

M_VALUES = (1, 2, 3, 4)

# A Prediction is a length-n array of per-token emphasis scores in [0, 1].
Prediction = np.ndarray


@dataclass(frozen=True)
class MatchReport:
    m_scores: tuple[float, float, float, float]
    average: float

    def __post_init__(self):
        for s in self.m_scores + (self.average,):
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"match score {s} outside [0, 1]")
        if abs(self.average - sum(self.m_scores) / 4.0) > 1e-12:
            raise ValueError("average does not equal the mean of the four match scores")

    @classmethod
    def from_scores(cls, m_scores: Sequence[float]) -> "MatchReport":
        scores = tuple(float(s) for s in m_scores)
        return cls(scores, sum(scores) / 4.0)

    def as_kv(self) -> str:
        lines = [f"m{m}={s!r}" for m, s in zip(M_VALUES, self.m_scores)]
        lines.append(f"average={self.average!r}")
        return "\n".join(lines) + "\n"

    def as_row(self) -> str:
        return "\t".join(f"{s:.4f}" for s in self.m_scores + (self.average,))

    def as_table(self) -> str:
        header = "\t".join(f"M{m}" for m in M_VALUES) + "\tAverage"
        return f"{header}\n{self.as_row()}\n"


def gold_top_set(inst: AnnotatedInstance, m: int) -> frozenset[int]:
    """Indexes whose count reaches the m-th highest count (ties expand the set)."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    counts = inst.emph_counts
    if len(counts) <= m:
        return frozenset(range(len(counts)))
    threshold = sorted(counts, reverse=True)[m - 1]
    return frozenset(i for i, c in enumerate(counts) if c >= threshold)


def pred_top_set(scores: Prediction, m: int) -> frozenset[int]:
    """Exactly min(m, n) highest-scoring indexes; ties go to the lower index."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-float(scores[i]), i))
    return frozenset(order[: min(m, n)])


def instance_match(inst: AnnotatedInstance, scores: Prediction, m: int) -> float:
    denom = min(m, len(inst))
    return len(pred_top_set(scores, m) & gold_top_set(inst, m)) / denom


def instance_match_average(inst: AnnotatedInstance, scores: Prediction) -> float:
    return sum(instance_match(inst, scores, m) for m in M_VALUES) / len(M_VALUES)


def _check_alignment(c: Corpus, preds: Sequence[Prediction]) -> None:
    if len(preds) != len(c):
        raise AlignmentError(
            f"{len(preds)} predictions for {len(c)} instances in corpus {c.split_name!r}"
        )
    for inst, p in zip(c.instances, preds):
        if len(p) != len(inst):
            raise AlignmentError(
                f"instance {inst.id!r}: {len(p)} scores for {len(inst)} tokens"
            )


def match_report(c: Corpus, preds: Sequence[Prediction]) -> MatchReport:
    """Mean match-m over the corpus for m = 1..4 and their average."""
    _check_alignment(c, preds)
    if len(c) == 0:
        raise DataFormatError("cannot evaluate an empty corpus")
    means = []
    for m in M_VALUES:
        means.append(
            sum(instance_match(inst, p, m) for inst, p in zip(c.instances, preds)) / len(c)
        )
    return MatchReport.from_scores(means)


def random_scores(c: Corpus, seed: int) -> list[Prediction]:
    """I.i.d. uniform scores per token from one stream over the whole corpus."""
    rng = SplitMix64(seed)
    return [rng.next_float_block(len(inst)) for inst in c.instances]


def random_baseline(c: Corpus, seed: int, trials: int) -> MatchReport:
    """Mean match report of uniform-score predictions over the given trials.

    Trial t draws its scores from the stream seeded with derive(seed, t),
    t = 0..trials-1.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    per_m_totals = np.zeros(len(M_VALUES))
    for t in range(trials):
        report = match_report(c, random_scores(c, derive(seed, t)))
        per_m_totals += np.asarray(report.m_scores)
    return MatchReport.from_scores(per_m_totals / trials)


@dataclass(frozen=True)
class PosRow:
    tag: str
    count: int
    human_mean: float
    model_mean: float | None


@dataclass(frozen=True)
class PosReport:
    rows: tuple[PosRow, ...]  # sorted by count descending, then tag

    def as_kv(self) -> str:
        lines = []
        for row in self.rows:
            line = f"pos={row.tag} count={row.count} human={row.human_mean!r}"
            if row.model_mean is not None:
                line += f" model={row.model_mean!r}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def as_table(self) -> str:
        with_model = any(r.model_mean is not None for r in self.rows)
        header = "POS\tCount\tHumans" + ("\tModel" if with_model else "")
        lines = [header]
        for row in self.rows:
            line = f"{row.tag}\t{row.count}\t{row.human_mean:.3f}"
            if with_model:
                line += f"\t{row.model_mean:.3f}" if row.model_mean is not None else "\t-"
            lines.append(line)
        return "\n".join(lines) + "\n"


def pos_report(c: Corpus, preds: Sequence[Prediction] | None = None) -> PosReport:
    """Mean human emphasis probability (and model score) per POS tag.

    Only tokens carrying a POS tag participate; tags with zero tokens are
    omitted. Raises if the corpus has no tagged token at all.
    """
    if preds is not None:
        _check_alignment(c, preds)
    human: dict[str, list[float]] = {}
    model: dict[str, list[float]] = {}
    for idx, inst in enumerate(c.instances):
        for tok, count in zip(inst.tokens, inst.emph_counts):
            if tok.pos is None:
                continue
            human.setdefault(tok.pos, []).append(count / inst.ann_total)
            if preds is not None:
                model.setdefault(tok.pos, []).append(float(preds[idx][tok.index]))
    if not human:
        raise DataFormatError(f"corpus {c.split_name!r} has no POS tags")
    rows = []
    for tag in sorted(human, key=lambda t: (-len(human[t]), t)):
        values = human[tag]
        model_mean = sum(model[tag]) / len(model[tag]) if preds is not None else None
        rows.append(PosRow(tag, len(values), sum(values) / len(values), model_mean))
    return PosReport(tuple(rows))


@dataclass(frozen=True)
class LengthRow:
    bucket: LengthBucket
    count: int
    mean_match_average: float | None  # None when the bucket is empty


@dataclass(frozen=True)
class LengthReport:
    rows: tuple[LengthRow, LengthRow, LengthRow]  # short, medium, long

    def as_kv(self) -> str:
        lines = []
        for row in self.rows:
            line = f"bucket={row.bucket.value} count={row.count}"
            if row.mean_match_average is not None:
                line += f" average={row.mean_match_average!r}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def as_table(self) -> str:
        lines = ["Bucket\tCount\tAverage"]
        for row in self.rows:
            avg = f"{row.mean_match_average:.4f}" if row.mean_match_average is not None else "-"
            lines.append(f"{row.bucket.value}\t{row.count}\t{avg}")
        return "\n".join(lines) + "\n"


def length_report(c: Corpus, preds: Sequence[Prediction]) -> LengthReport:
    """Per-instance match average grouped by length bucket."""
    _check_alignment(c, preds)
    groups: dict[LengthBucket, list[float]] = {b: [] for b in LengthBucket}
    for inst, p in zip(c.instances, preds):
        groups[length_bucket(inst)].append(instance_match_average(inst, p))
    rows = []
    for bucket in (LengthBucket.SHORT, LengthBucket.MEDIUM, LengthBucket.LONG):
        values = groups[bucket]
        mean = sum(values) / len(values) if values else None
        rows.append(LengthRow(bucket, len(values), mean))
    return LengthReport((rows[0], rows[1], rows[2]))
