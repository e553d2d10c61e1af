"""Annotated emphasis corpora: parsing, targets, shuffling, length buckets.

The on-disk shape is a UTF-8 TSV with one token per line and exactly five
tab-separated columns:

    index    token    pos    emph_count    ann_total

where pos is "_" when untagged. Instances are separated by one blank line.
Comment lines starting with "#" may precede any instance; a line of the form
"# id: <value>" names the following instance, otherwise instances receive
sequential integer ids ("0", "1", ...).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import BinaryIO, Iterator, NamedTuple, Union

from .errors import DataFormatError
from .rng import SplitMix64, derive

NO_POS = "_"


class LabelDistribution(NamedTuple):
    """Per-token probability pair: emphasized vs not."""

    p_emph: float
    p_rest: float


@dataclass(frozen=True)
class Token:
    index: int
    text: str
    pos: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be non-empty")
        if self.index < 0:
            raise ValueError("token index must be >= 0")


@dataclass(frozen=True)
class AnnotatedInstance:
    """One short text with per-token annotator emphasis counts."""

    id: str
    tokens: tuple[Token, ...]
    emph_counts: tuple[int, ...]
    ann_total: int

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"instance {self.id!r} has no tokens")
        if len(self.emph_counts) != len(self.tokens):
            raise ValueError(
                f"instance {self.id!r}: {len(self.emph_counts)} counts for "
                f"{len(self.tokens)} tokens"
            )
        if self.ann_total <= 0:
            raise ValueError(f"instance {self.id!r}: annotator total must be positive")
        for tok, count in zip(self.tokens, self.emph_counts):
            if not 0 <= count <= self.ann_total:
                raise ValueError(
                    f"instance {self.id!r} token {tok.index}: count {count} "
                    f"outside [0, {self.ann_total}]"
                )
        for position, tok in enumerate(self.tokens):
            if tok.index != position:
                raise ValueError(
                    f"instance {self.id!r}: token index {tok.index} at position {position}"
                )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    instances: tuple[AnnotatedInstance, ...]
    split_name: str

    def __post_init__(self):
        seen: set[str] = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValueError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[AnnotatedInstance]:
        return iter(self.instances)


class LengthBucket(enum.Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"


def length_bucket(inst: AnnotatedInstance) -> LengthBucket:
    """Short: fewer than 6 tokens. Medium: 6 to 18. Long: more than 18."""
    n = len(inst)
    if n < 6:
        return LengthBucket.SHORT
    if n <= 18:
        return LengthBucket.MEDIUM
    return LengthBucket.LONG


def target_distribution(inst: AnnotatedInstance) -> list[LabelDistribution]:
    """Training targets: emphasis probability proportional to annotator counts."""
    out = []
    for count in inst.emph_counts:
        p = count / inst.ann_total
        out.append(LabelDistribution(p, 1.0 - p))
    return out


def shuffle_instance(
    inst: AnnotatedInstance, seed: int
) -> tuple[AnnotatedInstance, list[int]]:
    """Permute an instance's tokens with the documented generator.

    Returns the shuffled instance and the permutation, where output position
    i holds what was at input position perm[i]; companion row matrices must
    be gathered with the same rule.
    """
    n = len(inst)
    perm = SplitMix64(seed).permutation(n)
    tokens = tuple(
        Token(index=i, text=inst.tokens[p].text, pos=inst.tokens[p].pos)
        for i, p in enumerate(perm)
    )
    counts = tuple(inst.emph_counts[p] for p in perm)
    return AnnotatedInstance(inst.id, tokens, counts, inst.ann_total), perm


def shuffle_corpus(c: Corpus, base_seed: int) -> tuple[Corpus, list[list[int]]]:
    """Shuffle every instance; instance at position i uses derive(base_seed, i)."""
    shuffled = []
    perms = []
    for i, inst in enumerate(c.instances):
        new_inst, perm = shuffle_instance(inst, derive(base_seed, i))
        shuffled.append(new_inst)
        perms.append(perm)
    return Corpus(tuple(shuffled), c.split_name), perms


Source = Union[bytes, bytearray, BinaryIO]


def _read_bytes(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def parse_corpus(source: Source, split_name: str) -> Corpus:
    """Parse the five-column TSV format into a Corpus.

    Errors carry 1-based line numbers.
    """
    try:
        text = _read_bytes(source).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"corpus is not valid UTF-8: {exc}") from exc

    instances: list[AnnotatedInstance] = []
    pending_id: str | None = None
    block: list[tuple[int, list[str]]] = []  # (line_no, columns)

    def flush_block():
        nonlocal pending_id, block
        if not block:
            return
        inst_id = pending_id if pending_id is not None else str(len(instances))
        pending_id = None
        tokens = []
        counts = []
        totals = set()
        for position, (line_no, cols) in enumerate(block):
            index_s, text_s, pos_s, count_s, total_s = cols
            try:
                index = int(index_s)
                count = int(count_s)
                total = int(total_s)
            except ValueError as exc:
                raise DataFormatError(f"line {line_no}: non-integer field: {exc}") from exc
            if index != position:
                raise DataFormatError(
                    f"line {line_no}: token index {index} but position {position} in instance"
                )
            if not text_s:
                raise DataFormatError(f"line {line_no}: empty token text")
            if total <= 0:
                raise DataFormatError(f"line {line_no}: annotator total {total} not positive")
            if not 0 <= count <= total:
                raise DataFormatError(
                    f"line {line_no}: emphasis count {count} outside [0, {total}]"
                )
            totals.add(total)
            if len(totals) > 1:
                raise DataFormatError(
                    f"line {line_no}: annotator total changes within one instance"
                )
            tokens.append(Token(index, text_s, None if pos_s == NO_POS else pos_s))
            counts.append(count)
        try:
            instances.append(
                AnnotatedInstance(inst_id, tuple(tokens), tuple(counts), totals.pop())
            )
        except ValueError as exc:
            raise DataFormatError(str(exc)) from exc
        block = []

    for line_no, line in enumerate(text.split("\n"), start=1):
        if line.startswith("#"):
            if block:
                raise DataFormatError(f"line {line_no}: comment inside an instance block")
            body = line[1:].strip()
            if body.startswith("id:"):
                pending_id = body[3:].strip()
            continue
        if line == "":
            flush_block()
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise DataFormatError(f"line {line_no}: expected 5 tab-separated columns, got {len(cols)}")
        block.append((line_no, cols))
    flush_block()

    if not instances:
        raise DataFormatError("corpus contains no instances")
    try:
        return Corpus(tuple(instances), split_name)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def serialize_corpus(c: Corpus) -> bytes:
    """Inverse of parse_corpus on the data model; emits an id comment per instance."""
    blocks = []
    for inst in c.instances:
        lines = [f"# id: {inst.id}"]
        for tok, count in zip(inst.tokens, inst.emph_counts):
            pos = tok.pos if tok.pos is not None else NO_POS
            lines.append(f"{tok.index}\t{tok.text}\t{pos}\t{count}\t{inst.ann_total}")
        blocks.append("\n".join(lines))
    return ("\n\n".join(blocks) + "\n").encode("utf-8")
