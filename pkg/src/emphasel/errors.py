"""Exception hierarchy shared across the toolkit."""


class EmphaselError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(EmphaselError):
    """Malformed or inconsistent input data (corpora, embedding files, checkpoints)."""


class AlignmentError(DataFormatError):
    """A corpus and a companion artifact (embeddings, predictions) disagree."""


class NumericError(EmphaselError):
    """A non-finite value surfaced during training or evaluation."""
