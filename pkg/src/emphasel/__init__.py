"""Emphasis selection toolkit.

Label-distribution sequence labeling over frozen contextual embeddings:
corpus handling, a gradient-checked BiLSTM/dense trainer with a KL loss,
match-m evaluation, ensembling, and the shuffle/POS/length analyses.
"""

__version__ = "0.1.0"

from .corpus import (
    AnnotatedInstance,
    Corpus,
    LabelDistribution,
    LengthBucket,
    Token,
    length_bucket,
    parse_corpus,
    serialize_corpus,
    shuffle_corpus,
    shuffle_instance,
    target_distribution,
)
from .embio import EmbeddingFile, emb_to_bytes, read_emb, validate_alignment, write_emb
from .errors import AlignmentError, DataFormatError, EmphaselError, NumericError
from .evaluation import (
    LengthReport,
    MatchReport,
    PosReport,
    gold_top_set,
    length_report,
    match_report,
    pos_report,
    pred_top_set,
    random_baseline,
)
from .ensemble import EnsembleMember, EnsembleSpec, ensemble_predict
from .model import (
    Checkpoint,
    EmphasisModel,
    ModelConfig,
    build_model,
    forward,
    load_checkpoint,
    model_from_checkpoint,
    predict_corpus,
    save_checkpoint,
)
from .training import TrainHistory, make_batches, train
