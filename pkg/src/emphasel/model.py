"""Emphasis scoring heads over frozen embeddings, plus checkpoint persistence.

Two heads map per-token vectors to a two-way label distribution:

  * bilstm: a single bidirectional LSTM whose concatenated states feed a
    2 x (2*hidden_units) output map; each token's score conditions on the
    whole sequence.
  * dense: a per-token hidden layer (dense_units, tanh) feeding a
    2 x dense_units output map; tokens are scored independently.

An optional trainable linear adapter (identity-initialized, square) sits
between the frozen embeddings and either head.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, NamedTuple, Union

import numpy as np

from .embio import EmbeddingFile
from .errors import AlignmentError, DataFormatError
from .nn import (
    BiLstmCtx,
    LinearCtx,
    LstmParams,
    Parameter,
    bilstm_backward,
    bilstm_encode,
    init_params,
    linear,
    linear_backward,
    softmax2,
)
from .rng import derive

HEADS = ("bilstm", "dense")
CKPT_MAGIC = b"CKP1"


@dataclass(frozen=True)
class ModelConfig:
    head: str
    input_dim: int
    hidden_units: int = 128
    dense_units: int = 256
    lr: float = 3e-4
    momentum: float = 0.0
    epochs: int = 20
    batch_size: int = 32
    seed: int = 1234
    adapter: bool = False

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        for name in ("input_dim", "hidden_units", "dense_units", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def _tensor_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Checkpoint manifest order; shapes are derivable from the config alone."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if cfg.adapter:
        shapes += [
            ("adapter.w", (cfg.input_dim, cfg.input_dim)),
            ("adapter.b", (cfg.input_dim,)),
        ]
    if cfg.head == "bilstm":
        h, d = cfg.hidden_units, cfg.input_dim
        for direction in ("fwd", "bwd"):
            shapes += [
                (f"{direction}.w", (4 * h, d)),
                (f"{direction}.u", (4 * h, h)),
                (f"{direction}.b", (4 * h,)),
            ]
        shapes += [("out.w", (2, 2 * h)), ("out.b", (2,))]
    else:
        shapes += [
            ("hidden.w", (cfg.dense_units, cfg.input_dim)),
            ("hidden.b", (cfg.dense_units,)),
            ("out.w", (2, cfg.dense_units)),
            ("out.b", (2,)),
        ]
    return shapes


class EmphasisModel:
    """Config plus named parameters; built by build_model or from a checkpoint."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = _tensor_shapes(config)
        if [n for n, _ in expected] != list(tensors.keys()):
            raise ValueError(
                f"tensor names {list(tensors.keys())} do not match config manifest "
                f"{[n for n, _ in expected]}"
            )
        for name, shape in expected:
            if tensors[name].shape != shape:
                raise ValueError(
                    f"tensor {name!r}: expected shape {shape}, got {tensors[name].shape}"
                )
        self.config = config
        self._params = {name: Parameter(name, tensors[name]) for name, _ in expected}
        if config.head == "bilstm":
            self.fwd = LstmParams(self._params["fwd.w"], self._params["fwd.u"], self._params["fwd.b"])
            self.bwd = LstmParams(self._params["bwd.w"], self._params["bwd.u"], self._params["bwd.b"])

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return list(self._params.items())

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def param(self, name: str) -> Parameter:
        return self._params[name]


def build_model(cfg: ModelConfig) -> EmphasisModel:
    """Initialize all tensors deterministically from cfg.seed.

    Weight tensor k in manifest order draws from seed derive(cfg.seed, k).
    Biases start at zero except LSTM forget-gate blocks, which start at one.
    The adapter starts as the identity map.
    """
    tensors: dict[str, np.ndarray] = {}
    for k, (name, shape) in enumerate(_tensor_shapes(cfg)):
        if name.endswith(".b"):
            value = np.zeros(shape)
            if name in ("fwd.b", "bwd.b"):
                h = shape[0] // 4
                value[h : 2 * h] = 1.0  # forget gate block
        elif name == "adapter.w":
            value = np.eye(shape[0])
        else:
            value = init_params(shape, derive(cfg.seed, k))
        tensors[name] = value
    return EmphasisModel(cfg, tensors)


class ForwardCache(NamedTuple):
    adapter_ctx: LinearCtx | None
    head_ctx: Union[BiLstmCtx, LinearCtx]  # bilstm encode ctx or dense hidden ctx
    hidden_act: np.ndarray | None  # tanh activations (dense head only)
    out_ctx: LinearCtx


def forward(model: EmphasisModel, vectors: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Score one instance: (n, input_dim) vectors -> (n, 2) label distributions."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise AlignmentError(
            f"input dimension mismatch: model expects (*, {model.config.input_dim}), "
            f"got {x.shape}"
        )
    adapter_ctx = None
    if model.config.adapter:
        x, adapter_ctx = linear(x, model.param("adapter.w"), model.param("adapter.b"))
    if model.config.head == "bilstm":
        states, head_ctx = bilstm_encode(x, model.fwd, model.bwd)
        logits, out_ctx = linear(states, model.param("out.w"), model.param("out.b"))
        hidden_act = None
    else:
        pre, head_ctx = linear(x, model.param("hidden.w"), model.param("hidden.b"))
        hidden_act = np.tanh(pre)
        logits, out_ctx = linear(hidden_act, model.param("out.w"), model.param("out.b"))
    probs = softmax2(logits)
    return probs, ForwardCache(adapter_ctx, head_ctx, hidden_act, out_ctx)


def backward(model: EmphasisModel, cache: ForwardCache, dlogits: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients from per-token logit gradients (n, 2)."""
    d_hidden = linear_backward(cache.out_ctx, model.param("out.w"), model.param("out.b"), dlogits)
    if model.config.head == "bilstm":
        dx = bilstm_backward(cache.head_ctx, model.fwd, model.bwd, d_hidden)
    else:
        d_pre = d_hidden * (1.0 - cache.hidden_act**2)
        dx = linear_backward(cache.head_ctx, model.param("hidden.w"), model.param("hidden.b"), d_pre)
    if model.config.adapter:
        dx = linear_backward(cache.adapter_ctx, model.param("adapter.w"), model.param("adapter.b"), dx)
    return dx


def predict_scores(model: EmphasisModel, vectors: np.ndarray) -> np.ndarray:
    """Per-token emphasis scores (the predicted emphasis probability)."""
    probs, _ = forward(model, vectors)
    return probs[:, 0]


def predict_corpus(model: EmphasisModel, ef: EmbeddingFile) -> list[np.ndarray]:
    """Scores for every instance of an embedding file, in order."""
    if ef.dim != model.config.input_dim:
        raise AlignmentError(
            f"embedding dimension {ef.dim} does not match model input_dim "
            f"{model.config.input_dim} (embeddings {ef.source_tag!r})"
        )
    return [predict_scores(model, mat) for mat in ef.per_instance]


@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]  # float64, manifest order
    best_epoch: int
    dev_match_average: float
    source_tag: str


def checkpoint_from_model(
    model: EmphasisModel, best_epoch: int, dev_match_average: float, source_tag: str
) -> Checkpoint:
    tensors = {name: p.value.copy() for name, p in model.named_parameters()}
    return Checkpoint(model.config, tensors, best_epoch, dev_match_average, source_tag)


def model_from_checkpoint(ckpt: Checkpoint) -> EmphasisModel:
    return EmphasisModel(ckpt.config, {k: v.copy() for k, v in ckpt.tensors.items()})


_CONFIG_FIELDS = (
    ("head", str),
    ("input_dim", int),
    ("hidden_units", int),
    ("dense_units", int),
    ("lr", float),
    ("momentum", float),
    ("epochs", int),
    ("batch_size", int),
    ("seed", int),
    ("adapter", bool),
)


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    """CKP1 bytes: magic, u32 header length, key=value header, float64 payload."""
    lines = []
    for name, kind in _CONFIG_FIELDS:
        value = getattr(ckpt.config, name)
        if kind is bool:
            lines.append(f"{name}={int(value)}")
        elif kind is float:
            lines.append(f"{name}={value!r}")  # repr round-trips float64 exactly
        else:
            lines.append(f"{name}={value}")
    lines.append(f"best_epoch={ckpt.best_epoch}")
    lines.append(f"dev_match_average={ckpt.dev_match_average!r}")
    lines.append(f"source_tag={ckpt.source_tag}")
    for name, tensor in ckpt.tensors.items():
        dims = "x".join(str(s) for s in tensor.shape)
        lines.append(f"tensor={name} {dims}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for tensor in ckpt.tensors.values():
        buf.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return buf.getvalue()


def load_checkpoint(data: Union[bytes, bytearray, BinaryIO]) -> Checkpoint:
    if not isinstance(data, (bytes, bytearray)):
        data = data.read()
    data = bytes(data)
    if data[:4] != CKPT_MAGIC:
        raise DataFormatError("bad magic: not a CKP1 checkpoint")
    if len(data) < 8:
        raise DataFormatError("truncated checkpoint header")
    (header_len,) = struct.unpack("<I", data[4:8])
    header_end = 8 + header_len
    if len(data) < header_end:
        raise DataFormatError("truncated checkpoint header")
    try:
        header = data[8:header_end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"checkpoint header is not valid UTF-8: {exc}") from exc

    fields: dict[str, str] = {}
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for line in header.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        if not _:
            raise DataFormatError(f"malformed checkpoint header line: {line!r}")
        if key == "tensor":
            name, _, dims = value.partition(" ")
            try:
                shape = tuple(int(s) for s in dims.split("x"))
            except ValueError as exc:
                raise DataFormatError(f"malformed tensor entry: {line!r}") from exc
            manifest.append((name, shape))
        else:
            fields[key] = value

    try:
        kwargs = {}
        for name, kind in _CONFIG_FIELDS:
            raw = fields[name]
            kwargs[name] = bool(int(raw)) if kind is bool else kind(raw)
        config = ModelConfig(**kwargs)
        best_epoch = int(fields["best_epoch"])
        dev_match_average = float(fields["dev_match_average"])
        source_tag = fields["source_tag"]
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"invalid checkpoint header: {exc}") from exc

    expected = _tensor_shapes(config)
    if manifest != expected:
        raise DataFormatError(
            f"tensor manifest {manifest} disagrees with config-derived shapes {expected}"
        )

    tensors: dict[str, np.ndarray] = {}
    offset = header_end
    for name, shape in manifest:
        nbytes = int(np.prod(shape)) * 8
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise DataFormatError(f"truncated payload for tensor {name!r}")
        tensor = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        if not np.isfinite(tensor).all():
            raise DataFormatError(f"non-finite values in tensor {name!r}")
        tensors[name] = tensor
        offset += nbytes
    if offset != len(data):
        raise DataFormatError("trailing bytes after checkpoint payload")
    return Checkpoint(config, tensors, best_epoch, dev_match_average, source_tag)
