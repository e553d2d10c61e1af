"""Experiment orchestration: architecture/embedding grids and the shuffle study.

A grid spec is a key=value text file:

    out_dir=runs/grid
    lrs=2e-5,1e-4,3e-4
    seeds=7
    epochs=20
    batch_size=32
    cell label=BERT head=bilstm train_emb=embs/train_bert.emb dev_emb=embs/dev_bert.emb

Every (lr, seed) combination of a cell trains once; the combination with the
best dev match average becomes the cell's row. Finished runs are checkpointed
in out_dir and skipped on rerun, so a grid is resumable. Relative paths
resolve against the spec file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, shuffle_corpus
from .embio import EmbeddingFile, read_emb, validate_alignment
from .errors import DataFormatError, EmphaselError
from .evaluation import M_VALUES, MatchReport, match_report, random_baseline
from .model import (
    Checkpoint,
    ModelConfig,
    load_checkpoint,
    model_from_checkpoint,
    predict_corpus,
    save_checkpoint,
)
from .rng import derive
from .training import train

DEFAULT_LRS = (2e-5, 1e-4, 3e-4)


@dataclass(frozen=True)
class GridCell:
    label: str
    head: str
    train_emb: Path
    dev_emb: Path


@dataclass(frozen=True)
class GridSpec:
    cells: tuple[GridCell, ...]
    lr_candidates: tuple[float, ...] = DEFAULT_LRS
    seeds: tuple[int, ...] = (1234,)
    epochs: int = 20
    batch_size: int = 32
    out_dir: Path = Path("runs")


def parse_grid_spec(path: Path) -> GridSpec:
    base = path.parent
    cells = []
    options: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("cell "):
            fields = {}
            for item in line[5:].split():
                key, sep, value = item.partition("=")
                if not sep:
                    raise DataFormatError(f"{path}:{line_no}: expected key=value, got {item!r}")
                fields[key] = value
            missing = {"label", "head", "train_emb", "dev_emb"} - fields.keys()
            if missing:
                raise DataFormatError(f"{path}:{line_no}: cell missing {sorted(missing)}")
            cells.append(
                GridCell(
                    label=fields["label"],
                    head=fields["head"],
                    train_emb=base / fields["train_emb"],
                    dev_emb=base / fields["dev_emb"],
                )
            )
        else:
            key, sep, value = line.partition("=")
            if not sep:
                raise DataFormatError(f"{path}:{line_no}: expected key=value, got {line!r}")
            options[key] = value
    if not cells:
        raise DataFormatError(f"{path}: no cell lines")
    try:
        spec = GridSpec(
            cells=tuple(cells),
            lr_candidates=tuple(float(s) for s in options.get("lrs", "").split(",") if s)
            or DEFAULT_LRS,
            seeds=tuple(int(s) for s in options.get("seeds", "").split(",") if s) or (1234,),
            epochs=int(options.get("epochs", 20)),
            batch_size=int(options.get("batch_size", 32)),
            out_dir=base / options.get("out_dir", "runs"),
        )
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    return spec


@dataclass(frozen=True)
class GridResult:
    cell: GridCell
    best_lr: float | None
    best_seed: int | None
    report: MatchReport | None
    error: str | None = None


def _cell_config(spec: GridSpec, cell: GridCell, dim: int, lr: float, seed: int) -> ModelConfig:
    return ModelConfig(
        head=cell.head,
        input_dim=dim,
        lr=lr,
        epochs=spec.epochs,
        batch_size=spec.batch_size,
        seed=seed,
    )


def _run_name(cell: GridCell, lr: float, seed: int) -> str:
    return f"{cell.label}_{cell.head}_lr{lr!r}_s{seed}"


def run_grid(spec: GridSpec, train_c: Corpus, dev_c: Corpus) -> list[GridResult]:
    """Train every cell over the lr/seed sweep; per-cell failures do not stop the grid."""
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for cell in spec.cells:
        try:
            results.append(_run_cell(spec, cell, train_c, dev_c))
        except (EmphaselError, OSError, ValueError) as exc:
            results.append(GridResult(cell, None, None, None, error=str(exc)))
    return results


def _run_cell(spec: GridSpec, cell: GridCell, train_c: Corpus, dev_c: Corpus) -> GridResult:
    train_ef = read_emb(cell.train_emb.read_bytes())
    dev_ef = read_emb(cell.dev_emb.read_bytes())
    validate_alignment(train_c, train_ef)
    validate_alignment(dev_c, dev_ef)
    best: tuple[float, int, Checkpoint] | None = None
    for lr in spec.lr_candidates:
        for seed in spec.seeds:
            ckpt_path = spec.out_dir / f"{_run_name(cell, lr, seed)}.ckp1"
            if ckpt_path.exists():
                ckpt = load_checkpoint(ckpt_path.read_bytes())
            else:
                cfg = _cell_config(spec, cell, train_ef.dim, lr, seed)
                ckpt, history = train(cfg, (train_c, train_ef), (dev_c, dev_ef))
                ckpt_path.write_bytes(save_checkpoint(ckpt))
                history_path = spec.out_dir / f"{_run_name(cell, lr, seed)}.history"
                history_path.write_text(history.serialize(), encoding="utf-8")
            if best is None or ckpt.dev_match_average > best[2].dev_match_average:
                best = (lr, seed, ckpt)
    lr, seed, ckpt = best
    # Recompute the full dev report from the stored best checkpoint.
    report = match_report(dev_c, predict_corpus(model_from_checkpoint(ckpt), dev_ef))
    return GridResult(cell, lr, seed, report)


def format_grid_table(results: list[GridResult]) -> str:
    lines = ["Label\tHead\tLR\tSeed\t" + "\t".join(f"M{m}" for m in M_VALUES) + "\tAverage"]
    for r in results:
        if r.error is not None:
            lines.append(f"{r.cell.label}\t{r.cell.head}\tERROR: {r.error}")
        else:
            lines.append(
                f"{r.cell.label}\t{r.cell.head}\t{r.best_lr!r}\t{r.best_seed}\t{r.report.as_row()}"
            )
    return "\n".join(lines) + "\n"


def permute_embedding_rows(ef: EmbeddingFile, perms: list[list[int]]) -> EmbeddingFile:
    """Gather each instance's rows by the matching permutation (row i <- perm[i])."""
    if len(perms) != len(ef):
        raise DataFormatError(
            f"{len(perms)} permutations for {len(ef)} embedded instances"
        )
    mats = []
    for mat, perm in zip(ef.per_instance, perms):
        if len(perm) != mat.shape[0]:
            raise DataFormatError(
                f"permutation length {len(perm)} does not match {mat.shape[0]} rows"
            )
        mats.append(mat[np.asarray(perm)])
    return EmbeddingFile(ef.dim, tuple(mats), ef.source_tag)


@dataclass(frozen=True)
class ShuffleStudyResult:
    mean_report: MatchReport
    run_reports: tuple[MatchReport, ...]
    baseline: MatchReport


def run_shuffle_study(
    cfg: ModelConfig,
    train_data: tuple[Corpus, EmbeddingFile],
    dev_data: tuple[Corpus, EmbeddingFile],
    runs: int = 5,
    baseline_trials: int = 100,
) -> ShuffleStudyResult:
    """Train on order-shuffled data, evaluate on the untouched dev split.

    Run r (1-based) shuffles every training instance with base seed
    derive(cfg.seed, r) and permutes the cached embedding rows identically;
    contextual embeddings are NOT recomputed on the shuffled text (export
    with a shuffle seed for that variant). The random baseline uses
    derive(cfg.seed, 0) as its seed.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    train_c, train_ef = train_data
    reports = []
    for r in range(1, runs + 1):
        shuffled_c, perms = shuffle_corpus(train_c, derive(cfg.seed, r))
        shuffled_ef = permute_embedding_rows(train_ef, perms)
        run_cfg = replace(cfg, seed=derive(cfg.seed, r))
        ckpt, _ = train(run_cfg, (shuffled_c, shuffled_ef), dev_data)
        preds = predict_corpus(model_from_checkpoint(ckpt), dev_data[1])
        reports.append(match_report(dev_data[0], preds))
    mean_scores = [
        sum(rep.m_scores[k] for rep in reports) / len(reports) for k in range(len(M_VALUES))
    ]
    baseline = random_baseline(dev_data[0], derive(cfg.seed, 0), baseline_trials)
    return ShuffleStudyResult(
        MatchReport.from_scores(mean_scores), tuple(reports), baseline
    )
