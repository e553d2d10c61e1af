"""Command-line entry point.

Subcommands: train, predict, evaluate, ensemble, grid,
analyze {pos,length,shuffle,baseline}, gradcheck, emb-info.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Every default matches the documented training setup (20 epochs,
batch 32, 128 BiLSTM units, 256 dense units), seeds are explicit flags, and
all output is byte-stable for identical inputs and seeds.

A key=value config file (--config) supplies defaults for any long flag of
the chosen subcommand; explicit flags win over the file, the file wins over
built-in defaults.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import Corpus, parse_corpus
from .embio import read_emb, validate_alignment
from .errors import DataFormatError, EmphaselError, NumericError
from .evaluation import (
    M_VALUES,
    MatchReport,
    length_report,
    match_report,
    pos_report,
    random_baseline,
)
from .ensemble import ensemble_predict, parse_ensemble_spec
from .experiments import format_grid_table, parse_grid_spec, run_grid, run_shuffle_study
from .model import (
    ModelConfig,
    backward,
    build_model,
    forward,
    load_checkpoint,
    model_from_checkpoint,
    predict_corpus,
    save_checkpoint,
)
from .nn import grad_check, kl_loss
from .rng import SplitMix64, derive
from .training import train

GRADCHECK_TOLERANCE = 1e-4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exception, not sys.exit(2)."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="emphasel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"emphasel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="key=value file supplying flag defaults")

    def model_flags(p):
        p.add_argument("--head", choices=("bilstm", "dense"))
        p.add_argument("--hidden", type=int, dest="hidden_units")
        p.add_argument("--dense-units", type=int, dest="dense_units")
        p.add_argument("--lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--seed", type=int)
        p.add_argument("--adapter", action="store_true", default=None)

    def format_flag(p):
        p.add_argument("--format", choices=("table", "kv"), dest="out_format")

    p = sub.add_parser("train", help="train one model and store the best-epoch checkpoint")
    common(p)
    p.add_argument("--train-corpus", type=Path, required=True)
    p.add_argument("--train-emb", type=Path, required=True)
    p.add_argument("--dev-corpus", type=Path, required=True)
    p.add_argument("--dev-emb", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint output path")
    p.add_argument("--history", type=Path, help="optional per-epoch history output")
    model_flags(p)

    p = sub.add_parser("predict", help="per-token emphasis scores from a checkpoint")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--emb", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write scores here instead of stdout")

    p = sub.add_parser("evaluate", help="match scores of a checkpoint on a corpus")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--emb", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    format_flag(p)

    p = sub.add_parser("ensemble", help="evaluate a model ensemble")
    common(p)
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--predictions-out", type=Path, help="optional combined score dump")
    format_flag(p)

    p = sub.add_parser("grid", help="run an architecture/embedding grid")
    common(p)
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--train-corpus", type=Path, required=True)
    p.add_argument("--dev-corpus", type=Path, required=True)

    analyze = sub.add_parser("analyze", help="corpus and model analyses")
    asub = analyze.add_subparsers(dest="analysis", required=True)

    p = asub.add_parser("pos", help="mean emphasis per POS tag (humans, optional model)")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--emb", type=Path)
    p.add_argument("--ckpt", type=Path)
    format_flag(p)

    p = asub.add_parser("length", help="match average per instance-length bucket")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--emb", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    format_flag(p)

    p = asub.add_parser("shuffle", help="train on order-shuffled data, score on clean dev")
    common(p)
    p.add_argument("--train-corpus", type=Path, required=True)
    p.add_argument("--train-emb", type=Path, required=True)
    p.add_argument("--dev-corpus", type=Path, required=True)
    p.add_argument("--dev-emb", type=Path, required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--trials", type=int, help="random-baseline trials")
    model_flags(p)
    format_flag(p)

    p = asub.add_parser("baseline", help="uniform-random score baseline")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    format_flag(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of a whole model")
    common(p)
    p.add_argument("--head", choices=("bilstm", "dense"))
    p.add_argument("--dim", type=int)
    p.add_argument("--hidden", type=int, dest="hidden_units")
    p.add_argument("--dense-units", type=int, dest="dense_units")
    p.add_argument("--n", type=int, dest="n_tokens", help="sequence length")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--adapter", action="store_true", default=None)

    p = sub.add_parser("emb-info", help="describe an embedding file")
    common(p)
    p.add_argument("--emb", type=Path, required=True)
    p.add_argument("--corpus", type=Path, help="also validate alignment against this corpus")

    return parser


# Built-in defaults applied after any --config file (flags always win).
_DEFAULTS = {
    "head": "bilstm",
    "hidden_units": 128,
    "dense_units": 256,
    "lr": 3e-4,
    "momentum": 0.0,
    "epochs": 20,
    "batch_size": 32,
    "seed": 1234,
    "adapter": False,
    "out_format": "table",
    "runs": 5,
    "trials": 100,
    "dim": 8,
    "n_tokens": 5,
    "eps": 1e-5,
}

_CASTS = {
    "head": str,
    "hidden_units": int,
    "dense_units": int,
    "lr": float,
    "momentum": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "adapter": lambda s: s.strip().lower() in ("1", "true", "yes"),
    "out_format": str,
    "runs": int,
    "trials": int,
    "dim": int,
    "n_tokens": int,
    "eps": float,
}


def _load_config_file(path: Path) -> dict[str, str]:
    values = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}:{line_no}: expected key=value, got {line!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then from built-in defaults."""
    overlay = {}
    if getattr(args, "config", None) is not None:
        overlay = _load_config_file(args.config)
    for dest, default in _DEFAULTS.items():
        if not hasattr(args, dest):
            continue
        if getattr(args, dest) is None:
            if dest in overlay:
                setattr(args, dest, _CASTS[dest](overlay[dest]))
            else:
                setattr(args, dest, default)
    return args


def _load_corpus(path: Path, split_name: str | None = None) -> Corpus:
    return parse_corpus(path.read_bytes(), split_name or path.stem)


def _model_config(args, input_dim: int) -> ModelConfig:
    return ModelConfig(
        head=args.head,
        input_dim=input_dim,
        hidden_units=args.hidden_units,
        dense_units=args.dense_units,
        lr=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        adapter=args.adapter,
    )


def _emit(text: str, out: Path | None = None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _report_text(report: MatchReport, out_format: str) -> str:
    return report.as_kv() if out_format == "kv" else report.as_table()


def _kv_inline(report: MatchReport) -> str:
    parts = [f"m{m}={s!r}" for m, s in zip(M_VALUES, report.m_scores)]
    parts.append(f"average={report.average!r}")
    return " ".join(parts)


def _prediction_lines(c: Corpus, preds) -> str:
    lines = []
    for inst, scores in zip(c.instances, preds):
        for tok, s in zip(inst.tokens, scores):
            lines.append(f"{inst.id}\t{tok.index}\t{tok.text}\t{s:.6f}")
    return "\n".join(lines) + "\n"


def _cmd_train(args) -> int:
    train_c = _load_corpus(args.train_corpus, "train")
    train_ef = read_emb(args.train_emb.read_bytes())
    dev_c = _load_corpus(args.dev_corpus, "dev")
    dev_ef = read_emb(args.dev_emb.read_bytes())
    cfg = _model_config(args, train_ef.dim)
    ckpt, history = train(cfg, (train_c, train_ef), (dev_c, dev_ef))
    args.out.write_bytes(save_checkpoint(ckpt))
    if args.history is not None:
        args.history.write_text(history.serialize(), encoding="utf-8")
    sys.stdout.write(
        f"best_epoch={ckpt.best_epoch} dev_match_average={ckpt.dev_match_average!r}\n"
    )
    return 0


def _load_model_inputs(args):
    c = _load_corpus(args.corpus)
    ef = read_emb(args.emb.read_bytes())
    validate_alignment(c, ef)
    model = model_from_checkpoint(load_checkpoint(args.ckpt.read_bytes()))
    return c, ef, model


def _cmd_predict(args) -> int:
    c, ef, model = _load_model_inputs(args)
    _emit(_prediction_lines(c, predict_corpus(model, ef)), args.out)
    return 0


def _cmd_evaluate(args) -> int:
    c, ef, model = _load_model_inputs(args)
    report = match_report(c, predict_corpus(model, ef))
    _emit(_report_text(report, args.out_format))
    return 0


def _cmd_ensemble(args) -> int:
    spec = parse_ensemble_spec(args.spec)
    c = _load_corpus(args.corpus)
    preds = ensemble_predict(spec, c)
    if args.predictions_out is not None:
        _emit(_prediction_lines(c, preds), args.predictions_out)
    _emit(_report_text(match_report(c, preds), args.out_format))
    return 0


def _cmd_grid(args) -> int:
    spec = parse_grid_spec(args.spec)
    train_c = _load_corpus(args.train_corpus, "train")
    dev_c = _load_corpus(args.dev_corpus, "dev")
    results = run_grid(spec, train_c, dev_c)
    table = format_grid_table(results)
    (spec.out_dir / "grid_results.tsv").write_text(table, encoding="utf-8")
    _emit(table)
    return 0


def _cmd_analyze_pos(args) -> int:
    c = _load_corpus(args.corpus)
    preds = None
    if (args.emb is None) != (args.ckpt is None):
        raise _UsageError("analyze pos: --emb and --ckpt must be given together")
    if args.emb is not None:
        ef = read_emb(args.emb.read_bytes())
        validate_alignment(c, ef)
        model = model_from_checkpoint(load_checkpoint(args.ckpt.read_bytes()))
        preds = predict_corpus(model, ef)
    report = pos_report(c, preds)
    _emit(report.as_kv() if args.out_format == "kv" else report.as_table())
    return 0


def _cmd_analyze_length(args) -> int:
    c, ef, model = _load_model_inputs(args)
    report = length_report(c, predict_corpus(model, ef))
    _emit(report.as_kv() if args.out_format == "kv" else report.as_table())
    return 0


def _cmd_analyze_shuffle(args) -> int:
    train_c = _load_corpus(args.train_corpus, "train")
    train_ef = read_emb(args.train_emb.read_bytes())
    dev_c = _load_corpus(args.dev_corpus, "dev")
    dev_ef = read_emb(args.dev_emb.read_bytes())
    cfg = _model_config(args, train_ef.dim)
    result = run_shuffle_study(
        cfg, (train_c, train_ef), (dev_c, dev_ef), runs=args.runs, baseline_trials=args.trials
    )
    if args.out_format == "kv":
        lines = [
            f"run{r} {_kv_inline(rep)}" for r, rep in enumerate(result.run_reports, start=1)
        ]
        lines.append(f"shuffled {_kv_inline(result.mean_report)}")
        lines.append(f"baseline {_kv_inline(result.baseline)}")
        text = "\n".join(lines) + "\n"
    else:
        header = "Row\tM1\tM2\tM3\tM4\tAverage"
        rows = [header]
        for r, rep in enumerate(result.run_reports, start=1):
            rows.append(f"run{r}\t{rep.as_row()}")
        rows.append(f"shuffled-mean\t{result.mean_report.as_row()}")
        rows.append(f"random\t{result.baseline.as_row()}")
        text = "\n".join(rows) + "\n"
    _emit(text)
    return 0


def _cmd_analyze_baseline(args) -> int:
    c = _load_corpus(args.corpus)
    report = random_baseline(c, args.seed, args.trials)
    _emit(_report_text(report, args.out_format))
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = ModelConfig(
        head=args.head,
        input_dim=args.dim,
        hidden_units=args.hidden_units,
        dense_units=args.dense_units,
        seed=args.seed,
        adapter=args.adapter,
    )
    model = build_model(cfg)
    rng = SplitMix64(derive(args.seed, 0xDA7A))
    x = 2.0 * rng.next_float_block(args.n_tokens * args.dim).reshape(args.n_tokens, args.dim) - 1.0
    target = np.empty((args.n_tokens, 2))
    target[:, 0] = rng.next_float_block(args.n_tokens)
    target[:, 1] = 1.0 - target[:, 0]

    def loss_fn() -> float:
        probs, cache = forward(model, x)
        losses = kl_loss(target, probs)
        loss = float(np.mean(losses))
        backward(model, cache, (probs - target) / args.n_tokens)
        return loss

    worst = grad_check(loss_fn, model.parameters(), eps=args.eps)
    sys.stdout.write(f"max_rel_err={worst!r}\n")
    if worst < GRADCHECK_TOLERANCE:
        return 0
    sys.stderr.write(f"gradient check failed: {worst!r} >= {GRADCHECK_TOLERANCE}\n")
    return 3


def _cmd_emb_info(args) -> int:
    ef = read_emb(args.emb.read_bytes())
    token_counts = [mat.shape[0] for mat in ef.per_instance]
    sys.stdout.write(f"source_tag={ef.source_tag}\n")
    sys.stdout.write(f"dim={ef.dim}\n")
    sys.stdout.write(f"instances={len(ef)}\n")
    sys.stdout.write(f"tokens={sum(token_counts)}\n")
    if token_counts:
        sys.stdout.write(f"min_tokens={min(token_counts)}\n")
        sys.stdout.write(f"max_tokens={max(token_counts)}\n")
    if args.corpus is not None:
        validate_alignment(_load_corpus(args.corpus), ef)
        sys.stdout.write("alignment=ok\n")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "ensemble": _cmd_ensemble,
    "grid": _cmd_grid,
    "gradcheck": _cmd_gradcheck,
    "emb-info": _cmd_emb_info,
}

_ANALYSES = {
    "pos": _cmd_analyze_pos,
    "length": _cmd_analyze_length,
    "shuffle": _cmd_analyze_shuffle,
    "baseline": _cmd_analyze_baseline,
}


def run(argv: list[str]) -> int:
    """Dispatch a command line; returns the process exit status."""
    parser = _build_parser()
    try:
        args = _resolve(parser.parse_args(argv))
        if args.command == "analyze":
            return _ANALYSES[args.analysis](args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except SystemExit as exc:  # argparse --help/--version
        return int(exc.code or 0)
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 3
    except (EmphaselError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
