"""Command-line entry points: ``qakt train|evaluate|crossval|synth|score-qmatrix|gradcheck``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SyntheticSpec, generate_synthetic, ingest, kfold, slice_sequences, write_interactions
from .errors import ConfigError, DataError, NumericError, QAKTError
from .model import QAKTModel
from .qmatrix import QMatrix, match_and_score, read_qmatrix, write_qmatrix
from .training import (
    BinarizationConfig, binarize, evaluate, frequency_baseline, run_ablation,
    run_experiment, run_sweep, train_phase, write_history,
)

OUTPUT_ROOT_ENV = "QAKT_OUTPUT_ROOT"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like configuration errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- config handling -------------------------------------------------------------

_FLAG_FIELDS = {
    "dim": "dim", "heads": "n_heads", "slice_length": "slice_length",
    "batch_size": "batch_size", "epochs": "max_epochs", "lr": "lr", "patience": "patience",
    "eta": "eta", "binarize_rule": "binarize_rule", "binarize_axis": "binarize_axis",
    "precision": "precision", "seed": "seed", "folds": "n_folds", "name": "name",
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(args, **forced):
    """Config file, then ``--set`` pairs, then dedicated flags; later sources win."""
    base = {}
    if getattr(args, "config", None):
        base = RunConfig.from_file(args.config).to_dict()
    for pair in getattr(args, "set", None) or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        base[key.strip()] = _parse_value(value)
    for flag, key in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    for flag in ("no_act", "no_avg", "no_ln"):
        if getattr(args, flag, False):
            base[flag] = True
    if getattr(args, "no_early_stopping", False):
        base["early_stopping"] = False
    base.update(forced)
    return RunConfig.from_dict(base)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field (repeatable)")
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--slice-length", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int, help="maximum epochs per phase")
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--no-early-stopping", action="store_true")
    p.add_argument("--eta", type=float)
    p.add_argument("--binarize-rule", choices=["threshold-ge", "paper-literal"])
    p.add_argument("--binarize-axis", choices=["question-column", "skill-row"])
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--name")
    p.add_argument("--no-act", action="store_true")
    p.add_argument("--no-avg", action="store_true")
    p.add_argument("--no-ln", action="store_true")
    p.add_argument("--out-dir", help="output directory (default $QAKT_OUTPUT_ROOT/<name>)")


def _out_dir(args, config):
    path = args.out_dir or os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "run"), config.name)
    os.makedirs(path, exist_ok=True)
    return path


def _header(config, **extra):
    return {"config_hash": config.hash(), "seed": config.seed, **extra}


def _write_text(path, config, body):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in _header(config).items():
            fh.write(f"# {k}={v}\n")
        fh.write(body)


def _load_log(path, question_index=None):
    if not os.path.exists(path):
        raise DataError(f"data file {path} does not exist")
    return ingest(path, question_index=question_index)


# -- commands ------------------------------------------------------------------

def cmd_train(args):
    log = _load_log(args.data)
    config = build_config(args, n_questions=log.n_questions,
                          **({"n_skills": args.skills} if args.skills else {}))
    injected = None
    if args.phase == 2:
        if not args.qmatrix:
            raise ConfigError("--phase 2 needs --qmatrix")
        injected = read_qmatrix(args.qmatrix).reorder(log.question_ids)
        if injected.n_skills != config.n_skills:
            config = config.updated(n_skills=injected.n_skills)
    elif args.qmatrix:
        raise ConfigError("--qmatrix is only used with --phase 2")
    if not 0 <= args.fold < config.n_folds:
        raise ConfigError(f"--fold must lie in [0, {config.n_folds})")
    out = _out_dir(args, config)
    split = kfold(log, config.n_folds, seed=config.seed)[args.fold]
    seqs = {r: slice_sequences(log.subset(s), config.slice_length) for r, s in split.roles().items()}

    model = QAKTModel(config)
    history = []
    if injected is None:
        r1 = train_phase(model, seqs["train"], seqs["validation"], config, 1, fold=split.experiment)
        history += r1.history
        entries = binarize(model.relevance(), BinarizationConfig.from_run_config(config))
    else:
        entries = injected.entries
    learned = QMatrix(entries, log.question_ids, [f"c{i + 1}" for i in range(config.n_skills)])
    if args.phase != 1:
        r2 = train_phase(model, seqs["train"], seqs["validation"], config, 2, fold=split.experiment,
                         frozen_qmatrix=learned.entries)
        history += r2.history

    save_checkpoint(os.path.join(out, "checkpoint.npz"), model, log.question_ids,
                    meta={**_header(config), "fold": split.experiment, "phase": args.phase or "both",
                          **{f"{role}_students": ids for role, ids in split.roles().items()}})
    write_qmatrix(learned, os.path.join(out, "qmatrix.csv"), header=_header(config))
    write_history(history, os.path.join(out, "history.csv"), config)
    lines = [f"phases: {args.phase or '1+2'}", f"fold: {split.experiment}",
             f"n_skills: {config.n_skills}", f"n_questions: {config.n_questions}"]
    if args.phase != 1:
        test_vals, _, _ = evaluate(model, seqs["test"], batch_size=config.batch_size)
        lines += [f"test_auc: {test_vals['AUC']:.6f}",
                  f"frequency_baseline_auc: {frequency_baseline(seqs['train'], seqs['test']):.6f}"]
    report = "\n".join(lines) + "\n"
    _write_text(os.path.join(out, "report.txt"), config, report)
    sys.stdout.write(report)
    return 0


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    qindex = {q: i + 1 for i, q in enumerate(ckpt.question_ids)}
    log = _load_log(args.data, question_index=qindex)
    if args.split != "all":
        ids = ckpt.meta.get(f"{args.split}_students")
        if ids is None:
            raise DataError(f"checkpoint records no {args.split} students")
        keep = set(ids) & set(log.students)
        if not keep:
            raise DataError(f"none of the checkpoint's {args.split} students appear in the data")
        log = log.subset(keep)
    seqs = slice_sequences(log, model.config.slice_length)
    values, probs, labels = evaluate(model, seqs, batch_size=model.config.batch_size)
    if np.isnan(values["AUC"]):
        raise DataError("evaluation data contains a single response class; AUC is undefined")
    sys.stdout.write(f"auc: {values['AUC']:.6f}\npositions: {labels.size}\n"
                     f"mean_bce: {values['L_p']:.6f}\n")
    return 0


def _parse_skill_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--skills expects comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigError("--skills needs positive skill counts")
    return values


def cmd_crossval(args):
    log = _load_log(args.data)
    skills = _parse_skill_list(args.skills) if args.skills else None
    forced = {"n_questions": log.n_questions}
    if skills and len(skills) == 1:
        forced["n_skills"] = skills[0]
    config = build_config(args, **forced)
    out = _out_dir(args, config)
    qmatrix = None
    if args.qmatrix:
        qmatrix = read_qmatrix(args.qmatrix).reorder(log.question_ids)
        config = config.updated(n_skills=qmatrix.n_skills)
    kwargs = {"jobs": args.jobs}
    if args.ablation:
        results = run_ablation(log, config, **kwargs)
    elif skills and len(skills) > 1:
        results = run_sweep(log, config, skills, **kwargs)
    else:
        results = [run_experiment(log, config, qmatrix=qmatrix, **kwargs)]
    rows = [row for res in results for fold in res.folds for row in fold.history]
    write_history(rows, os.path.join(out, "history.csv"), config)
    report = "".join(r.report() for r in results)
    _write_text(os.path.join(out, "report.txt"), config, report)
    if len(results) == 1 and qmatrix is None:
        # the q-matrix learned on the first fold
        q = QMatrix(results[0].folds[0].qmatrix, log.question_ids)
        write_qmatrix(q, os.path.join(out, "qmatrix.csv"), header=_header(config, fold=0))
    sys.stdout.write(report)
    return 0


def cmd_synth(args):
    if args.spec:
        spec = SyntheticSpec.from_file(args.spec)
    else:
        spec = SyntheticSpec()
    changes = {k: v for k, v in {
        "n_skills": args.skills, "n_questions": args.questions, "n_students": args.students,
        "interactions_per_student": args.length, "slip": args.slip, "guess": args.guess,
        "seed": args.seed, "learn_rate": args.learn_rate,
    }.items() if v is not None}
    spec = SyntheticSpec.from_dict({**spec.to_dict(), **changes})
    log, q = generate_synthetic(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    header = {"seed": spec.seed, "spec": json.dumps(spec.to_dict(), sort_keys=True)}
    inter = os.path.join(args.out_dir, "interactions.csv")
    qpath = os.path.join(args.out_dir, "qmatrix_true.csv")
    write_interactions(log, inter, header=header)
    write_qmatrix(q, qpath, header=header)
    sys.stdout.write(f"interactions: {inter}\nqmatrix: {qpath}\n")
    return 0


def cmd_score_qmatrix(args):
    learned = read_qmatrix(args.learned)
    truth = read_qmatrix(args.reference)
    if set(learned.question_ids) != set(truth.question_ids):
        raise DataError("the two q-matrices cover different questions")
    learned = learned.reorder(truth.question_ids)
    report = match_and_score(learned, truth, seed=args.seed)
    sys.stdout.write(report.to_text())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(f"# seed={args.seed}\n")
            fh.write(report.to_csv())
    return 0


def cmd_gradcheck(args):
    from .checks import full_loss_gradcheck, op_gradchecks

    report = full_loss_gradcheck(seed=args.seed, tolerance=args.tolerance)
    sys.stdout.write("full loss\n" + report.to_text())
    ok = report.passed
    if args.ops:
        for name, rep in op_gradchecks(seed=args.seed).items():
            sys.stdout.write(f"{name}: max_rel_error={rep.max_rel_error:.3e}\n")
            ok = ok and rep.passed
    if not ok:
        raise NumericError("gradient check failed")
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="qakt", description="Q-matrix-aware knowledge tracing.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="two-phase training on one fold split")
    p.add_argument("--data", required=True, help="interaction CSV")
    p.add_argument("--skills", type=int, help="number of latent skills N")
    p.add_argument("--phase", type=int, choices=[1, 2],
                   help="run only phase 1, or only phase 2 with --qmatrix")
    p.add_argument("--qmatrix", help="q-matrix CSV to inject for --phase 2")
    p.add_argument("--fold", type=int, default=0, help="which fold split to train on")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="AUC of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["all", "train", "validation", "test"], default="all",
                   help="restrict to one role of the fold split the checkpoint was trained on")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="k-fold cross-validation, sweep or ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--skills", help="skill count, or comma-separated list for a sweep")
    p.add_argument("--ablation", action="store_true", help="default, NoAct, NoAvg and NoLN")
    p.add_argument("--qmatrix", help="fixed q-matrix; phase 1 is skipped")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for folds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("synth", help="generate a DINA synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic spec")
    p.add_argument("--skills", type=int)
    p.add_argument("--questions", type=int)
    p.add_argument("--students", type=int)
    p.add_argument("--length", type=int, help="interactions per student")
    p.add_argument("--slip", type=float)
    p.add_argument("--guess", type=float)
    p.add_argument("--learn-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score-qmatrix", help="permutation-invariant q-matrix comparison")
    p.add_argument("learned")
    p.add_argument("reference")
    p.add_argument("--seed", type=int, default=0, help="seed of the random baseline")
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_score_qmatrix)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--ops", action="store_true", help="also check every primitive op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except QAKTError as exc:
        sys.stderr.write(f"qakt {args.command}: {exc}\n")
        return exc.exit_code
    except FileNotFoundError as exc:
        sys.stderr.write(f"qakt {args.command}: {exc}\n")
        return DataError.exit_code
    except FloatingPointError as exc:
        sys.stderr.write(f"qakt {args.command}: {exc}\n")
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
