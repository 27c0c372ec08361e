"""Command-line pipeline: generate, convert, train, extract, transfer,
eval, gradcheck. Exit codes: 0 success, 2 validation error, 3 numeric
failure."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .dialog import load_corpus, load_samples, save_corpus, save_samples
from .engine import TrainedModel, TrainingDiverged
from .extract import extract_program, load_program, save_program
from .gradcheck import run_gradcheck
from .multiwoz import convert_multiwoz_records
from .simulator import DOMAINS, generate_corpus, representative_dialog
from .templates import template_from_dict

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

log = logging.getLogger("slotlogic")


def _cmd_generate(args) -> int:
    if args.representative:
        dialogs = [representative_dialog(args.domain)]
    else:
        dialogs = generate_corpus(
            args.domain,
            args.n,
            seed=args.seed,
            correction_probability=args.correction_prob,
            max_goal_requests=args.max_goals,
        )
    save_corpus(dialogs, args.out)
    log.info("wrote %d dialogs to %s", len(dialogs), args.out)
    return EXIT_OK


def _cmd_convert(args) -> int:
    if args.format == "simdial":
        dialogs = load_corpus(getattr(args, "in"))
        records = pipeline.convert_corpus(dialogs)
    else:
        records = []
        with open(getattr(args, "in")) as f:
            for i, line in enumerate(f):
                if line.strip():
                    records.extend(
                        convert_multiwoz_records(json.loads(line), dialog_id=str(i))
                    )
    if args.training_only:
        records = [r for r in records if r.meta.get("supervised", True)]
    save_samples(records, args.out)
    log.info("wrote %d samples to %s", len(records), args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    records = load_samples(args.samples)
    samples = pipeline.training_samples(records)
    hp = pipeline.simdial_hyperparams(
        learning_rate=args.lr,
        training_steps=args.steps,
        reg_kind=args.reg,
        reg_lambda=args.reg_lambda,
        seed=args.seed,
        init_scale=args.init_scale,
        amalgamation=args.amalgamation,
        stop_loss=args.stop_loss,
        accumulator_decay=args.acc_decay,
    )
    template = None
    if args.template:
        with open(args.template) as f:
            template = template_from_dict(json.load(f))
    trained = pipeline.train_policy(
        samples, hp=hp, template=template, restarts=args.restarts
    )
    trained.save(args.out)
    log.info("final loss %.6f -> %s", trained.final_loss, args.out)
    return EXIT_OK


def _cmd_extract(args) -> int:
    trained = TrainedModel.load(args.model)
    program = extract_program(trained, threshold=args.threshold)
    save_program(program, args.out)
    log.info("wrote %d rules to %s", len(program.rules), args.out)
    return EXIT_OK


def _cmd_transfer(args) -> int:
    program = load_program(args.program)
    records = load_samples(args.samples)
    predictions = pipeline.predict_records(program, records)
    with open(args.out, "w") as f:
        for p in predictions:
            f.write(json.dumps(p, sort_keys=True) + "\n")
    log.info("wrote %d predictions to %s", len(predictions), args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    gold = load_samples(args.gold)
    predictions = []
    with open(args.pred) as f:
        for line in f:
            if line.strip():
                predictions.append(json.loads(line))
    report = pipeline.evaluate_predictions(predictions, gold)
    with open(args.report, "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    print(report.summary())
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, instances=args.instances)
    print(
        f"gradcheck: {report.instances} instances, "
        f"{report.parameters} parameters, "
        f"max relative error {report.max_rel_error:.3e}"
    )
    if not report.ok(args.tolerance):
        print(f"exceeds tolerance {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slotlogic")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dialog corpus")
    g.add_argument("--domain", choices=sorted(DOMAINS), required=True)
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--correction-prob", type=float, default=0.2)
    g.add_argument("--max-goals", type=int, default=3)
    g.add_argument("--representative", action="store_true",
                   help="write the single all-intent training dialog")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    c = sub.add_parser("convert", help="corpus -> logical samples")
    c.add_argument("--format", choices=("simdial", "multiwoz"), required=True)
    c.add_argument("--in", dest="in", required=True)
    c.add_argument("--training-only", action="store_true")
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_convert)

    t = sub.add_parser("train", help="fit clause weights on samples")
    t.add_argument("--samples", required=True)
    t.add_argument("--template", help="program template JSON (default: slot-filling)")
    t.add_argument("--out", required=True)
    t.add_argument("--lr", type=float, default=0.5)
    t.add_argument("--steps", type=int, default=1200)
    t.add_argument("--reg", choices=("none", "l1", "l2"), default="l2")
    t.add_argument("--reg-lambda", type=float, default=1e-5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--init-scale", type=float, default=0.0)
    t.add_argument("--amalgamation", choices=("max", "sum"), default="max")
    t.add_argument("--stop-loss", type=float, default=None)
    t.add_argument("--acc-decay", type=float, default=None,
                   help="decay for the squared-gradient accumulator")
    t.add_argument("--restarts", type=int, default=3)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("extract", help="trained model -> symbolic program")
    e.add_argument("--model", required=True)
    e.add_argument("--threshold", type=float, default=0.9)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_extract)

    tr = sub.add_parser("transfer", help="apply a program file to samples")
    tr.add_argument("--program", required=True)
    tr.add_argument("--samples", required=True)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=_cmd_transfer)

    ev = sub.add_parser("eval", help="score predictions against gold samples")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gold", required=True)
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=_cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=100)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.set_defaults(func=_cmd_gradcheck)
    return p


def run_pipeline(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(json.dumps({"error": "divergence", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run_pipeline())


if __name__ == "__main__":
    main()
