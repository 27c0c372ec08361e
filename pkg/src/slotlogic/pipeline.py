"""End-to-end workflow pieces shared by the CLI and the test harness.

The slot-filling setup wires the dialog adapter's predicate vocabulary
to the engine: list-membership and all-known background clauses (the
property predicate re-targeted at ``known``), one clause slot per
learnable predicate, and two invented helper predicates through which
the query rule can see "every user slot is filled".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

from .background import background_library, rename_predicate
from .dialog import (
    STRUCTURAL,
    SIMDIAL_TARGETS,
    Dialog,
    SampleRecord,
    build_sample,
)
from .engine import Hyperparams, Sample, TrainedModel, train
from .extract import PolicyProgram, crisp_infer, extract_program
from .logic import Clause, LanguageFrame, Predicate, atom
from .metrics import MetricsReport, evaluate_turns
from .simulator import DOMAINS
from .templates import ProgramTemplate, RuleTemplate

log = logging.getLogger(__name__)

SIMDIAL_EXTENSIONAL = (
    Predicate("known", 1),
    Predicate("unknown", 1),
    Predicate("terminal", 1),
    Predicate("usr_slots", 1),
    Predicate("succ", 2),
    Predicate("inform", 1),
    Predicate("request", 1),
    Predicate("requested", 1),
    Predicate("kb_return", 1),
)

AUX_ALL_KNOWN = Predicate("pred2", 0)
AUX_OPEN_GOAL = Predicate("pred3", 1)


def simdial_frame() -> LanguageFrame:
    return LanguageFrame(targets=SIMDIAL_TARGETS, extensional=SIMDIAL_EXTENSIONAL)


def simdial_background() -> tuple[tuple[Clause, ...], tuple[Predicate, ...]]:
    """Background clauses plus the derived predicates rule bodies may use."""
    all_rules = rename_predicate(background_library("all"), "true", "known")
    member_rules = background_library("member")
    pool = (Predicate("all", 1), Predicate("member_usr", 1))
    return all_rules + member_rules, pool


def simdial_template(forward_steps: int = 14) -> ProgramTemplate:
    # The all-known check walks the slot chain at two rounds per node
    # (helper then head), so depth 2k+5 must fit for k user slots; 14
    # covers four-slot domains with margin.
    return ProgramTemplate(
        slots=(
            (Predicate("sys_request", 1), (RuleTemplate(0, False),)),
            (Predicate("sys_inform", 1), (RuleTemplate(0, False),)),
            (Predicate("sys_query", 1), (RuleTemplate(0, True),)),
            (AUX_ALL_KNOWN, (RuleTemplate(1, False),)),
            (AUX_OPEN_GOAL, (RuleTemplate(0, True),)),
        ),
        auxiliary=(AUX_ALL_KNOWN, AUX_OPEN_GOAL),
        forward_steps=forward_steps,
    )


RESTART_TARGET = 0.01


def simdial_hyperparams(**overrides) -> Hyperparams:
    # Zero init keeps data-equivalent clauses exactly tied, so pool order
    # (canonical clause text) settles them reproducibly.
    base = dict(
        learning_rate=0.5,
        training_steps=1200,
        reg_kind="l2",
        reg_lambda=1e-5,
        seed=0,
        init_scale=0.0,
        amalgamation="max",
        stop_loss=None,
    )
    base.update(overrides)
    return Hyperparams(**base)


# ---------------------------------------------------------------------------
# Conversion.

def convert_corpus(dialogs: Sequence[Dialog]) -> list[SampleRecord]:
    """All turns of all dialogs, unsupervised ones flagged for eval only."""
    records = []
    for di, d in enumerate(dialogs):
        spec = DOMAINS[d.domain]
        for ti, turn in enumerate(d.turns):
            sample = build_sample(turn, spec, allow_empty_positive=True)
            records.append(
                SampleRecord(
                    sample,
                    meta={
                        "dialog": di,
                        "turn": ti,
                        "domain": d.domain,
                        "supervised": bool(sample.positive),
                        "correction": turn.correction,
                        "gold_acts": [[a.intent, a.slot] for a in turn.system_acts],
                        "slots": list(spec.slots),
                        "format": "simdial",
                    },
                )
            )
    return records


def training_samples(records: Sequence[SampleRecord]):
    kept = [r.sample for r in records if r.meta.get("supervised", True)]
    skipped = len(records) - len(kept)
    if skipped:
        log.warning("skipping %d unsupervised turns for training", skipped)
    return kept


# ---------------------------------------------------------------------------
# Training with deterministic restarts.

def train_policy(
    samples,
    hp: Hyperparams | None = None,
    template: ProgramTemplate | None = None,
    restarts: int = 1,
    target_loss: float = RESTART_TARGET,
) -> TrainedModel:
    """Train the slot-filling model; restart with stepped seeds until one
    run reaches ``target_loss`` and keep the lowest-loss run (all seeds
    derive from hp.seed, so reruns match bit for bit)."""
    hp = hp or simdial_hyperparams()
    template = template or simdial_template()
    frame = simdial_frame()
    background, pool = simdial_background()
    best: TrainedModel | None = None
    for k in range(max(1, restarts)):
        hp_k = replace(hp, seed=hp.seed + 1009 * k)
        model = train(frame, samples, template, hp_k, background, pool)
        log.info("restart %d: final loss %.6f", k, model.final_loss)
        if best is None or model.final_loss < best.final_loss:
            best = model
        if best.final_loss < target_loss:
            break
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# Prediction and evaluation.

_ACT_OF = {
    "sys_request": "request",
    "sys_inform": "inform",
    "sys_query": "query",
    "nooffer": "nooffer",
    "offerbooked": "offerbooked",
}


def predict_record(program: PolicyProgram, record: SampleRecord) -> dict:
    """Crisp-derive system acts for one sample; structural or non-slot
    constants never decode, they are reported in ``rejected``."""
    derived = crisp_infer(program, record.sample.background, record.sample.constants)
    slots = record.meta.get("slots")
    acts: list[tuple[str, str | None]] = []
    rejected: list[str] = []
    for a in sorted(derived, key=str):
        intent = _ACT_OF.get(a.predicate.name)
        if intent is None:
            rejected.append(str(a))
            continue
        slot = a.args[0].label if a.args else None
        if slot is not None and (
            slot in STRUCTURAL or (slots is not None and slot not in slots)
        ):
            rejected.append(str(a))
            continue
        acts.append((intent, slot))
    acts = sorted(set(acts), key=lambda x: (x[0], x[1] or ""))
    return {
        "meta": record.meta,
        "atoms": [str(a) for a in sorted(derived, key=str)],
        "acts": [[i, s] for i, s in acts],
        "rejected": rejected,
    }


def predict_records(program: PolicyProgram, records: Sequence[SampleRecord]) -> list[dict]:
    return [predict_record(program, r) for r in records]


def evaluate_predictions(
    predictions: Sequence[dict], gold_records: Sequence[SampleRecord]
) -> MetricsReport:
    """Group per (dialog, turn), union acts across domain splits, score."""
    golds: dict[tuple, set] = {}
    domains: dict[tuple, set] = {}
    order: list[tuple] = []
    for r in gold_records:
        key = (r.meta.get("dialog", id(r)), r.meta.get("turn", 0))
        if key not in golds:
            golds[key] = set()
            domains[key] = set()
            order.append(key)
        golds[key].update(
            (i, s) for i, s in r.meta.get("gold_acts", [])
        )
        domains[key].add(r.meta.get("domain", "unknown"))
    preds: dict[tuple, set] = {k: set() for k in golds}
    for p in predictions:
        meta = p.get("meta", {})
        key = (meta.get("dialog"), meta.get("turn", 0))
        if key not in preds:
            preds[key] = set()
            golds.setdefault(key, set())
            domains.setdefault(key, {meta.get("domain", "unknown")})
            order.append(key)
        preds[key].update((i, s) for i, s in p.get("acts", []))
    turns = []
    labels = []
    for key in order:
        turns.append((sorted(preds[key]), sorted(golds[key])))
        labels.append("+".join(sorted(domains[key])))
    return evaluate_turns(turns, labels)


def evaluate_program_on_corpus(
    program: PolicyProgram, dialogs: Sequence[Dialog]
) -> tuple[MetricsReport, list[dict]]:
    records = convert_corpus(dialogs)
    predictions = predict_records(program, records)
    return evaluate_predictions(predictions, records), predictions


# ---------------------------------------------------------------------------
# The list-"all" learning problem: from one labeled example over two
# successor chains, induce that a node satisfies "all" when the tracked
# property holds from it through to the terminal. Needs one invented
# helper predicate and recursion.

def list_all_problem() -> tuple[LanguageFrame, Sample, ProgramTemplate]:
    allp = Predicate("all", 1)
    helper = Predicate("pred1", 2)
    frame = LanguageFrame(
        targets=(allp,),
        extensional=(Predicate("true", 1), Predicate("succ", 2), Predicate("terminal", 1)),
    )
    constants = tuple("abcdefgh") + ("t",)
    links = [("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("e", "t"),
             ("f", "g"), ("g", "h"), ("h", "t")]
    background = [atom("terminal", "t")]
    background += [atom("succ", x, y) for x, y in links]
    background += [atom("true", x) for x in "acdefg"]
    sample = Sample.make(
        background,
        [atom("all", x) for x in "cde"],
        [atom("all", x) for x in "abfgh"],
        constants,
    )
    template = ProgramTemplate(
        slots=(
            (allp, (RuleTemplate(1, True),)),
            (helper, (RuleTemplate(0, True), RuleTemplate(0, True))),
        ),
        auxiliary=(helper,),
        forward_steps=12,
    )
    return frame, sample, template


def all_task_hyperparams(**overrides) -> Hyperparams:
    base = dict(
        learning_rate=0.5,
        training_steps=600,
        reg_kind="l2",
        reg_lambda=1e-5,
        seed=0,
        init_scale=0.5,
        accumulator_decay=0.9,
        stop_loss=5e-3,
    )
    base.update(overrides)
    return Hyperparams(**base)


def train_list_all(restarts: int = 12, seed: int = 0) -> TrainedModel:
    """Fit the list-"all" problem; random restarts until the loss target."""
    frame, sample, template = list_all_problem()
    best: TrainedModel | None = None
    for k in range(max(1, restarts)):
        hp = all_task_hyperparams(seed=seed + 1009 * k)
        model = train(frame, [sample], template, hp)
        log.info("all-task restart %d: loss %.5f", k, model.final_loss)
        if best is None or model.final_loss < best.final_loss:
            best = model
        if best.final_loss < 5e-3:
            break
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# One-shot convenience used by the acceptance workflow.

@dataclass
class OneShotResult:
    trained: TrainedModel
    program: PolicyProgram
    records: list[SampleRecord]


def simdial_one_shot(
    domain: str = "restaurant",
    hp: Hyperparams | None = None,
    restarts: int = 3,
    extra_dialogs: Sequence[Dialog] = (),
    threshold: float = 0.9,
) -> OneShotResult:
    from .simulator import representative_dialog

    dialogs = [representative_dialog(domain), *extra_dialogs]
    records = convert_corpus(dialogs)
    trained = train_policy(training_samples(records), hp=hp, restarts=restarts)
    program = extract_program(trained, threshold=threshold)
    return OneShotResult(trained, program, records)
