"""Conversion between annotated dialog turns and logical samples.

The belief state encodes user slots as a successor chain hanging off the
structural head node so rules can quantify over "the user slots" without
naming any; system slots get plain known/unknown flags. Acts map to
atoms whose predicate is the act and whose argument is the slot.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .engine import Sample
from .logic import Atom, Predicate, Term, atom, format_atom

log = logging.getLogger(__name__)

TERM = "term"
USR_HEAD = "usr_slot"
STRUCTURAL = (TERM, USR_HEAD)

USER_INTENTS = ("inform", "request")
SYSTEM_INTENTS = ("inform", "request", "query", "nooffer", "offerbooked")

SYSTEM_PREDICATES = {
    "inform": "sys_inform",
    "request": "sys_request",
    "query": "sys_query",
}

SIMDIAL_TARGETS = (
    Predicate("sys_request", 1),
    Predicate("sys_inform", 1),
    Predicate("sys_query", 1),
)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    user_slots: tuple[str, ...]
    system_slots: tuple[str, ...]

    def __post_init__(self):
        if not self.user_slots or not self.system_slots:
            raise ValueError("user_slots and system_slots must be nonempty")
        all_slots = self.user_slots + self.system_slots
        if len(set(all_slots)) != len(all_slots):
            raise ValueError(f"duplicate slot in domain {self.name}")
        for s in all_slots:
            if s in STRUCTURAL:
                raise ValueError(f"slot {s!r} collides with a structural constant")

    @property
    def slots(self) -> tuple[str, ...]:
        return self.user_slots + self.system_slots

    def constants(self) -> tuple[str, ...]:
        return self.slots + STRUCTURAL


@dataclass
class BeliefState:
    """Tracker output before the system acts.

    ``outstanding`` holds goals the user has asked for whose answer has
    not come back from the database yet; ``kb_return`` holds slots the
    database returned on the preceding query.
    """

    user_known: dict[str, bool]
    sys_known: dict[str, bool]
    kb_return: tuple[str, ...] = ()
    outstanding: tuple[str, ...] = ()
    no_match: bool = False
    book_fail: bool = False


@dataclass(frozen=True, order=True)
class DialogAct:
    intent: str
    slot: str | None = None

    def __post_init__(self):
        if self.intent == "nooffer" and self.slot is not None:
            raise ValueError("nooffer carries no slot")


@dataclass
class Turn:
    state: BeliefState
    user_acts: list[DialogAct]
    system_acts: list[DialogAct]
    domain: str
    correction: bool = False


@dataclass
class Dialog:
    domain: str
    turns: list[Turn]


# ---------------------------------------------------------------------------
# Encoding.

def encode_state(state: BeliefState, spec: DomainSpec) -> frozenset[Atom]:
    """Belief state as ground atoms: the user-slot chain plus flags."""
    for s in itertools.chain(state.user_known, state.sys_known):
        if s not in spec.slots:
            raise ValueError(f"slot {s!r} not in domain {spec.name}")
    out: set[Atom] = {atom("terminal", TERM), atom("usr_slots", USR_HEAD)}
    prev = USR_HEAD
    for s in spec.user_slots:
        out.add(atom("succ", prev, s))
        prev = s
    out.add(atom("succ", prev, TERM))
    out.add(atom("known", USR_HEAD))
    for s in spec.user_slots:
        out.add(atom("known" if state.user_known.get(s, False) else "unknown", s))
    for s in spec.system_slots:
        out.add(atom("known" if state.sys_known.get(s, False) else "unknown", s))
    for s in state.kb_return:
        if s not in spec.system_slots:
            raise ValueError(f"kb_return slot {s!r} is not a system slot")
        out.add(atom("kb_return", s))
    for s in state.outstanding:
        if s not in spec.system_slots:
            raise ValueError(f"outstanding slot {s!r} is not a system slot")
        out.add(atom("requested", s))
    if state.no_match:
        out.add(atom("no_match"))
    if state.book_fail:
        out.add(atom("book_fail"))
    return frozenset(out)


def _normalize_intent(intent: str, side: str) -> str:
    if side == "system" and intent.startswith("sys_"):
        intent = intent[4:]
    return intent


def encode_acts(acts: Sequence[DialogAct], side: str) -> frozenset[Atom]:
    """Acts as atoms; the system side gets ``sys_``-prefixed predicates."""
    if side not in ("user", "system"):
        raise ValueError(f"side must be user or system, got {side!r}")
    out: set[Atom] = set()
    for act in acts:
        intent = _normalize_intent(act.intent, side)
        if side == "user":
            if intent not in USER_INTENTS:
                raise ValueError(f"unknown user intent {act.intent!r}")
            if act.slot is None:
                raise ValueError(f"user {intent} needs a slot")
            out.add(atom(intent, act.slot))
        else:
            if intent in SYSTEM_PREDICATES:
                if act.slot is None:
                    raise ValueError(f"system {intent} needs a slot")
                out.add(atom(SYSTEM_PREDICATES[intent], act.slot))
            elif intent == "nooffer":
                out.add(atom("nooffer"))
            elif intent == "offerbooked":
                out.add(
                    atom("offerbooked", act.slot)
                    if act.slot is not None
                    else atom("offerbooked")
                )
            else:
                raise ValueError(f"unknown system intent {act.intent!r}")
    return frozenset(out)


def closed_world_negatives(
    positives: Iterable[Atom],
    constants: Sequence[str],
    targets: Sequence[Predicate] = SIMDIAL_TARGETS,
) -> frozenset[Atom]:
    """Every target grounding that is not a positive."""
    pos = set(positives)
    out: set[Atom] = set()
    for p in targets:
        for combo in itertools.product(constants, repeat=p.arity):
            a = Atom(p, tuple(Term.const(c) for c in combo))
            if a not in pos:
                out.add(a)
    return frozenset(out)


def build_sample(
    turn: Turn,
    spec: DomainSpec,
    targets: Sequence[Predicate] = SIMDIAL_TARGETS,
    allow_empty_positive: bool = False,
) -> Sample | None:
    """Turn -> (background, positives, negatives, constants).

    Background is the encoded state plus the user acts; positives are the
    system acts; negatives are every other system-act grounding. Turns
    without system acts are unsupervised: None is returned (the skip
    signal) unless ``allow_empty_positive``.
    """
    positives = encode_acts(turn.system_acts, "system")
    if not positives and not allow_empty_positive:
        log.warning("skipping turn with no system acts (domain %s)", turn.domain)
        return None
    constants = spec.constants()
    background = encode_state(turn.state, spec) | encode_acts(turn.user_acts, "user")
    negatives = closed_world_negatives(positives, constants, targets)
    return Sample.make(background, positives, negatives, constants)


# ---------------------------------------------------------------------------
# Decoding.

_DECODE = {
    "sys_request": "request",
    "sys_inform": "inform",
    "sys_query": "query",
    "nooffer": "nooffer",
    "offerbooked": "offerbooked",
}


def decode_actions(derived: Iterable[Atom], spec: DomainSpec) -> list[DialogAct]:
    """Inverse of the system-side act encoding, sorted by (intent, slot)."""
    acts = []
    for a in sorted(derived, key=format_atom):
        intent = _DECODE.get(a.predicate.name)
        if intent is None:
            raise ValueError(f"{format_atom(a)} is not a system-act atom")
        if a.predicate.arity == 0:
            acts.append(DialogAct(intent))
            continue
        slot = a.args[0].label
        if slot not in spec.slots:
            raise ValueError(
                f"{format_atom(a)} names {slot!r}, which is not a slot of "
                f"domain {spec.name}"
            )
        acts.append(DialogAct(intent, slot))
    return sorted(acts, key=lambda x: (x.intent, x.slot or ""))


def decodable_atoms(
    derived: Iterable[Atom], spec: DomainSpec
) -> tuple[list[Atom], list[Atom]]:
    """Split derived atoms into decodable system acts and rejects."""
    good, bad = [], []
    for a in sorted(derived, key=format_atom):
        if a.predicate.name not in _DECODE:
            bad.append(a)
        elif a.predicate.arity == 1 and a.args[0].label not in spec.slots:
            bad.append(a)
        else:
            good.append(a)
    return good, bad


# ---------------------------------------------------------------------------
# Corpus and sample files (JSON lines).

def act_to_pair(a: DialogAct) -> list:
    return [a.intent, a.slot]


def act_from_pair(pair: Sequence) -> DialogAct:
    return DialogAct(pair[0], pair[1])


def dialog_to_dict(d: Dialog) -> dict:
    return {
        "domain": d.domain,
        "turns": [
            {
                "state": {
                    "user_slots": [[s, bool(v)] for s, v in t.state.user_known.items()],
                    "sys_slots": [[s, bool(v)] for s, v in t.state.sys_known.items()],
                    "kb_return": list(t.state.kb_return),
                    "outstanding": list(t.state.outstanding),
                    "no_match": t.state.no_match,
                    "book_fail": t.state.book_fail,
                },
                "user_acts": [act_to_pair(a) for a in t.user_acts],
                "system_acts": [act_to_pair(a) for a in t.system_acts],
                "correction": t.correction,
            }
            for t in d.turns
        ],
    }


def dialog_from_dict(d: dict) -> Dialog:
    turns = []
    for t in d["turns"]:
        state = BeliefState(
            user_known={s: bool(v) for s, v in t["state"]["user_slots"]},
            sys_known={s: bool(v) for s, v in t["state"]["sys_slots"]},
            kb_return=tuple(t["state"].get("kb_return", ())),
            outstanding=tuple(t["state"].get("outstanding", ())),
            no_match=bool(t["state"].get("no_match", False)),
            book_fail=bool(t["state"].get("book_fail", False)),
        )
        turns.append(
            Turn(
                state=state,
                user_acts=[act_from_pair(p) for p in t["user_acts"]],
                system_acts=[act_from_pair(p) for p in t["system_acts"]],
                domain=d["domain"],
                correction=bool(t.get("correction", False)),
            )
        )
    return Dialog(domain=d["domain"], turns=turns)


def save_corpus(dialogs: Sequence[Dialog], path) -> None:
    with open(path, "w") as f:
        for d in dialogs:
            f.write(json.dumps(dialog_to_dict(d), sort_keys=True) + "\n")


def load_corpus(path) -> list[Dialog]:
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                out.append(dialog_from_dict(json.loads(line)))
    return out


@dataclass
class SampleRecord:
    sample: Sample
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.sample.to_dict()
        d["meta"] = self.meta
        return d

    @staticmethod
    def from_dict(d: dict) -> "SampleRecord":
        meta = d.get("meta", {})
        return SampleRecord(Sample.from_dict(d), meta)


def save_samples(records: Sequence[SampleRecord], path) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_samples(path) -> list[SampleRecord]:
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                out.append(SampleRecord.from_dict(json.loads(line)))
    return out
