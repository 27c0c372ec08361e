"""Converter for annotated multi-domain corpora.

Accepts per-turn records with a per-domain belief state (``semi`` and
``book`` sections), user/system acts as [intent, domain, slot] triples,
and database pointers. State slots the user has filled become
``usr_inform``/``known`` atoms, unfilled ones ``unknown``; acts in the
``general`` domain are dropped; select/recommend/offerbook all count as
inform. Each turn yields one sample per involved domain; predictions are
meant to be recombined across domains afterwards.
"""

from __future__ import annotations

import itertools
from typing import Sequence

from .dialog import SampleRecord
from .engine import Sample
from .logic import Atom, Predicate, Term, atom

GENERAL_DOMAIN = "general"

SLOT_RENAMES = {"pricerange": "price"}

_EMPTY_VALUES = ("", "not mentioned", "none", "not_mentioned")

_USER_INTENTS = {"inform": "inform", "request": "request"}

_SYSTEM_INTENTS = {
    "inform": "sys_inform",
    "select": "sys_inform",
    "recommend": "sys_inform",
    "offerbook": "sys_inform",
    "request": "sys_request",
    "nooffer": "nooffer",
    "offerbooked": "offerbooked",
}

MULTIWOZ_TARGETS = (
    Predicate("sys_inform", 1),
    Predicate("sys_request", 1),
    Predicate("nooffer", 0),
    Predicate("offerbooked", 0),
    Predicate("offerbooked", 1),
)


class SchemaError(ValueError):
    def __init__(self, message: str, turn: int | None = None):
        if turn is not None:
            message = f"turn {turn}: {message}"
        super().__init__(message)
        self.turn = turn


def normalize_slot(slot: str) -> str | None:
    slot = slot.strip().lower().replace(" ", "_").replace("-", "_")
    if slot in ("none", "", "?"):
        return None
    return SLOT_RENAMES.get(slot, slot)


def _filled(value) -> bool:
    return str(value).strip().lower() not in _EMPTY_VALUES


def encode_multiwoz_state(domain_state: dict) -> frozenset[Atom]:
    """One domain's belief-state section as atoms.

    Filled slots yield ``usr_inform(s)`` and ``known(s)``; unfilled ones
    ``unknown(s)``. Booking sub-fields are treated the same way.
    """
    out: set[Atom] = set()

    def add(slot_raw: str, value) -> None:
        slot = normalize_slot(slot_raw)
        if slot is None:
            return
        if _filled(value):
            out.add(atom("usr_inform", slot))
            out.add(atom("known", slot))
        else:
            out.add(atom("unknown", slot))

    for slot, value in domain_state.get("semi", {}).items():
        add(slot, value)
    for slot, value in domain_state.get("book", {}).items():
        if slot == "booked":
            continue
        add(slot, value)
    return frozenset(out)


def domain_slots(domain_state: dict) -> tuple[str, ...]:
    slots: list[str] = []
    for section in ("semi", "book"):
        for raw in domain_state.get(section, {}):
            if raw == "booked":
                continue
            s = normalize_slot(raw)
            if s is not None and s not in slots:
                slots.append(s)
    return tuple(slots)


def encode_act_triples(
    triples: Sequence[Sequence[str]], side: str, turn: int | None = None
) -> dict[str, set[Atom]]:
    """[intent, domain, slot] triples to atoms, grouped by domain."""
    table = _USER_INTENTS if side == "user" else _SYSTEM_INTENTS
    out: dict[str, set[Atom]] = {}
    for triple in triples:
        if len(triple) != 3:
            raise SchemaError(f"malformed act triple {triple!r}", turn)
        intent, domain, slot_raw = (str(x).strip().lower() for x in triple)
        if domain == GENERAL_DOMAIN:
            continue
        if intent not in table:
            raise SchemaError(f"unknown {side} intent {intent!r}", turn)
        pred = table[intent]
        slot = normalize_slot(slot_raw)
        atoms = out.setdefault(domain, set())
        if pred in ("nooffer",):
            atoms.add(atom("nooffer"))
        elif pred == "offerbooked":
            atoms.add(atom("offerbooked", slot) if slot else atom("offerbooked"))
        else:
            if slot is None:
                # Slotless inform/request annotations carry no entity; drop.
                continue
            atoms.add(atom(pred, slot))
    return out


def convert_multiwoz_turn(
    turn_record: dict, turn_index: int = 0
) -> list[tuple[str, Sample]]:
    """One annotated turn to per-domain samples.

    Training supervision comes from the system acts; the belief state is
    split by domain and each involved domain gets its own sample over its
    own slot constants.
    """
    state = turn_record.get("state", {})
    if not isinstance(state, dict):
        raise SchemaError("state must be a mapping of domains", turn_index)
    user_atoms = encode_act_triples(
        turn_record.get("user_acts", []), "user", turn_index
    )
    system_atoms = encode_act_triples(
        turn_record.get("system_acts", []), "system", turn_index
    )
    db = turn_record.get("db", {})
    domains = sorted(set(state) | set(user_atoms) | set(system_atoms))
    out: list[tuple[str, Sample]] = []
    for domain in domains:
        if domain == GENERAL_DOMAIN:
            continue
        domain_state = state.get(domain, {})
        background = set(encode_multiwoz_state(domain_state))
        background |= user_atoms.get(domain, set())
        pointer = db.get(domain, {}) if isinstance(db, dict) else {}
        if pointer.get("no_match"):
            background.add(atom("no_match"))
        if pointer.get("book_fail"):
            background.add(atom("book_fail"))
        positives = system_atoms.get(domain, set())
        constants = domain_slots(domain_state)
        extra = sorted(
            {
                t.label
                for a in itertools.chain(background, positives)
                for t in a.args
                if t.label not in constants
            }
        )
        constants = constants + tuple(extra)
        if not constants:
            continue
        negatives: set[Atom] = set()
        for p in MULTIWOZ_TARGETS:
            for combo in itertools.product(constants, repeat=p.arity):
                a = Atom(p, tuple(Term.const(c) for c in combo))
                if a not in positives:
                    negatives.add(a)
        out.append(
            (domain, Sample.make(background, positives, negatives, constants))
        )
    return out


def convert_multiwoz(dialog_record: dict) -> list[tuple[str, Sample]]:
    """Whole annotated dialog to (domain, sample) pairs, in turn order."""
    turns = dialog_record.get("turns")
    if not isinstance(turns, list):
        raise SchemaError("dialog record needs a 'turns' list")
    out: list[tuple[str, Sample]] = []
    for i, t in enumerate(turns):
        out.extend(convert_multiwoz_turn(t, i))
    return out


def convert_multiwoz_records(
    dialog_record: dict, dialog_id: str = "0"
) -> list[SampleRecord]:
    """Like :func:`convert_multiwoz` but with meta for recombination."""
    turns = dialog_record.get("turns")
    if not isinstance(turns, list):
        raise SchemaError("dialog record needs a 'turns' list")
    records = []
    for i, t in enumerate(turns):
        for domain, sample in convert_multiwoz_turn(t, i):
            records.append(
                SampleRecord(
                    sample,
                    meta={
                        "dialog": dialog_id,
                        "turn": i,
                        "domain": domain,
                        "supervised": bool(sample.positive),
                        "format": "multiwoz",
                    },
                )
            )
    return records
