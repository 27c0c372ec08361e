"""Candidate-clause enumeration from rule templates.

A rule template ``(v, i)`` controls how bodies are built for one head
predicate: ``v`` extra existentially quantified variables beyond the head
variables, and whether learnable (intensional) predicates may appear in
the body. A program template assigns one or two such slots to every
learnable predicate and fixes the forward-chaining depth.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterator, Sequence

from .logic import (
    Atom,
    Clause,
    LanguageFrame,
    Predicate,
    Term,
    UnsafeClauseError,
)

V_MAX = 2


@dataclass(frozen=True, order=True)
class RuleTemplate:
    extra_vars: int
    allow_intensional: bool

    def __post_init__(self):
        if not 0 <= self.extra_vars <= V_MAX:
            raise ValueError(f"extra_vars {self.extra_vars} outside 0..{V_MAX}")


@dataclass(frozen=True)
class ProgramTemplate:
    """Per-predicate slot templates plus auxiliary (invented) predicates."""

    slots: tuple[tuple[Predicate, tuple[RuleTemplate, ...]], ...]
    auxiliary: tuple[Predicate, ...] = ()
    forward_steps: int = 10

    def __post_init__(self):
        if self.forward_steps < 1:
            raise ValueError("forward_steps must be >= 1")
        for pred, slot_list in self.slots:
            if not 1 <= len(slot_list) <= 2:
                raise ValueError(f"{pred} must have 1 or 2 slots")
        slot_preds = {pred for pred, _ in self.slots}
        for aux in self.auxiliary:
            if aux not in slot_preds:
                raise ValueError(f"auxiliary {aux} has no slot")

    def slot_map(self) -> dict[Predicate, tuple[RuleTemplate, ...]]:
        return dict(self.slots)

    def learnable(self) -> tuple[Predicate, ...]:
        return tuple(pred for pred, _ in self.slots)


def generate_clauses(
    head: Predicate,
    template: RuleTemplate,
    extensional_pool: Sequence[Predicate],
    intensional_pool: Sequence[Predicate] = (),
) -> list[Clause]:
    """Enumerate every admissible two-atom-body clause for ``head``.

    Bodies draw atoms over the head variables plus ``template.extra_vars``
    fresh ones, from the extensional pool plus (when the template allows)
    the intensional pool. Unsafe clauses, clauses repeating the head atom
    in their body, and duplicates up to body order / variable renaming are
    pruned. Output is sorted by clause text.
    """
    pool = list(dict.fromkeys(extensional_pool))
    if template.allow_intensional:
        for p in intensional_pool:
            if p not in pool:
                pool.append(p)
    head_vars = tuple(Term.var(f"V{k}") for k in range(head.arity))
    head_atom = Atom(head, head_vars)
    all_vars = head_vars + tuple(
        Term.var(f"V{head.arity + k}") for k in range(template.extra_vars)
    )
    candidates: list[Atom] = []
    for p in pool:
        for combo in itertools.product(all_vars, repeat=p.arity):
            candidates.append(Atom(p, combo))
    out: set[Clause] = set()
    for b1, b2 in itertools.combinations_with_replacement(candidates, 2):
        if b1 == head_atom or b2 == head_atom:
            continue
        try:
            out.add(Clause.make(head_atom, (b1, b2)))
        except UnsafeClauseError:
            continue
    return sorted(out, key=str)


def template_complexity(
    pt: ProgramTemplate,
    frame: LanguageFrame,
    background_pool: Sequence[Predicate] = (),
) -> int:
    """Total candidate-clause count across all slots of the template."""
    total = 0
    for _, clauses in slot_clause_pools(pt, frame, background_pool):
        total += len(clauses)
    return total


def slot_clause_pools(
    pt: ProgramTemplate,
    frame: LanguageFrame,
    background_pool: Sequence[Predicate] = (),
) -> list[tuple[tuple[Predicate, int], list[Clause]]]:
    """Candidate clauses for every (predicate, slot) of a program template."""
    extensional = list(frame.extensional) + [
        p for p in background_pool if p not in frame.extensional
    ]
    intensional = list(pt.learnable())
    pools: list[tuple[tuple[Predicate, int], list[Clause]]] = []
    for pred, slot_list in pt.slots:
        for k, rt in enumerate(slot_list):
            pools.append(
                ((pred, k), generate_clauses(pred, rt, extensional, intensional))
            )
    return pools


def enumerate_templates(
    frame: LanguageFrame,
    v_max: int = 1,
    slot_counts: Sequence[int] = (1,),
    aux_options: Sequence[Sequence[Predicate]] = ((),),
    forward_steps: int = 10,
    background_pool: Sequence[Predicate] = (),
) -> Iterator[ProgramTemplate]:
    """Yield program templates over a finite grid, least complex first.

    The grid covers every combination of slot templates (v in 0..v_max,
    intensional flag) and slot counts for each learnable predicate, for
    each auxiliary-predicate option. Ties in complexity break on the
    template's serialized form, so the stream is fully deterministic.
    """
    rule_options = [
        RuleTemplate(v, i)
        for v in range(v_max + 1)
        for i in (False, True)
    ]
    scored: list[tuple[int, str, ProgramTemplate]] = []
    for aux in aux_options:
        learnable = tuple(frame.targets) + tuple(aux)
        per_pred_choices = []
        for _ in learnable:
            choices: list[tuple[RuleTemplate, ...]] = []
            for n in slot_counts:
                for combo in itertools.combinations_with_replacement(rule_options, n):
                    choices.append(tuple(combo))
            per_pred_choices.append(choices)
        for assignment in itertools.product(*per_pred_choices):
            pt = ProgramTemplate(
                slots=tuple(zip(learnable, assignment)),
                auxiliary=tuple(aux),
                forward_steps=forward_steps,
            )
            scored.append(
                (
                    template_complexity(pt, frame, background_pool),
                    template_to_json(pt),
                    pt,
                )
            )
    scored.sort(key=lambda t: (t[0], t[1]))
    for _, _, pt in scored:
        yield pt


# ---------------------------------------------------------------------------
# Config-file form.

def template_to_dict(pt: ProgramTemplate) -> dict:
    # Slot order is meaningful (weights align to it), so it is a list.
    return {
        "forward_steps": pt.forward_steps,
        "auxiliary": [[p.name, p.arity] for p in pt.auxiliary],
        "slots": [
            [
                f"{pred.name}/{pred.arity}",
                [{"v": rt.extra_vars, "i": rt.allow_intensional} for rt in slot_list],
            ]
            for pred, slot_list in pt.slots
        ],
    }


def template_from_dict(d: dict) -> ProgramTemplate:
    slots = []
    entries = d["slots"].items() if isinstance(d["slots"], dict) else d["slots"]
    for key, slot_list in entries:
        name, _, arity = key.partition("/")
        pred = Predicate(name, int(arity))
        slots.append(
            (pred, tuple(RuleTemplate(int(s["v"]), bool(s["i"])) for s in slot_list))
        )
    return ProgramTemplate(
        slots=tuple(slots),
        auxiliary=tuple(Predicate(n, a) for n, a in d.get("auxiliary", [])),
        forward_steps=int(d.get("forward_steps", 10)),
    )


def template_to_json(pt: ProgramTemplate) -> str:
    return json.dumps(template_to_dict(pt), sort_keys=True)


def template_from_json(text: str) -> ProgramTemplate:
    return template_from_dict(json.loads(text))
