"""Turn-level F1 over predicted vs. gold dialog acts.

Counts are micro-averaged multiset matches across turns. Intent F1
compares intents alone, entity F1 the slot names alone, action F1 the
full (intent, slot) pairs. F1 of zero counts everywhere is defined as 1
(a no-action turn predicted as no action is correct, not undefined).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

ActPair = tuple[str, str | None]


@dataclass(frozen=True)
class F1Score:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0

    @property
    def f1(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn)

    def standard_error(self, n: int) -> float:
        if n <= 0:
            return 0.0
        x = self.f1
        return math.sqrt(x * (1.0 - x) / n)

    def __add__(self, other: "F1Score") -> "F1Score":
        return F1Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _count_turn(pred: Iterable[Hashable], gold: Iterable[Hashable]) -> F1Score:
    pc, gc = Counter(pred), Counter(gold)
    tp = sum(min(pc[k], gc[k]) for k in pc)
    return F1Score(tp, sum(pc.values()) - tp, sum(gc.values()) - tp)


def _score(
    turns: Sequence[tuple[Sequence[ActPair], Sequence[ActPair]]],
    key,
) -> F1Score:
    total = F1Score()
    for pred, gold in turns:
        total += _count_turn(
            [key(a) for a in pred if key(a) is not None],
            [key(a) for a in gold if key(a) is not None],
        )
    return total


def intent_f1(turns: Sequence[tuple[Sequence[ActPair], Sequence[ActPair]]]) -> F1Score:
    """Micro F1 over act intents, slots ignored."""
    return _score(turns, lambda a: a[0])


def entity_f1(turns: Sequence[tuple[Sequence[ActPair], Sequence[ActPair]]]) -> F1Score:
    """Micro F1 over slot names; slotless acts carry no entity."""
    return _score(turns, lambda a: a[1])


def action_f1(turns: Sequence[tuple[Sequence[ActPair], Sequence[ActPair]]]) -> F1Score:
    """Micro F1 over full (intent, slot) acts."""
    return _score(turns, lambda a: (a[0], a[1]))


@dataclass
class MetricsReport:
    intent: F1Score
    entity: F1Score
    action: F1Score
    n_turns: int
    per_domain: dict[str, dict[str, F1Score]] = field(default_factory=dict)
    domain_turns: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def block(score: F1Score, n: int) -> dict:
            return {
                "f1": score.f1,
                "precision": score.precision,
                "recall": score.recall,
                "tp": score.tp,
                "fp": score.fp,
                "fn": score.fn,
                "standard_error": score.standard_error(n),
            }

        return {
            "n_turns": self.n_turns,
            "intent_f1": block(self.intent, self.n_turns),
            "entity_f1": block(self.entity, self.n_turns),
            "action_f1": block(self.action, self.n_turns),
            "per_domain": {
                dom: {
                    name: block(score, self.domain_turns.get(dom, 0))
                    for name, score in scores.items()
                }
                for dom, scores in self.per_domain.items()
            },
        }

    def summary(self) -> str:
        lines = [
            f"turns evaluated: {self.n_turns}",
            f"intent F1: {self.intent.f1:.4f} "
            f"(+/- {self.intent.standard_error(self.n_turns):.4f})",
            f"entity F1: {self.entity.f1:.4f} "
            f"(+/- {self.entity.standard_error(self.n_turns):.4f})",
            f"action F1: {self.action.f1:.4f} "
            f"(+/- {self.action.standard_error(self.n_turns):.4f})",
        ]
        for dom in sorted(self.per_domain):
            scores = self.per_domain[dom]
            lines.append(
                f"  {dom}: intent {scores['intent'].f1:.4f} "
                f"entity {scores['entity'].f1:.4f} "
                f"action {scores['action'].f1:.4f}"
            )
        return "\n".join(lines)


def evaluate_turns(
    turns: Sequence[tuple[Sequence[ActPair], Sequence[ActPair]]],
    domains: Sequence[str] | None = None,
) -> MetricsReport:
    """Score all turns and, when domains are given, per-domain slices."""
    report = MetricsReport(
        intent=intent_f1(turns),
        entity=entity_f1(turns),
        action=action_f1(turns),
        n_turns=len(turns),
    )
    if domains is not None:
        if len(domains) != len(turns):
            raise ValueError("one domain label per turn required")
        for dom in sorted(set(domains)):
            subset = [t for t, d in zip(turns, domains) if d == dom]
            report.per_domain[dom] = {
                "intent": intent_f1(subset),
                "entity": entity_f1(subset),
                "action": action_f1(subset),
            }
            report.domain_turns[dom] = len(subset)
    return report
