"""First-order language core: terms, atoms, clauses, and grounding.

Clauses are restricted to a fixed body width of two atoms (single-atom
bodies are stored as a duplicated pair) and at most three distinct
variables, which bounds grounding cost while covering every rule shape
the engine learns.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

MAX_ARITY = 3
MAX_CLAUSE_VARS = 3
BODY_WIDTH = 2

_NAME_RE = re.compile(r"[a-z][a-z0-9_]*")
_VAR_RE = re.compile(r"[A-Z][A-Za-z0-9_]*")

# Predicate name of the reserved always-false atom at index 0.
FALSE_NAME = "false"


class ParseError(ValueError):
    """Malformed atom or clause text; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ArityConflictError(ParseError):
    pass


class UnsafeClauseError(ValueError):
    """A head variable does not occur in the clause body."""


@dataclass(frozen=True, order=True)
class Predicate:
    name: str
    arity: int

    def __post_init__(self):
        if not _NAME_RE.fullmatch(self.name):
            raise ValueError(f"bad predicate name {self.name!r}")
        if not 0 <= self.arity <= MAX_ARITY:
            raise ValueError(f"arity {self.arity} outside 0..{MAX_ARITY}")

    def __str__(self) -> str:
        return f"{self.name}/{self.arity}"


@dataclass(frozen=True, order=True)
class Term:
    label: str
    is_variable: bool

    @staticmethod
    def var(label: str) -> "Term":
        return Term(label, True)

    @staticmethod
    def const(label: str) -> "Term":
        return Term(label, False)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True, order=True)
class Atom:
    predicate: Predicate
    args: tuple[Term, ...]

    def __post_init__(self):
        if len(self.args) != self.predicate.arity:
            raise ValueError(
                f"{self.predicate} applied to {len(self.args)} args"
            )

    @property
    def is_ground(self) -> bool:
        return not any(t.is_variable for t in self.args)

    def variables(self) -> tuple[Term, ...]:
        seen: list[Term] = []
        for t in self.args:
            if t.is_variable and t not in seen:
                seen.append(t)
        return tuple(seen)

    def substitute(self, binding: Mapping[Term, Term]) -> "Atom":
        return Atom(
            self.predicate,
            tuple(binding.get(t, t) for t in self.args),
        )

    def __str__(self) -> str:
        return format_atom(self)


def atom(name: str, *args: str) -> Atom:
    """Build a ground/variable atom from bare labels (uppercase = variable)."""
    terms = tuple(
        Term.var(a) if a[0].isupper() else Term.const(a) for a in args
    )
    return Atom(Predicate(name, len(terms)), terms)


@dataclass(frozen=True, order=True)
class Clause:
    """A rule ``head <- body[0], body[1]`` in canonical form.

    Canonical means: variables renamed to V0, V1, ... by first occurrence,
    body pair ordered so the serialized clause is minimal. Build through
    :meth:`make` (or :func:`parse_clause`), never directly, so equality
    and hashing see one representative per equivalence class.
    """

    head: Atom
    body: tuple[Atom, ...]

    @staticmethod
    def make(head: Atom, body: Sequence[Atom]) -> "Clause":
        body = list(body)
        if len(body) == 1:
            body = [body[0], body[0]]
        if len(body) != BODY_WIDTH:
            raise ValueError(f"body must have 1 or {BODY_WIDTH} atoms")
        body_vars = {t for a in body for t in a.variables()}
        missing = [t for t in head.variables() if t not in body_vars]
        if missing:
            raise UnsafeClauseError(
                f"head variable {missing[0]} unbound in body of "
                f"{format_atom(head)} <- "
                + ", ".join(format_atom(a) for a in body)
            )
        n_vars = len({t for t in body_vars | set(head.variables())})
        if n_vars > MAX_CLAUSE_VARS:
            raise ValueError(f"clause uses {n_vars} variables (max {MAX_CLAUSE_VARS})")
        return _canonicalize(head, body)

    def variables(self) -> tuple[Term, ...]:
        seen: list[Term] = []
        for a in (self.head, *self.body):
            for t in a.variables():
                if t not in seen:
                    seen.append(t)
        return tuple(seen)

    def __str__(self) -> str:
        return format_clause(self)


def _rename_pass(head: Atom, body: Sequence[Atom]) -> tuple[Atom, tuple[Atom, ...]]:
    mapping: dict[Term, Term] = {}
    for a in (head, *body):
        for t in a.args:
            if t.is_variable and t not in mapping:
                mapping[t] = Term.var(f"V{len(mapping)}")
    return head.substitute(mapping), tuple(a.substitute(mapping) for a in body)


def _canonicalize(head: Atom, body: Sequence[Atom]) -> Clause:
    orders = [(body[0], body[1])]
    if body[0] != body[1]:
        orders.append((body[1], body[0]))
    best: Clause | None = None
    best_key = None
    for ordered in orders:
        h, b = _rename_pass(head, ordered)
        cand = object.__new__(Clause)
        object.__setattr__(cand, "head", h)
        object.__setattr__(cand, "body", b)
        key = _serialize(h, b)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    assert best is not None
    return best


def _serialize(head: Atom, body: Sequence[Atom]) -> str:
    return format_atom(head) + " <- " + ", ".join(format_atom(a) for a in body)


# ---------------------------------------------------------------------------
# Textual syntax: pred(c1, c2); clauses "head <- b1, b2"; uppercase = variable.

def format_atom(a: Atom) -> str:
    return f"{a.predicate.name}({', '.join(t.label for t in a.args)})"


def format_clause(c: Clause) -> str:
    body = list(c.body)
    if len(body) == 2 and body[0] == body[1]:
        body = body[:1]
    return f"{format_atom(c.head)} <- " + ", ".join(format_atom(a) for a in body)


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, ch: str):
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            raise ParseError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def name(self) -> str:
        self.skip_ws()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            raise ParseError("expected lowercase identifier", self.pos)
        self.pos = m.end()
        return m.group()

    def term(self) -> Term:
        self.skip_ws()
        m = _VAR_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Term.var(m.group())
        m = _NAME_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Term.const(m.group())
        raise ParseError("expected term", self.pos)

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)


def _parse_atom(sc: _Scanner, declared: Mapping[str, int] | None) -> Atom:
    start = sc.pos
    name = sc.name()
    sc.expect("(")
    args: list[Term] = []
    if sc.peek() != ")":
        args.append(sc.term())
        while sc.peek() == ",":
            sc.expect(",")
            args.append(sc.term())
    sc.expect(")")
    if declared is not None and name in declared and declared[name] != len(args):
        raise ArityConflictError(
            f"{name} declared with arity {declared[name]}, used with {len(args)}",
            start,
        )
    return Atom(Predicate(name, len(args)), tuple(args))


def parse_atom(text: str, declared: Mapping[str, int] | None = None) -> Atom:
    """Parse ``pred(t1, ..., tn)``; round-trips with :func:`format_atom`."""
    if not text.strip():
        raise ParseError("empty atom", 0)
    sc = _Scanner(text)
    a = _parse_atom(sc, declared)
    if not sc.at_end():
        raise ParseError("trailing input", sc.pos)
    return a


def parse_clause(text: str, declared: Mapping[str, int] | None = None) -> Clause:
    """Parse ``head <- body1[, body2]`` into a canonical :class:`Clause`."""
    if "<-" not in text:
        raise ParseError("missing '<-' separator", len(text))
    head_text, _, body_text = text.partition("<-")
    sc = _Scanner(head_text)
    head = _parse_atom(sc, declared)
    if not sc.at_end():
        raise ParseError("trailing input after head", sc.pos)
    sc = _Scanner(body_text)
    body = [_parse_atom(sc, declared)]
    while sc.peek() == ",":
        sc.expect(",")
        body.append(_parse_atom(sc, declared))
    if not sc.at_end():
        raise ParseError("trailing input", len(head_text) + 2 + sc.pos)
    if len(body) > BODY_WIDTH:
        raise ValueError(f"body has {len(body)} atoms (max {BODY_WIDTH})")
    return Clause.make(head, body)


# ---------------------------------------------------------------------------
# Language frames and grounding.

@dataclass(frozen=True)
class LanguageFrame:
    """Declares which predicates are learnable targets vs. given facts."""

    targets: tuple[Predicate, ...]
    extensional: tuple[Predicate, ...]
    constants: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.targets) & set(self.extensional)
        if overlap:
            raise ValueError(f"targets and extensional overlap: {overlap}")
        names = [str(p) for p in (*self.targets, *self.extensional)]
        if len(names) != len(set(names)):
            raise ValueError("duplicate predicate declaration")

    @property
    def predicates(self) -> tuple[Predicate, ...]:
        return (*self.extensional, *self.targets)


@dataclass(frozen=True)
class GroundIndex:
    """Dense index over every grounding of a predicate set.

    Index 0 is a reserved always-false atom; real atoms occupy 1..g-1 in
    declaration order of predicates, argument tuples enumerated in the
    order of ``constants``.
    """

    constants: tuple[str, ...]
    predicates: tuple[Predicate, ...]
    atoms: tuple[Atom, ...]
    lookup: Mapping[Atom, int]
    ranges: Mapping[Predicate, tuple[int, int]]

    def __len__(self) -> int:
        return len(self.atoms)

    def index_of(self, a: Atom) -> int:
        try:
            return self.lookup[a]
        except KeyError:
            raise KeyError(f"atom {format_atom(a)} not in ground index") from None


def build_ground_index(
    frame_or_predicates: LanguageFrame | Sequence[Predicate],
    constants: Sequence[str],
) -> GroundIndex:
    """Enumerate all ground atoms of the given predicates over ``constants``."""
    if isinstance(frame_or_predicates, LanguageFrame):
        predicates = frame_or_predicates.predicates
    else:
        predicates = tuple(frame_or_predicates)
    if not constants:
        raise ValueError("constant list is empty")
    if len(set(constants)) != len(constants):
        raise ValueError("duplicate constants")
    for p in predicates:
        if p.name == FALSE_NAME:
            raise ValueError(f"predicate name {FALSE_NAME!r} is reserved")
    consts = tuple(constants)
    sentinel = Atom(Predicate(FALSE_NAME, 0), ())
    atoms: list[Atom] = [sentinel]
    ranges: dict[Predicate, tuple[int, int]] = {}
    for p in predicates:
        start = len(atoms)
        for combo in itertools.product(consts, repeat=p.arity):
            atoms.append(Atom(p, tuple(Term.const(c) for c in combo)))
        ranges[p] = (start, len(atoms))
    lookup = {a: i for i, a in enumerate(atoms) if i > 0}
    return GroundIndex(consts, tuple(predicates), tuple(atoms), lookup, ranges)


def ground_clause(
    clause: Clause, index: GroundIndex
) -> list[tuple[int, tuple[int, int]]]:
    """All groundings of ``clause`` as (head index, body index pair) rows.

    One row per substitution of the clause variables by constants from the
    index, in a fixed enumeration order, duplicates removed.
    """
    variables = clause.variables()
    if len(variables) > MAX_CLAUSE_VARS:
        raise ValueError("too many clause variables")
    rows: list[tuple[int, tuple[int, int]]] = []
    seen: set[tuple[int, tuple[int, int]]] = set()
    const_terms = [Term.const(c) for c in index.constants]
    for combo in itertools.product(const_terms, repeat=len(variables)):
        binding = dict(zip(variables, combo))
        head = clause.head.substitute(binding)
        b1 = clause.body[0].substitute(binding)
        b2 = clause.body[1].substitute(binding)
        try:
            row = (index.index_of(head), (index.index_of(b1), index.index_of(b2)))
        except KeyError:
            # Clause mentions a predicate outside this index: no grounding.
            return []
        if row not in seen:
            seen.add(row)
            rows.append(row)
    return rows
