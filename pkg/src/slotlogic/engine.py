"""Differentiable forward chaining with trainable clause weights.

The model grounds every candidate clause over a sample's constants and
chains truth values through a fixed number of steps. Per step and per
clause, a ground head's contribution is the max over that clause's
groundings of the product of its two body values; a slot mixes its
clauses by softmax weight; a predicate with two slots combines them by
probabilistic sum; the step result is folded into the valuation with an
element-wise max (or, for the ablation variant, a probabilistic sum).
Background clauses run every step with weight one and carry no
parameters.

Gradients are exact reverse-mode derivatives of that computation. Max
picks its first argument on ties: the old valuation over the fresh
derivation, and the lowest-numbered grounding row within a clause.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .logic import (
    Atom,
    Clause,
    GroundIndex,
    LanguageFrame,
    Predicate,
    build_ground_index,
    format_atom,
    format_clause,
    ground_clause,
    parse_atom,
    parse_clause,
)
from .templates import (
    ProgramTemplate,
    slot_clause_pools,
    template_from_dict,
    template_to_dict,
)

LOG_EPS = 1e-6
RANGE_TOL = 1e-9

AMALGAMATIONS = ("max", "sum")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite at step {step} ({value})")
        self.step = step


class ValuationInvariantError(RuntimeError):
    """A step produced values outside [0,1] or decreased the valuation."""


class ClauseBudgetError(ValueError):
    def __init__(self, count: int, budget: int):
        super().__init__(
            f"{count} candidate clauses exceed the budget of {budget}; "
            "lower the extra-variable count (v) or shrink the predicate pool"
        )
        self.count = count


@dataclass(frozen=True)
class Sample:
    """One training instance: facts, labeled target atoms, own constants."""

    background: tuple[Atom, ...]
    positive: tuple[Atom, ...]
    negative: tuple[Atom, ...]
    constants: tuple[str, ...]

    @staticmethod
    def make(
        background: Iterable[Atom],
        positive: Iterable[Atom],
        negative: Iterable[Atom],
        constants: Sequence[str],
    ) -> "Sample":
        bg = tuple(sorted(set(background), key=format_atom))
        pos = tuple(sorted(set(positive), key=format_atom))
        neg = tuple(sorted(set(negative), key=format_atom))
        both = set(pos) & set(neg)
        if both:
            raise ValueError(f"atoms both positive and negative: {both}")
        consts = set(constants)
        for a in bg + pos + neg:
            if not a.is_ground:
                raise ValueError(f"non-ground atom {format_atom(a)} in sample")
            for t in a.args:
                if t.label not in consts:
                    raise ValueError(
                        f"{format_atom(a)} uses constant {t.label!r} "
                        "outside the sample's constant list"
                    )
        return Sample(bg, pos, neg, tuple(constants))

    def to_dict(self) -> dict:
        return {
            "background": [format_atom(a) for a in self.background],
            "positive": [format_atom(a) for a in self.positive],
            "negative": [format_atom(a) for a in self.negative],
            "constants": list(self.constants),
        }

    @staticmethod
    def from_dict(d: dict) -> "Sample":
        return Sample.make(
            [parse_atom(t) for t in d["background"]],
            [parse_atom(t) for t in d["positive"]],
            [parse_atom(t) for t in d["negative"]],
            d["constants"],
        )


@dataclass(frozen=True)
class Valuation:
    """Truth-probability vector over a ground index (entry 0 stays 0)."""

    index: GroundIndex
    values: np.ndarray

    def of(self, a: Atom) -> float:
        return float(self.values[self.index.index_of(a)])


@dataclass(frozen=True)
class Hyperparams:
    """Training knobs. The step rule scales each parameter by the square
    root of its accumulated squared gradient; ``accumulator_decay`` turns
    the accumulator into a running (decayed) one."""

    learning_rate: float = 0.05
    training_steps: int = 6000
    reg_kind: str = "none"
    reg_lambda: float = 0.0
    seed: int = 0
    init_scale: float = 0.1
    amalgamation: str = "max"
    stop_loss: float | None = None
    accumulator_decay: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be non-negative")
        if self.reg_kind not in ("none", "l1", "l2"):
            raise ValueError(f"unknown reg_kind {self.reg_kind!r}")
        if self.amalgamation not in AMALGAMATIONS:
            raise ValueError(f"unknown amalgamation {self.amalgamation!r}")
        if self.accumulator_decay is not None and not 0.0 < self.accumulator_decay < 1.0:
            raise ValueError("accumulator_decay must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "training_steps": self.training_steps,
            "reg_kind": self.reg_kind,
            "reg_lambda": self.reg_lambda,
            "seed": self.seed,
            "init_scale": self.init_scale,
            "amalgamation": self.amalgamation,
            "stop_loss": self.stop_loss,
            "accumulator_decay": self.accumulator_decay,
        }

    @staticmethod
    def from_dict(d: dict) -> "Hyperparams":
        return Hyperparams(**d)


class ClauseWeights:
    """Raw weight vectors, one per (predicate, slot); softmax gives probs."""

    def __init__(self, keys: Sequence[tuple[Predicate, int]], vectors: Sequence[np.ndarray]):
        self.keys = tuple(keys)
        self.vectors = [np.asarray(v, dtype=np.float64) for v in vectors]

    def copy(self) -> "ClauseWeights":
        return ClauseWeights(self.keys, [v.copy() for v in self.vectors])

    def probabilities(self) -> list[np.ndarray]:
        return [_softmax(v) for v in self.vectors]

    def flatten(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros(0)
        return np.concatenate(self.vectors)

    def with_flat(self, flat: np.ndarray) -> "ClauseWeights":
        out, pos = [], 0
        for v in self.vectors:
            out.append(np.asarray(flat[pos : pos + v.size], dtype=np.float64).copy())
            pos += v.size
        return ClauseWeights(self.keys, out)


def _softmax(w: np.ndarray) -> np.ndarray:
    if w.size == 0:
        return w.copy()
    z = np.exp(w - np.max(w))
    return z / z.sum()


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    if p.size == 0:
        return p.copy()
    return p * (dp - float(np.dot(p, dp)))


# ---------------------------------------------------------------------------
# Compilation: grounding tables.

@dataclass(frozen=True)
class _GroupRuntime:
    """Grounding rows for one list of clauses sharing a head predicate.

    Rows are sorted by group id (clause-local id * head range size +
    head offset) so per-group maxima reduce over contiguous segments.
    """

    predicate: Predicate
    clauses: tuple[Clause, ...]
    head_start: int
    head_size: int
    row_b1: np.ndarray
    row_b2: np.ndarray
    seg_starts: np.ndarray  # reduceat boundaries into the sorted rows
    seg_group: np.ndarray   # group id per segment
    row_seg: np.ndarray     # segment id per row
    n_rows: int


def _build_group(
    predicate: Predicate, clauses: Sequence[Clause], index: GroundIndex
) -> _GroupRuntime:
    start, end = index.ranges[predicate]
    size = end - start
    groups: list[int] = []
    b1s: list[int] = []
    b2s: list[int] = []
    for k, clause in enumerate(clauses):
        if clause.head.predicate != predicate:
            raise ValueError("clause head predicate mismatch")
        for head_idx, (i1, i2) in ground_clause(clause, index):
            groups.append(k * size + (head_idx - start))
            b1s.append(i1)
            b2s.append(i2)
    g = np.asarray(groups, dtype=np.int64)
    order = np.argsort(g, kind="stable")
    g = g[order]
    b1 = np.asarray(b1s, dtype=np.int64)[order]
    b2 = np.asarray(b2s, dtype=np.int64)[order]
    if g.size:
        first = np.ones(g.size, dtype=bool)
        first[1:] = g[1:] != g[:-1]
        seg_starts = np.nonzero(first)[0]
        seg_group = g[seg_starts]
        row_seg = np.cumsum(first) - 1
    else:
        seg_starts = np.zeros(0, dtype=np.int64)
        seg_group = np.zeros(0, dtype=np.int64)
        row_seg = np.zeros(0, dtype=np.int64)
    return _GroupRuntime(
        predicate,
        tuple(clauses),
        start,
        size,
        b1,
        b2,
        seg_starts.astype(np.int64),
        seg_group,
        row_seg.astype(np.int64),
        int(g.size),
    )


def _group_values(group: _GroupRuntime, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-clause-per-head max of body products; returns (V, products).

    ``a`` is a batch of valuations (S, g); V has shape (S, K, m).
    """
    S = a.shape[0]
    K = len(group.clauses)
    V = np.zeros((S, K * group.head_size))
    if group.n_rows:
        prod = a[:, group.row_b1] * a[:, group.row_b2]
        seg = np.maximum.reduceat(prod, group.seg_starts, axis=1)
        V[:, group.seg_group] = seg
    else:
        prod = np.zeros((S, 0))
    return V.reshape(S, K, group.head_size), prod


def _group_backward(
    group: _GroupRuntime,
    a: np.ndarray,
    prod: np.ndarray,
    V: np.ndarray,
    dV: np.ndarray,
    da: np.ndarray,
) -> None:
    """Route dV through the segment max and products into ``da`` (in place)."""
    if not group.n_rows:
        return
    S = a.shape[0]
    R = group.n_rows
    V_flat = V.reshape(S, -1)
    dV_flat = dV.reshape(S, -1)
    # Expand segment maxima back over rows via the segment id of each row,
    # then pick the first row attaining the max (deterministic tie-break).
    seg_max = V_flat[:, group.seg_group]
    is_winner = prod == seg_max[:, group.row_seg]
    row_ids = np.arange(R)
    masked = np.where(is_winner, row_ids[None, :], R)
    first_win = np.minimum.reduceat(masked, group.seg_starts, axis=1)  # (S, nseg)
    s_ids = np.arange(S)[:, None]
    valid = first_win < R
    flat_idx = (s_ids * R + np.where(valid, first_win, 0)).ravel()
    contrib = (dV_flat[:, group.seg_group] * valid).ravel()
    dprod = np.bincount(flat_idx, weights=contrib, minlength=S * R).reshape(S, R)
    g = da.shape[1]
    col1 = (s_ids * g + group.row_b1[None, :]).ravel()
    col2 = (s_ids * g + group.row_b2[None, :]).ravel()
    da += np.bincount(
        col1, weights=(dprod * a[:, group.row_b2]).ravel(), minlength=S * g
    ).reshape(S, g)
    da += np.bincount(
        col2, weights=(dprod * a[:, group.row_b1]).ravel(), minlength=S * g
    ).reshape(S, g)


@dataclass(frozen=True)
class CompiledModel:
    """Grounded clause tables for one constant list; immutable."""

    index: GroundIndex
    constants: tuple[str, ...]
    slot_keys: tuple[tuple[Predicate, int], ...]
    slot_groups: tuple[_GroupRuntime, ...]
    predicate_slots: tuple[tuple[Predicate, tuple[int, ...]], ...]
    background_groups: tuple[_GroupRuntime, ...]
    forward_steps: int
    amalgamation: str

    def for_sample(self, sample: Sample) -> "CompiledModel":
        if tuple(sample.constants) != self.constants:
            raise ValueError(
                "sample constants do not match this compiled model; "
                "compile per sample or use a ModelCompiler"
            )
        return self


class ModelCompiler:
    """Builds clause pools once and grounds them per constant list.

    Clause pools depend only on predicates, so one weight assignment is
    valid for every compiled instance, whatever its constants.
    """

    def __init__(
        self,
        frame: LanguageFrame,
        template: ProgramTemplate,
        background: Sequence[Clause] = (),
        background_pool: Sequence[Predicate] = (),
        amalgamation: str = "max",
        max_clauses: int = 50_000,
        pools: Sequence[tuple[tuple[Predicate, int], Sequence[Clause]]] | None = None,
    ):
        if amalgamation not in AMALGAMATIONS:
            raise ValueError(f"unknown amalgamation {amalgamation!r}")
        self.frame = frame
        self.template = template
        self.background = tuple(background)
        self.background_pool = tuple(background_pool)
        self.amalgamation = amalgamation
        if pools is None:
            self.pools = slot_clause_pools(template, frame, background_pool)
        else:
            self.pools = [(key, list(cs)) for key, cs in pools]
        total = sum(len(cs) for _, cs in self.pools)
        if total > max_clauses:
            raise ClauseBudgetError(total, max_clauses)

        learnable = set(template.learnable())
        bg_heads: list[Predicate] = []
        for c in self.background:
            if c.head.predicate in learnable:
                raise ValueError(
                    f"background clause head {c.head.predicate} is learnable"
                )
            if c.head.predicate not in bg_heads:
                bg_heads.append(c.head.predicate)
        self._bg_heads = tuple(bg_heads)

        preds: list[Predicate] = list(frame.extensional)
        for p in (*bg_heads, *frame.targets, *template.auxiliary):
            if p not in preds:
                preds.append(p)
        self.predicates = tuple(preds)
        known = set(preds)
        for c in self.background:
            for a in c.body:
                if a.predicate not in known:
                    raise ValueError(
                        f"background clause body uses undeclared {a.predicate}"
                    )
        for p in self.background_pool:
            if p not in known:
                raise ValueError(f"background pool predicate {p} undeclared")
        self._cache: dict[tuple[str, ...], CompiledModel] = {}

    def slot_sizes(self) -> list[tuple[tuple[Predicate, int], int]]:
        return [(key, len(cs)) for key, cs in self.pools]

    def init_weights(self, seed: int = 0, scale: float = 0.1) -> ClauseWeights:
        rng = np.random.default_rng(seed)
        keys = [key for key, _ in self.pools]
        vecs = [rng.standard_normal(len(cs)) * scale for _, cs in self.pools]
        return ClauseWeights(keys, vecs)

    def compile(self, constants: Sequence[str]) -> CompiledModel:
        key = tuple(constants)
        if key in self._cache:
            return self._cache[key]
        index = build_ground_index(self.predicates, key)
        slot_keys = []
        slot_groups = []
        by_pred: dict[Predicate, list[int]] = {}
        for (pred, k), clauses in self.pools:
            by_pred.setdefault(pred, []).append(len(slot_groups))
            slot_keys.append((pred, k))
            slot_groups.append(_build_group(pred, clauses, index))
        bg_groups = []
        for head in self._bg_heads:
            cs = [c for c in self.background if c.head.predicate == head]
            bg_groups.append(_build_group(head, cs, index))
        model = CompiledModel(
            index=index,
            constants=key,
            slot_keys=tuple(slot_keys),
            slot_groups=tuple(slot_groups),
            predicate_slots=tuple(
                (pred, tuple(slots)) for pred, slots in by_pred.items()
            ),
            background_groups=tuple(bg_groups),
            forward_steps=self.template.forward_steps,
            amalgamation=self.amalgamation,
        )
        self._cache[key] = model
        return model

    def for_sample(self, sample: Sample) -> CompiledModel:
        return self.compile(sample.constants)


def compile_model(
    template: ProgramTemplate,
    frame: LanguageFrame,
    constants: Sequence[str],
    background: Sequence[Clause] = (),
    background_pool: Sequence[Predicate] = (),
    amalgamation: str = "max",
) -> CompiledModel:
    """Ground a program template's clause pools over one constant list."""
    return ModelCompiler(
        frame, template, background, background_pool, amalgamation
    ).compile(constants)


# ---------------------------------------------------------------------------
# Forward pass.

def init_valuation(sample: Sample, model: CompiledModel) -> Valuation:
    """Background atoms get value 1, everything else 0."""
    values = np.zeros(len(model.index))
    for a in sample.background:
        values[model.index.index_of(a)] = 1.0
    return Valuation(model.index, values)


@dataclass
class _StepTrace:
    a_in: np.ndarray
    slot_prods: list[np.ndarray]
    slot_V: list[np.ndarray]
    slot_vals: list[np.ndarray]
    bg_prods: list[np.ndarray]
    bg_V: list[np.ndarray]
    b: np.ndarray
    over_one: np.ndarray


#: count of instrumented step checks performed (all must have passed).
VALUATION_CHECKS = 0


def _check_range(a_new: np.ndarray, a_old: np.ndarray) -> None:
    # Instrumentation, always on: every step must stay in [0,1] and never
    # lower any entry (both amalgamation variants are non-decreasing).
    global VALUATION_CHECKS
    VALUATION_CHECKS += 1
    if a_new.size == 0:
        return
    lo = float(a_new.min())
    hi = float(a_new.max())
    if lo < -RANGE_TOL or hi > 1.0 + RANGE_TOL:
        raise ValuationInvariantError(f"valuation left [0,1]: min={lo} max={hi}")
    if not bool(np.all(a_new >= a_old - RANGE_TOL)):
        raise ValuationInvariantError("valuation decreased between steps")


def _step_batch(
    model: CompiledModel, probs: Sequence[np.ndarray], a: np.ndarray
) -> tuple[np.ndarray, _StepTrace]:
    S, g = a.shape
    b = np.zeros((S, g))
    slot_prods: list[np.ndarray] = []
    slot_V: list[np.ndarray] = []
    slot_vals: list[np.ndarray] = []
    for group, p in zip(model.slot_groups, probs):
        V, prod = _group_values(group, a)
        sv = np.einsum("k,skm->sm", p, V)
        slot_prods.append(prod)
        slot_V.append(V)
        slot_vals.append(sv)
    for pred, slots in model.predicate_slots:
        group = model.slot_groups[slots[0]]
        lo, hi = group.head_start, group.head_start + group.head_size
        if len(slots) == 1:
            y = slot_vals[slots[0]]
        else:
            s0, s1 = slot_vals[slots[0]], slot_vals[slots[1]]
            y = s0 + s1 - s0 * s1
        b[:, lo:hi] = y
    bg_prods: list[np.ndarray] = []
    bg_V: list[np.ndarray] = []
    for group in model.background_groups:
        V, prod = _group_values(group, a)
        y = V.max(axis=1) if V.shape[1] else np.zeros((S, group.head_size))
        lo, hi = group.head_start, group.head_start + group.head_size
        b[:, lo:hi] = np.maximum(b[:, lo:hi], y)
        bg_prods.append(prod)
        bg_V.append(V)
    if model.amalgamation == "max":
        a_new = np.maximum(a, b)
    else:
        a_new = a + b - a * b
    a_new[:, 0] = 0.0
    over_one = a_new > 1.0
    if over_one.any():
        a_new = np.minimum(a_new, 1.0)
    _check_range(a_new, a)
    trace = _StepTrace(a, slot_prods, slot_V, slot_vals, bg_prods, bg_V, b, over_one)
    return a_new, trace


def _backward_step(
    model: CompiledModel,
    probs: Sequence[np.ndarray],
    trace: _StepTrace,
    da_new: np.ndarray,
    dprobs: list[np.ndarray],
) -> np.ndarray:
    a = trace.a_in
    b = trace.b
    da_new = np.where(trace.over_one, 0.0, da_new)
    da_new[:, 0] = 0.0
    if model.amalgamation == "max":
        take_b = b > a
        db = np.where(take_b, da_new, 0.0)
        da = np.where(take_b, 0.0, da_new)
    else:
        db = da_new * (1.0 - a)
        da = da_new * (1.0 - b)
    da = da.copy()
    for gi, group in enumerate(model.background_groups):
        lo, hi = group.head_start, group.head_start + group.head_size
        dy = db[:, lo:hi]
        V = trace.bg_V[gi]
        if not V.shape[1]:
            continue
        # The amalgamation above already maxed background against any
        # learnable contribution on the same range; route db to whichever
        # side won. Heads never overlap in practice (compile forbids
        # learnable background heads), so b on this range came from V.
        winners = np.argmax(V, axis=1)  # first max clause per head
        dV = np.zeros_like(V)
        s_ids = np.arange(V.shape[0])[:, None]
        cols = np.arange(group.head_size)[None, :]
        dV[s_ids, winners, cols] = dy
        _group_backward(group, a, trace.bg_prods[gi], V, dV, da)
    for pred, slots in model.predicate_slots:
        group = model.slot_groups[slots[0]]
        lo, hi = group.head_start, group.head_start + group.head_size
        dy = db[:, lo:hi]
        if len(slots) == 1:
            d_slot = [dy]
        else:
            s0, s1 = trace.slot_vals[slots[0]], trace.slot_vals[slots[1]]
            d_slot = [dy * (1.0 - s1), dy * (1.0 - s0)]
        for si, dsv in zip(slots, d_slot):
            grp = model.slot_groups[si]
            p = probs[si]
            V = trace.slot_V[si]
            dprobs[si] += np.einsum("sm,skm->k", dsv, V)
            dV = p[None, :, None] * dsv[:, None, :]
            _group_backward(grp, a, trace.slot_prods[si], V, dV, da)
    return da


def step(model: CompiledModel, weights: ClauseWeights, valuation: Valuation) -> Valuation:
    """One deduction step over a single valuation."""
    probs = weights.probabilities()
    a_new, _ = _step_batch(model, probs, valuation.values[None, :])
    return Valuation(model.index, a_new[0])


def infer(model: CompiledModel, weights: ClauseWeights, sample: Sample) -> Valuation:
    """Run ``forward_steps`` chained deduction steps from the background."""
    model = model.for_sample(sample)
    probs = weights.probabilities()
    a = init_valuation(sample, model).values[None, :]
    for _ in range(model.forward_steps):
        a, _ = _step_batch(model, probs, a)
    return Valuation(model.index, a[0])


# ---------------------------------------------------------------------------
# Loss and gradient.

@dataclass(frozen=True)
class _Batch:
    model: CompiledModel
    a0: np.ndarray
    p_rows: np.ndarray
    p_cols: np.ndarray
    n_rows: np.ndarray
    n_cols: np.ndarray
    p_scale: np.ndarray
    n_scale: np.ndarray


def _prepare_batches(model_source, samples: Sequence[Sample]) -> list[_Batch]:
    groups: dict[tuple[str, ...], list[Sample]] = {}
    for s in samples:
        if not s.positive and not s.negative:
            raise ValueError("sample has no positive or negative atoms")
        groups.setdefault(tuple(s.constants), []).append(s)
    batches = []
    n_total = len(samples)
    for consts, group in groups.items():
        model = model_source.for_sample(group[0])
        g = len(model.index)
        a0 = np.zeros((len(group), g))
        p_rows, p_cols, p_scale = [], [], []
        n_rows, n_cols, n_scale = [], [], []
        for si, s in enumerate(group):
            for a in s.background:
                a0[si, model.index.index_of(a)] = 1.0
            w = 1.0 / ((len(s.positive) + len(s.negative)) * n_total)
            for a in s.positive:
                p_rows.append(si)
                p_cols.append(model.index.index_of(a))
                p_scale.append(w)
            for a in s.negative:
                n_rows.append(si)
                n_cols.append(model.index.index_of(a))
                n_scale.append(w)
        batches.append(
            _Batch(
                model,
                a0,
                np.asarray(p_rows, dtype=np.int64),
                np.asarray(p_cols, dtype=np.int64),
                np.asarray(n_rows, dtype=np.int64),
                np.asarray(n_cols, dtype=np.int64),
                np.asarray(p_scale),
                np.asarray(n_scale),
            )
        )
    return batches


def _data_loss(batch: _Batch, aT: np.ndarray) -> float:
    pv = np.clip(aT[batch.p_rows, batch.p_cols], LOG_EPS, 1.0 - LOG_EPS)
    nv = np.clip(aT[batch.n_rows, batch.n_cols], LOG_EPS, 1.0 - LOG_EPS)
    return float(
        -(batch.p_scale * np.log(pv)).sum() - (batch.n_scale * np.log1p(-nv)).sum()
    )


def _data_loss_backward(batch: _Batch, aT: np.ndarray) -> np.ndarray:
    dA = np.zeros_like(aT)
    pv = aT[batch.p_rows, batch.p_cols]
    inside = (pv > LOG_EPS) & (pv < 1.0 - LOG_EPS)
    np.add.at(
        dA,
        (batch.p_rows, batch.p_cols),
        np.where(inside, -batch.p_scale / np.clip(pv, LOG_EPS, None), 0.0),
    )
    nv = aT[batch.n_rows, batch.n_cols]
    inside = (nv > LOG_EPS) & (nv < 1.0 - LOG_EPS)
    np.add.at(
        dA,
        (batch.n_rows, batch.n_cols),
        np.where(inside, batch.n_scale / np.clip(1.0 - nv, LOG_EPS, None), 0.0),
    )
    return dA


def _reg_value(weights: ClauseWeights, hp: Hyperparams) -> float:
    if hp.reg_kind == "none" or hp.reg_lambda == 0.0:
        return 0.0
    total = 0.0
    for v in weights.vectors:
        total += float(np.abs(v).sum() if hp.reg_kind == "l1" else (v * v).sum())
    return hp.reg_lambda * total


def _reg_grad(weights: ClauseWeights, hp: Hyperparams) -> list[np.ndarray]:
    if hp.reg_kind == "none" or hp.reg_lambda == 0.0:
        return [np.zeros_like(v) for v in weights.vectors]
    if hp.reg_kind == "l1":
        return [hp.reg_lambda * np.sign(v) for v in weights.vectors]
    return [2.0 * hp.reg_lambda * v for v in weights.vectors]


def loss(
    model_source,
    weights: ClauseWeights,
    samples: Sequence[Sample],
    hp: Hyperparams,
    batches: Sequence[_Batch] | None = None,
) -> float:
    """Mean per-sample normalized cross-entropy plus the weight penalty."""
    probs = weights.probabilities()
    total = 0.0
    for batch in batches or _prepare_batches(model_source, samples):
        a = batch.a0
        for _ in range(batch.model.forward_steps):
            a, _ = _step_batch(batch.model, probs, a)
        total += _data_loss(batch, a)
    return total + _reg_value(weights, hp)


def loss_and_grad(
    model_source,
    weights: ClauseWeights,
    samples: Sequence[Sample],
    hp: Hyperparams,
    batches: Sequence[_Batch] | None = None,
) -> tuple[float, list[np.ndarray]]:
    probs = weights.probabilities()
    dprobs = [np.zeros_like(p) for p in probs]
    total = 0.0
    for batch in batches or _prepare_batches(model_source, samples):
        a = batch.a0
        traces = []
        for _ in range(batch.model.forward_steps):
            a, tr = _step_batch(batch.model, probs, a)
            traces.append(tr)
        total += _data_loss(batch, a)
        da = _data_loss_backward(batch, a)
        for tr in reversed(traces):
            da = _backward_step(batch.model, probs, tr, da, dprobs)
    grads = [
        _softmax_backward(p, dp) for p, dp in zip(probs, dprobs)
    ]
    reg = _reg_grad(weights, hp)
    grads = [g + r for g, r in zip(grads, reg)]
    return total + _reg_value(weights, hp), grads


def grad(
    model_source,
    weights: ClauseWeights,
    samples: Sequence[Sample],
    hp: Hyperparams,
) -> list[np.ndarray]:
    """Exact reverse-mode gradient of :func:`loss` w.r.t. raw weights."""
    return loss_and_grad(model_source, weights, samples, hp)[1]


def finite_difference_grad(
    model_source,
    weights: ClauseWeights,
    samples: Sequence[Sample],
    hp: Hyperparams,
    h: float = 1e-4,
) -> list[np.ndarray]:
    """Central finite differences of :func:`loss`; the gradient oracle."""
    flat = weights.flatten()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += h
        down = flat.copy()
        down[i] -= h
        out[i] = (
            loss(model_source, weights.with_flat(up), samples, hp)
            - loss(model_source, weights.with_flat(down), samples, hp)
        ) / (2.0 * h)
    grads = weights.with_flat(out)
    return grads.vectors


# ---------------------------------------------------------------------------
# Training.

@dataclass
class TrainedModel:
    frame: LanguageFrame
    template: ProgramTemplate
    background: tuple[Clause, ...]
    background_pool: tuple[Predicate, ...]
    pools: tuple[tuple[tuple[Predicate, int], tuple[Clause, ...]], ...]
    weights: ClauseWeights
    loss_trace: list[float]
    hyperparams: Hyperparams

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else math.inf

    def compiler(self) -> ModelCompiler:
        c = ModelCompiler(
            self.frame,
            self.template,
            self.background,
            self.background_pool,
            amalgamation=self.hyperparams.amalgamation,
        )
        got = tuple((key, tuple(cs)) for key, cs in c.pools)
        if got != self.pools:
            raise ValueError("stored clause pools do not match regenerated pools")
        return c

    def probabilities(self) -> list[np.ndarray]:
        return self.weights.probabilities()

    def to_dict(self) -> dict:
        return {
            "frame": {
                "targets": [[p.name, p.arity] for p in self.frame.targets],
                "extensional": [[p.name, p.arity] for p in self.frame.extensional],
                "constants": list(self.frame.constants),
            },
            "template": template_to_dict(self.template),
            "background": [format_clause(c) for c in self.background],
            "background_pool": [[p.name, p.arity] for p in self.background_pool],
            "slots": [
                {
                    "predicate": [pred.name, pred.arity],
                    "slot": k,
                    "clauses": [format_clause(c) for c in clauses],
                    "raw_weights": [float(w) for w in vec],
                    "probabilities": [float(p) for p in _softmax(vec)],
                }
                for ((pred, k), clauses), vec in zip(self.pools, self.weights.vectors)
            ],
            "loss_trace": [float(x) for x in self.loss_trace],
            "hyperparams": self.hyperparams.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainedModel":
        frame = LanguageFrame(
            targets=tuple(Predicate(n, a) for n, a in d["frame"]["targets"]),
            extensional=tuple(Predicate(n, a) for n, a in d["frame"]["extensional"]),
            constants=tuple(d["frame"].get("constants", ())),
        )
        template = template_from_dict(d["template"])
        pools = []
        keys = []
        vecs = []
        for slot in d["slots"]:
            pred = Predicate(*slot["predicate"])
            key = (pred, int(slot["slot"]))
            clauses = tuple(parse_clause(t) for t in slot["clauses"])
            pools.append((key, clauses))
            keys.append(key)
            vecs.append(np.asarray(slot["raw_weights"], dtype=np.float64))
        return TrainedModel(
            frame=frame,
            template=template,
            background=tuple(parse_clause(t) for t in d["background"]),
            background_pool=tuple(
                Predicate(n, a) for n, a in d.get("background_pool", [])
            ),
            pools=tuple(pools),
            weights=ClauseWeights(keys, vecs),
            loss_trace=[float(x) for x in d["loss_trace"]],
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(path) -> "TrainedModel":
        with open(path) as f:
            return TrainedModel.from_dict(json.load(f))


def train(
    frame: LanguageFrame,
    samples: Sequence[Sample],
    template: ProgramTemplate,
    hp: Hyperparams,
    background: Sequence[Clause] = (),
    background_pool: Sequence[Predicate] = (),
) -> TrainedModel:
    """Full-batch gradient descent with per-parameter accumulated-square
    step scaling; deterministic given the seed."""
    if not samples:
        raise ValueError("no samples")
    targets = set(frame.targets)
    for s in samples:
        for a in (*s.positive, *s.negative):
            if a.predicate not in targets:
                raise ValueError(
                    f"labeled atom {format_atom(a)} is not a target predicate"
                )
    compiler = ModelCompiler(
        frame,
        template,
        background,
        background_pool,
        amalgamation=hp.amalgamation,
    )
    weights = compiler.init_weights(hp.seed, hp.init_scale)
    acc = [np.zeros_like(v) for v in weights.vectors]
    trace: list[float] = []
    batches = _prepare_batches(compiler, samples)
    for step_i in range(hp.training_steps):
        value, grads = loss_and_grad(compiler, weights, samples, hp, batches)
        if not math.isfinite(value):
            raise TrainingDiverged(step_i, value)
        trace.append(value)
        if hp.stop_loss is not None and value < hp.stop_loss:
            break
        for v, g, a in zip(weights.vectors, grads, acc):
            if hp.accumulator_decay is None:
                a += g * g
            else:
                a *= hp.accumulator_decay
                a += (1.0 - hp.accumulator_decay) * g * g
            v -= hp.learning_rate * g / (np.sqrt(a) + 1e-8)
    trace.append(loss(compiler, weights, samples, hp, batches))
    return TrainedModel(
        frame=frame,
        template=template,
        background=tuple(background),
        background_pool=tuple(background_pool),
        pools=tuple((key, tuple(cs)) for key, cs in compiler.pools),
        weights=weights,
        loss_trace=trace,
        hyperparams=hp,
    )
