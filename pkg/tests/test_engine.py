import itertools
import math

import numpy as np
import pytest

from slotlogic import (
    ClauseWeights,
    Hyperparams,
    LanguageFrame,
    ModelCompiler,
    Predicate,
    ProgramTemplate,
    RuleTemplate,
    Sample,
    TrainedModel,
    TrainingDiverged,
    atom,
    compile_model,
    finite_difference_grad,
    infer,
    init_valuation,
    parse_clause,
    step,
    train,
)
from slotlogic.engine import loss, loss_and_grad

from .oracles import boolean_rounds

P, Q, R = Predicate("p", 1), Predicate("q", 1), Predicate("r", 1)
TOY_FRAME = LanguageFrame(targets=(P,), extensional=(Q, R))
TOY_TEMPLATE = ProgramTemplate(slots=((P, (RuleTemplate(0, True),)),), forward_steps=1)


def toy_compiler(**kw):
    return ModelCompiler(TOY_FRAME, TOY_TEMPLATE, **kw)


def one_hot(compiler, clause_text):
    """Weights putting (numerically) all mass on one clause per slot."""
    vectors = []
    for (pred, k), clauses in compiler.pools:
        v = np.zeros(len(clauses))
        target = parse_clause(clause_text)
        if target in clauses:
            v[clauses.index(target)] = 60.0
        vectors.append(v)
    return ClauseWeights([key for key, _ in compiler.pools], vectors)


class TestSample:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            Sample.make([], [atom("p", "a")], [atom("p", "a")], ("a",))

    def test_unknown_constant_rejected(self):
        with pytest.raises(ValueError):
            Sample.make([atom("q", "z")], [atom("p", "a")], [], ("a",))

    def test_non_ground_rejected(self):
        with pytest.raises(ValueError):
            Sample.make([atom("q", "X")], [atom("p", "a")], [], ("a",))

    def test_roundtrip(self):
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [atom("p", "b")], ("a", "b"))
        assert Sample.from_dict(s.to_dict()) == s


class TestCompile:
    def test_footnote_model_shape(self):
        model = compile_model(TOY_TEMPLATE, TOY_FRAME, ("a", "b", "c"))
        assert len(model.slot_groups) == 1
        assert len(model.slot_groups[0].clauses) == 3
        assert len(model.index) == 1 + 3 * 3

    def test_empty_slot_identity(self):
        frame = LanguageFrame(targets=(P,), extensional=())
        pt = ProgramTemplate(slots=((P, (RuleTemplate(0, False),)),), forward_steps=3)
        comp = ModelCompiler(frame, pt)
        s = Sample.make([], [atom("p", "a")], [], ("a",))
        w = comp.init_weights()
        v = infer(comp.compile(("a",)), w, s)
        assert v.values.sum() == 0.0

    def test_cache(self):
        comp = toy_compiler()
        assert comp.compile(("a", "b")) is comp.compile(("a", "b"))
        assert comp.compile(("a", "b")) is not comp.compile(("b", "a"))

    def test_mismatched_constants_rejected(self):
        model = compile_model(TOY_TEMPLATE, TOY_FRAME, ("a",))
        s = Sample.make([], [atom("p", "b")], [], ("b",))
        with pytest.raises(ValueError):
            model.for_sample(s)

    def test_clause_budget(self):
        from slotlogic.engine import ClauseBudgetError

        with pytest.raises(ClauseBudgetError):
            ModelCompiler(TOY_FRAME, TOY_TEMPLATE, max_clauses=1)

    def test_learnable_background_head_rejected(self):
        with pytest.raises(ValueError):
            toy_compiler(background=(parse_clause("p(V0) <- q(V0)"),))

    def test_undeclared_background_body_rejected(self):
        with pytest.raises(ValueError):
            toy_compiler(background=(parse_clause("extra(V0) <- mystery(V0)"),))


class TestInitValuation:
    def test_background_ones(self):
        comp = toy_compiler()
        model = comp.compile(("a", "b"))
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a", "b"))
        v = init_valuation(s, model)
        assert v.of(atom("q", "a")) == 1.0
        assert v.values.sum() == 1.0
        assert v.values[0] == 0.0

    def test_empty_background(self):
        comp = toy_compiler()
        model = comp.compile(("a",))
        s = Sample.make([], [atom("p", "a")], [], ("a",))
        assert init_valuation(s, model).values.sum() == 0.0

    def test_atom_outside_index(self):
        comp = toy_compiler()
        model = comp.compile(("a",))
        s = Sample.make([atom("zz", "a")], [atom("p", "a")], [], ("a",))
        with pytest.raises(KeyError):
            init_valuation(s, model)


class TestStep:
    def test_one_hot_deduction(self):
        preds = [Predicate("confirm", 1)]
        frame = LanguageFrame(
            targets=(preds[0],),
            extensional=(Predicate("user_request", 2), Predicate("not_confident", 1)),
        )
        pt = ProgramTemplate(slots=((preds[0], (RuleTemplate(1, False),)),), forward_steps=1)
        comp = ModelCompiler(frame, pt)
        w = one_hot(comp, "confirm(S) <- user_request(S, T), not_confident(S)")
        s = Sample.make(
            [atom("user_request", "contact", "calling"), atom("not_confident", "contact")],
            [atom("confirm", "contact")],
            [],
            ("contact", "calling"),
        )
        model = comp.compile(s.constants)
        v = step(model, w, init_valuation(s, model))
        assert v.of(atom("confirm", "contact")) == pytest.approx(1.0, abs=1e-12)

    def test_zero_in_zero_out(self):
        comp = toy_compiler()
        model = comp.compile(("a", "b"))
        s = Sample.make([], [atom("p", "a")], [], ("a", "b"))
        w = comp.init_weights(3, 1.0)
        v = step(model, w, init_valuation(s, model))
        assert v.values.sum() == 0.0

    def test_product_then_max(self):
        # body values 0.8 and 0.5, previous head value 0.3 -> 0.4
        frame = LanguageFrame(targets=(P,), extensional=(Q, R))
        pt = ProgramTemplate(slots=((P, (RuleTemplate(0, False),)),), forward_steps=1)
        comp = ModelCompiler(frame, pt)
        w = one_hot(comp, "p(V0) <- q(V0), r(V0)")
        model = comp.compile(("a",))
        from slotlogic.engine import Valuation

        values = np.zeros(len(model.index))
        values[model.index.index_of(atom("q", "a"))] = 0.8
        values[model.index.index_of(atom("r", "a"))] = 0.5
        values[model.index.index_of(atom("p", "a"))] = 0.3
        v = step(model, w, Valuation(model.index, values))
        assert v.of(atom("p", "a")) == pytest.approx(0.4, abs=1e-9)
        # and with an old value above the product, max keeps the old value
        values[model.index.index_of(atom("p", "a"))] = 0.9
        v = step(model, w, Valuation(model.index, values))
        assert v.of(atom("p", "a")) == pytest.approx(0.9)


class TestInfer:
    def test_no_clause_keeps_init(self):
        frame = LanguageFrame(targets=(P,), extensional=(Q,))
        pt = ProgramTemplate(slots=((P, (RuleTemplate(0, False),)),), forward_steps=1)
        comp = ModelCompiler(frame, pt)
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a",))
        w = ClauseWeights(
            [key for key, _ in comp.pools],
            [np.full(len(cs), -50.0) for _, cs in comp.pools],
        )
        v = infer(comp.compile(s.constants), w, s)
        assert v.of(atom("q", "a")) == 1.0

    def test_monotone_per_step(self):
        comp = toy_compiler()
        model = comp.compile(("a", "b", "c"))
        s = Sample.make(
            [atom("q", "a"), atom("r", "b")], [atom("p", "a")], [], ("a", "b", "c")
        )
        w = comp.init_weights(5, 0.7)
        v = init_valuation(s, model)
        for _ in range(6):
            nxt = step(model, w, v)
            assert np.all(nxt.values >= v.values - 1e-12)
            assert nxt.values.min() >= 0.0 and nxt.values.max() <= 1.0
            v = nxt

    def test_member_recursion_depth(self):
        member = Predicate("member", 2)
        succ = Predicate("succ", 2)
        frame = LanguageFrame(targets=(member,), extensional=(succ,))
        consts = ("n1", "n2", "n3", "n4", "t")
        chain = [("n1", "n2"), ("n2", "n3"), ("n3", "n4"), ("n4", "t")]
        background = [atom("succ", x, y) for x, y in chain]
        clauses = [
            parse_clause("member(V0, V1) <- succ(V1, V0), succ(V0, V2)"),
            parse_clause("member(V0, V1) <- succ(V1, V2), member(V0, V2)"),
        ]
        pools = [((member, 0), clauses)]
        pt = ProgramTemplate(slots=((member, (RuleTemplate(1, True),)),), forward_steps=4)
        comp = ModelCompiler(frame, pt, pools=pools)
        w = ClauseWeights([(member, 0)], [np.array([60.0, 60.0])])
        # a slot mixes clauses by softmax, so a crisp two-clause program
        # needs them as background instead
        comp2 = ModelCompiler(
            frame,
            ProgramTemplate(slots=((member, (RuleTemplate(0, False),)),), forward_steps=4),
            pools=[((member, 0), [])],
        )
        s = Sample.make(background, [atom("member", "n4", "n1")], [], consts)
        oracle = boolean_rounds(clauses, set(background), consts, rounds=4)
        model = comp.compile(consts)
        # mixture weights mean fuzzy values sit below 1; compare support at T=4
        v = infer(model, ClauseWeights([(member, 0)], [np.array([0.0, 0.0])]), s)
        fuzzy_support = {
            model.index.atoms[i]
            for i in range(1, len(model.index))
            if v.values[i] > 0
        }
        oracle_derived = {a for a in oracle if a.predicate == member} | set(background)
        assert fuzzy_support == oracle_derived
        assert v.of(atom("member", "n4", "n1")) > 0  # needs the full depth


class TestLoss:
    def test_uniform_hand_value(self):
        comp = toy_compiler()
        w = comp.init_weights(0, 0.0)
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a",))
        assert loss(comp, w, [s], Hyperparams()) == pytest.approx(math.log(3.0))

    def test_saturated_program_near_zero(self):
        comp = toy_compiler()
        w = one_hot(comp, "p(V0) <- q(V0)")
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [atom("p", "b")], ("a", "b"))
        # the floor is the log clamp: -log(1 - 1e-6) per labeled atom
        assert loss(comp, w, [s], Hyperparams()) < 2e-6

    def test_regularizer_additive(self):
        comp = toy_compiler()
        w = comp.init_weights(1, 0.5)
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a",))
        base = loss(comp, w, [s], Hyperparams())
        lam = 0.01
        l1 = loss(comp, w, [s], Hyperparams(reg_kind="l1", reg_lambda=lam))
        l2 = loss(comp, w, [s], Hyperparams(reg_kind="l2", reg_lambda=lam))
        flat = w.flatten()
        assert l1 - base == pytest.approx(lam * np.abs(flat).sum())
        assert l2 - base == pytest.approx(lam * (flat**2).sum())

    def test_unlabeled_sample_rejected(self):
        comp = toy_compiler()
        w = comp.init_weights()
        s = Sample.make([atom("q", "a")], [], [], ("a",))
        with pytest.raises(ValueError):
            loss(comp, w, [s], Hyperparams())

    def test_permutation_equivariance(self):
        comp = toy_compiler()
        w = comp.init_weights(2, 0.8)
        s1 = Sample.make(
            [atom("q", "a"), atom("r", "b")],
            [atom("p", "a")],
            [atom("p", "c")],
            ("a", "b", "c"),
        )
        # bijection a->z, b->y, c->x applied to atoms and constant list
        s2 = Sample.make(
            [atom("q", "z"), atom("r", "y")],
            [atom("p", "z")],
            [atom("p", "x")],
            ("z", "y", "x"),
        )
        hp = Hyperparams()
        assert loss(comp, w, [s1], hp) == pytest.approx(
            loss(comp, w, [s2], hp), abs=1e-15
        )


class TestGrad:
    def test_matches_toy_finite_difference(self):
        comp = toy_compiler()
        w = comp.init_weights(4, 0.6)
        s = Sample.make(
            [atom("q", "a"), atom("r", "b")],
            [atom("p", "a")],
            [atom("p", "b")],
            ("a", "b"),
        )
        hp = Hyperparams(reg_kind="l2", reg_lambda=0.01)
        _, g = loss_and_grad(comp, w, [s], hp)
        fd = finite_difference_grad(comp, w, [s], hp)
        for a, b in zip(g, fd):
            assert np.allclose(a, b, atol=1e-7)

    def test_unlabeled_only_regularizer(self):
        comp = toy_compiler()
        w = comp.init_weights(4, 0.6)
        s = Sample.make([atom("q", "a")], [], [atom("p", "b")], ("a", "b"))
        # negative-only labels: data gradient only via p(b); make it unreachable
        hp = Hyperparams(reg_kind="l1", reg_lambda=0.05)
        _, g = loss_and_grad(comp, w, [s], hp)
        fd = finite_difference_grad(comp, w, [s], hp)
        for a, b in zip(g, fd):
            assert np.allclose(a, b, atol=1e-6)

    def test_saturated_gradient_small(self):
        comp = toy_compiler()
        w = one_hot(comp, "p(V0) <- q(V0)")
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [atom("p", "b")], ("a", "b"))
        _, g = loss_and_grad(comp, w, [s], Hyperparams())
        assert np.linalg.norm(np.concatenate(g)) < 1e-3


class TestCrispAgreementProperty:
    def test_exhaustive_small_instances(self):
        q2 = Predicate("q", 2)
        frame = LanguageFrame(targets=(P,), extensional=(Q, q2))
        pool = [
            parse_clause("p(V0) <- q(V0)"),
            parse_clause("p(V0) <- q(V0, V1), q(V1)"),
            parse_clause("p(V0) <- q(V0, V0)"),
            parse_clause("p(V0) <- p(V1), q(V1, V0)"),
            parse_clause("p(V0) <- q(V0), q(V0, V1)"),
        ]
        rng = np.random.default_rng(0)
        checked = 0
        for n_const in (2, 3, 5):
            consts = tuple(f"c{i}" for i in range(n_const))
            ext_atoms = [atom("q", c) for c in consts] + [
                atom("q", x, y) for x in consts for y in consts
            ]
            for clause_ids in itertools.chain(
                itertools.combinations(range(5), 1),
                itertools.combinations(range(5), 2),
            ):
                clauses = [pool[i] for i in clause_ids]
                pools = [((P, k), [c]) for k, c in enumerate(clauses)]
                slots = ((P, tuple(RuleTemplate(0, True) for _ in clauses)),)
                if len(clauses) > 2:
                    continue
                pt = ProgramTemplate(slots=slots, forward_steps=len(consts) * 3 + 2)
                comp = ModelCompiler(frame, pt, pools=pools)
                weights = ClauseWeights(
                    [key for key, _ in pools], [np.zeros(1) for _ in pools]
                )
                for trial in range(3):
                    mask = rng.random(len(ext_atoms)) < 0.4
                    background = [a for a, m in zip(ext_atoms, mask) if m]
                    s = Sample.make(background, [atom("p", consts[0])], [], consts)
                    model = comp.compile(consts)
                    v = infer(model, weights, s)
                    oracle = boolean_rounds(
                        clauses, set(background), consts, rounds=pt.forward_steps
                    )
                    for i in range(1, len(model.index)):
                        a = model.index.atoms[i]
                        assert (v.values[i] == 1.0) == (a in oracle), (
                            f"disagree on {a} with {clauses} bg={background}"
                        )
                        assert v.values[i] in (0.0, 1.0)
                    checked += 1
        assert checked >= 100


class TestTrain:
    def test_toy_convergence(self):
        comp_frame = TOY_FRAME
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [atom("p", "b")], ("a", "b"))
        hp = Hyperparams(learning_rate=0.5, training_steps=500, seed=0, init_scale=0.1)
        m = train(comp_frame, [s], TOY_TEMPLATE, hp)
        assert m.final_loss < 0.01
        probs = m.probabilities()[0]
        best = m.pools[0][1][int(np.argmax(probs))]
        assert best == parse_clause("p(V0) <- q(V0)")

    def test_deterministic(self):
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a", "b"))
        hp = Hyperparams(training_steps=50, seed=9, init_scale=0.3)
        m1 = train(TOY_FRAME, [s], TOY_TEMPLATE, hp)
        m2 = train(TOY_FRAME, [s], TOY_TEMPLATE, hp)
        assert m1.loss_trace == m2.loss_trace
        for a, b in zip(m1.weights.vectors, m2.weights.vectors):
            assert np.array_equal(a, b)

    def test_divergence_reported(self):
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a",))
        hp = Hyperparams(learning_rate=1e9, training_steps=2000, seed=0, init_scale=1e9)
        with pytest.raises((TrainingDiverged, FloatingPointError, ValueError)):
            m = train(TOY_FRAME, [s], TOY_TEMPLATE, hp)
            # extreme settings must either diverge loudly or still be finite
            assert math.isfinite(m.final_loss)
            raise ValueError("stayed finite")

    def test_non_target_label_rejected(self):
        s = Sample.make([], [atom("q", "a")], [], ("a",))
        with pytest.raises(ValueError):
            train(TOY_FRAME, [s], TOY_TEMPLATE, Hyperparams(training_steps=1))

    def test_model_roundtrip(self, tmp_path):
        s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a",))
        hp = Hyperparams(training_steps=20, seed=1, init_scale=0.2)
        m = train(TOY_FRAME, [s], TOY_TEMPLATE, hp)
        path = tmp_path / "model.json"
        m.save(path)
        loaded = TrainedModel.load(path)
        assert loaded.pools == m.pools
        assert loaded.loss_trace == m.loss_trace
        for a, b in zip(loaded.weights.vectors, m.weights.vectors):
            assert np.array_equal(a, b)
        loaded.compiler()  # pools must match regeneration


class TestBackgroundClauses:
    def test_crisp_list_property_via_background(self):
        # fixed clauses with weight one drive the whole derivation; the
        # learnable slot pool is empty
        allp = Predicate("all", 1)
        target = Predicate("goal", 1)
        frame = LanguageFrame(
            targets=(target,),
            extensional=(
                Predicate("true", 1),
                Predicate("succ", 2),
                Predicate("terminal", 1),
            ),
        )
        background = [
            parse_clause("pred1(V0, V1) <- succ(V0, V1), all(V1)"),
            parse_clause("pred1(V0, V1) <- succ(V0, V1), terminal(V1)"),
            parse_clause("all(V0) <- true(V0), pred1(V0, V1)"),
        ]
        pt = ProgramTemplate(
            slots=((target, (RuleTemplate(0, False),)),), forward_steps=10
        )
        comp = ModelCompiler(frame, pt, background=background, pools=[((target, 0), [])])
        consts = tuple("abcdefgh") + ("t",)
        atoms_bg = [atom("terminal", "t")]
        atoms_bg += [
            atom("succ", x, y)
            for x, y in [("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("e", "t"),
                         ("f", "g"), ("g", "h"), ("h", "t")]
        ]
        atoms_bg += [atom("true", x) for x in "acdefg"]
        s = Sample.make(atoms_bg, [atom("goal", "a")], [], consts)
        w = ClauseWeights([(target, 0)], [np.zeros(0)])
        v = infer(comp.compile(consts), w, s)
        for x in "abcdefgh":
            expected = 1.0 if x in "cde" else 0.0
            assert v.of(atom("all", x)) == expected, x


def test_list_problem_pool_contains_solution():
    from slotlogic.pipeline import list_all_problem
    from slotlogic.templates import slot_clause_pools

    frame, _, template = list_all_problem()
    pools = dict(slot_clause_pools(template, frame))
    allp, helper = Predicate("all", 1), Predicate("pred1", 2)
    assert parse_clause("all(V0) <- true(V0), pred1(V0, V1)") in pools[(allp, 0)]
    for k in (0, 1):
        assert parse_clause("pred1(V0, V1) <- succ(V0, V1), all(V1)") in pools[(helper, k)]
        assert parse_clause("pred1(V0, V1) <- succ(V0, V1), terminal(V1)") in pools[(helper, k)]


def test_softmax_normalization_invariant():
    comp = toy_compiler()
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = ClauseWeights(
            [key for key, _ in comp.pools],
            [rng.standard_normal(len(cs)) * rng.uniform(0, 30) for _, cs in comp.pools],
        )
        for p in w.probabilities():
            assert abs(p.sum() - 1.0) <= 1e-9


def test_sentinel_stays_zero_through_steps():
    comp = toy_compiler()
    model = comp.compile(("a", "b"))
    s = Sample.make([atom("q", "a")], [atom("p", "a")], [], ("a", "b"))
    w = comp.init_weights(1, 0.5)
    v = init_valuation(s, model)
    for _ in range(4):
        v = step(model, w, v)
        assert v.values[0] == 0.0


class TestAblationAmalgamation:
    def test_sum_variant_still_monotone_in_range(self):
        comp = toy_compiler(amalgamation="sum")
        model = comp.compile(("a", "b"))
        s = Sample.make([atom("q", "a"), atom("r", "a")], [atom("p", "a")], [], ("a", "b"))
        w = comp.init_weights(3, 0.5)
        v = init_valuation(s, model)
        for _ in range(5):
            nxt = step(model, w, v)
            assert np.all(nxt.values >= v.values - 1e-12)
            assert nxt.values.max() <= 1.0 + 1e-12
            v = nxt

    def test_sum_accumulates_above_max(self):
        comp_max = toy_compiler(amalgamation="max")
        comp_sum = toy_compiler(amalgamation="sum")
        w = comp_max.init_weights(0, 0.0)  # uniform thirds
        s = Sample.make([atom("q", "a"), atom("r", "a")], [atom("p", "a")], [], ("a",))
        frame_pt = ProgramTemplate(slots=TOY_TEMPLATE.slots, forward_steps=4)
        m_max = ModelCompiler(TOY_FRAME, frame_pt).compile(("a",))
        m_sum = ModelCompiler(TOY_FRAME, frame_pt, amalgamation="sum").compile(("a",))
        v_max = infer(m_max, w, s).of(atom("p", "a"))
        v_sum = infer(m_sum, w, s).of(atom("p", "a"))
        assert v_max == pytest.approx(1.0)  # one clause body is fully true
        assert v_sum > v_max - 1e-12  # probabilistic sum accumulates
