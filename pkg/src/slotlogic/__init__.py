"""Differentiable rule induction for slot-filling dialog policies."""

from .background import background_library, library_exports, rename_predicate
from .dialog import (
    BeliefState,
    Dialog,
    DialogAct,
    DomainSpec,
    SampleRecord,
    Turn,
    build_sample,
    decode_actions,
    encode_acts,
    encode_state,
)
from .engine import (
    ClauseWeights,
    CompiledModel,
    Hyperparams,
    ModelCompiler,
    Sample,
    TrainedModel,
    TrainingDiverged,
    Valuation,
    compile_model,
    finite_difference_grad,
    grad,
    infer,
    init_valuation,
    loss,
    step,
    train,
)
from .extract import (
    PolicyProgram,
    agreement,
    crisp_infer,
    extract_program,
    load_program,
    save_program,
)
from .logic import (
    Atom,
    Clause,
    GroundIndex,
    LanguageFrame,
    ParseError,
    Predicate,
    Term,
    UnsafeClauseError,
    atom,
    build_ground_index,
    format_atom,
    format_clause,
    ground_clause,
    parse_atom,
    parse_clause,
)
from .metrics import F1Score, MetricsReport, action_f1, entity_f1, intent_f1
from .multiwoz import convert_multiwoz, encode_multiwoz_state
from .simulator import (
    DOMAINS,
    GeneratorConfig,
    generate_corpus,
    generate_dialog,
    representative_dialog,
)
from .templates import (
    ProgramTemplate,
    RuleTemplate,
    enumerate_templates,
    generate_clauses,
    template_complexity,
)

__version__ = "0.1.0"
