"""Smali NOP-injection toolkit: attacks, visibility scoring, and a
surrogate opcode-sequence detector to measure evasion against.

The package follows the scikit-learn estimator idiom where an algorithm
is naturally fit/transform shaped (:class:`OpcodeConvNet`,
:class:`SimpleNopInjector`, :class:`GreedyEvasionAttack`); parsing and
metric computation are plain functions.
"""

__version__ = "0.1.0"

from .opcodes import OpcodeTable, default_table
from .smali import (
    LineKind,
    OpcodeSequence,
    SmaliApp,
    SmaliClass,
    SmaliLine,
    SmaliMethod,
    SmaliParseError,
    extract_opcode_sequence,
    load_app,
    parse_class,
    parse_line,
    save_app,
    serialize_class,
)
from .visibility import (
    CccReport,
    CccWeights,
    ComplexityClass,
    ConnectionClass,
    DEFAULT_WEIGHTS,
    InjectionManifest,
    InjectionSite,
    UndefinedMetricError,
    ccc,
    clarity,
    classify_complexity,
    classify_connection,
    complexity,
    connection,
    mean_report,
)
from .inject import (
    AttackKind,
    AttackVariant,
    EmptyManifestError,
    INJECTABLE_MNEMONICS,
    InjectionPlan,
    InjectionSkip,
    MethodSelector,
    apply_attack,
    derive_manifest,
    inject_imi,
    inject_simple_nop,
    inject_sio,
    strip_injection,
)
from .interp import (
    EquivalenceResult,
    Verdict,
    check_equivalence,
    eval_method,
)
from .detector import (
    DetectorConfig,
    DetectorModel,
    OpcodeConvNet,
    Scores,
    classify,
    forward,
    init_model,
    load_model,
    loss_and_gradients,
    save_model,
    train,
)
from .attack import (
    AttackTemplate,
    EmptyTemplateError,
    GreedyEvasionAttack,
    OptimizationTrace,
    build_attack_template,
    default_candidate_ids,
    optimize_placeholders,
    realize,
)
from .corpus import (
    MotifSpec,
    generate_corpus,
    generate_labeled_apps,
    load_labeled_apps,
)
from .experiment import (
    AttackOutcome,
    MetricsRow,
    SweepRow,
    evaluate,
    run_attack_experiment,
    run_sweep,
    spearman,
    split_corpus,
)
from .transformers import ImiInjector, SimpleNopInjector, SioInjector
from .validation import InputError

__all__ = [
    "AttackKind",
    "AttackOutcome",
    "AttackTemplate",
    "AttackVariant",
    "CccReport",
    "CccWeights",
    "ComplexityClass",
    "ConnectionClass",
    "DEFAULT_WEIGHTS",
    "DetectorConfig",
    "DetectorModel",
    "EmptyManifestError",
    "EmptyTemplateError",
    "EquivalenceResult",
    "GreedyEvasionAttack",
    "ImiInjector",
    "INJECTABLE_MNEMONICS",
    "InjectionManifest",
    "InjectionPlan",
    "InjectionSite",
    "InjectionSkip",
    "InputError",
    "LineKind",
    "MethodSelector",
    "MetricsRow",
    "MotifSpec",
    "OpcodeConvNet",
    "OpcodeSequence",
    "OpcodeTable",
    "OptimizationTrace",
    "Scores",
    "SimpleNopInjector",
    "SioInjector",
    "SmaliApp",
    "SmaliClass",
    "SmaliLine",
    "SmaliMethod",
    "SmaliParseError",
    "SweepRow",
    "UndefinedMetricError",
    "Verdict",
    "apply_attack",
    "build_attack_template",
    "ccc",
    "check_equivalence",
    "clarity",
    "classify",
    "classify_complexity",
    "classify_connection",
    "complexity",
    "connection",
    "default_candidate_ids",
    "default_table",
    "derive_manifest",
    "eval_method",
    "evaluate",
    "extract_opcode_sequence",
    "forward",
    "generate_corpus",
    "generate_labeled_apps",
    "init_model",
    "inject_imi",
    "inject_simple_nop",
    "inject_sio",
    "load_app",
    "load_labeled_apps",
    "load_model",
    "loss_and_gradients",
    "mean_report",
    "optimize_placeholders",
    "parse_class",
    "parse_line",
    "realize",
    "run_attack_experiment",
    "run_sweep",
    "save_app",
    "save_model",
    "serialize_class",
    "spearman",
    "split_corpus",
    "strip_injection",
    "train",
]
