"""Verification-gated planning toolkit.

Pipelines: plan text -> Kripke structure -> LTL model checking for decision
confidence calibration; split-conformal calibration for perception confidence;
active sensing and automated refinement as the two uncertainty interventions.
"""
from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def bundled_path(name: str) -> Path:
    """Path to a bundled data file (vocabularies, spec sets, corpora, schemas)."""
    return Path(resources.files("plancheck").joinpath("data", name))


from .checker import Verdict, check, check_all, export_smv, format_counterexample  # noqa: E402
from .conformal import (  # noqa: E402
    NonconformityDistribution,
    perception_nonconformity,
    perception_score,
    qq_points,
)
from .fmdp import (  # noqa: E402
    PlanRecord,
    SpecificationSet,
    calibrate_decision,
    decision_score,
    execution_gate,
    verify_plan,
)
from .interventions import (  # noqa: E402
    active_sense,
    dpo_pairs,
    generate_refinement_dataset,
    image_uncertainty,
    threshold_sweep,
)
from .logic import (  # noqa: E402
    KripkeStructure,
    LassoTrace,
    Vocabulary,
    eval_trace,
    format_formula,
    parse_formula,
    single_path,
)
from .plan_encoder import encode, parse_phrases  # noqa: E402

__all__ = [
    "KripkeStructure",
    "LassoTrace",
    "NonconformityDistribution",
    "PlanRecord",
    "SpecificationSet",
    "Verdict",
    "Vocabulary",
    "active_sense",
    "bundled_path",
    "calibrate_decision",
    "check",
    "check_all",
    "decision_score",
    "dpo_pairs",
    "encode",
    "eval_trace",
    "execution_gate",
    "export_smv",
    "format_counterexample",
    "format_formula",
    "generate_refinement_dataset",
    "image_uncertainty",
    "parse_formula",
    "parse_phrases",
    "perception_nonconformity",
    "perception_score",
    "qq_points",
    "single_path",
    "threshold_sweep",
    "verify_plan",
]
