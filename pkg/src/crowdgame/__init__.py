"""Simulation toolkit for agreement-based crowd labelling games.

Agents label items, some informed by a signal correlated with the truth and all
of them able to coordinate on an uninformative shared "prejudice". Mechanisms try
to pick out the informed, truthful agents from the reports alone (or with a few
gold labels). The package checks which strategy profiles are equilibria under
those mechanisms and reproduces the indistinguishability argument that breaks
every gold-free mechanism.
"""

from crowdgame.probcore import (
    ConditionalTable,
    Distribution,
    LabelSpace,
    ValidationReport,
    WorldDistribution,
    entropy,
    mutual_information,
    sample,
    validate_world,
)
from crowdgame.game import (
    AgentRoster,
    Assignment,
    GameConfig,
    PrejudiceMode,
    ReportMatrix,
    Strategy,
    StrategyProfile,
    generate_reports,
    make_assignment,
    truthful_informed_set,
)
from crowdgame.mechanisms import (
    AgreementMechanism,
    GoldSeededMechanism,
    GoldSet,
    MechanismMetrics,
    MechanismOutcome,
    PairwiseAgreementMechanism,
    PrejudiceAnchoredMechanism,
    agreement_mechanism,
    evaluate_mechanism,
    gold_seeded_mechanism,
    pairwise_agreement_mechanism,
    prejudice_anchored_mechanism,
)
from crowdgame.equilibrium import (
    DeviationReport,
    EquilibriumVerdict,
    ImpossibilityReport,
    PayoffEstimate,
    best_response,
    best_response_dynamics,
    check_dominance_truthful,
    estimate_payoff,
    impossibility_demo,
    verify_equilibrium,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionalTable",
    "Distribution",
    "LabelSpace",
    "ValidationReport",
    "WorldDistribution",
    "entropy",
    "mutual_information",
    "sample",
    "validate_world",
    "AgentRoster",
    "Assignment",
    "GameConfig",
    "PrejudiceMode",
    "ReportMatrix",
    "Strategy",
    "StrategyProfile",
    "generate_reports",
    "make_assignment",
    "truthful_informed_set",
    "AgreementMechanism",
    "GoldSeededMechanism",
    "GoldSet",
    "MechanismMetrics",
    "MechanismOutcome",
    "PairwiseAgreementMechanism",
    "PrejudiceAnchoredMechanism",
    "agreement_mechanism",
    "evaluate_mechanism",
    "gold_seeded_mechanism",
    "pairwise_agreement_mechanism",
    "prejudice_anchored_mechanism",
    "DeviationReport",
    "EquilibriumVerdict",
    "ImpossibilityReport",
    "PayoffEstimate",
    "best_response",
    "best_response_dynamics",
    "check_dominance_truthful",
    "estimate_payoff",
    "impossibility_demo",
    "verify_equilibrium",
]
