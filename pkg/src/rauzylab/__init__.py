"""Renormalization laboratory for generalized interval exchange maps.

The package builds g.i.e.m.s from several branch families, runs
Rauzy-Veech induction on them at high precision, and measures how the
zoomed return maps approach an explicit Moebius family.  Everything is
driven by a :class:`~rauzylab.numerics.PrecisionContext`: exact rational
arithmetic where the data allows it, correctly-sized multiprecision
floats everywhere else.
"""

from .errors import (
    BadGrid,
    BadLambda,
    ConfigError,
    GridInadequate,
    HistoryTooShort,
    IncompatibleRuns,
    InconsistentDepths,
    InvalidCombinatorics,
    InvalidFamilyParams,
    NoSecondDerivative,
    NonConvergent,
    NotRefining,
    NotRenormalizable,
    OutOfDomain,
    RauzylabError,
    SignConventionViolation,
    TilingViolation,
)
from .giem import (
    AffineBranch,
    CombinatorialPair,
    Giem,
    KOBranch,
    KOProfile,
    MoebiusBranch,
    TranslationBranch,
    affine_iem,
    ko_iem,
    moebius_iem,
    standard_iem,
)
from .analysis import (
    ConvergenceRecord,
    DenjoyReport,
    DeviationReport,
    MobiusApproximant,
    RelativeOrbit,
    TauDiagnostics,
    ZoomedReturnMap,
    compute_mn,
    denjoy_check,
    deviation,
    diagnostic_sums,
    mobius_of_logparam,
    relative_orbit,
    tau_diagnostics,
    zoom,
    zqn_identity_check,
)
from .martingale import (
    EtaSequence,
    StepFunction,
    conditional_expectation_check,
    eta_sequence,
    h_n,
    lp_norm,
    phi_n,
)
from .numerics import PrecisionContext, decimal_str, parse_exact
from .partition import DynamicalPartition, build_partition
from .rauzy import RauzyState, initial_state, renormalize, state_at

__all__ = [
    "AffineBranch",
    "BadGrid",
    "BadLambda",
    "CombinatorialPair",
    "ConfigError",
    "ConvergenceRecord",
    "DenjoyReport",
    "DeviationReport",
    "DynamicalPartition",
    "EtaSequence",
    "Giem",
    "GridInadequate",
    "HistoryTooShort",
    "IncompatibleRuns",
    "InconsistentDepths",
    "InvalidCombinatorics",
    "InvalidFamilyParams",
    "KOBranch",
    "KOProfile",
    "MobiusApproximant",
    "MoebiusBranch",
    "NoSecondDerivative",
    "NonConvergent",
    "NotRefining",
    "NotRenormalizable",
    "OutOfDomain",
    "PrecisionContext",
    "RauzyState",
    "RauzylabError",
    "RelativeOrbit",
    "SignConventionViolation",
    "StepFunction",
    "TauDiagnostics",
    "TilingViolation",
    "TranslationBranch",
    "ZoomedReturnMap",
    "affine_iem",
    "build_partition",
    "compute_mn",
    "conditional_expectation_check",
    "decimal_str",
    "denjoy_check",
    "deviation",
    "diagnostic_sums",
    "eta_sequence",
    "h_n",
    "initial_state",
    "ko_iem",
    "lp_norm",
    "mobius_of_logparam",
    "moebius_iem",
    "parse_exact",
    "phi_n",
    "relative_orbit",
    "renormalize",
    "standard_iem",
    "state_at",
    "tau_diagnostics",
    "zoom",
    "zqn_identity_check",
]

__version__ = "0.1.0"
