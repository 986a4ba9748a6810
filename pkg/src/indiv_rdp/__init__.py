"""Individual Renyi-DP accounting: filters, per-point ledgers, odometers and exact checks."""

from .core import (
    DEFAULT_ORDERS,
    DIVERGENCE_INFINITE,
    DiscreteDistribution,
    DpPoint,
    RdpCurve,
    RdpPoint,
    best_dp_over_curve,
    gaussian_individual_rdp,
    rdp_to_dp,
    renyi_divergence_discrete,
    symmetric_divergence,
    zcdp_budget_for_dp,
)
from .dpgd import GdConfig, GdTrace, LossKind, LossSpec, Mode, privacy_report, run_private_gd
from .errors import (
    AccountingError,
    ConfigError,
    DimensionMismatchError,
    InvariantError,
    ParameterError,
    PreconditionError,
    QuadratureError,
    QueryValidationError,
    SizeLimitError,
    StateError,
    UnsupportedOrderError,
)
from .filters import (
    DpFilterState,
    FilterDecision,
    FilterState,
    dp_filter_check,
    fixed_rate_equivalence,
    rdp_filter_check,
)
from .ledger import (
    AccountingMode,
    IndividualLedger,
    IndividualOdometers,
    OdometerState,
    RoundProposal,
    begin_round,
    commit_round,
    individual_odometer_update,
    odometer_update,
)
from .query_engine import QuerySession, accuracy_probe, answer_query

__version__ = "0.1.0"
