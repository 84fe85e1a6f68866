"""silvaflux: regional wood supply-chain statistics into mass-balanced
flow graphs, what-if scenarios, and carbon accounting."""

__version__ = "0.1.0"

from .flow_model import (  # noqa: F401
    Flow,
    FlowGraph,
    Node,
    Observation,
    Product,
    balance_residuals,
    validate,
)
from .reconcile import (  # noqa: F401
    ReconcileProblem,
    ReconcileResult,
    perfect_blend,
    reconcile,
)
from .scenario import (  # noqa: F401
    CapByDeposit,
    InsertActor,
    Reroute,
    Scale,
    Scenario,
    ScenarioDiff,
    apply,
    max_reroutable,
)
from .carbon import (  # noqa: F401
    AnnualInflows,
    CarbonLedger,
    PoolParams,
    PoolState,
    annual_step,
    compare_ledgers,
    ledger_from_graph,
    simulate,
)
from .report import (  # noqa: F401
    build_delta_report,
    delta_percent,
    emit_sankey,
)
from .units import ConversionTable, to_carbon, to_wfe  # noqa: F401
