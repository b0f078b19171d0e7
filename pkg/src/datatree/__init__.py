"""Budgeted tree search that finds, adapts, and scores external data.

The search alternates discovery nodes, which add dataset manifests to a
shared pool, with exploitation nodes, which build scored data states
from it. Selection is confidence-bound based with a decaying
exploration coefficient; every run is an append-only event log that can
be replayed, resumed, and audited.
"""

from .analytics import (
    MetricError,
    RunReport,
    bias_from_counts,
    branch_bias,
    build_report,
    cost_breakdown,
    normalized_gain,
    overcome_rate,
    red_black_ratios,
)
from .config import ConfigError, RunConfig, load_config
from .events import CorruptedLogError, Event, EventLog, read_events
from .executor import (
    BudgetError,
    BudgetLedger,
    ExecutionRequest,
    ExecutionResult,
    ExecutorClient,
    ExecutorConfig,
    TaskSpec,
    budget_remaining,
    charge,
    execute_node,
    finalize_execution,
)
from .memory import DataStateDescriptor, GlobalMemory, MemoryRecord, MemoryStoreError
from .orchestrator import RunState, fingerprint, replay, resume, run, status_summary
from .pool import DataPool, PoolEntry, PoolError, PoolFilter, Provenance
from .scheduler import (
    BranchStats,
    BranchSummary,
    GrowthDecision,
    NodeOutcome,
    ScheduleConfig,
    backpropagate,
    exploration_coefficient,
    grow,
    reward,
    select_next,
    ucb_score,
)
from .tree import (
    CostRecord,
    Direction,
    Node,
    NodeKind,
    NodeStatus,
    Tree,
    TreeError,
    create_tree,
)

__version__ = "0.1.0"
