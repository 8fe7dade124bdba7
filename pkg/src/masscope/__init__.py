"""Run multi-agent communication topologies and diagnose whether their
collaboration is real: role alignment, message influence, transfer
analysis, failure-mode classification, pruning and team selection.
"""

from .ablation import AblationResult, connection_ood, role_ood, run_ablation
from .analysis import (
    CellLabel,
    CorrelationResult,
    MatrixKind,
    NormalizationMode,
    TransferMatrix,
    ablation_delta,
    build_transfer_matrix,
    classify_cell,
    classify_matrix,
    correlate,
    normalize_matrix,
    ood_row_mean,
    pearson,
    perm_pvalue,
)
from .backend import (
    Backend,
    BackendConfig,
    CachedBackend,
    EmbeddingVector,
    HttpBackend,
    MockBackend,
    make_backend,
)
from .errors import MasscopeError
from .executor import RunResult, run_dataset, run_instance
from .mast import MastLabel, MastReport, aggregate_mast, classify_trace
from .metrics import (
    AggregateReport,
    IllusoryThresholds,
    IllusoryVerdict,
    MetricRecord,
    aggregate_metrics,
    connection_significance,
    cosine,
    detect_illusory,
    instance_metrics,
    message_influence,
    role_alignment,
)
from .model import (
    AgentSpec,
    AgentStep,
    AnswerFormat,
    ExecutionTrace,
    Message,
    TaskInstance,
    Topology,
    Verdict,
    normalize_answer,
    topological_levels,
    validate_topology,
    verify_answer,
)
from .optimize import (
    CandidateTeam,
    PruneConfig,
    edge_importance,
    pareto_front,
    prune_topology,
    relevance_score,
    select_team,
    vendi_score,
)
from .store import (
    RunConfig,
    Thresholds,
    load_dataset,
    load_run_config,
    load_topology,
    mix_domains,
    read_traces,
    save_topology,
    write_traces,
)

__version__ = "0.1.0"
