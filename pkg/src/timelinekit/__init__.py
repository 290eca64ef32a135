"""Toolkit for evaluating and generating dynamic-granularity news timelines.

The evaluation side scores a predicted timeline against multi-granularity
references along four dimensions (informativeness, granular consistency,
factuality, coherence) by decomposing summaries into event atoms and
mounting predictions onto references with optimal assignment. The
generation side provides long-context, hierarchical-merging, and topic-only
pipelines behind pluggable model clients, so everything runs offline with
scripted backends.
"""

from .cache import KeyedFileStore
from .clients import AuditLog, RemoteModelClient, ScriptedModelClient
from .entail import (
    EntailmentScore,
    ExactMatchBackend,
    RemoteEntailmentBackend,
    ScriptedEntailmentBackend,
    entail,
    entailment_f1,
    entailment_precision,
    entailment_recall,
)
from .errors import Diagnostic, TimelineKitError
from .metrics import (
    AggregateReport,
    CoherenceReport,
    EvalBackends,
    MetricReport,
    Undefined,
    aggregate,
    coherence,
    evaluate_topic,
    factuality,
    format_aggregate_table,
    granular_consistency,
    informativeness,
)
from .model import (
    Article,
    AtomGroup,
    DatasetRecord,
    EventAtom,
    Timeline,
    TimelineNode,
    Topic,
    TopicCategory,
    group_atoms_by_timestamp,
    load_dataset,
    parse_timeline_text,
    select_support_articles,
    serialize_timeline,
)
from .mount import (
    CostMatrix,
    Edge,
    MountAssignment,
    brute_force_assignment,
    build_edge_pool,
    build_edges,
    edge_cost,
    info_score,
    node_cost_matrix,
    solve_assignment,
    solve_edge_assignment,
    temporal_penalty,
)
from .atoms import (
    PromptedDecomposer,
    RuleBasedDecomposer,
    ScriptedDecomposer,
    decompose,
    decompose_timeline,
    parse_decomposition_response,
    rule_based_decompose,
)
from .consensus import (
    AgreementStats,
    ConsensusResult,
    Role,
    RoleSelection,
    agreement_stats,
    consensus_merge,
    format_agreement_table,
    role_select,
)
from .pipelines import (
    GenerationJob,
    GranularitySpec,
    Method,
    NodeCount,
    OneShotExemplar,
    PromptInstruction,
    apply_gold_timestamps,
    generate,
    hm_day_summaries,
    hm_merge,
    lp_generate,
    render_granularity_instruction,
    to_generate,
    truncate_articles,
)

__version__ = "0.1.0"
