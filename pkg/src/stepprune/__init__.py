"""Step-level compression of LLM-agent trajectory prompts.

The package splits a role-marked prompt into structural blocks and
(action, observation) steps, keeps a deterministic floor plus the
highest-scoring steps under a character budget, and renders the rest as
compact elision markers. Accounting, audits, and statistics utilities
cover the evaluation side.
"""

from .accounting import (
    CellMetrics,
    DEFAULT_PRICES,
    PairedTest,
    Price,
    PriceTable,
    bootstrap_ci,
    cell_metrics,
    cost_per_task,
    eff_ratio,
    holm_adjust,
    jaccard_overlap,
    mean_jaccard,
    paired_tests,
    wilcoxon_signed_rank,
)
from .atoms import AtomRuleSet, DEFAULT_RULES, StepAtom, load_rules, rules_for_env
from .audit import AuditReport, audit, detect_cutoff, longest_action_run, trajectory_hash
from .engine import (
    BaselineMethod,
    CompressedContext,
    CompressionConfig,
    CompressionPlan,
    FloorK,
    MASK_TOKEN,
    NoComp,
    ObsMask,
    RandomStep,
    TruncateN,
    baseline_compress,
    compress,
    compute_floor,
    elision_marker,
    greedy_fill,
    render,
)
from .errors import (
    ArtifactError,
    JsonLineError,
    PairingError,
    SchemaError,
    ScoringError,
    StepPruneError,
    StructureError,
)
from .jsonl import EVAL_LOG, RAW_PROMPT, read_trajectories, write_trajectories
from .parser import ParsedContext, group_context, parse, reassemble, segment_blocks
from .scoring import (
    LexicalScorer,
    PortableScorer,
    ScoreRequest,
    Scorer,
    StepScore,
    load_portable_scorer,
    score_steps,
)
from .simulate import CriticalKeywordScorer, simulate_cell
from .trajectory import Role, RoleBlock, Step, TaskLogRecord, Trajectory

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "AtomRuleSet",
    "AuditReport",
    "BaselineMethod",
    "CellMetrics",
    "CompressedContext",
    "CompressionConfig",
    "CompressionPlan",
    "CriticalKeywordScorer",
    "DEFAULT_PRICES",
    "DEFAULT_RULES",
    "EVAL_LOG",
    "FloorK",
    "JsonLineError",
    "LexicalScorer",
    "MASK_TOKEN",
    "NoComp",
    "ObsMask",
    "PairedTest",
    "PairingError",
    "ParsedContext",
    "PortableScorer",
    "Price",
    "PriceTable",
    "RAW_PROMPT",
    "RandomStep",
    "Role",
    "RoleBlock",
    "SchemaError",
    "ScoreRequest",
    "Scorer",
    "ScoringError",
    "Step",
    "StepAtom",
    "StepPruneError",
    "StepScore",
    "StructureError",
    "TaskLogRecord",
    "Trajectory",
    "TruncateN",
    "audit",
    "baseline_compress",
    "bootstrap_ci",
    "cell_metrics",
    "compress",
    "compute_floor",
    "cost_per_task",
    "detect_cutoff",
    "eff_ratio",
    "elision_marker",
    "greedy_fill",
    "group_context",
    "holm_adjust",
    "jaccard_overlap",
    "load_portable_scorer",
    "load_rules",
    "longest_action_run",
    "mean_jaccard",
    "paired_tests",
    "parse",
    "read_trajectories",
    "reassemble",
    "render",
    "rules_for_env",
    "score_steps",
    "segment_blocks",
    "simulate_cell",
    "trajectory_hash",
    "wilcoxon_signed_rank",
    "write_trajectories",
]
