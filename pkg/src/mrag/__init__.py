"""One-pass multimodal RAG planning engine and evaluation harness."""

__version__ = "0.1.0"

from .plan import (  # noqa: F401
    Plan,
    PlanStep,
    ToolKind,
    ValueRef,
    archetype_of,
    parse_plan_text,
    serialize_plan,
    tool_usage,
    validate_plan,
)
from .toolkit import (  # noqa: F401
    DEFAULT_SCHEMAS,
    CallCounters,
    Snippet,
    ToolRegistry,
    ToolResult,
    render_prompt,
)
from .dataset import (  # noqa: F401
    BenchmarkInstance,
    dataset_stats,
    diversity_score,
    load_instances,
)
from .executor import ExecutionTrace, execute, resolve_args  # noqa: F401
from .evaluation import (  # noqa: F401
    EvalReport,
    PlanPair,
    aggregate_report,
    judge_answer,
    param_accuracy,
    param_similarity,
    pearson,
    plan_accuracy,
    tool_pr,
)
from .planner import (  # noqa: F401
    PlannerConfig,
    plan_iterative,
    plan_one_pass,
    plan_replay,
    plan_static,
)
