"""triad: a desk-scale decoupled reinforcement fine-tuning framework.

Explorer, trainer, and a durable experience buffer, built around exact
tabular policies so every algorithm is auditable end to end.
"""

from .algorithms import AlgorithmConfig, Variant
from .buffer import DatasetStore, DPOStore, ExperienceBuffer
from .explorer import WorkflowRunPolicy, explore_loop
from .orchestrator import (
    RunConfig,
    RunReport,
    run,
    run_bench,
    run_both,
    run_train,
    run_train_only,
)
from .policy import PolicyParams, Vocabulary, init_params
from .records import DatasetRecord, DPORecord, Experience, ExperienceState, TaskGroup
from .workflows import RolloutArgs, Task, make_task

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "Variant",
    "DatasetStore",
    "DPOStore",
    "ExperienceBuffer",
    "WorkflowRunPolicy",
    "explore_loop",
    "RunConfig",
    "RunReport",
    "run",
    "run_bench",
    "run_both",
    "run_train",
    "run_train_only",
    "PolicyParams",
    "Vocabulary",
    "init_params",
    "DatasetRecord",
    "DPORecord",
    "Experience",
    "ExperienceState",
    "TaskGroup",
    "RolloutArgs",
    "Task",
    "make_task",
    "__version__",
]
