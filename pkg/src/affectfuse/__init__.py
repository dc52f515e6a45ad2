"""affectfuse: fuse LLM verbose-response text with classic NLP features for
binary affect classification and regression."""

__version__ = "0.1.0"

from .corpus import Example, TaskSpec, personality_task, sentiment_task, suicide_task
from .fusion import FusionPlan, Modality, parse_plan
from .net import LossKind, MLPConfig

__all__ = [
    "Example",
    "FusionPlan",
    "LossKind",
    "MLPConfig",
    "Modality",
    "TaskSpec",
    "parse_plan",
    "personality_task",
    "sentiment_task",
    "suicide_task",
    "__version__",
]
