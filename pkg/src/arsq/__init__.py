"""Auto-regressive soft Q-learning for continuous control with coarse-to-fine discretized actions."""
from .action_codec import ActionSpec, decode, encode
from .config import ConfigError, TrainConfig, load_config
from .model import AdvantageNetwork, ARSQAgent, ConditioningOrder, select_action
from .trainer import Trainer, evaluate, train

__all__ = [
    "ActionSpec", "encode", "decode", "ConfigError", "TrainConfig", "load_config", "AdvantageNetwork", "ARSQAgent",
    "ConditioningOrder", "select_action", "Trainer", "evaluate", "train",
]
__version__ = "0.1.0"
