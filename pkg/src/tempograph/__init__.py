"""Continuous-time dynamic graph learning with memory and trajectory encoding streams."""
from .events import EventLog, SplitSpec, SyntheticSpec, TemporalNeighborhoodStore
from .model import TETGN, ModelConfig
from .tasks import EvalReport, RunSpec, TrainConfig
from .trajectory import TeParams

__all__ = ["EventLog", "SplitSpec", "SyntheticSpec", "TemporalNeighborhoodStore", "TETGN",
           "ModelConfig", "EvalReport", "RunSpec", "TrainConfig", "TeParams"]
__version__ = "0.1.0"
