"""Structure-aware dialogue disentanglement."""

from .corpus import Dialogue, SynthConfig, Utterance, load_dialogue, synth_generate
from .estimator import Disentangler
from .metrics import Partition, evaluate_all
from .pipeline import TrainConfig, cluster, predict, train

__all__ = [
    "Dialogue",
    "Disentangler",
    "Partition",
    "SynthConfig",
    "TrainConfig",
    "Utterance",
    "cluster",
    "evaluate_all",
    "load_dialogue",
    "predict",
    "synth_generate",
    "train",
]
