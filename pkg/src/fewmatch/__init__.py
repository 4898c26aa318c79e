"""Few-shot relation classification via multi-level matching and aggregation.

A desk-scale, from-scratch implementation: a float64 autodiff core, a CNN
context encoder with position features, interactive local/instance/class
matching, an episodic training harness, and a ten-variant ablation matrix.
"""

from .autodiff import Tensor, backward, no_grad, sgd_step
from .data import (Corpus, EmbeddingTable, Episode, Instance, load_corpus,
                   load_embeddings, position_indices, sample_episode)
from .params import ModelDims, ParameterSet
from .training import TrainConfig, episode_forward, evaluate, train_model
from .variants import AblationSpec, from_id as ablation_from_id

__version__ = "0.1.0"

__all__ = [
    "AblationSpec", "Corpus", "EmbeddingTable", "Episode", "Instance",
    "ModelDims", "ParameterSet", "Tensor", "TrainConfig", "ablation_from_id",
    "backward", "episode_forward", "evaluate", "load_corpus",
    "load_embeddings", "no_grad", "position_indices", "sample_episode",
    "sgd_step", "train_model",
]
