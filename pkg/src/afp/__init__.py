"""Desk-scale cross-lingual alignment lab.

A numpy-backed autodiff engine drives a small decoder-only language model
trained on synthetic twin languages with two alignment objectives: an
in-batch contrastive loss over pooled internal representations (MCL) and a
cross-lingual instruction-following loss (CIF), combined as
AFP = MCL + alpha * CIF. Diagnostics quantify how aligned and how uniformly
spread the representation space becomes, and an in-context evaluation
harness scores the resulting model on candidate choice and translation.
"""

from .config import CorpusConfig, EvalConfig, RunConfig, TrainConfig
from .model import ModelConfig, ModelParams, forward, init_params, sequence_nll
from .tensor import Graph, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "CorpusConfig",
    "EvalConfig",
    "Graph",
    "ModelConfig",
    "ModelParams",
    "RunConfig",
    "Tensor",
    "TrainConfig",
    "backward",
    "forward",
    "init_params",
    "sequence_nll",
    "__version__",
]
