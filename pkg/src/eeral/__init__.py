"""Active learning on scene graphs by expected average entropy reduction."""

from .active import IterationRecord, LoopConfig, oracle_answer, run_active_learning
from .graph import (AnnotationPool, Dataset, GroundTruth, LabelSpace, NodeRef, SceneGraph,
                    commit_labels, new_scene_graph)
from .inference import EXACT, SUM_PRODUCT, InferenceConfig, Marginals, PotentialTables, infer
from .model import ModelParams, TrainConfig, fit, loss, loss_gradient
from .selection import STRATEGIES, SelectionScore, score, top_k
from .synthgen import GenConfig, generate, preset

__version__ = "0.1.0"
