"""Gated cross networks for CTR prediction with field-level dimension optimization."""

from .crossnet import CrossStack, GatedCrossParams, GateMode, gated_cross_backward, gated_cross_forward, stack_forward
from .embedding import EmbeddingTables, init_tables, lookup_concat
from .features import DatasetSchema, EncodedDataset, build_schema, discretize_numeric, split_dataset
from .model import Model, Topology, Variant, build_model, logloss
from .training import TrainConfig, auc, train

__version__ = "0.1.0"
