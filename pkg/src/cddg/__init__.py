"""Dual-encoder contrastive disentanglement for domain generalization."""

from .core import DualEmbeddings, LabelSpace
from .losses import LossConfig, ce_dis, dscl_comb, dscl_ind, sup_contrastive
from .networks import EncoderSpec, ModelBundle, init_bundle
from .training import TrainConfig, select_model, train

__all__ = [
    "DualEmbeddings",
    "EncoderSpec",
    "LabelSpace",
    "LossConfig",
    "ModelBundle",
    "TrainConfig",
    "ce_dis",
    "dscl_comb",
    "dscl_ind",
    "init_bundle",
    "select_model",
    "sup_contrastive",
    "train",
]
