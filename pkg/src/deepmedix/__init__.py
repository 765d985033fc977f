"""Efficient-CNN medical image classifier with a federated-averaging simulator.

NumPy-only training stack: MobileNetV2 backbone, a dense classification head
with eight ablation variants, SGD/Adam/SVRG, federated averaging, FLOP
accounting and a pullback-metric probe.
"""

from .architecture import (VARIANTS, ArchitectureConfig, BackboneSpec, HeadSpec, build_backbone,
                           build_head, build_variant)
from .graph import GraphBuilder, ModelGraph
from .objective import ModelObjective

__all__ = ["VARIANTS", "ArchitectureConfig", "BackboneSpec", "HeadSpec", "build_backbone",
           "build_head", "build_variant", "GraphBuilder", "ModelGraph", "ModelObjective"]
__version__ = "0.1.0"
