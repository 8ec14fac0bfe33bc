"""Point-supervised fish segmentation with affinity-refined activations.

A small numpy autodiff engine drives a toy fully-convolutional model whose
activation map is diffused by a learned sparse random walk, trained from one
click per fish with a blob-level counting loss.
"""
from ._jit import backend
from .affinity import NeighborhoodSpec, affinity_weights, random_walk_refine, transition_matrix
from .autodiff import Tensor, backward, gradient_check, no_grad
from .losses import lcfcn_loss, pl_fcn_loss, weighted_ce_loss, weighted_iou_loss
from .models import ALCFCNModel, FSModel

__version__ = "0.1.0"
