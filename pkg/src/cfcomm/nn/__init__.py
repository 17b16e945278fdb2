from .layers import (
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPool2d,
    Relu,
    Reshape,
    Sigmoid,
    Softmax,
    layer_from_config,
)
from .network import Network, ParameterStore, Tape
from .optim import apply_gradients
from .gradcheck import grad_check, check_loss_grads
from .checkpoint import load_checkpoint, save_checkpoint, register_model_type

__all__ = [
    "Conv2d", "Dense", "Flatten", "Layer", "MaxPool2d", "Relu", "Reshape",
    "Sigmoid", "Softmax", "layer_from_config", "Network", "ParameterStore",
    "Tape", "apply_gradients", "grad_check", "check_loss_grads",
    "load_checkpoint", "save_checkpoint", "register_model_type",
]
