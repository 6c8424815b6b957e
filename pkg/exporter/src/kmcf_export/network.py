"""VGG-19 backbone: stage name table, weight loading, activation capture.

The exportable outputs are the last convolution of each stage, i.e. the five
tensors feeding the max-pool layers. Shallow stages keep full resolution,
each pool doubles the effective cell size.
"""

import os

import numpy as np
import torch
from torchvision.models import vgg19

from .errors import MissingWeightsError

# name -> (conv index, relu index, cumulative stride) in vgg19().features
_STAGES = {
    "block1_conv2": (2, 3, 1),
    "block2_conv2": (7, 8, 2),
    "block3_conv4": (16, 17, 4),
    "block4_conv4": (25, 26, 8),
    "block5_conv4": (34, 35, 16),
}

DEFAULT_LAYERS = tuple(_STAGES)


def stage_info(name: str) -> tuple[int, int, int]:
    try:
        return _STAGES[name]
    except KeyError:
        known = ", ".join(_STAGES)
        raise ValueError(f"unknown layer {name!r}; choose from: {known}") from None


def cell_size(name: str) -> int:
    return stage_info(name)[2]


def build_network(weights_path: str | None = None,
                  random_seed: int | None = None) -> torch.nn.Module:
    """Return the convolutional trunk, ready for inference.

    Weights come from a saved state dict (either a full vgg19 checkpoint or
    just its feature trunk) or, for weight-free environments, from a seeded
    random initialization that is reproducible run to run.
    """
    if weights_path:
        if not os.path.exists(weights_path):
            raise MissingWeightsError(f"weights file not found: {weights_path}")
        model = vgg19(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        if any(key.startswith("features.") for key in state):
            state = {key[len("features."):]: value for key, value in state.items()
                     if key.startswith("features.")}
        model.features.load_state_dict(state)
    elif random_seed is not None:
        torch.manual_seed(random_seed)
        model = vgg19(weights=None)
    else:
        raise MissingWeightsError(
            "no weights source: provide a state-dict file or a deterministic "
            "init seed")
    trunk = model.features
    trunk.eval()
    for param in trunk.parameters():
        param.requires_grad_(False)
    return trunk


def stage_activations(trunk: torch.nn.Module, batch: np.ndarray,
                      layer_names, post_relu: bool = True) -> dict:
    """Forward a (n, 3, h, w) float32 batch, capturing each requested stage.

    Returns {name: float32 array (n, channels, rows, cols)}. The forward stops
    at the deepest requested layer.
    """
    wanted = {}
    for name in layer_names:
        conv_idx, relu_idx, _ = stage_info(name)
        wanted[relu_idx if post_relu else conv_idx] = name
    deepest = max(wanted)

    out = {}
    x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
    with torch.no_grad():
        for idx, module in enumerate(trunk):
            x = module(x)
            if idx in wanted:
                out[wanted[idx]] = x.numpy().astype(np.float32, copy=True)
            if idx == deepest:
                break
    return out
