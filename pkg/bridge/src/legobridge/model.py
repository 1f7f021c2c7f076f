"""The fixture CNN and the torch-module walk that turns it into records.

The walk understands Conv2d, BatchNorm2d (folded into the preceding conv),
ReLU, MaxPool2d, Flatten, and Linear, which covers LeNet-class nets.  Every
weight matrix of the fixture tiles evenly into 4x4 blocks once flattened:
conv1 (16x16), conv2 (32x64), fc1 (96x128), fc2 (12x96), 984 blocks total.
The classifier head has 12 outputs rather than 10 for exactly that reason;
digit labels only ever use classes 0..9 and the two padding logits just
train toward "never the argmax".
"""

from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from .formats import ROLE_BIAS, ROLE_WEIGHT

NUM_CLASSES = 10
HEAD_WIDTH = 12


def build_fixture_cnn() -> nn.Sequential:
    torch.manual_seed(0)
    return nn.Sequential(
        OrderedDict(
            [
                ("conv1", nn.Conv2d(1, 16, kernel_size=4, stride=2, padding=1)),
                ("relu1", nn.ReLU()),
                ("conv2", nn.Conv2d(16, 32, kernel_size=2, stride=1, padding=1)),
                ("relu2", nn.ReLU()),
                ("pool", nn.MaxPool2d(kernel_size=2, stride=2)),
                ("flatten", nn.Flatten()),
                ("fc1", nn.Linear(128, 96)),
                ("relu3", nn.ReLU()),
                ("fc2", nn.Linear(96, HEAD_WIDTH)),
            ]
        )
    )


def load_fixture_cnn(checkpoint_path) -> nn.Sequential:
    model = build_fixture_cnn()
    state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model


def fold_batchnorm(conv: nn.Conv2d, bn: nn.BatchNorm2d) -> tuple[np.ndarray, np.ndarray]:
    """Weights and bias of the conv that equals conv followed by eval-mode bn.

    y = gamma * (conv(x) - mean) / sqrt(var + eps) + beta folds to
    w' = w * gamma / sqrt(var + eps) (per output channel) and
    b' = (b - mean) * gamma / sqrt(var + eps) + beta.
    """
    with torch.no_grad():
        w = conv.weight.detach().cpu().double().numpy()
        b = (
            conv.bias.detach().cpu().double().numpy()
            if conv.bias is not None
            else np.zeros(w.shape[0], dtype=np.float64)
        )
        gamma = bn.weight.detach().cpu().double().numpy()
        beta = bn.bias.detach().cpu().double().numpy()
        mean = bn.running_mean.detach().cpu().double().numpy()
        var = bn.running_var.detach().cpu().double().numpy()
    scale = gamma / np.sqrt(var + bn.eps)
    w_folded = w * scale[:, None, None, None]
    b_folded = (b - mean) * scale + beta
    return w_folded.astype(np.float32), b_folded.astype(np.float32)


def _pair(value, what: str) -> int:
    if isinstance(value, (tuple, list)):
        if value[0] != value[1]:
            raise ValueError(f"only square {what} supported, got {value}")
        return int(value[0])
    return int(value)


def walk_module(model: nn.Module):
    """Flatten a sequential net into (tensors, manifest) record lists."""
    children = list(model.named_children())
    if not children:
        raise ValueError("model has no layers to export")
    tensors = []
    manifest = []
    i = 0
    while i < len(children):
        name, layer = children[i]
        if isinstance(layer, nn.Conv2d):
            weight = layer.weight.detach().cpu().numpy().astype(np.float32)
            bias = (
                layer.bias.detach().cpu().numpy().astype(np.float32)
                if layer.bias is not None
                else None
            )
            if i + 1 < len(children) and isinstance(children[i + 1][1], nn.BatchNorm2d):
                weight, bias = fold_batchnorm(layer, children[i + 1][1])
                i += 1
            entry = {
                "kind": "conv2d",
                "in_ch": layer.in_channels,
                "out_ch": layer.out_channels,
                "kh": int(layer.kernel_size[0]),
                "kw": int(layer.kernel_size[1]),
                "stride": _pair(layer.stride, "strides"),
                "padding": _pair(layer.padding, "padding"),
                "weight": f"{name}.weight",
            }
            tensors.append((f"{name}.weight", ROLE_WEIGHT, weight))
            if bias is not None:
                tensors.append((f"{name}.bias", ROLE_BIAS, bias))
                entry["bias"] = f"{name}.bias"
            manifest.append(entry)
        elif isinstance(layer, nn.BatchNorm2d):
            raise ValueError(f"batchnorm {name!r} does not follow a conv")
        elif isinstance(layer, nn.Linear):
            tensors.append(
                (f"{name}.weight", ROLE_WEIGHT, layer.weight.detach().cpu().numpy())
            )
            entry = {
                "kind": "dense",
                "in_dim": layer.in_features,
                "out_dim": layer.out_features,
                "weight": f"{name}.weight",
            }
            if layer.bias is not None:
                tensors.append(
                    (f"{name}.bias", ROLE_BIAS, layer.bias.detach().cpu().numpy())
                )
                entry["bias"] = f"{name}.bias"
            manifest.append(entry)
        elif isinstance(layer, nn.ReLU):
            manifest.append({"kind": "relu"})
        elif isinstance(layer, nn.MaxPool2d):
            ks = layer.kernel_size
            kh, kw = (ks, ks) if isinstance(ks, int) else (ks[0], ks[1])
            manifest.append(
                {
                    "kind": "maxpool2d",
                    "kh": int(kh),
                    "kw": int(kw),
                    "stride": _pair(layer.stride, "strides"),
                }
            )
        elif isinstance(layer, nn.Flatten):
            manifest.append({"kind": "flatten"})
        else:
            raise ValueError(f"unsupported layer {name!r}: {type(layer).__name__}")
        i += 1
    return tensors, manifest
