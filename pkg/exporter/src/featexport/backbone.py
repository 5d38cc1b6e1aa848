"""Backbone loading and intermediate-activation extraction.

The backbone is a torchvision ResNet50.  Weights come from a local state-dict
file when given; otherwise the network is randomly initialized from the seed,
which keeps the export byte-reproducible in environments without downloaded
weights (shapes and determinism do not depend on training).
"""

import numpy as np
import torch
from torchvision.models import resnet50

# defaults produce the two interchange shapes: a conv4-stage block output
# (14x14x1024) and an internal bottleneck activation (14x14x256)
DEFAULT_TAPS = ("layer3", "layer3.5.bn2")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class TapNotFoundError(Exception):
    """A requested tap-point layer name does not exist in the backbone."""


def load_backbone(name="resnet50", weights_path=None, seed=0):
    if name != "resnet50":
        raise ValueError(f"unsupported backbone {name!r}; only resnet50 is wired up")
    torch.manual_seed(seed)
    model = resnet50(weights=None)
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def resolve_taps(model, tap_names):
    modules = dict(model.named_modules())
    missing = [t for t in tap_names if t not in modules]
    if missing:
        available = sorted(n for n in modules if n)
        raise TapNotFoundError(
            f"tap point(s) {missing} not found; available layers: {available}")
    return [modules[t] for t in tap_names]


class Extractor:
    """Runs images through the backbone and collects the two tap activations
    as (H, W, C) float32 arrays."""

    def __init__(self, backbone="resnet50", weights_path=None, seed=0,
                 taps=DEFAULT_TAPS):
        torch.set_num_threads(1)  # bitwise-reproducible inference
        self.model = load_backbone(backbone, weights_path, seed)
        self.taps = tuple(taps)
        self._captured = {}
        for name, module in zip(self.taps, resolve_taps(self.model, self.taps)):
            module.register_forward_hook(self._hook(name))

    def _hook(self, name):
        def capture(module, inputs, output):
            self._captured[name] = output
        return capture

    def run(self, image_chw):
        """image_chw: float32 numpy (3, H, W), already normalized."""
        self._captured.clear()
        with torch.no_grad():
            self.model(torch.from_numpy(image_chw[None]))
        out = []
        for name in self.taps:
            act = self._captured[name][0]              # (C, H, W)
            out.append(act.permute(1, 2, 0).contiguous().numpy().astype(np.float32))
        return out
