"""Extractor registry: which backbones the bridge can run, and how.

Registry ids cover the ArcFace-family backbones (512-d embeddings, 112x112
aligned RGB input) plus a ``torchscript`` escape hatch that runs any scripted
extractor module, so backbones without an in-tree implementation (HRNet, Swin,
RepVGG, AttentionNet exports and the like) plug in as files.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .backbones import IRESNET_LAYERS, build_iresnet

INIT_SEED = 20240531


@dataclass(frozen=True)
class ModelSpec:
    name: str
    family: str  # "iresnet" | "torchscript"
    dim: int = 512
    input_size: int = 112
    variant: str | None = None


REGISTRY = {
    # ArcFace-family ids map onto iresnet variants
    "arcface-r100": ModelSpec("arcface-r100", "iresnet", variant="iresnet100"),
    "arcface-r50": ModelSpec("arcface-r50", "iresnet", variant="iresnet50"),
    "elasticface-r100": ModelSpec("elasticface-r100", "iresnet", variant="iresnet100"),
    **{
        name: ModelSpec(name, "iresnet", variant=name)
        for name in IRESNET_LAYERS
    },
    "torchscript": ModelSpec("torchscript", "torchscript"),
}


def model_spec(name: str) -> ModelSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown model id {name!r}; known: {', '.join(sorted(REGISTRY))}"
        ) from None


def load_model(spec: ModelSpec, weights_path: str | None,
               allow_untrained: bool = False) -> torch.nn.Module:
    """Instantiate the extractor in eval mode.

    iresnet variants load a state dict from ``weights_path``; without one the
    model is refused unless ``allow_untrained`` asks for a seeded random
    initialization (deterministic, for smoke tests only). ``torchscript``
    loads the scripted module itself from ``weights_path``.
    """
    if spec.family == "torchscript":
        if not weights_path:
            raise ValueError("torchscript models need a weights path")
        model = torch.jit.load(weights_path, map_location="cpu")
    else:
        torch.manual_seed(INIT_SEED)
        model = build_iresnet(spec.variant, num_features=spec.dim)
        if weights_path:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        elif not allow_untrained:
            raise ValueError(
                f"no weights for {spec.name!r}; pass weights= or set "
                f"allow_untrained=true (smoke tests only)"
            )
    model.eval()
    return model
