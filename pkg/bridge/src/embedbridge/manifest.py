"""Extraction manifests: plain key=value files describing one extraction run."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .registry import ModelSpec, model_spec

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


@dataclass(frozen=True)
class ExtractionManifest:
    """What to run over which images, and where the embeddings go.

    ``dim`` must match the model's embedding dimension (512 for the usual
    face-recognition backbones); extraction aborts on any disagreement.
    """

    model: str
    images: str
    out: str
    weights: str | None = None
    align_note: str = ""
    dim: int = 512
    allow_untrained: bool = False
    batch_size: int = 32

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        spec = self.spec()
        if spec.family != "torchscript" and spec.dim != self.dim:
            raise ValueError(
                f"manifest dim {self.dim} does not match {spec.name!r} "
                f"embedding dimension {spec.dim}"
            )

    def spec(self) -> ModelSpec:
        return model_spec(self.model)

    @classmethod
    def from_file(cls, path) -> "ExtractionManifest":
        values: dict = {}
        casts = {"dim": int, "batch_size": int,
                 "allow_untrained": lambda v: _BOOL[v.lower()]}
        known = {"model", "images", "out", "weights", "align_note",
                 "dim", "allow_untrained", "batch_size"}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = casts.get(key, str)(value)
            except (ValueError, KeyError):
                raise ValueError(f"{path}:{lineno}: bad value for {key!r}") from None
        for required in ("model", "images", "out"):
            if required not in values:
                raise ValueError(f"{path}: missing required key {required!r}")
        return cls(**values)
