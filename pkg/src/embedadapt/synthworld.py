"""Desk-scale synthetic stand-ins for embedding extractors and the generator.

A world bundles a latent identity population, a zoo of extractor models
(orthonormal projection + mild tanh nonlinearity + per-sample noise), a
designated foundation extractor, and a reconstruction channel that inverts a
foundation-space embedding back to a latent estimate, perturbs it, and
re-embeds it under any target extractor.

The channel deliberately skips inverting the nonlinearity (it applies the
plain transposed projection to the nonlinear embedding), which injects a
systematic reconstruction error mimicking imperfect generation; the
nonlinearity gain controls how far cross-space relationships deviate from
linear.

All randomness flows from explicit integer seeds through fixed, named
sub-streams, so e.g. adding a model to a world never perturbs the draws of
existing ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .store import EmbeddingSet

logger = logging.getLogger(__name__)

# Sub-stream tags; combined with seeds into SeedSequence entropy.
_STREAM_POPULATION = 1
_STREAM_PROJECTION = 2
_STREAM_SAMPLE_NOISE = 3
_STREAM_CHANNEL = 4

# World-level seed derivation tags.
_TAG_EVAL_POP = 11
_TAG_TRAIN_POP = 12
_TAG_FM_MODEL = 13
_TAG_CHANNEL = 14
_TAG_MODEL_BASE = 100

ORTHONORMALITY_TOL = 1e-6


def _substream(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([e % 2**63 for e in entropy]))


def _derive_seed(master: int, tag: int) -> int:
    return int(np.random.SeedSequence([master % 2**63, tag]).generate_state(1)[0])


@dataclass(frozen=True)
class WorldConfig:
    """Parameters of a synthetic world; defaults give the standard benchmark."""

    latent_dim: int = 64
    dim: int = 512
    n_identities: int = 300
    samples_per_id: int = 2
    n_train_images: int = 6000
    gamma: float = 0.2
    sample_noise: float = 0.2
    generation_noise: float = 0.25
    n_models: int = 6
    seed: int = 0

    def __post_init__(self):
        for name in ("latent_dim", "dim", "n_identities", "samples_per_id",
                     "n_train_images", "n_models"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.dim < self.latent_dim:
            raise ValidationError(
                f"dim ({self.dim}) must be at least latent_dim ({self.latent_dim})"
            )
        for name in ("gamma", "sample_noise", "generation_noise"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be a finite nonnegative real")

    def to_file(self, path) -> None:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "WorldConfig":
        values: dict = {}
        field_types = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in field_types:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            caster = int if field_types[key] in ("int", int) else float
            try:
                values[key] = caster(value.strip())
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad value for {key!r}") from None
        return cls(**values)


@dataclass(frozen=True)
class IdentityPopulation:
    """Latent identities: i.i.d. standard Gaussian vectors with string labels."""

    latent_dim: int
    subject_ids: tuple[str, ...]
    latents: np.ndarray  # (N, latent_dim) float64
    seed: int

    def __post_init__(self):
        latents = np.ascontiguousarray(self.latents, dtype=np.float64)
        if latents.shape != (len(self.subject_ids), self.latent_dim):
            raise ValidationError("latents shape inconsistent with subjects")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise ValidationError("subject_ids must be unique")
        latents.flags.writeable = False
        object.__setattr__(self, "latents", latents)

    @classmethod
    def generate(cls, n_identities: int, latent_dim: int, seed: int,
                 prefix: str = "id") -> "IdentityPopulation":
        rng = _substream(_STREAM_POPULATION, seed)
        latents = rng.standard_normal((n_identities, latent_dim))
        subject_ids = tuple(f"{prefix}{i:05d}" for i in range(n_identities))
        return cls(latent_dim, subject_ids, latents, seed)

    @property
    def identities(self) -> list[tuple[str, np.ndarray]]:
        return [(s, self.latents[i]) for i, s in enumerate(self.subject_ids)]

    def __len__(self) -> int:
        return len(self.subject_ids)


@dataclass(frozen=True)
class SyntheticModel:
    """A stand-in extractor: orthonormal projection, tanh gain, sample noise."""

    model_id: str
    dim: int
    projection: np.ndarray  # (dim, latent_dim), orthonormal columns
    nonlinearity_gain: float
    sample_noise: float
    seed: int

    def __post_init__(self):
        a = np.ascontiguousarray(self.projection, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != self.dim:
            raise ValidationError("projection shape inconsistent with dim")
        gram = a.T @ a
        if np.max(np.abs(gram - np.eye(a.shape[1]))) > ORTHONORMALITY_TOL:
            raise ValidationError("projection columns are not orthonormal")
        if self.nonlinearity_gain < 0 or self.sample_noise < 0:
            raise ValidationError("gain and noise must be nonnegative")
        a.flags.writeable = False
        object.__setattr__(self, "projection", a)

    @classmethod
    def generate(cls, model_id: str, dim: int, latent_dim: int,
                 nonlinearity_gain: float, sample_noise: float, seed: int) -> "SyntheticModel":
        if dim < latent_dim:
            raise ValidationError(f"dim ({dim}) must be at least latent_dim ({latent_dim})")
        rng = _substream(_STREAM_PROJECTION, seed)
        gauss = rng.standard_normal((dim, latent_dim))
        q, r = np.linalg.qr(gauss)
        # canonical column signs so the projection is unique for the seed
        q = q * np.sign(np.diag(r))
        return cls(model_id, dim, q, nonlinearity_gain, sample_noise, seed)

    @property
    def latent_dim(self) -> int:
        return int(self.projection.shape[1])

    def activate(self, preactivation: np.ndarray) -> np.ndarray:
        """Elementwise x + gain * tanh(x)."""
        if self.nonlinearity_gain == 0.0:
            return preactivation
        return preactivation + self.nonlinearity_gain * np.tanh(preactivation)


@dataclass(frozen=True)
class ReconstructionChannel:
    """Simulated generate-then-re-embed path through the foundation space."""

    fm_model: SyntheticModel
    generation_noise: float
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.generation_noise) or self.generation_noise < 0:
            raise ValidationError("generation_noise must be finite and nonnegative")


def _normalize_rows(mat: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"zero-norm {what} at row {int(zero[0])}")
    return mat / norms[:, None]


def embed(model: SyntheticModel, population: IdentityPopulation,
          samples_per_id: int = 1) -> EmbeddingSet:
    """Extract unit-norm embeddings for every (identity, sample) combination.

    A sample j of identity z is l2-normalized phi(A z) + noise, with the noise
    drawn from a stream fixed by the model and population seeds, so repeated
    calls are deterministic.
    """
    if model.latent_dim != population.latent_dim:
        raise ValidationError(
            f"model latent dim {model.latent_dim} != population latent dim "
            f"{population.latent_dim}"
        )
    if samples_per_id < 1:
        raise ValidationError("samples_per_id must be at least 1")
    n = len(population)
    clean = model.activate(population.latents @ model.projection.T)  # (n, dim)
    block = np.repeat(clean, samples_per_id, axis=0)
    if model.sample_noise > 0.0:
        rng = _substream(_STREAM_SAMPLE_NOISE, model.seed, population.seed)
        block = block + model.sample_noise * rng.standard_normal(block.shape)
    block = _normalize_rows(block, f"embedding from {model.model_id}")
    keys = [
        (subject, str(j))
        for subject in population.subject_ids
        for j in range(samples_per_id)
    ]
    return EmbeddingSet.from_matrix(model.model_id, keys, block.astype(np.float32))


def simulate_reconstruction(
    translated: EmbeddingSet,
    channel: ReconstructionChannel,
    target: SyntheticModel,
) -> EmbeddingSet:
    """Stand-in for generating a face from a foundation-space embedding and
    re-extracting it with the target model.

    The latent estimate is the transposed foundation projection applied to the
    (possibly nonlinear) embedding; generation noise perturbs it; the target
    model re-embeds without sample noise. Deterministic under the channel seed.
    """
    fm = channel.fm_model
    if translated.dim != fm.dim:
        raise ValidationError(
            f"translated dim {translated.dim} != foundation dim {fm.dim}"
        )
    if target.latent_dim != fm.latent_dim:
        raise ValidationError("target and foundation models disagree on latent dim")
    z_hat = translated.matrix().astype(np.float64) @ fm.projection  # (n, k)
    if channel.generation_noise > 0.0:
        rng = _substream(_STREAM_CHANNEL, channel.seed)
        z_hat = z_hat + channel.generation_noise * rng.standard_normal(z_hat.shape)
    out = target.activate(z_hat @ target.projection.T)
    out = _normalize_rows(out, f"reconstruction under {target.model_id}")
    return EmbeddingSet.from_matrix(target.model_id, translated.keys(), out.astype(np.float32))


@dataclass(frozen=True)
class World:
    """A reproducible bundle: populations, extractor zoo, foundation, channel."""

    config: WorldConfig
    eval_population: IdentityPopulation
    train_population: IdentityPopulation
    models: tuple[SyntheticModel, ...]
    fm_model: SyntheticModel
    channel: ReconstructionChannel

    def model(self, model_id: str) -> SyntheticModel:
        if model_id == self.fm_model.model_id:
            return self.fm_model
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise ValidationError(f"unknown model id {model_id!r}")

    def model_ids(self) -> list[str]:
        return [m.model_id for m in self.models]


def make_world(config: WorldConfig) -> World:
    """Instantiate a world from its config; bit-identical for equal configs.

    The zoo holds ``n_models`` victim/target extractors with distinct seeds
    plus a foundation extractor; the evaluation population carries
    ``samples_per_id`` samples per identity, while the (unlabeled-style)
    training population provides ``n_train_images`` single-sample identities
    for adapter training pairs.
    """
    master = config.seed
    eval_pop = IdentityPopulation.generate(
        config.n_identities, config.latent_dim, _derive_seed(master, _TAG_EVAL_POP),
        prefix="id",
    )
    train_pop = IdentityPopulation.generate(
        config.n_train_images, config.latent_dim, _derive_seed(master, _TAG_TRAIN_POP),
        prefix="img",
    )
    models = tuple(
        SyntheticModel.generate(
            f"model{i}", config.dim, config.latent_dim,
            config.gamma, config.sample_noise,
            _derive_seed(master, _TAG_MODEL_BASE + i),
        )
        for i in range(config.n_models)
    )
    fm_model = SyntheticModel.generate(
        "fm", config.dim, config.latent_dim, config.gamma, config.sample_noise,
        _derive_seed(master, _TAG_FM_MODEL),
    )
    channel = ReconstructionChannel(
        fm_model=fm_model,
        generation_noise=config.generation_noise,
        seed=_derive_seed(master, _TAG_CHANNEL),
    )
    return World(config, eval_pop, train_pop, models, fm_model, channel)
