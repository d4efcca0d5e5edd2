"""Learning and applying linear maps between embedding spaces.

Two fitting routes solve the same objective, mean squared error over pairs

    (1/N) sum_i ||W x_i + b - y_i||^2  (+ ridge_lambda ||W||_F^2),

a closed-form ridge/least-squares solve and a minibatch Adam loop matching
the usual training recipe (learning rate 1e-3, 20 epochs). The closed form
is the exact minimizer and doubles as the oracle for the iterative route in
the test suite.

Weights are held and serialized as float32; all fitting arithmetic runs in
float64.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import CorruptionError, RankDeficiencyError, ValidationError
from .store import EmbeddingSet, PairedEmbeddings, _Reader, _check_magic_version, _pack_text

logger = logging.getLogger(__name__)

ADAPTER_MAGIC = b"ADP1"

# Adam moment decay/stability constants; only the learning rate is a tuning
# knob, these stay at their conventional values and are echoed in TrainReport.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

INIT_STD = 0.01

_GRAM_CHUNK = 8192

METHODS = ("closed_form", "iterative")


@dataclass(frozen=True)
class TrainConfig:
    """Fitting options; learning_rate/epochs defaults are the standard recipe."""

    method: str = "iterative"
    ridge_lambda: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    use_bias: bool = True
    normalize_inputs: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.ridge_lambda < 0:
            raise ValidationError("ridge_lambda must be nonnegative")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ValidationError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValidationError("batch_size must be a positive integer")


@dataclass(frozen=True)
class TrainReport:
    """Provenance of a fit: what ran, on how much data, and how well it did."""

    method: str
    n_pairs: int
    final_mse: float
    wall_time_seconds: float
    seed: int | None = None
    loss_history: tuple[float, ...] | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_pairs": self.n_pairs,
            "final_mse": self.final_mse,
            "wall_time_seconds": self.wall_time_seconds,
            "seed": self.seed,
            "loss_history": list(self.loss_history) if self.loss_history is not None else None,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainReport":
        history = data.get("loss_history")
        return cls(
            method=data["method"],
            n_pairs=int(data["n_pairs"]),
            final_mse=float(data["final_mse"]),
            wall_time_seconds=float(data["wall_time_seconds"]),
            seed=data.get("seed"),
            loss_history=tuple(history) if history is not None else None,
            config=dict(data.get("config", {})),
        )

    def with_wall_time(self, seconds: float) -> "TrainReport":
        return TrainReport(
            method=self.method,
            n_pairs=self.n_pairs,
            final_mse=self.final_mse,
            wall_time_seconds=seconds,
            seed=self.seed,
            loss_history=self.loss_history,
            config=self.config,
        )


class AdapterModel:
    """A learned linear map from a source embedding space to a target space."""

    def __init__(
        self,
        source_model_id: str,
        target_model_id: str,
        weights: np.ndarray,
        bias: np.ndarray | None,
        meta: TrainReport,
    ) -> None:
        weights = np.asarray(weights, dtype=np.float32)
        if weights.ndim != 2:
            raise ValidationError(f"weights must be 2-D, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValidationError("weights contain non-finite entries")
        if bias is not None:
            bias = np.asarray(bias, dtype=np.float32)
            if bias.shape != (weights.shape[0],):
                raise ValidationError(
                    f"bias shape {bias.shape} inconsistent with weights {weights.shape}"
                )
            if not np.all(np.isfinite(bias)):
                raise ValidationError("bias contains non-finite entries")
            bias = np.ascontiguousarray(bias)
            bias.flags.writeable = False
        weights = np.ascontiguousarray(weights)
        weights.flags.writeable = False
        self.source_model_id = source_model_id
        self.target_model_id = target_model_id
        self.weights = weights
        self.bias = bias
        self.meta = meta

    @property
    def dim_source(self) -> int:
        return int(self.weights.shape[1])

    @property
    def dim_target(self) -> int:
        return int(self.weights.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, AdapterModel):
            return NotImplemented
        bias_equal = (
            self.bias is None and other.bias is None
        ) or (
            self.bias is not None
            and other.bias is not None
            and np.array_equal(self.bias, other.bias)
        )
        return (
            self.source_model_id == other.source_model_id
            and self.target_model_id == other.target_model_id
            and np.array_equal(self.weights, other.weights)
            and bias_equal
            and self.meta == other.meta
        )

    def __repr__(self) -> str:
        return (
            f"AdapterModel({self.source_model_id!r} -> {self.target_model_id!r}, "
            f"{self.dim_target}x{self.dim_source}, bias={self.bias is not None})"
        )


def _training_matrices(pairs: PairedEmbeddings, normalize_inputs: bool):
    x = pairs.source_matrix
    y = pairs.target_matrix
    if normalize_inputs:
        xn = np.linalg.norm(x.astype(np.float64), axis=1)
        yn = np.linalg.norm(y.astype(np.float64), axis=1)
        if np.any(xn == 0.0) or np.any(yn == 0.0):
            raise ValidationError("normalize_inputs requires nonzero vectors")
        x = (x / xn[:, None]).astype(np.float32)
        y = (y / yn[:, None]).astype(np.float32)
    return x, y


def training_mse(
    weights: np.ndarray,
    bias: np.ndarray | None,
    x: np.ndarray,
    y: np.ndarray,
    chunk: int = _GRAM_CHUNK,
) -> float:
    """(1/N) sum ||W x + b - y||^2, accumulated in float64 over row chunks."""
    w = np.asarray(weights, dtype=np.float64)
    b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValidationError("mse undefined for zero pairs")
    total = 0.0
    for i in range(0, n, chunk):
        xb = np.asarray(x[i : i + chunk], dtype=np.float64)
        yb = np.asarray(y[i : i + chunk], dtype=np.float64)
        r = xb @ w.T + b - yb
        total += float(np.einsum("ij,ij->", r, r))
    return total / n


def _accumulate_moments(x: np.ndarray, y: np.ndarray, chunk: int = _GRAM_CHUNK):
    n, ds = x.shape
    dt = y.shape[1]
    sxx = np.zeros((ds, ds))
    sxy = np.zeros((ds, dt))
    sx = np.zeros(ds)
    sy = np.zeros(dt)
    for i in range(0, n, chunk):
        xb = np.asarray(x[i : i + chunk], dtype=np.float64)
        yb = np.asarray(y[i : i + chunk], dtype=np.float64)
        sxx += xb.T @ xb
        sxy += xb.T @ yb
        sx += xb.sum(axis=0)
        sy += yb.sum(axis=0)
    return sxx, sxy, sx, sy


def fit_closed_form(
    pairs: PairedEmbeddings,
    ridge_lambda: float = 0.0,
    use_bias: bool = True,
    normalize_inputs: bool = False,
) -> AdapterModel:
    """Exact minimizer of the (optionally ridge-penalized) MSE objective.

    Raises
    ------
    RankDeficiencyError
        If ridge_lambda is 0 and the source Gram matrix is singular (e.g.
        fewer independent pairs than source dimensions); the error suggests
        adding ridge.
    """
    if ridge_lambda < 0:
        raise ValidationError("ridge_lambda must be nonnegative")
    start = time.perf_counter()
    x, y = _training_matrices(pairs, normalize_inputs)
    n = x.shape[0]
    sxx, sxy, sx, sy = _accumulate_moments(x, y)
    if use_bias:
        mx = sx / n
        my = sy / n
        cxx = sxx / n - np.outer(mx, mx)
        cxy = sxy / n - np.outer(mx, my)
    else:
        cxx = sxx / n
        cxy = sxy / n
    system = cxx + ridge_lambda * np.eye(cxx.shape[0])
    try:
        np.linalg.cholesky(system)
        wt = np.linalg.solve(system, cxy)
    except np.linalg.LinAlgError:
        if ridge_lambda == 0.0:
            raise RankDeficiencyError(
                f"source Gram matrix is singular for {n} pairs of dimension "
                f"{pairs.dim_source}; pass ridge_lambda > 0 to regularize"
            ) from None
        raise RankDeficiencyError(
            "normal equations not positive definite despite ridge; "
            "inputs may be degenerate"
        ) from None
    w64 = wt.T
    b64 = (my - w64 @ mx) if use_bias else None
    weights = w64.astype(np.float32)
    bias = b64.astype(np.float32) if b64 is not None else None
    final_mse = training_mse(weights, bias, x, y)
    report = TrainReport(
        method="closed_form",
        n_pairs=n,
        final_mse=final_mse,
        wall_time_seconds=time.perf_counter() - start,
        seed=None,
        loss_history=None,
        config={
            "ridge_lambda": ridge_lambda,
            "use_bias": use_bias,
            "normalize_inputs": normalize_inputs,
        },
    )
    return AdapterModel(pairs.source_model_id, pairs.target_model_id, weights, bias, report)


def initial_parameters(dim_source: int, dim_target: int, seed: int):
    """Seeded start for the iterative fit: Gaussian weights (std 0.01), zero bias.

    Returns the parameters and the generator, whose stream continues with the
    per-epoch shuffles, so a fit is reproducible from the seed alone.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, INIT_STD, size=(dim_target, dim_source))
    b = np.zeros(dim_target)
    return w, b, rng


def fit_iterative(pairs: PairedEmbeddings, config: TrainConfig) -> AdapterModel:
    """Minibatch Adam on the MSE objective; deterministic given config.seed.

    Per-epoch mean loss (sample-weighted over the epoch's minibatches) is
    recorded in the report's loss_history; final_mse is the full training-set
    MSE of the stored float32 parameters.
    """
    if config.method != "iterative":
        raise ValidationError(f"fit_iterative requires method='iterative', got {config.method!r}")
    start = time.perf_counter()
    x32, y32 = _training_matrices(pairs, config.normalize_inputs)
    x = x32.astype(np.float64)
    y = y32.astype(np.float64)
    n, ds = x.shape
    dt = y.shape[1]

    w, b, rng = initial_parameters(ds, dt, config.seed)
    w_flat = w.reshape(-1)
    mw = np.zeros(ds * dt)
    vw = np.zeros(ds * dt)
    mb = np.zeros(dt)
    vb = np.zeros(dt)

    lr = config.learning_rate
    step = 0
    history = []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            xb = x[idx]
            yb = y[idx]
            m = idx.size
            r = xb @ w.T
            if config.use_bias:
                r += b
            r -= yb
            epoch_loss += float(np.einsum("ij,ij->", r, r))
            gw = (2.0 / m) * (r.T @ xb)
            step += 1
            _kernels.adam_update(
                w_flat, gw.reshape(-1), mw, vw, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step
            )
            if config.use_bias:
                gb = (2.0 / m) * r.sum(axis=0)
                _kernels.adam_update(
                    b, gb, mb, vb, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, step
                )
        history.append(epoch_loss / n)

    weights = w.astype(np.float32)
    bias = b.astype(np.float32) if config.use_bias else None
    final_mse = training_mse(weights, bias, x32, y32)
    report = TrainReport(
        method="iterative",
        n_pairs=n,
        final_mse=final_mse,
        wall_time_seconds=time.perf_counter() - start,
        seed=config.seed,
        loss_history=tuple(history),
        config={
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "use_bias": config.use_bias,
            "normalize_inputs": config.normalize_inputs,
            "adam_beta1": ADAM_BETA1,
            "adam_beta2": ADAM_BETA2,
            "adam_eps": ADAM_EPS,
            "kernel_backend": _kernels.BACKEND,
        },
    )
    return AdapterModel(pairs.source_model_id, pairs.target_model_id, weights, bias, report)


def fit(pairs: PairedEmbeddings, config: TrainConfig) -> AdapterModel:
    """Dispatch on config.method."""
    if config.method == "closed_form":
        return fit_closed_form(
            pairs,
            ridge_lambda=config.ridge_lambda,
            use_bias=config.use_bias,
            normalize_inputs=config.normalize_inputs,
        )
    return fit_iterative(pairs, config)


def apply(
    adapter: AdapterModel,
    embeddings: EmbeddingSet,
    allow_model_mismatch: bool = False,
    normalize_output: bool = False,
) -> EmbeddingSet:
    """Map every vector through the adapter; labels and order are preserved.

    The output set carries the adapter's target model id. A source model id
    mismatch raises unless ``allow_model_mismatch`` downgrades it to a
    warning. ``normalize_output`` re-normalizes mapped vectors to unit norm
    (off by default).
    """
    if embeddings.dim != adapter.dim_source:
        raise ValidationError(
            f"set dimension {embeddings.dim} does not match adapter source "
            f"dimension {adapter.dim_source}"
        )
    if embeddings.model_id != adapter.source_model_id:
        message = (
            f"set model_id {embeddings.model_id!r} does not match adapter "
            f"source {adapter.source_model_id!r}"
        )
        if not allow_model_mismatch:
            raise ValidationError(message)
        logger.warning("%s (proceeding: mismatch allowed)", message)
    w = adapter.weights.astype(np.float64)
    out = embeddings.matrix().astype(np.float64) @ w.T
    if adapter.bias is not None:
        out += adapter.bias.astype(np.float64)
    result = EmbeddingSet.from_matrix(
        adapter.target_model_id, embeddings.keys(), out.astype(np.float32)
    )
    if normalize_output:
        from .store import l2_normalize

        result = l2_normalize(result)
    return result


def save_adapter(adapter: AdapterModel, path) -> None:
    """Serialize to the ADP1 binary format (deterministic for equal adapters)."""
    meta_json = json.dumps(
        adapter.meta.to_dict(), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    parts = [
        ADAPTER_MAGIC,
        struct.pack("<I", 1),
        struct.pack("<I", adapter.dim_source),
        struct.pack("<I", adapter.dim_target),
        struct.pack("<B", 1 if adapter.bias is not None else 0),
        _pack_text(adapter.source_model_id),
        _pack_text(adapter.target_model_id),
        adapter.weights.astype("<f4", copy=False).tobytes(),
    ]
    if adapter.bias is not None:
        parts.append(adapter.bias.astype("<f4", copy=False).tobytes())
    parts.append(struct.pack("<I", len(meta_json)))
    parts.append(meta_json)
    Path(path).write_bytes(b"".join(parts))


def load_adapter(path) -> AdapterModel:
    """Read an ADP1 file; weights and bias round-trip bit-exactly."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    _check_magic_version(reader, ADAPTER_MAGIC)
    dim_source = reader.u32()
    dim_target = reader.u32()
    if dim_source == 0 or dim_target == 0:
        raise CorruptionError(f"{path}: adapter dimensions must be positive")
    bias_flag = reader.u8()
    if bias_flag not in (0, 1):
        raise CorruptionError(f"{path}: invalid bias flag {bias_flag}")
    source_model_id = reader.text()
    target_model_id = reader.text()
    weights = reader.f32_array(dim_source * dim_target).reshape(dim_target, dim_source)
    bias = reader.f32_array(dim_target) if bias_flag else None
    meta_len = reader.u32()
    meta_raw = reader.take(meta_len)
    reader.expect_eof()
    try:
        meta = TrainReport.from_dict(json.loads(meta_raw.decode("utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptionError(f"{path}: malformed adapter metadata") from exc
    return AdapterModel(source_model_id, target_model_id, weights, bias, meta)
