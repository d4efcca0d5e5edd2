"""Success-attack-rate evaluation, transferability, ablations, and reports.

An attack presents reconstructed probes to a verification system operating at
a threshold calibrated from bona fide scores; a probe succeeds when its
cosine score against its reference template reaches the threshold. By default
the reference is the enrolled template with the probe's own (subject, sample)
key, i.e. the account whose leaked embedding was inverted; an alternate mode
compares against a different sample of the same subject.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .adapter import TrainConfig, apply, fit
from .errors import DegenerateInputError, ValidationError
from .metrics import OperatingPoint
from .store import EmbeddingSet, Key, PairedEmbeddings

REFERENCE_MODES = ("self", "other-sample")


@dataclass(frozen=True)
class AttackRun:
    """One attack instance: reconstructed probes against an enrolled gallery."""

    victim_model_id: str
    target_model_id: str
    enrolled: EmbeddingSet
    reconstructed: EmbeddingSet
    operating_point: OperatingPoint

    def __post_init__(self):
        if self.enrolled.dim != self.reconstructed.dim:
            raise ValidationError(
                f"enrolled dim {self.enrolled.dim} != reconstructed dim "
                f"{self.reconstructed.dim}"
            )
        enrolled_keys = set(self.enrolled.keys())
        for key in self.reconstructed.keys():
            if key not in enrolled_keys:
                raise ValidationError(
                    f"reconstructed probe {key!r} has no enrolled template"
                )


@dataclass(frozen=True)
class AttackReport:
    """SAR plus per-probe outcomes; sar is exactly n_successes / n_attacks."""

    sar: float
    n_attacks: int
    n_successes: int
    outcomes: tuple[tuple[Key, float, bool], ...]
    config: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AblationPoint:
    """One training-set-size ablation measurement."""

    n_train_pairs: int
    train_time_seconds: float
    sar: float

    def __post_init__(self):
        if self.n_train_pairs <= 0:
            raise ValidationError("n_train_pairs must be positive")


@dataclass(frozen=True)
class TransferEntry:
    target_model_id: str
    report: AttackReport
    same_model: bool


@dataclass(frozen=True)
class TransferabilityMatrix:
    """SAR per target model for attacks derived from one victim model."""

    victim_model_id: str
    entries: tuple[TransferEntry, ...]


@dataclass
class AttackContext:
    """Everything the pipeline drivers need besides the training pairs.

    ``reconstruct`` maps a foundation-space embedding set to target-space
    probes (in the synthetic world this is the simulated channel; with real
    models it is generation plus re-extraction).
    """

    victim_model_id: str
    target_model_id: str
    leaked: EmbeddingSet
    enrolled: EmbeddingSet
    reconstruct: Callable[[EmbeddingSet], EmbeddingSet]
    operating_point: OperatingPoint
    train_config: TrainConfig
    reference: str = "self"


def _unit_rows(embeddings: EmbeddingSet, what: str) -> np.ndarray:
    mat = embeddings.matrix().astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        key = embeddings.records[int(zero[0])].key
        raise DegenerateInputError(f"zero {what} vector at key {key!r}")
    return mat / norms[:, None]


def _reference_rows(
    enrolled: EmbeddingSet, probes: EmbeddingSet, reference: str
) -> np.ndarray:
    """Index into enrolled for each probe, honoring the reference mode."""
    if reference not in REFERENCE_MODES:
        raise ValidationError(f"reference must be one of {REFERENCE_MODES}")
    index = {rec.key: i for i, rec in enumerate(enrolled.records)}
    rows = np.empty(len(probes), dtype=np.intp)
    if reference == "self":
        for i, rec in enumerate(probes.records):
            row = index.get(rec.key)
            if row is None:
                raise ValidationError(f"reconstructed probe {rec.key!r} has no enrolled template")
            rows[i] = row
        return rows
    by_subject: dict[str, list[int]] = {}
    for i, rec in enumerate(enrolled.records):
        by_subject.setdefault(rec.subject_id, []).append(i)
    for i, rec in enumerate(probes.records):
        if rec.key not in index:
            raise ValidationError(f"reconstructed probe {rec.key!r} has no enrolled template")
        row = next(
            (j for j in by_subject.get(rec.subject_id, [])
             if enrolled.records[j].sample_id != rec.sample_id),
            None,
        )
        if row is None:
            raise ValidationError(
                f"no other-sample reference for probe {rec.key!r} "
                f"(subject has a single enrolled sample)"
            )
        rows[i] = row
    return rows


def evaluate_sar(run: AttackRun, reference: str = "self") -> AttackReport:
    """Score every reconstructed probe against its reference template.

    A probe succeeds when cosine(probe, reference) >= the calibrated
    threshold. The operating point must come from bona fide scores of the
    target model, never from attack scores.
    """
    probes = run.reconstructed
    threshold = run.operating_point.threshold
    if len(probes) == 0:
        raise ValidationError("no reconstructed probes to evaluate")
    rows = _reference_rows(run.enrolled, probes, reference)
    p = _unit_rows(probes, "reconstructed")
    g = _unit_rows(run.enrolled, "enrolled")
    scores = np.einsum("ij,ij->i", p, g[rows])
    success = scores >= threshold
    n = len(probes)
    n_success = int(success.sum())
    outcomes = tuple(
        (rec.key, float(scores[i]), bool(success[i]))
        for i, rec in enumerate(probes.records)
    )
    return AttackReport(
        sar=n_success / n,
        n_attacks=n,
        n_successes=n_success,
        outcomes=outcomes,
        config={
            "victim_model_id": run.victim_model_id,
            "target_model_id": run.target_model_id,
            "threshold": threshold,
            "target_fmr": run.operating_point.target_fmr,
            "reference": reference,
        },
    )


def transferability_matrix(
    runs: Sequence[AttackRun], reference: str = "self"
) -> TransferabilityMatrix:
    """One SAR per target model; every run must share the victim model.

    Cells are computed by :func:`evaluate_sar` on each run, so a matrix cell
    always equals the corresponding standalone evaluation.
    """
    if not runs:
        raise ValidationError("transferability requires at least one run")
    victim = runs[0].victim_model_id
    for run in runs:
        if run.victim_model_id != victim:
            raise ValidationError(
                f"runs mix victim models: {victim!r} vs {run.victim_model_id!r}"
            )
    targets = [run.target_model_id for run in runs]
    if len(set(targets)) != len(targets):
        raise ValidationError(f"duplicate target model ids in {targets}")
    entries = tuple(
        TransferEntry(
            target_model_id=run.target_model_id,
            report=evaluate_sar(run, reference=reference),
            same_model=run.target_model_id == victim,
        )
        for run in runs
    )
    return TransferabilityMatrix(victim_model_id=victim, entries=entries)


def ablation_curve(
    pairs: PairedEmbeddings,
    sizes: Sequence[int],
    context: AttackContext,
) -> list[AblationPoint]:
    """Attack performance versus number of training pairs.

    Pairs are shuffled once under the run seed and each size takes a prefix,
    so the subsets are nested and the curve is reproducible. Each point fits
    an adapter per the context's train config, runs the full reconstruction
    pipeline, and records the fit wall time and the resulting SAR.
    """
    sizes = list(sizes)
    if not sizes:
        raise ValidationError("sizes must be non-empty")
    if any(s <= 0 for s in sizes):
        raise ValidationError("sizes must be positive")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError(f"sizes must be strictly increasing, got {sizes}")
    if sizes[-1] > len(pairs):
        raise ValidationError(
            f"largest size {sizes[-1]} exceeds available pairs ({len(pairs)})"
        )
    order = np.random.default_rng(context.train_config.seed).permutation(len(pairs))
    shuffled = pairs.select(order)
    points = []
    for size in sizes:
        subset = shuffled.select(np.arange(size))
        start = time.perf_counter()
        model = fit(subset, context.train_config)
        train_time = time.perf_counter() - start
        translated = apply(model, context.leaked)
        reconstructed = context.reconstruct(translated)
        run = AttackRun(
            victim_model_id=context.victim_model_id,
            target_model_id=context.target_model_id,
            enrolled=context.enrolled,
            reconstructed=reconstructed,
            operating_point=context.operating_point,
        )
        report = evaluate_sar(run, reference=context.reference)
        points.append(
            AblationPoint(
                n_train_pairs=size,
                train_time_seconds=train_time,
                sar=report.sar,
            )
        )
    return points


# ---------------------------------------------------------------------------
# report rendering


@dataclass(frozen=True)
class ReportTable:
    """Paper-style matrix table: one label column then one column per model."""

    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple], ...] = ()
    label_header: str = "Method"


@dataclass(frozen=True)
class ResultRow:
    """One line of the canonical long-format results schema."""

    victim: str
    target: str
    dataset: str
    n_train: int | None
    sar: float  # fraction in [0, 1]
    train_time_s: float | None


RESULT_COLUMNS = ("victim", "target", "dataset", "n_train", "sar_percent", "train_time_s")


def format_percent(value: float) -> str:
    """Percentage with two decimals; whole percents keep a single decimal,
    matching the usual table convention (e.g. 100.0, 99.05, 66.67)."""
    if value == round(value):
        return f"{value:.1f}"
    return f"{value:.2f}"


def _format_cell(cell) -> str:
    if isinstance(cell, str):
        return cell
    return format_percent(float(cell))


def _render_markdown(header: list[str], body: list[list[str]]) -> str:
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
    ]
    for row in body:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _render_csv(header: list[str], body: list[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue()


def _result_row_cells(row: ResultRow) -> list[str]:
    return [
        row.victim,
        row.target,
        row.dataset,
        "" if row.n_train is None else str(row.n_train),
        format_percent(row.sar * 100.0),
        "" if row.train_time_s is None else f"{row.train_time_s:.3f}",
    ]


def render_report(report, format: str = "markdown") -> str:
    """Render a ReportTable or a list of ResultRow to markdown or CSV text.

    Numeric matrix cells are percentages and use :func:`format_percent`;
    string cells (externally supplied figures) pass through verbatim. Output
    is deterministic for equal inputs.
    """
    if format not in ("markdown", "csv"):
        raise ValidationError(f"format must be markdown or csv, got {format!r}")
    if isinstance(report, ReportTable):
        header = [report.label_header, *report.columns]
        body = []
        for label, cells in report.rows:
            if len(cells) != len(report.columns):
                raise ValidationError(
                    f"row {label!r} has {len(cells)} cells for "
                    f"{len(report.columns)} columns"
                )
            body.append([label, *[_format_cell(c) for c in cells]])
    else:
        rows = list(report)
        if not all(isinstance(r, ResultRow) for r in rows):
            raise ValidationError(
                "render_report accepts a ReportTable or an iterable of ResultRow"
            )
        header = list(RESULT_COLUMNS)
        body = [_result_row_cells(r) for r in rows]
    if format == "markdown":
        return _render_markdown(header, body)
    return _render_csv(header, body)


def transfer_table(
    matrix: TransferabilityMatrix, include_same_model: bool = False
) -> ReportTable:
    """Matrix table of SAR percentages by target model.

    The same-model column is excluded by default (transferability proper);
    when included its header carries a ``*`` flag.
    """
    columns = []
    cells = []
    for entry in matrix.entries:
        if entry.same_model and not include_same_model:
            continue
        columns.append(entry.target_model_id + ("*" if entry.same_model else ""))
        cells.append(entry.report.sar * 100.0)
    return ReportTable(
        columns=tuple(columns),
        rows=((matrix.victim_model_id, tuple(cells)),),
        label_header="Victim",
    )


def ablation_rows(
    points: Iterable[AblationPoint], victim: str, target: str, dataset: str
) -> list[ResultRow]:
    return [
        ResultRow(
            victim=victim,
            target=target,
            dataset=dataset,
            n_train=p.n_train_pairs,
            sar=p.sar,
            train_time_s=p.train_time_seconds,
        )
        for p in points
    ]
