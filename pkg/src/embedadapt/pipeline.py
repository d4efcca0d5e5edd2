"""End-to-end drivers over a synthetic world.

These compose the spliceable stages (pair -> fit -> apply -> channel ->
calibrate -> attack) for experiments that live entirely in a synthetic world;
with real extractors and a real generator, the same stages run individually
through the CLI and files.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

from .adapter import AdapterModel, TrainConfig, apply, fit
from .attack import (
    AblationPoint,
    AttackContext,
    AttackReport,
    AttackRun,
    TransferabilityMatrix,
    ablation_curve,
    evaluate_sar,
    transferability_matrix,
)
from .metrics import OperatingPoint, build_scores, calibrate_threshold
from .store import PairedEmbeddings, pair
from .synthworld import World, embed, simulate_reconstruction

DEFAULT_TARGET_FMR = 1e-3


def training_pairs(world: World, victim_id: str) -> PairedEmbeddings:
    """Victim/foundation embedding pairs over the world's training images."""
    victim = world.model(victim_id)
    src = embed(victim, world.train_population, 1)
    tgt = embed(world.fm_model, world.train_population, 1)
    return pair(src, tgt)


def operating_point_for(
    world: World, target_id: str, target_fmr: float = DEFAULT_TARGET_FMR
) -> OperatingPoint:
    """Calibrate the target model's threshold from its bona fide eval scores."""
    enrolled = embed(world.model(target_id), world.eval_population,
                     world.config.samples_per_id)
    return calibrate_threshold(build_scores(enrolled, enrolled), target_fmr)


def attack_context(
    world: World,
    victim_id: str,
    target_id: str,
    train_config: TrainConfig,
    target_fmr: float = DEFAULT_TARGET_FMR,
    reference: str = "self",
) -> AttackContext:
    samples = world.config.samples_per_id
    leaked = embed(world.model(victim_id), world.eval_population, samples)
    enrolled = embed(world.model(target_id), world.eval_population, samples)
    op = calibrate_threshold(build_scores(enrolled, enrolled), target_fmr)
    return AttackContext(
        victim_model_id=victim_id,
        target_model_id=target_id,
        leaked=leaked,
        enrolled=enrolled,
        reconstruct=partial(
            simulate_reconstruction, channel=world.channel, target=world.model(target_id)
        ),
        operating_point=op,
        train_config=train_config,
        reference=reference,
    )


def run_attack_with_adapter(
    context: AttackContext, adapter: AdapterModel
) -> AttackReport:
    translated = apply(adapter, context.leaked)
    reconstructed = context.reconstruct(translated)
    run = AttackRun(
        victim_model_id=context.victim_model_id,
        target_model_id=context.target_model_id,
        enrolled=context.enrolled,
        reconstructed=reconstructed,
        operating_point=context.operating_point,
    )
    return evaluate_sar(run, reference=context.reference)


@dataclass(frozen=True)
class BlackboxResult:
    adapter: AdapterModel
    report: AttackReport


def run_blackbox(
    world: World,
    victim_id: str,
    target_id: str,
    train_config: TrainConfig,
    target_fmr: float = DEFAULT_TARGET_FMR,
    reference: str = "self",
) -> BlackboxResult:
    """Full pipeline: pair, fit, translate, reconstruct, score at FMR target."""
    context = attack_context(world, victim_id, target_id, train_config,
                             target_fmr, reference)
    adapter = fit(training_pairs(world, victim_id), train_config)
    return BlackboxResult(adapter=adapter, report=run_attack_with_adapter(context, adapter))


def run_transferability(
    world: World,
    victim_id: str,
    train_config: TrainConfig,
    target_fmr: float = DEFAULT_TARGET_FMR,
    reference: str = "self",
) -> TransferabilityMatrix:
    """Attack every zoo model with reconstructions from one victim's embeddings.

    The adapter is trained once (it depends only on the victim); each target
    gets its own calibrated operating point.
    """
    adapter = fit(training_pairs(world, victim_id), train_config)
    samples = world.config.samples_per_id
    leaked = embed(world.model(victim_id), world.eval_population, samples)
    translated = apply(adapter, leaked)
    runs = []
    for target_id in world.model_ids():
        target = world.model(target_id)
        enrolled = embed(target, world.eval_population, samples)
        op = calibrate_threshold(build_scores(enrolled, enrolled), target_fmr)
        reconstructed = simulate_reconstruction(translated, world.channel, target)
        runs.append(
            AttackRun(
                victim_model_id=victim_id,
                target_model_id=target_id,
                enrolled=enrolled,
                reconstructed=reconstructed,
                operating_point=op,
            )
        )
    return transferability_matrix(runs, reference=reference)


def run_ablation(
    world: World,
    victim_id: str,
    target_id: str,
    sizes,
    train_config: TrainConfig,
    target_fmr: float = DEFAULT_TARGET_FMR,
    reference: str = "self",
) -> list[AblationPoint]:
    """Training-set-size ablation of the full attack pipeline."""
    context = attack_context(world, victim_id, target_id, train_config,
                             target_fmr, reference)
    return ablation_curve(training_pairs(world, victim_id), sizes, context)
