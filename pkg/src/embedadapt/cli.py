"""Experiment runner: the full pipeline as explicit, reproducible subcommands.

Stages persist their artifacts (EMB1/EMB2/ADP1 files, operating-point JSON,
report tables), so externally produced data — real extractor embeddings, real
generator output — can splice in at any boundary. Every command prints one
machine-readable JSON summary line on success; all randomness is controlled
by --seed (falling back to the EMBEDADAPT_SEED environment variable).

Exit codes: 0 success, 1 validation/data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import adapter as adapter_mod
from . import attack as attack_mod
from . import metrics as metrics_mod
from . import pipeline
from . import store
from . import synthworld
from .errors import EmbedAdaptError, ValidationError

SEED_ENV_VAR = "EMBEDADAPT_SEED"


@dataclass(frozen=True)
class RunConfig:
    """Resolved cross-cutting options for one invocation."""

    command: str
    seed: int
    target_fmr: float
    format: str

    def __post_init__(self):
        if not (0.0 < self.target_fmr < 1.0):
            raise ValidationError(f"target_fmr must be in (0, 1), got {self.target_fmr}")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        seed = getattr(args, "seed", None)
        if seed is None:
            env = os.environ.get(SEED_ENV_VAR)
            if env is not None:
                try:
                    seed = int(env)
                except ValueError:
                    raise ValidationError(
                        f"{SEED_ENV_VAR} must be an integer, got {env!r}"
                    ) from None
            else:
                seed = 0
        return cls(
            command=args.command,
            seed=seed,
            target_fmr=getattr(args, "target_fmr", pipeline.DEFAULT_TARGET_FMR),
            format=getattr(args, "format", "markdown"),
        )


def _train_config(args: argparse.Namespace, seed: int) -> adapter_mod.TrainConfig:
    method = {"closed": "closed_form", "iterative": "iterative"}[args.method]
    return adapter_mod.TrainConfig(
        method=method,
        ridge_lambda=args.ridge,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=seed,
        use_bias=not args.no_bias,
        normalize_inputs=args.normalize_inputs,
    )


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("closed", "iterative"), default="iterative",
                   help="fitting route (default: iterative)")
    p.add_argument("--ridge", type=float, default=0.0, metavar="LAMBDA",
                   help="ridge penalty for the closed form (default: 0)")
    p.add_argument("--lr", type=float, default=1e-3,
                   help="learning rate for the iterative fit (default: 1e-3)")
    p.add_argument("--epochs", type=int, default=20,
                   help="epochs for the iterative fit (default: 20)")
    p.add_argument("--batch-size", type=int, default=128,
                   help="minibatch size for the iterative fit (default: 128)")
    p.add_argument("--no-bias", action="store_true",
                   help="fit a pure linear map without bias")
    p.add_argument("--normalize-inputs", action="store_true",
                   help="l2-normalize training vectors before fitting")


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (default: ${SEED_ENV_VAR} or 0)")


def cmd_pair(args: argparse.Namespace) -> dict:
    source = store.read_embeddings(args.source)
    target = store.read_embeddings(args.target)
    pairs = store.pair(source, target)
    store.write_pairs(pairs, args.out)
    return {
        "command": "pair",
        "n_pairs": len(pairs),
        "n_source": len(source),
        "n_target": len(target),
        "out": args.out,
    }


def cmd_fit(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    pairs = store.read_pairs(args.pairs)
    train_config = _train_config(args, cfg.seed)
    model = adapter_mod.fit(pairs, train_config)
    # Timing is a run property, not a model property: the artifact stores a
    # zero wall time so identical invocations stay byte-identical; measured
    # time goes to the summary line.
    persisted = adapter_mod.AdapterModel(
        model.source_model_id,
        model.target_model_id,
        model.weights,
        model.bias,
        model.meta.with_wall_time(0.0),
    )
    adapter_mod.save_adapter(persisted, args.out)
    return {
        "command": "fit",
        "method": model.meta.method,
        "n_pairs": model.meta.n_pairs,
        "final_mse": model.meta.final_mse,
        "wall_time_s": model.meta.wall_time_seconds,
        "out": args.out,
    }


def cmd_apply(args: argparse.Namespace) -> dict:
    model = adapter_mod.load_adapter(args.adapter)
    source = store.read_embeddings(args.source)
    result = adapter_mod.apply(
        model,
        source,
        allow_model_mismatch=args.allow_model_mismatch,
        normalize_output=args.post_normalize,
    )
    store.write_embeddings(result, args.out)
    return {
        "command": "apply",
        "n_records": len(result),
        "model_id": result.model_id,
        "out": args.out,
    }


def cmd_calibrate(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    if args.scores is not None:
        scores = metrics_mod.read_scores_csv(args.scores)
    else:
        if args.probes is None or args.gallery is None:
            raise ValidationError("calibrate needs --scores or both --probes and --gallery")
        probes = store.read_embeddings(args.probes)
        gallery = store.read_embeddings(args.gallery)
        scores = metrics_mod.build_scores(probes, gallery)
    if args.export_scores is not None:
        metrics_mod.write_scores_csv(scores, args.export_scores)
    op = metrics_mod.calibrate_threshold(scores, cfg.target_fmr)
    if args.out is not None:
        Path(args.out).write_text(json.dumps(op.to_dict(), sort_keys=True) + "\n")
    return {"command": "calibrate", "out": args.out, **op.to_dict()}


def _load_operating_point(path: str) -> metrics_mod.OperatingPoint:
    try:
        data = json.loads(Path(path).read_text())
        return metrics_mod.OperatingPoint.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed operating-point JSON") from exc


def cmd_attack(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    enrolled = store.read_embeddings(args.enrolled)
    op = _load_operating_point(args.op)
    if args.reconstructed is not None:
        reconstructed = store.read_embeddings(args.reconstructed)
        target_id = reconstructed.model_id
    else:
        if args.translated is None or args.world is None or args.target is None:
            raise ValidationError(
                "attack needs --reconstructed, or --translated with --world and --target"
            )
        translated = store.read_embeddings(args.translated)
        config = synthworld.WorldConfig.from_file(args.world)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=cfg.seed)
        world = synthworld.make_world(config)
        reconstructed = synthworld.simulate_reconstruction(
            translated, world.channel, world.model(args.target)
        )
        target_id = args.target
    run = attack_mod.AttackRun(
        victim_model_id=args.victim,
        target_model_id=target_id,
        enrolled=enrolled,
        reconstructed=reconstructed,
        operating_point=op,
    )
    report = attack_mod.evaluate_sar(run, reference=args.reference)
    if args.out is not None:
        payload = {
            "sar": report.sar,
            "n_attacks": report.n_attacks,
            "n_successes": report.n_successes,
            "config": report.config,
            "outcomes": [
                {"subject_id": k[0], "sample_id": k[1], "score": s, "success": ok}
                for k, s, ok in report.outcomes
            ],
        }
        Path(args.out).write_text(json.dumps(payload, sort_keys=True) + "\n")
    return {
        "command": "attack",
        "sar": report.sar,
        "n_attacks": report.n_attacks,
        "n_successes": report.n_successes,
        "threshold": op.threshold,
        "out": args.out,
    }


def _world_from_args(args: argparse.Namespace, cfg: RunConfig) -> synthworld.World:
    config = synthworld.WorldConfig.from_file(args.world)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=cfg.seed)
    return synthworld.make_world(config)


def cmd_transfer(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    world = _world_from_args(args, cfg)
    train_config = _train_config(args, cfg.seed)
    matrix = pipeline.run_transferability(
        world, args.victim, train_config, cfg.target_fmr, reference=args.reference
    )
    table = attack_mod.transfer_table(matrix, include_same_model=args.include_same_model)
    text = attack_mod.render_report(table, format=cfg.format)
    _write_text(args.out, text)
    return {
        "command": "transfer",
        "victim": args.victim,
        "targets": [e.target_model_id for e in matrix.entries],
        "sar": {e.target_model_id: e.report.sar for e in matrix.entries},
        "out": args.out,
    }


def cmd_ablate(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    world = _world_from_args(args, cfg)
    train_config = _train_config(args, cfg.seed)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    points = pipeline.run_ablation(
        world, args.victim, args.target, sizes, train_config, cfg.target_fmr,
        reference=args.reference,
    )
    rows = attack_mod.ablation_rows(points, args.victim, args.target, args.dataset)
    text = attack_mod.render_report(rows, format=cfg.format)
    _write_text(args.out, text)
    return {
        "command": "ablate",
        "sizes": sizes,
        "sar": [p.sar for p in points],
        "out": args.out,
    }


def cmd_synth_gen(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    config = synthworld.WorldConfig.from_file(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=cfg.seed)
    world = synthworld.make_world(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = args.models.split(",") if args.models else world.model_ids() + ["fm"]
    written = []
    for model_id in wanted:
        model = world.model(model_id)
        eval_set = synthworld.embed(model, world.eval_population, config.samples_per_id)
        train_set = synthworld.embed(model, world.train_population, 1)
        for suffix, es in (("eval", eval_set), ("train", train_set)):
            path = out_dir / f"{model_id}_{suffix}.emb"
            store.write_embeddings(es, path)
            written.append(str(path))
    config.to_file(out_dir / "world.cfg")
    written.append(str(out_dir / "world.cfg"))
    return {"command": "synth-gen", "files": written, "seed": config.seed}


def cmd_report(args: argparse.Namespace) -> dict:
    cfg = RunConfig.from_args(args)
    rows = []
    with open(args.infile, newline="") as fh:
        import csv as _csv

        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != list(attack_mod.RESULT_COLUMNS):
            raise ValidationError(
                f"{args.infile}: expected header {','.join(attack_mod.RESULT_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(attack_mod.RESULT_COLUMNS):
                raise ValidationError(f"{args.infile}:{lineno}: malformed row")
            victim, target, dataset, n_train, sar_pct, train_time = row
            rows.append(
                attack_mod.ResultRow(
                    victim=victim,
                    target=target,
                    dataset=dataset,
                    n_train=int(n_train) if n_train else None,
                    sar=float(sar_pct) / 100.0,
                    train_time_s=float(train_time) if train_time else None,
                )
            )
    text = attack_mod.render_report(rows, format=cfg.format)
    _write_text(args.out, text)
    return {"command": "report", "rows": len(rows), "out": args.out}


def cmd_extract_check(args: argparse.Namespace) -> dict:
    embeddings = store.read_embeddings(args.infile)
    return {
        "command": "extract-check",
        "path": args.infile,
        "model_id": embeddings.model_id,
        "dim": embeddings.dim,
        "records": len(embeddings),
        "status": "ok",
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embedadapt",
        description="Embedding-space adapters and reconstruction-attack evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pair", help="align two embedding sets into training pairs")
    p.add_argument("--source", required=True, help="EMB1 file of source-space embeddings")
    p.add_argument("--target", required=True, help="EMB1 file of target-space embeddings")
    p.add_argument("--out", required=True, help="EMB2 output path")
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("fit", help="fit a linear adapter on training pairs")
    p.add_argument("--pairs", required=True, help="EMB2 training pairs")
    p.add_argument("--out", required=True, help="ADP1 output path")
    _add_train_flags(p)
    _add_seed(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("apply", help="map an embedding set through an adapter")
    p.add_argument("--adapter", required=True)
    p.add_argument("--source", required=True, help="EMB1 file in the adapter's source space")
    p.add_argument("--out", required=True)
    p.add_argument("--allow-model-mismatch", action="store_true",
                   help="warn instead of failing on model id mismatch")
    p.add_argument("--post-normalize", action="store_true",
                   help="l2-normalize mapped vectors")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("calibrate", help="calibrate a threshold at a target FMR")
    p.add_argument("--scores", help="label,score CSV of genuine/impostor scores")
    p.add_argument("--probes", help="EMB1 probes (with --gallery)")
    p.add_argument("--gallery", help="EMB1 gallery (with --probes)")
    p.add_argument("--target-fmr", type=float, default=pipeline.DEFAULT_TARGET_FMR)
    p.add_argument("--out", help="operating-point JSON output path")
    p.add_argument("--export-scores", metavar="CSV",
                   help="also dump the label,score CSV for external ROC tooling")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("attack", help="evaluate SAR of reconstructed probes")
    p.add_argument("--enrolled", required=True, help="EMB1 enrolled templates (target space)")
    p.add_argument("--op", required=True, help="operating-point JSON from calibrate")
    p.add_argument("--reconstructed", help="EMB1 target-space probes")
    p.add_argument("--translated", help="EMB1 foundation-space embeddings "
                   "(simulated channel; needs --world and --target)")
    p.add_argument("--world", help="world config for the simulated channel")
    p.add_argument("--target", help="target model id for the simulated channel")
    p.add_argument("--victim", default="unknown", help="victim model id (report label)")
    p.add_argument("--reference", choices=attack_mod.REFERENCE_MODES, default="self")
    p.add_argument("--out", help="attack report JSON output path")
    _add_seed(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("transfer", help="transferability matrix over the model zoo")
    p.add_argument("--world", required=True, help="world config file")
    p.add_argument("--victim", required=True)
    p.add_argument("--target-fmr", type=float, default=pipeline.DEFAULT_TARGET_FMR)
    p.add_argument("--reference", choices=attack_mod.REFERENCE_MODES, default="self")
    p.add_argument("--include-same-model", action="store_true")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out", help="write the table here instead of stdout")
    _add_train_flags(p)
    _add_seed(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ablate", help="training-set-size ablation")
    p.add_argument("--world", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated pair counts")
    p.add_argument("--dataset", default="synthetic", help="dataset label for the report")
    p.add_argument("--target-fmr", type=float, default=pipeline.DEFAULT_TARGET_FMR)
    p.add_argument("--reference", choices=attack_mod.REFERENCE_MODES, default="self")
    p.add_argument("--format", choices=("markdown", "csv"), default="csv")
    p.add_argument("--out", help="write the table here instead of stdout")
    _add_train_flags(p)
    _add_seed(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth-gen", help="materialize a synthetic world as EMB1 files")
    p.add_argument("--config", required=True, help="world config (key=value)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--models", help="comma-separated subset of model ids")
    _add_seed(p)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("report", help="re-render a results CSV")
    p.add_argument("--in", dest="infile", required=True, help="canonical results CSV")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("extract-check", help="validate an EMB1 embedding file")
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=cmd_extract_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = args.func(args)
    except EmbedAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    _emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
