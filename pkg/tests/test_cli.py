import json

import numpy as np
import pytest

from embedadapt import (
    EmbeddingSet,
    ScoreSet,
    WorldConfig,
    load_adapter,
    read_embeddings,
    write_embeddings,
)
from embedadapt.cli import main
from embedadapt.metrics import write_scores_csv

SMALL_WORLD = dict(latent_dim=8, dim=32, n_identities=40, samples_per_id=2,
                   n_train_images=120, n_models=3, seed=5)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    summary = None
    if code == 0:
        summary = json.loads(captured.out.strip().splitlines()[-1])
    return code, summary, captured


@pytest.fixture()
def world_cfg(tmp_path):
    path = tmp_path / "world.cfg"
    WorldConfig(**SMALL_WORLD).to_file(path)
    return str(path)


@pytest.fixture()
def generated(tmp_path, world_cfg, capsys):
    out_dir = tmp_path / "data"
    code, summary, _ = run_cli(
        capsys, "synth-gen", "--config", world_cfg, "--out-dir", str(out_dir),
        "--models", "model0,fm",
    )
    assert code == 0
    return out_dir


class TestUsage:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_no_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_validation_error_exits_1(self, tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        write_scores_csv(ScoreSet(genuine=[0.9], impostor=[]), scores)
        code = main(["calibrate", "--scores", str(scores), "--target-fmr", "0.25"])
        assert code == 1
        assert "impostor" in capsys.readouterr().err

    def test_missing_file_exits_1(self, capsys):
        code = main(["extract-check", "--in", "/nonexistent/file.emb"])
        assert code == 1


class TestCalibrate:
    def test_fixture_prints_threshold(self, tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        write_scores_csv(ScoreSet(genuine=[0.95], impostor=[0.9, 0.5, 0.3, 0.1]), scores)
        code, summary, _ = run_cli(
            capsys, "calibrate", "--scores", str(scores), "--target-fmr", "0.25")
        assert code == 0
        assert summary["threshold"] == 0.9
        assert summary["achieved_fmr"] == 0.25

    def test_writes_operating_point(self, tmp_path, capsys):
        scores = tmp_path / "scores.csv"
        write_scores_csv(ScoreSet(genuine=[0.95], impostor=[0.9, 0.5]), scores)
        out = tmp_path / "op.json"
        code, summary, _ = run_cli(
            capsys, "calibrate", "--scores", str(scores), "--target-fmr", "0.4",
            "--out", str(out))
        assert code == 0
        data = json.loads(out.read_text())
        assert data["threshold"] == summary["threshold"]

    def test_export_scores_for_external_roc(self, tmp_path, generated, capsys):
        d = generated
        exported = tmp_path / "scores.csv"
        code, _, _ = run_cli(
            capsys, "calibrate", "--probes", str(d / "model0_eval.emb"),
            "--gallery", str(d / "model0_eval.emb"), "--target-fmr", "0.01",
            "--export-scores", str(exported))
        assert code == 0
        lines = exported.read_text().splitlines()
        assert lines[0] == "label,score"
        assert {row.split(",")[0] for row in lines[1:]} == {"genuine", "impostor"}


class TestPipeline:
    def test_full_pipeline(self, tmp_path, generated, world_cfg, capsys):
        d = generated
        pairs = tmp_path / "pairs.emb2"
        code, summary, _ = run_cli(
            capsys, "pair", "--source", str(d / "model0_train.emb"),
            "--target", str(d / "fm_train.emb"), "--out", str(pairs))
        assert code == 0
        assert summary["n_pairs"] == SMALL_WORLD["n_train_images"]

        adapter_path = tmp_path / "adapter.adp"
        code, summary, _ = run_cli(
            capsys, "fit", "--pairs", str(pairs), "--method", "iterative",
            "--seed", "3", "--out", str(adapter_path))
        assert code == 0
        model = load_adapter(adapter_path)
        assert model.meta.config["learning_rate"] == 1e-3
        assert model.meta.config["epochs"] == 20
        assert len(model.meta.loss_history) == 20
        assert model.meta.wall_time_seconds == 0.0  # artifact stays reproducible
        assert summary["wall_time_s"] > 0.0

        translated = tmp_path / "translated.emb"
        code, summary, _ = run_cli(
            capsys, "apply", "--adapter", str(adapter_path),
            "--source", str(d / "model0_eval.emb"), "--out", str(translated))
        assert code == 0
        assert read_embeddings(translated).model_id == "fm"

        op_path = tmp_path / "op.json"
        code, _, _ = run_cli(
            capsys, "calibrate", "--probes", str(d / "model0_eval.emb"),
            "--gallery", str(d / "model0_eval.emb"), "--target-fmr", "0.01",
            "--out", str(op_path))
        assert code == 0

        report_path = tmp_path / "attack.json"
        code, summary, _ = run_cli(
            capsys, "attack", "--translated", str(translated), "--world", world_cfg,
            "--target", "model0", "--enrolled", str(d / "model0_eval.emb"),
            "--op", str(op_path), "--victim", "model0", "--out", str(report_path))
        assert code == 0
        assert 0.0 <= summary["sar"] <= 1.0
        payload = json.loads(report_path.read_text())
        assert payload["n_attacks"] == SMALL_WORLD["n_identities"] * 2

    def test_artifacts_byte_identical_across_runs(self, tmp_path, generated, capsys):
        d = generated
        outs = []
        for tag in ("one", "two"):
            pairs = tmp_path / f"{tag}.emb2"
            adapter_path = tmp_path / f"{tag}.adp"
            translated = tmp_path / f"{tag}.emb"
            assert run_cli(capsys, "pair", "--source", str(d / "model0_train.emb"),
                           "--target", str(d / "fm_train.emb"), "--out", str(pairs))[0] == 0
            assert run_cli(capsys, "fit", "--pairs", str(pairs), "--seed", "7",
                           "--epochs", "2", "--out", str(adapter_path))[0] == 0
            assert run_cli(capsys, "apply", "--adapter", str(adapter_path),
                           "--source", str(d / "model0_eval.emb"),
                           "--out", str(translated))[0] == 0
            outs.append((pairs.read_bytes(), adapter_path.read_bytes(),
                         translated.read_bytes()))
        assert outs[0] == outs[1]

    def test_synth_gen_deterministic(self, tmp_path, world_cfg, capsys):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        for d in (d1, d2):
            assert run_cli(capsys, "synth-gen", "--config", world_cfg,
                           "--out-dir", str(d), "--models", "model1")[0] == 0
        assert (d1 / "model1_eval.emb").read_bytes() == (d2 / "model1_eval.emb").read_bytes()
        assert (d1 / "model1_train.emb").read_bytes() == (d2 / "model1_train.emb").read_bytes()


class TestSeedHandling:
    def test_env_seed_fallback(self, tmp_path, generated, capsys, monkeypatch):
        d = generated
        pairs = tmp_path / "p.emb2"
        run_cli(capsys, "pair", "--source", str(d / "model0_train.emb"),
                "--target", str(d / "fm_train.emb"), "--out", str(pairs))
        monkeypatch.setenv("EMBEDADAPT_SEED", "99")
        adapter_path = tmp_path / "a.adp"
        code, _, _ = run_cli(capsys, "fit", "--pairs", str(pairs), "--epochs", "1",
                             "--out", str(adapter_path))
        assert code == 0
        assert load_adapter(adapter_path).meta.seed == 99

    def test_bad_env_seed_is_validation_error(self, tmp_path, generated, capsys, monkeypatch):
        d = generated
        pairs = tmp_path / "p.emb2"
        run_cli(capsys, "pair", "--source", str(d / "model0_train.emb"),
                "--target", str(d / "fm_train.emb"), "--out", str(pairs))
        monkeypatch.setenv("EMBEDADAPT_SEED", "not-a-number")
        code = main(["fit", "--pairs", str(pairs), "--out", str(tmp_path / "a.adp")])
        assert code == 1


class TestDrivers:
    def test_transfer_markdown(self, tmp_path, world_cfg, capsys):
        out = tmp_path / "transfer.md"
        code, summary, _ = run_cli(
            capsys, "transfer", "--world", world_cfg, "--victim", "model0",
            "--epochs", "2", "--target-fmr", "0.01", "--out", str(out))
        assert code == 0
        text = out.read_text()
        assert text.startswith("| Victim |")
        assert set(summary["sar"]) == {"model0", "model1", "model2"}

    def test_ablate_then_report_round_trip(self, tmp_path, world_cfg, capsys):
        csv_path = tmp_path / "ablation.csv"
        code, summary, _ = run_cli(
            capsys, "ablate", "--world", world_cfg, "--victim", "model0",
            "--target", "model0", "--sizes", "20,60", "--epochs", "2",
            "--target-fmr", "0.01", "--format", "csv", "--out", str(csv_path))
        assert code == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "victim,target,dataset,n_train,sar_percent,train_time_s"
        assert len(lines) == 3

        rendered = tmp_path / "again.csv"
        code, _, _ = run_cli(capsys, "report", "--in", str(csv_path),
                             "--format", "csv", "--out", str(rendered))
        assert code == 0
        assert rendered.read_bytes() == csv_path.read_bytes()

        code, _, _ = run_cli(capsys, "report", "--in", str(csv_path),
                             "--format", "markdown", "--out", str(tmp_path / "t.md"))
        assert code == 0
        assert (tmp_path / "t.md").read_text().startswith("| victim |")


class TestExtractCheck:
    def test_valid_file(self, tmp_path, capsys):
        path = tmp_path / "ok.emb"
        rng = np.random.default_rng(0)
        write_embeddings(EmbeddingSet.from_matrix(
            "bridge-model", [("a", "1"), ("b", "1")],
            rng.standard_normal((2, 512)).astype(np.float32)), path)
        code, summary, _ = run_cli(capsys, "extract-check", "--in", str(path))
        assert code == 0
        assert summary == {"command": "extract-check", "path": str(path),
                           "model_id": "bridge-model", "dim": 512, "records": 2,
                           "status": "ok"}

    def test_corrupt_file(self, tmp_path, capsys):
        path = tmp_path / "bad.emb"
        rng = np.random.default_rng(0)
        write_embeddings(EmbeddingSet.from_matrix(
            "m", [("a", "1")], rng.standard_normal((1, 8)).astype(np.float32)), path)
        path.write_bytes(path.read_bytes()[:-2])
        code = main(["extract-check", "--in", str(path)])
        assert code == 1
        assert "truncated" in capsys.readouterr().err
