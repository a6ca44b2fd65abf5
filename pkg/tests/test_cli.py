import json
import subprocess
import sys

import pytest

from latentaug.cli import build_parser, main
from latentaug.data import DatasetManifest
from latentaug.pipeline import resolve_config

TINY = ["--vae-epochs", "3", "--clf-epochs", "3", "--count", "4", "--arch", "mlp"]


@pytest.fixture
def toy_root(tmp_path):
    root = tmp_path / "data"
    assert main(["gen-toy", "--data-root", str(root), "--counts", "10,12,20", "--size", "8"]) == 0
    return root


def test_parser_knows_every_subcommand():
    parser = build_parser()
    for cmd in ("gen-toy", "split", "train-vae", "generate", "train-clf", "evaluate",
                "run-experiment", "pca-export"):
        assert parser.parse_args([cmd]).command == cmd


def test_module_entry_point_prints_help():
    out = subprocess.run([sys.executable, "-m", "latentaug", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "run-experiment" in out.stdout


def test_gen_toy_counts(toy_root, capsys):
    manifest = DatasetManifest.load(toy_root)
    assert [len(manifest.select(label=k)) for k in range(3)] == [10, 12, 20]


def test_gen_toy_refuses_non_empty_target_without_force(toy_root, capsys):
    assert main(["gen-toy", "--data-root", str(toy_root), "--counts", "5,5,6", "--size", "8"]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["gen-toy", "--data-root", str(toy_root), "--counts", "5,5,6", "--size", "8", "--force"]) == 0
    assert len(DatasetManifest.load(toy_root).rows) == 16


def test_stages_before_split_fail_cleanly(toy_root, tmp_path, capsys):
    code = main(["train-vae", "--data-root", str(toy_root), "--out", str(tmp_path / "o"), "--epochs", "1"])
    assert code == 1 and "split" in capsys.readouterr().err


def test_evaluate_without_checkpoints(toy_root, tmp_path, capsys):
    assert main(["split", "--data-root", str(toy_root)]) == 0
    assert main(["evaluate", "--data-root", str(toy_root), "--out", str(tmp_path / "o")]) == 1
    assert "train-clf" in capsys.readouterr().err


def test_generate_without_vae_checkpoints(toy_root, tmp_path, capsys):
    assert main(["split", "--data-root", str(toy_root)]) == 0
    assert main(["generate", "--data-root", str(toy_root), "--out", str(tmp_path / "o")]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_stagewise_pipeline(toy_root, tmp_path, capsys):
    out = tmp_path / "run"
    common = ["--data-root", str(toy_root), "--out", str(out)]
    assert main(["split", *common]) == 0
    assert main(["train-vae", *common, "--epochs", "2"]) == 0
    assert main(["generate", *common, "--count", "0"]) == 0
    assert not DatasetManifest.load(toy_root).select(provenance="synthetic")
    assert main(["generate", *common, "--count", "3"]) == 0
    assert len(DatasetManifest.load(toy_root).select(provenance="synthetic")) == 9
    assert main(["train-clf", *common, "--name", "real_gen_noaug", "--epochs", "2", "--arch", "mlp"]) == 0
    assert main(["evaluate", *common]) == 0
    rows = json.loads((out / "metrics.json").read_text())
    assert [r["config"] for r in rows] == ["real_gen_noaug"]
    assert main(["pca-export", *common]) == 0
    assert sorted(p.name for p in out.glob("pca_*.csv")) == ["pca_0.csv", "pca_1.csv", "pca_2.csv"]


def test_run_experiment_writes_artifacts(toy_root, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run-experiment", "--data-root", str(toy_root), "--out", str(out), *TINY]) == 0
    printed = capsys.readouterr().out
    for name in ("real_noaug", "real_aug", "real_gen_noaug", "real_gen_aug"):
        assert name in printed
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["vae_epochs"] == 3 and resolved["clf_arch"] == "mlp" and resolved["seed"] == 42
    for name in ("metrics.csv", "metrics.json", "class_acc_bars.csv", "manifest.csv"):
        assert (out / name).exists()


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"vae_epochs": 7, "clf_epochs": 9}))
    cfg = resolve_config(config_file=cfg_file, overrides={"clf_epochs": 11, "seed": None})
    assert (cfg.vae_epochs, cfg.clf_epochs, cfg.seed) == (7, 11, 42)
    assert resolve_config(profile="paper").vae_latent_dim == 256


def test_unknown_config_key_is_reported(tmp_path, capsys):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"learning_rate": 1}))
    assert main(["split", "--config", str(cfg_file), "--data-root", str(tmp_path)]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_profiles_pick_classical_ops():
    assert resolve_config(profile="desk").classical_ops == ["rot180"]
    assert resolve_config(profile="paper").classical_ops == ["rot90", "rot180", "rot270", "flip_h", "flip_v"]


def test_gen_toy_phase_jitter_flag(tmp_path):
    root = tmp_path / "d"
    assert main(["gen-toy", "--data-root", str(root), "--counts", "3,3,4", "--size", "6",
                 "--noise", "0", "--phase-jitter", "0", "--orientation-jitter", "0"]) == 0
    manifest = DatasetManifest.load(root)
    pixels = manifest.load_pixels(manifest.select(label=2))
    assert (pixels == pixels[0]).all()
