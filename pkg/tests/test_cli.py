"""End-to-end tests for the command-line interface: gen-corpus, train,
score, and eval, all driven through main(argv)."""

import json
import os

import numpy as np
import pytest

from sqa.audio_io import AudioClip, write_wav
from sqa.cli import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main
from sqa.dataset import read_manifest
from sqa.model import load_weights

pytestmark = pytest.mark.filterwarnings("ignore::ResourceWarning")

# small-but-real training setup shared by every CLI test in this module
_CONFIG = """
# fast CLI smoke configuration
seed = 3
lr = 0.003
batch_size = 4
epochs = 2
patience = 2
channel_scale = 0.0625
input_frames = 16
val_split = 0.0
dropout_rate = 0.0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus + trained weights produced through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    rc = main(["gen-corpus", "--out-dir", str(corpus), "--models", "2",
               "--clips-per-model", "3", "--duration", "0.2",
               "--seed", "5", "--split", "train"])
    assert rc == EXIT_OK
    manifest = corpus / "train_manifest.csv"
    assert manifest.exists()

    config = root / "train.cfg"
    config.write_text(_CONFIG)
    weights = root / "model.sqaw"
    rc = main(["train", "--manifest", str(manifest), "--config", str(config),
               "--out", str(weights)])
    assert rc == EXIT_OK
    return {"root": root, "corpus": corpus, "manifest": manifest,
            "config": config, "weights": weights}


class TestGenCorpus:
    def test_layout_matches_manifest(self, workspace):
        man = read_manifest(workspace["manifest"])
        assert len(man) == 6
        for c in man.clips:
            assert os.path.exists(c.clip_path)


class TestTrainCommand:
    def test_writes_weights_and_curve(self, workspace):
        bundle = load_weights(workspace["weights"])
        assert bundle.variant == "three_output"
        curve = (workspace["root"] / "loss_curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,train_mse,val_mse"
        assert len(curve) == 3  # header + 2 epochs

    def test_deterministic_checksum(self, workspace, tmp_path):
        out = tmp_path / "again.sqaw"
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--config", str(workspace["config"]), "--out", str(out),
                   "--curve", str(tmp_path / "c.csv")])
        assert rc == EXIT_OK
        a = load_weights(workspace["weights"]).checksum()
        b = load_weights(out).checksum()
        assert a == b

    def test_seed_flag_changes_weights(self, workspace, tmp_path):
        out = tmp_path / "seeded.sqaw"
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--config", str(workspace["config"]), "--seed", "99",
                   "--out", str(out), "--curve", str(tmp_path / "c.csv")])
        assert rc == EXIT_OK
        assert load_weights(out).checksum() != \
            load_weights(workspace["weights"]).checksum()

    def test_missing_manifest_is_usage_error(self, workspace, tmp_path):
        rc = main(["train", "--manifest", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "w.sqaw")])
        assert rc == EXIT_USAGE

    def test_bad_config_key(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_knob = 1\n")
        rc = main(["train", "--manifest", str(workspace["manifest"]),
                   "--config", str(cfg), "--out", str(tmp_path / "w.sqaw")])
        assert rc == EXIT_USAGE
        assert "error" in capsys.readouterr().err


class TestScoreCommand:
    def test_json_lines(self, workspace, capsys):
        man = read_manifest(workspace["manifest"])
        paths = [c.clip_path for c in man.clips[:2]]
        rc = main(["score", *paths, "--weights", str(workspace["weights"]),
                   "--json"])
        assert rc == EXIT_OK
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert len(lines) == 2
        for rec in lines:
            for head in ("sig", "bak", "ovrl"):
                assert 1.0 <= rec[head] <= 5.0

    def test_directory_input(self, workspace, capsys):
        rc = main(["score", str(workspace["corpus"]),
                   "--weights", str(workspace["weights"])])
        assert rc == EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 6

    def test_deterministic_output(self, workspace, capsys):
        man = read_manifest(workspace["manifest"])
        argv = ["score", man.clips[0].clip_path,
                "--weights", str(workspace["weights"]), "--json"]
        main(argv)
        first = capsys.readouterr().out
        main(argv)
        assert capsys.readouterr().out == first

    def test_no_match_is_usage_error(self, workspace, capsys):
        rc = main(["score", "/nonexistent/*.wav",
                   "--weights", str(workspace["weights"])])
        assert rc == EXIT_USAGE

    def test_bad_clip_is_partial_failure(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"not a wav file at all")
        man = read_manifest(workspace["manifest"])
        rc = main(["score", man.clips[0].clip_path, str(bad),
                   "--weights", str(workspace["weights"])])
        assert rc == EXIT_PARTIAL
        captured = capsys.readouterr()
        assert len(captured.out.splitlines()) == 1  # good clip still scored
        assert "bad.wav" in captured.err


class TestEvalCommand:
    def test_table_format(self, workspace, capsys):
        rc = main(["eval", "--manifest", str(workspace["manifest"]),
                   "--weights", str(workspace["weights"])])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "Model PCC" in out and "Clip SRCC" in out

    def test_json_format(self, workspace, capsys):
        rc = main(["eval", "--manifest", str(workspace["manifest"]),
                   "--weights", str(workspace["weights"]), "--format", "json"])
        assert rc == EXIT_OK
        d = json.loads(capsys.readouterr().out)
        assert d["n_clips"] == 6 and d["n_models"] == 2

    def test_csv_format(self, workspace, capsys):
        rc = main(["eval", "--manifest", str(workspace["manifest"]),
                   "--weights", str(workspace["weights"]), "--format", "csv"])
        assert rc == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "level,stat,sig,bak,ovrl"
        assert len(lines) == 5

    def test_self_consistency_on_predictions(self, workspace, tmp_path, capsys):
        # relabel the manifest with the model's own scores: all defined
        # correlations must be exactly 1
        rc = main(["eval", "--manifest", str(workspace["manifest"]),
                   "--weights", str(workspace["weights"]), "--format", "json"])
        assert rc == EXIT_OK
        capsys.readouterr()

        man = read_manifest(workspace["manifest"])
        from sqa.model import model_from_bundle, score_clip
        from sqa.dataset import RatedClip, Manifest, write_manifest
        model = model_from_bundle(load_weights(workspace["weights"]))
        relabeled = []
        for c in man.clips:
            from sqa.audio_io import load_wav
            s = score_clip(model, load_wav(c.clip_path))
            relabeled.append(RatedClip(
                clip_id=c.clip_id, clip_path=c.clip_path, model_id=c.model_id,
                mos_sig=s.sig, mos_bak=s.bak, mos_ovrl=s.ovrl))
        path = tmp_path / "relabel.csv"
        write_manifest(Manifest(tuple(relabeled)), path)
        rc = main(["eval", "--manifest", str(path),
                   "--weights", str(workspace["weights"]), "--format", "json"])
        assert rc == EXIT_OK
        d = json.loads(capsys.readouterr().out)
        for row in d["coefficients"].values():
            for v in row.values():
                if v is not None:
                    assert v == pytest.approx(1.0, abs=1e-6)

    def test_missing_weights_is_usage_error(self, workspace, tmp_path):
        rc = main(["eval", "--manifest", str(workspace["manifest"]),
                   "--weights", str(tmp_path / "nope.sqaw")])
        assert rc == EXIT_USAGE


class TestParser:
    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_version_exits_cleanly(self, capsys):
        assert main(["--version"]) == 0
