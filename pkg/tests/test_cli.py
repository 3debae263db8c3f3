import filecmp
import os

import pytest

from beamasr import cli
from beamasr import scene as sc
from beamasr.errors import NumericError

CFG = """
scene.az_grid_deg = -180, -90, 0, 90
scene.el_grid_deg = 0
scene.num_mics = 2
scene.num_words = 1, 1
scene.word_length = 2, 2
scene.characters = ab
run.count = 2
run.clean_count = 2
mask.epochs = 1
asr.epochs = 2
adapt.epochs = 1
adapt.beam = 2
eval.num_scenes = 2
eval.beam = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = str(root / "run.cfg")
    with open(cfg, "w") as fh:
        fh.write(CFG)
    out = str(root / "out")
    base = ["--config", cfg, "--seed", "7", "--out", out]
    assert cli.main(base + ["train-mask"]) == 0
    assert cli.main(base + ["train-asr"]) == 0
    assert cli.main(base + ["train-lm"]) == 0
    return cfg, out, base


def test_simulate_writes_dataset(tmp_path, workdir):
    cfg, _, _ = workdir
    out = str(tmp_path / "sim")
    rc = cli.main(["--config", cfg, "--seed", "3", "--out", out, "simulate"])
    assert rc == 0
    assert os.path.exists(f"{out}/manifest.jsonl")
    assert len(sc.load_manifest(f"{out}/manifest.jsonl")) == 2


def test_simulate_deterministic(tmp_path, workdir):
    cfg, _, _ = workdir
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    for out in (a, b):
        assert cli.main(["--config", cfg, "--seed", "3", "--out", out,
                         "simulate"]) == 0
    entries = sc.load_manifest(f"{a}/manifest.jsonl")
    assert filecmp.cmp(f"{a}/manifest.jsonl", f"{b}/manifest.jsonl",
                       shallow=False)
    for entry in entries:
        assert filecmp.cmp(f"{a}/{entry['mix']}", f"{b}/{entry['mix']}",
                           shallow=False)


def test_training_artifacts_exist(workdir):
    _, out, _ = workdir
    for name in ("mask.ckpt", "asr.ckpt", "vocab.txt", "lm.json"):
        assert os.path.exists(os.path.join(out, name)), name


def test_enhance_and_recognize(workdir):
    cfg, out, base = workdir
    assert cli.main(base + ["enhance", "--mask", f"{out}/mask.ckpt"]) == 0
    wav = f"{out}/enhanced_00000.wav"
    assert os.path.exists(wav)
    assert cli.main(base + ["recognize", "--asr", f"{out}/asr.ckpt",
                            "--lm", f"{out}/lm.json",
                            "--vocab", f"{out}/vocab.txt", wav]) == 0


def test_adapt_command(workdir):
    _, out, base = workdir
    assert cli.main(base + ["adapt", "--mask", f"{out}/mask.ckpt",
                            "--asr", f"{out}/asr.ckpt"]) == 0
    assert os.path.exists(f"{out}/mask_adapted.ckpt")
    assert os.path.exists(f"{out}/asr_adapted.ckpt")
    assert os.path.exists(f"{out}/adapt_report.csv")


def test_evaluate_and_report(workdir, capsys):
    _, out, base = workdir
    assert cli.main(base + ["evaluate", "--mask", f"{out}/mask.ckpt",
                            "--asr", f"{out}/asr.ckpt"]) == 0
    assert os.path.exists(f"{out}/results.csv")
    assert os.path.exists(f"{out}/results.txt")
    capsys.readouterr()
    assert cli.main(base + ["report"]) == 0
    printed = capsys.readouterr().out
    assert "system" in printed and "noisy" in printed


def test_exit_code_config_errors(tmp_path, workdir):
    _, out, _ = workdir
    bad = str(tmp_path / "bad.cfg")
    with open(bad, "w") as fh:
        fh.write("scene.bogus_knob = 1\n")
    assert cli.main(["--config", bad, "--out", str(tmp_path), "simulate"]) == 2
    nosec = str(tmp_path / "nosec.cfg")
    with open(nosec, "w") as fh:
        fh.write("count = 2\n")  # missing section prefix
    assert cli.main(["--config", nosec, "--out", str(tmp_path),
                     "simulate"]) == 2
    # missing checkpoint
    assert cli.main(["--out", str(tmp_path), "enhance", "--mask",
                     str(tmp_path / "missing.ckpt")]) == 2


def test_exit_code_data_error(tmp_path, workdir):
    _, out, _ = workdir
    assert cli.main(["--out", str(tmp_path), "recognize", "--asr",
                     f"{out}/asr.ckpt", "--vocab", f"{out}/vocab.txt",
                     str(tmp_path / "missing.wav")]) == 3


def test_exit_code_numeric_error(tmp_path, monkeypatch, workdir):
    cfg, _, _ = workdir

    def boom(*args, **kwargs):
        raise NumericError("synthetic failure")

    monkeypatch.setattr(cli.sc, "generate_dataset", boom)
    assert cli.main(["--config", cfg, "--out", str(tmp_path),
                     "simulate"]) == 4
