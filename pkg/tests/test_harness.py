import numpy as np
import pytest

from beamasr import asr
from beamasr import harness as hz
from beamasr import masknet as mk
from beamasr import scene as sc
from beamasr import signal as sig
from beamasr.errors import InvalidInputError


def test_si_sdr_perfect_and_scaled(rng):
    s = rng.normal(size=4000)
    assert hz.si_sdr(s, s) == 60.0  # clamped
    assert hz.si_sdr(s, 2.0 * s) == 60.0  # scale invariant


def test_si_sdr_orthogonal_noise_exact(rng):
    s = rng.normal(size=4000)
    n = rng.normal(size=4000)
    n -= (n @ s) / (s @ s) * s  # orthogonalize
    n *= np.linalg.norm(s) / (np.linalg.norm(n) * np.sqrt(10.0))
    got = hz.si_sdr(s, s + n)
    assert abs(got - 10.0) < 1e-6


def test_si_sdr_recovers_shift(rng):
    s = rng.normal(size=4000)
    shifted = np.concatenate([np.zeros(37), s])[:4000]
    assert hz.si_sdr(s, shifted) > 55.0
    assert hz.si_sdr(s, shifted, max_shift=10) < 20.0


def test_si_sdr_accepts_wave_buffers(rng):
    s = rng.normal(size=2000)
    got = hz.si_sdr(sig.WaveBuffer(s), sig.WaveBuffer(s * 0.5))
    assert got == 60.0


def test_si_sdr_silent_reference_raises():
    with pytest.raises(InvalidInputError):
        hz.si_sdr(np.zeros(100), np.ones(100))


def test_experiment_config_invariants(tiny_scene_config):
    with pytest.raises(InvalidInputError):
        hz.ExperimentConfig(scene=tiny_scene_config, mvdr=False, hma=True)
    with pytest.raises(InvalidInputError):
        hz.ExperimentConfig(scene=tiny_scene_config, hma=False,
                            adaptation_sizes=(4,))
    with pytest.raises(InvalidInputError):
        hz.ExperimentConfig(scene=tiny_scene_config, num_scenes=0)
    cfg = hz.ExperimentConfig(scene=tiny_scene_config, mvdr=True, hma=False)
    assert cfg.systems() == ["noisy", "mvdr"]
    assert hz.ExperimentConfig(scene=tiny_scene_config).systems() == \
        ["noisy", "mvdr", "hma"]


@pytest.fixture(scope="module")
def ablation(tiny_scene_config, tiny_field, tiny_scenes, tmp_path_factory):
    estimator = mk.MaskEstimator(tiny_field.num_bins,
                                 tiny_field.geometry.num_mics, hidden=4,
                                 seed=2)
    vocab = asr.Vocabulary(tiny_scene_config.characters)
    model = asr.AcousticModel(vocab.size, hidden=8, seed=2)
    cfg = hz.ExperimentConfig(scene=tiny_scene_config, num_scenes=2, seed=42,
                              beam=2, oracle_mask=True)
    csv_path = str(tmp_path_factory.mktemp("ablate") / "results.csv")
    rows = hz.run_ablation(cfg, estimator, model, vocab, field=tiny_field,
                           scenes=tiny_scenes[:2], out_csv=csv_path)
    return cfg, rows, csv_path


def test_run_ablation_row_layout(ablation):
    cfg, rows, _ = ablation
    systems = {row["system"] for row in rows}
    assert {"noisy", "mvdr", "hma", "clean"} <= systems
    for row in rows:
        assert row["split"] in ("all", "single", "overlap")
        assert 0.0 <= row["wer"]
        assert -60.0 <= row["si_sdr"] <= 60.0
    all_rows = [r for r in rows if r["split"] == "all"]
    assert all(r["count"] == 2 for r in all_rows)


def test_rows_csv_round_trip(ablation):
    _, rows, csv_path = ablation
    back = hz.load_rows(csv_path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert a["system"] == b["system"]
        assert a["wer"] == pytest.approx(b["wer"])
        assert a["si_sdr"] == pytest.approx(b["si_sdr"])
    table = hz.format_table(back)
    assert "system" in table and "WER%" in table
    assert len(table.splitlines()) == len(rows) + 2


def test_run_ablation_deterministic(tiny_scene_config, tiny_field,
                                    tiny_scenes):
    vocab = asr.Vocabulary(tiny_scene_config.characters)
    model = asr.AcousticModel(vocab.size, hidden=8, seed=2)
    estimator = mk.MaskEstimator(tiny_field.num_bins,
                                 tiny_field.geometry.num_mics, hidden=4,
                                 seed=2)
    cfg = hz.ExperimentConfig(scene=tiny_scene_config, num_scenes=2, seed=42,
                              beam=2, oracle_mask=True, clean_row=False,
                              mvdr=True, hma=False)
    a = hz.run_ablation(cfg, estimator, model, vocab, field=tiny_field,
                        scenes=tiny_scenes[:2])
    b = hz.run_ablation(cfg, estimator, model, vocab, field=tiny_field,
                        scenes=tiny_scenes[:2])
    assert a == b


def test_evaluate_system_noisy_is_reference_passthrough(tiny_scene_config,
                                                        tiny_field,
                                                        tiny_scenes):
    scene = tiny_scenes[0]
    cfg = hz.ExperimentConfig(scene=tiny_scene_config, num_scenes=1)
    wave = hz._system_wave("noisy", scene, tiny_field, None, cfg)
    ref = tiny_field.geometry.reference_index
    np.testing.assert_allclose(wave.samples[0],
                               scene.mixture_wave().samples[ref], atol=1e-12)
