import csv

import numpy as np
import pytest

from beamasr import adapt as adp
from beamasr import asr
from beamasr import masknet as mk
from beamasr import scene as sc
from beamasr import signal as sig
from beamasr.errors import InvalidInputError


@pytest.fixture(scope="module")
def setup(tiny_scene_config, tiny_field, tiny_scenes):
    estimator = mk.MaskEstimator(tiny_field.num_bins, tiny_field.geometry.num_mics,
                                 hidden=4, seed=2)
    vocab = asr.Vocabulary(tiny_scene_config.characters)
    model = asr.AcousticModel(vocab.size, hidden=8, seed=2)
    lex = tiny_scene_config.lexicon()
    clean = [(sc.tone_lexicon_render(s.transcript, seed=i, lexicon=lex),
              s.transcript) for i, s in enumerate(tiny_scenes[:2])]
    return estimator, model, vocab, clean


def test_adaptation_config_validation():
    with pytest.raises(InvalidInputError):
        adp.AdaptationConfig(epochs=0)
    with pytest.raises(InvalidInputError):
        adp.AdaptationConfig(learning_rate=0.0)
    with pytest.raises(InvalidInputError):
        adp.AdaptationConfig(anchor_weight=-1.0)


def test_build_pseudo_dataset_sorted_and_filtered(setup, tiny_field,
                                                  tiny_scenes):
    estimator, model, vocab, _ = setup
    cfg = adp.AdaptationConfig(beam=2)
    pseudo = adp.build_pseudo_dataset(tiny_scenes, tiny_field, estimator,
                                      model, vocab, config=cfg)
    assert len(pseudo) == len(tiny_scenes)
    confs = [p.confidence for p in pseudo]
    assert confs == sorted(confs, reverse=True)

    top = adp.build_pseudo_dataset(
        tiny_scenes, tiny_field, estimator, model, vocab,
        config=adp.AdaptationConfig(beam=2, top_k=2))
    assert [p.confidence for p in top] == confs[:2]

    cut = adp.build_pseudo_dataset(
        tiny_scenes, tiny_field, estimator, model, vocab,
        config=adp.AdaptationConfig(beam=2, confidence_threshold=confs[1]))
    assert all(p.confidence >= confs[1] for p in cut)


def test_build_pseudo_dataset_oracle_transcripts(setup, tiny_field,
                                                 tiny_scenes):
    estimator, model, vocab, _ = setup
    cfg = adp.AdaptationConfig(beam=2, oracle_transcripts=True)
    pseudo = adp.build_pseudo_dataset(tiny_scenes, tiny_field, estimator,
                                      model, vocab, config=cfg)
    truths = {s.transcript for s in tiny_scenes}
    assert all(p.transcript in truths for p in pseudo)


def test_clean_example_loss_feasibility(setup):
    estimator, model, vocab, clean = setup
    wave, text = clean[0]
    tensors = model.params.tensors()
    loss = adp.clean_example_loss(wave, text, model, tensors, vocab)
    assert loss is not None and np.isfinite(loss.data)
    # a transcript longer than the output frame count is infeasible
    short = sig.WaveBuffer(wave.samples[:, :1800])
    long_text = "".join(vocab.characters()[0] * 40)
    assert adp.clean_example_loss(short, long_text, model,
                                  model.params.tensors(), vocab) is None


def test_adapt_updates_only_permitted_parameters(setup, tiny_field,
                                                 tiny_scenes, tmp_path):
    estimator, model, vocab, clean = setup
    est = mk.MaskEstimator(tiny_field.num_bins, tiny_field.geometry.num_mics,
                           hidden=4, seed=2)
    mdl = asr.AcousticModel(vocab.size, hidden=8, seed=2)
    asr_before = mdl.params.values.copy()
    mask_before = est.params.values.copy()
    cfg = adp.AdaptationConfig(epochs=2, refresh_every=1, batch_clean=1,
                               batch_pseudo=2, beam=2, top_k=2,
                               learning_rate=1e-3)
    report = str(tmp_path / "report.csv")
    history = adp.adapt(tiny_scenes, clean, tiny_field, est, mdl, vocab,
                        config=cfg, report_path=report, seed=0)
    assert len(history) == 2
    assert {"epoch", "pseudo_size", "mean_confidence", "loss", "dev_wer",
            "skipped"} <= set(history[0])
    # mask estimator moved; frozen recognizer entries are bit-identical
    assert not np.array_equal(est.params.values, mask_before)
    frozen = ~mdl.params.mask_for(mdl.conv_param_names())
    assert np.array_equal(mdl.params.values[frozen], asr_before[frozen])
    assert not np.array_equal(mdl.params.values[~frozen], asr_before[~frozen])
    with open(report, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["epoch"] == "0"


def test_adapt_rejects_empty_inputs(setup, tiny_field, tiny_scenes):
    estimator, model, vocab, clean = setup
    with pytest.raises(InvalidInputError):
        adp.adapt([], clean, tiny_field, estimator, model, vocab)
    with pytest.raises(InvalidInputError):
        adp.adapt(tiny_scenes, [], tiny_field, estimator, model, vocab)
