"""Semi-supervised run-time joint adaptation across a condition shift.

Trains the mask estimator and recognizer on one noise condition, then
moves to a shifted condition (different noise spectrum and reverberation)
where WER degrades.  Unlabeled scenes from the new condition are decoded,
the most confident half become pseudo-labeled training data, and the mask
estimator plus the recognizer's convolutional front-end are fine-tuned
jointly while a small clean anchor set guards against drift.
"""

import numpy as np

from beamasr import adapt as adp
from beamasr import asr
from beamasr import beamform as bf
from beamasr import masknet as mk
from beamasr import scene as sc


def main():
    base = dict(snr_db=(-2.0, 4.0), interferer_prob=0.0, num_mics=4,
                num_words=(2, 2), word_length=(3, 3), characters="abcdef")
    cfg_train = sc.SceneConfig(**base)
    cfg_shift = sc.SceneConfig(**base, noise_cutoff_hz=700.0, noise_tilt=0.8,
                               rt60=(0.28, 0.40))
    field = cfg_train.build_field()
    lex = cfg_train.lexicon()
    vocab = asr.Vocabulary(cfg_train.characters)

    print("training on the source condition ...")
    train = [sc.synthesize_scene(cfg_train, s, field=field)
             for s in sc.scene_seeds(9000, 20)]
    est, _ = mk.train_mask(train, mk.MaskTrainConfig(epochs=12), seed=0,
                           field=field)
    corpus, texts = [], []
    rng = np.random.default_rng(50)
    for ex in train:
        wave, _ = bf.enhance(ex.mixture, field, ex.trace, est)
        corpus.append((wave, ex.transcript))
        texts.append(ex.transcript)
    for i in range(16):
        text = lex.sample_transcript(rng, num_words=(2, 2),
                                     word_length=(3, 3))
        corpus.append((sc.tone_lexicon_render(text, seed=3000 + i,
                                              lexicon=lex), text))
        texts.append(text)
    model, _ = asr.train_asr(
        corpus, vocab, asr.AsrTrainConfig(epochs=50, peak_lr=3e-3,
                                          lr_decay=0.985), seed=0)
    lm = asr.lm_train(texts, vocab)

    eval_scenes = [sc.synthesize_scene(cfg_shift, s, field=field)
                   for s in sc.scene_seeds(9100, 24)]
    adapt_scenes = [sc.synthesize_scene(cfg_shift, s, field=field)
                    for s in sc.scene_seeds(9200, 24)]

    def wer_on(scenes):
        out = []
        for ex in scenes:
            wave, _ = bf.enhance(ex.mixture, field, ex.trace, est)
            hyp = asr.transcribe(wave, model, vocab, lm=lm, beam=8).transcript
            out.append(asr.wer_text(ex.transcript, hyp))
        return float(np.mean(out))

    before = wer_on(eval_scenes)
    print(f"shifted-condition WER before adaptation: {before:.2f}%")

    clean = [(sc.tone_lexicon_render(t, seed=4000 + i, lexicon=lex), t)
             for i, t in enumerate(texts[:8])]
    acfg = adp.AdaptationConfig(epochs=15, refresh_every=5, top_k=12,
                                confidence_beta=0.0, confidence_gamma=0.0)
    history = adp.adapt(adapt_scenes, clean, field, est, model, vocab, lm=lm,
                        config=acfg, seed=0)
    for row in history[::5]:
        print(f"  epoch {row['epoch']:2d}: pseudo {row['pseudo_size']:2d} "
              f"loss {row['loss']:.2f} skipped {row['skipped']}")

    after = wer_on(eval_scenes)
    print(f"shifted-condition WER after adaptation:  {after:.2f}%  "
          f"(drop {before - after:.2f})")


if __name__ == "__main__":
    main()
