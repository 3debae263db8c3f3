"""Train the full small stack from scratch and transcribe held-out scenes.

Mask estimator on simulated scenes, CTC recognizer on enhanced outputs
plus clean tone renders, bigram LM on the transcripts; then decode a few
unseen scenes with beam search and LM fusion.  Takes a couple of minutes.
"""

import numpy as np

from beamasr import asr
from beamasr import beamform as bf
from beamasr import masknet as mk
from beamasr import scene as sc


def main():
    cfg = sc.SceneConfig(snr_db=(0.0, 6.0), interferer_prob=0.0, num_mics=4,
                         num_words=(2, 2), word_length=(3, 3),
                         characters="abcdef")
    field = cfg.build_field()
    lex = cfg.lexicon()
    vocab = asr.Vocabulary(cfg.characters)

    train = [sc.synthesize_scene(cfg, s, field=field)
             for s in sc.scene_seeds(9000, 20)]
    print("training mask estimator on 20 scenes ...")
    est, hist = mk.train_mask(train, mk.MaskTrainConfig(epochs=12), seed=0,
                              field=field)
    print(f"  psm loss {hist[0]:.1f} -> {hist[-1]:.1f}")

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
    print(f"training recognizer on {len(corpus)} utterances ...")
    model, hist = asr.train_asr(
        corpus, vocab, asr.AsrTrainConfig(epochs=50, peak_lr=3e-3,
                                          lr_decay=0.985), seed=0)
    print(f"  ctc loss {hist[0]:.2f} -> {hist[-1]:.2f}")
    lm = asr.lm_train(texts, vocab)

    held_out = [sc.synthesize_scene(cfg, s, field=field)
                for s in sc.scene_seeds(123, 8)]
    wers = []
    for ex in held_out:
        wave, _ = bf.enhance(ex.mixture, field, ex.trace, est)
        result = asr.transcribe(wave, model, vocab, lm=lm, beam=8)
        err = asr.wer_text(ex.transcript, result.transcript)
        wers.append(err)
        print(f"  ref {ex.transcript!r:12} hyp {result.transcript!r:12} "
              f"wer {err:6.1f}%")
    print(f"mean WER on 8 held-out scenes: {np.mean(wers):.2f}%")


if __name__ == "__main__":
    main()
