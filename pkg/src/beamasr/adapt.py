"""Run-time semi-supervised joint adaptation.

Adapts the mask estimator and the recognizer's convolutional front-end to
a new acoustic condition using the device's own recordings.  Unlabeled
scenes are enhanced and decoded; the decoded transcripts whose confidence
score clears a threshold (or the top-k) become pseudo labels.  The
adaptation loss is the CTC loss on a mix of clean supervised utterances
and pseudo-labeled enhanced utterances, plus a quadratic anchor that keeps
the mask parameters near their initial values.  The pseudo-label pass runs
through the full differentiable chain (features, mask, spatial covariance
matrices, MVDR, gated application, inverse STFT, log-mel), so recognizer
gradients shape the beamformer.
"""

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import asr as asrmod
from . import autodiff as ad
from . import beamform as bf
from . import nn
from . import signal as sig
from .errors import InvalidInputError, TrainingError


@dataclass
class PseudoExample:
    scene: object
    transcript: str
    confidence: float
    log_p_asr: float
    log_p_lm: float


@dataclass
class AdaptationConfig:
    epochs: int = 20
    refresh_every: int = 5
    learning_rate: float = 5e-4
    anchor_weight: float = 5e-4
    batch_clean: int = 8
    batch_pseudo: int = 8
    beam: int = 8
    lm_weight: float = 0.3
    confidence_threshold: float = None
    top_k: int = None
    adapt_mask: bool = True
    adapt_asr_conv: bool = True
    oracle_transcripts: bool = False
    confidence_alpha: float = 1.0
    confidence_beta: float = 50.0
    confidence_gamma: float = 1000.0
    enhance: bf.EnhanceConfig = dc_field(default_factory=bf.EnhanceConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.refresh_every < 1:
            raise InvalidInputError("epochs and refresh_every must be >= 1")
        if self.learning_rate <= 0 or self.anchor_weight < 0:
            raise InvalidInputError("bad learning rate or anchor weight")


def build_pseudo_dataset(scenes, field, estimator, model, vocab, lm=None,
                         config=None):
    """Enhance, decode, and score unlabeled scenes.

    Returns PseudoExamples sorted by descending confidence, filtered by
    ``confidence_threshold`` and/or truncated to ``top_k`` when set.  With
    ``oracle_transcripts`` the reference transcript replaces the decoded
    one but the confidence still reflects the decode.
    """
    config = config or AdaptationConfig()
    out = []
    for scene in scenes:
        wave, _ = bf.enhance(scene.mixture, field, scene.trace, estimator,
                             config.enhance)
        result = asrmod.transcribe(wave, model, vocab, lm=lm,
                                   beam=config.beam,
                                   lm_weight=config.lm_weight)
        conf = asrmod.confidence(result.log_p_asr, result.log_p_lm,
                                 wave.duration,
                                 alpha=config.confidence_alpha,
                                 beta=config.confidence_beta,
                                 gamma=config.confidence_gamma)
        text = scene.transcript if config.oracle_transcripts \
            else result.transcript
        out.append(PseudoExample(scene, text, conf, result.log_p_asr,
                                 result.log_p_lm))
    out.sort(key=lambda p: -p.confidence)
    if config.confidence_threshold is not None:
        out = [p for p in out if p.confidence >= config.confidence_threshold]
    if config.top_k is not None:
        out = out[:config.top_k]
    return out


def clean_example_loss(wave, transcript, model, asr_tensors, vocab):
    """CTC loss of a clean supervised utterance; None if infeasible."""
    mel = sig.log_mel(wave).data
    post = model.forward(mel, tensors=asr_tensors)
    target = vocab.encode(transcript)
    if not ad.ctc_feasible(target, post.shape[0]):
        return None
    return ad.ctc_loss(post, target)


def pseudo_example_loss(pseudo, field, estimator, mask_tensors, model,
                        asr_tensors, vocab, enhance_config):
    """CTC loss through the full differentiable enhancement chain."""
    scene = pseudo.scene
    signal_t, _ = bf.enhance_graph(scene.mixture, field, scene.trace,
                                   estimator, mask_tensors,
                                   config=enhance_config)
    mel_t = sig.log_mel_t(signal_t)
    post = model.forward(mel_t, tensors=asr_tensors)
    target = vocab.encode(pseudo.transcript)
    if not ad.ctc_feasible(target, post.shape[0]):
        return None
    return ad.ctc_loss(post, target)


def _dev_wer(dev_scenes, field, estimator, model, vocab, lm, config):
    errs = []
    for scene in dev_scenes:
        wave, _ = bf.enhance(scene.mixture, field, scene.trace, estimator,
                             config.enhance)
        result = asrmod.transcribe(wave, model, vocab, lm=lm,
                                   beam=config.beam,
                                   lm_weight=config.lm_weight)
        errs.append(asrmod.wer_text(scene.transcript, result.transcript))
    return float(np.mean(errs)) if errs else float("nan")


def write_report(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "pseudo_size",
                                                "mean_confidence", "loss",
                                                "dev_wer", "skipped"])
        writer.writeheader()
        writer.writerows(rows)


def adapt(scenes, clean_corpus, field, estimator, model, vocab, lm=None,
          config=None, dev_scenes=None, report_path=None, seed=0):
    """Joint run-time adaptation.

    scenes: unlabeled SceneExamples from the new condition.
    clean_corpus: (WaveBuffer, transcript) pairs from the original
    training data, recognized without enhancement.

    Trains the mask estimator (all parameters) and the recognizer's two
    convolutional layers; everything else stays bit-identical.  The pseudo
    dataset is rebuilt with the current parameters every
    ``refresh_every`` epochs.  Returns per-epoch history rows.
    """
    config = config or AdaptationConfig()
    if not scenes:
        raise InvalidInputError("no adaptation scenes")
    if not clean_corpus:
        raise InvalidInputError("no clean supervised utterances")
    clean = []
    for wave, text in clean_corpus:
        if not isinstance(wave, sig.WaveBuffer):
            wave = sig.WaveBuffer(wave)
        clean.append((wave, text))

    mask_pv = estimator.params
    asr_pv = model.params
    mask_init = mask_pv.values.copy()
    asr_before = asr_pv.values.copy()
    mask_opt = nn.Adam(mask_pv.values.size, lr=config.learning_rate)
    asr_opt = nn.Adam(asr_pv.values.size, lr=config.learning_rate)
    asr_mask = asr_pv.mask_for(model.conv_param_names()) \
        if config.adapt_asr_conv else np.zeros(asr_pv.values.size, dtype=bool)

    rng = np.random.default_rng(seed)
    history = []
    pseudo = []
    for epoch in range(config.epochs):
        if epoch % config.refresh_every == 0:
            pseudo = build_pseudo_dataset(scenes, field, estimator, model,
                                          vocab, lm=lm, config=config)
        order = rng.permutation(len(pseudo)) if pseudo else np.zeros(0, int)
        clean_order = rng.permutation(len(clean))
        steps = max(1, int(np.ceil(len(pseudo) / config.batch_pseudo)))
        clean_pos = 0
        total = 0.0
        counted = 0
        skipped = 0
        for step in range(steps):
            mask_pv.zero_grad()
            asr_pv.zero_grad()
            used = 0
            losses = []
            for _ in range(config.batch_clean):
                wave, text = clean[clean_order[clean_pos % len(clean)]]
                clean_pos += 1
                asr_tensors = asr_pv.tensors()
                loss = clean_example_loss(wave, text, model, asr_tensors,
                                          vocab)
                if loss is None:
                    skipped += 1
                    continue
                loss.backward()
                asr_pv.collect(asr_tensors)
                losses.append(loss.item())
                used += 1
            for p_idx in order[step * config.batch_pseudo:
                               (step + 1) * config.batch_pseudo]:
                mask_tensors = mask_pv.tensors()
                asr_tensors = asr_pv.tensors()
                loss = pseudo_example_loss(pseudo[p_idx], field, estimator,
                                           mask_tensors, model, asr_tensors,
                                           vocab, config.enhance)
                if loss is None:
                    skipped += 1
                    continue
                loss.backward()
                mask_pv.collect(mask_tensors)
                asr_pv.collect(asr_tensors)
                losses.append(loss.item())
                used += 1
            if not used:
                continue
            mask_pv.grads /= used
            asr_pv.grads /= used
            drift = mask_pv.values - mask_init
            anchor = config.anchor_weight * float(drift @ drift)
            if config.adapt_mask:
                mask_pv.grads += 2.0 * config.anchor_weight * drift
                mask_opt.step(mask_pv.values, mask_pv.grads)
            asr_opt.step(asr_pv.values, asr_pv.grads, mask=asr_mask)
            batch_loss = float(np.mean(losses)) + anchor
            if not np.isfinite(batch_loss):
                raise TrainingError("adaptation diverged", epoch=epoch)
            total += batch_loss
            counted += 1
        row = {
            "epoch": epoch,
            "pseudo_size": len(pseudo),
            "mean_confidence": float(np.mean([p.confidence for p in pseudo]))
            if pseudo else float("nan"),
            "loss": total / max(1, counted),
            "dev_wer": _dev_wer(dev_scenes, field, estimator, model, vocab,
                                lm, config) if dev_scenes else float("nan"),
            "skipped": skipped,
        }
        history.append(row)
    frozen = ~asr_mask
    if not np.array_equal(asr_pv.values[frozen], asr_before[frozen]):
        raise TrainingError("frozen recognizer parameters moved")
    if report_path is not None:
        write_report(history, report_path)
    return history
