"""Evaluation harness: scale-invariant SDR, ablation runs, reports.

Scenes are regenerated from their seeds rather than read back from disk;
the synthesized STFT mixtures are the ground truth the metrics refer to.
The ablation mirrors the usual enhancement-stack table: reference-mic
baseline, a single time-invariant MVDR filter, the movement-aware gated
MVDR, optional adaptation rows at several pseudo-label selection sizes
(including an oracle-transcription variant), and the clean-reference
topline.  Results split by whether an interfering speaker was active.
"""

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.signal

from . import adapt as adp
from . import asr as asrmod
from . import beamform as bf
from . import masknet as mk
from . import scene as sc
from . import signal as sig
from .errors import InvalidInputError

SI_SDR_CLAMP = 60.0
SI_SDR_MAX_SHIFT = 1024


def _si_sdr_at(ref, est, shift):
    if shift >= 0:
        r, e = ref[shift:], est[:est.size - shift] if shift else est
    else:
        r, e = ref[:shift], est[-shift:]
    n = min(r.size, e.size)
    if n < 16:
        return -np.inf
    r, e = r[:n], e[:n]
    denom = r @ r
    if denom <= 0.0:
        return -np.inf
    alpha = (r @ e) / denom
    target = alpha * r
    err = e - target
    num = target @ target
    if num <= 0.0:
        return -np.inf
    return 10.0 * np.log10(num / (err @ err + 1e-300))


def si_sdr(reference, estimate, max_shift=SI_SDR_MAX_SHIFT):
    """Scale-invariant SDR in dB, best over integer shifts within
    [-max_shift, max_shift], clamped to +-60 dB.

    FFT cross-correlation proposes the strongest alignments; the exact
    score is then evaluated at those candidates (plus zero shift).
    """
    ref = np.asarray(reference.samples if isinstance(reference, sig.WaveBuffer)
                     else reference, dtype=np.float64).ravel()
    est = np.asarray(estimate.samples if isinstance(estimate, sig.WaveBuffer)
                     else estimate, dtype=np.float64).ravel()
    if ref.size == 0 or not np.any(ref):
        raise InvalidInputError("reference signal is empty or silent")
    corr = scipy.signal.correlate(est, ref, mode="full", method="fft")
    lags = np.arange(-(ref.size - 1), est.size)
    keep = np.abs(lags) <= max_shift
    corr, lags = np.abs(corr[keep]), lags[keep]
    candidates = set(int(lags[i]) for i in np.argsort(corr)[-8:])
    candidates.add(0)
    # est lag k means est is ref delayed by k, so ref index = est index - k
    best = max(_si_sdr_at(ref, est, -k) for k in candidates)
    if not np.isfinite(best):
        return -SI_SDR_CLAMP
    return float(np.clip(best, -SI_SDR_CLAMP, SI_SDR_CLAMP))


@dataclass
class ExperimentConfig:
    """Toggle-driven evaluation setup; gated filters require MVDR."""

    scene: sc.SceneConfig = dc_field(default_factory=sc.SceneConfig)
    num_scenes: int = 20
    seed: int = 0
    mvdr: bool = True
    hma: bool = True
    adaptation_sizes: tuple = ()
    oracle_adaptation: bool = False
    clean_row: bool = True
    beam: int = 8
    lm_weight: float = 0.3
    oracle_mask: bool = False
    enhance: bf.EnhanceConfig = dc_field(default_factory=bf.EnhanceConfig)

    def __post_init__(self):
        if self.hma and not self.mvdr:
            raise InvalidInputError("the gated (HMA) path requires MVDR")
        if self.num_scenes < 1:
            raise InvalidInputError("num_scenes must be >= 1")
        if (self.adaptation_sizes or self.oracle_adaptation) and not self.hma:
            raise InvalidInputError("adaptation rows require the gated path")

    def systems(self):
        out = ["noisy"]
        if self.mvdr:
            out.append("mvdr")
        if self.hma:
            out.append("hma")
        return out


def _system_wave(system, example, field, estimator, config):
    """Mono WaveBuffer for one front-end variant."""
    ref = field.geometry.reference_index
    if system == "clean":
        return sig.WaveBuffer(example.clean_wave.samples[:1])
    if system == "noisy":
        # pure reference-channel passthrough, no enhancement code in path
        mix = example.mixture_wave()
        return sig.WaveBuffer(mix.samples[ref:ref + 1])
    enh = bf.EnhanceConfig(use_wpe=config.enhance.use_wpe,
                           wpe=config.enhance.wpe,
                           loading=config.enhance.loading,
                           time_varying=(system == "hma"))
    mask = None
    if config.oracle_mask:
        mask = mk.oracle_mask(example.mixture.data[ref],
                              example.clean_target.data[0])
    wave, _ = bf.enhance(example.mixture, field, example.trace, estimator,
                         enh, mask=mask)
    return wave


def evaluate_system(system, scenes, field, estimator, model, vocab, lm,
                    config):
    """Per-scene (wer, si_sdr, interferer_active) records for one system."""
    records = []
    for example in scenes:
        wave = _system_wave(system, example, field, estimator, config)
        result = asrmod.transcribe(wave, model, vocab, lm=lm,
                                   beam=config.beam,
                                   lm_weight=config.lm_weight)
        err = asrmod.wer_text(example.transcript, result.transcript)
        clean_ref = sig.istft(example.clean_target,
                              example.clean_target.window,
                              example.clean_target.hop)
        score = si_sdr(clean_ref.samples[0], wave.samples[0])
        records.append((err, score, example.interferer_active))
    return records


def _aggregate(system, records):
    rows = []
    splits = [("all", lambda r: True),
              ("single", lambda r: not r[2]),
              ("overlap", lambda r: r[2])]
    for name, keep in splits:
        sel = [r for r in records if keep(r)]
        if not sel:
            continue
        rows.append({
            "system": system,
            "split": name,
            "count": len(sel),
            "wer": float(np.mean([r[0] for r in sel])),
            "si_sdr": float(np.mean([r[1] for r in sel])),
        })
    return rows


def _clone_estimator(estimator):
    other = mk.MaskEstimator(estimator.freq_bins, estimator.num_mics,
                             hidden=estimator.hidden,
                             dropout=estimator.dropout)
    other.params = estimator.params.copy()
    return other


def _clone_model(model):
    other = asrmod.AcousticModel(model.vocab_size, hidden=model.hidden,
                                 dropout=model.dropout)
    other.params = model.params.copy()
    return other


def run_ablation(config, estimator, model, vocab, lm=None, field=None,
                 scenes=None, clean_corpus=None, adapt_config=None,
                 out_csv=None):
    """Evaluate the configured systems; returns aggregate rows.

    ``scenes`` may be passed to reuse already synthesized examples;
    otherwise they are regenerated from ``config.seed``.  Adaptation rows
    (selection sizes and the oracle-transcription variant) need
    ``clean_corpus``; each one adapts fresh copies of the estimator and
    recognizer before re-evaluating the gated path.
    """
    field = field or config.scene.build_field()
    if scenes is None:
        scenes = [sc.synthesize_scene(config.scene, s, field=field)
                  for s in sc.scene_seeds(config.seed, config.num_scenes)]
    rows = []
    for system in config.systems():
        records = evaluate_system(system, scenes, field, estimator, model,
                                  vocab, lm, config)
        rows.extend(_aggregate(system, records))

    adapt_variants = [(f"adapt{k}", dict(top_k=k, oracle_transcripts=False))
                      for k in config.adaptation_sizes]
    if config.oracle_adaptation:
        adapt_variants.append(("adapt-oracle",
                               dict(top_k=None, oracle_transcripts=True)))
    if adapt_variants and clean_corpus is None:
        raise InvalidInputError("adaptation rows require a clean corpus")
    for label, overrides in adapt_variants:
        acfg = adapt_config or adp.AdaptationConfig()
        acfg = adp.AdaptationConfig(**{**acfg.__dict__, **overrides})
        est2 = _clone_estimator(estimator)
        model2 = _clone_model(model)
        adp.adapt(scenes, clean_corpus, field, est2, model2, vocab, lm=lm,
                  config=acfg, seed=config.seed)
        records = evaluate_system("hma", scenes, field, est2, model2, vocab,
                                  lm, config)
        rows.extend(_aggregate(label, records))

    if config.clean_row:
        records = evaluate_system("clean", scenes, field, estimator, model,
                                  vocab, lm, config)
        rows.extend(_aggregate("clean", records))
    if out_csv is not None:
        write_rows(rows, out_csv)
    return rows


def write_rows(rows, path):
    if not rows:
        raise InvalidInputError("no rows to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def load_rows(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            for key in ("wer", "si_sdr"):
                if key in row:
                    row[key] = float(row[key])
            if "count" in row:
                row["count"] = int(row["count"])
            out.append(row)
        return out


def format_table(rows):
    """Fixed-width text table of ablation rows."""
    header = f"{'system':<14} {'split':<8} {'n':>4} {'WER%':>8} {'SI-SDR':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(f"{row['system']:<14} {row['split']:<8} "
                     f"{row['count']:>4d} {row['wer']:>8.2f} "
                     f"{row['si_sdr']:>8.2f}")
    return "\n".join(lines)
