"""Command-line surface.

Subcommands: simulate, train-mask, train-asr, train-lm, enhance,
recognize, adapt, evaluate, report.  Global flags: --config (key-value
text file), --seed, --out (output directory).  Exit codes: 0 success,
2 configuration error, 3 data error, 4 numeric failure.

The config file uses ``key = value`` lines with dotted section prefixes:
``scene.*`` overrides scene-sampling ranges, ``mask.*`` / ``asr.*`` /
``adapt.*`` training hyperparameters, ``eval.*`` evaluation options, and
``run.*`` per-command sizes (for example ``run.count = 32``).
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import adapt as adp
from . import asr as asrmod
from . import beamform as bf
from . import config as cfgmod
from . import harness as hz
from . import masknet as mk
from . import scene as sc
from . import signal as sig
from .errors import (ConfigError, DataError, InvalidInputError, NumericError,
                     TrainingError)


def _split_config(flat):
    sections = {}
    for key, value in flat.items():
        if "." not in key:
            raise ConfigError(f"config key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        sections.setdefault(section, {})[name] = value
    return sections


def _scene_config(sections):
    try:
        return sc.SceneConfig.from_dict(sections.get("scene", {})) \
            if sections.get("scene") else sc.SceneConfig()
    except (DataError, InvalidInputError) as exc:
        raise ConfigError(str(exc)) from exc


def _apply(dc_obj, overrides, label):
    for key, value in overrides.items():
        if not hasattr(dc_obj, key):
            raise ConfigError(f"unknown {label} option: {key}")
        current = getattr(dc_obj, key)
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{label}.{key} is not a scalar option")
        setattr(dc_obj, key, value)
    return dc_obj


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _load_estimator(path):
    if not os.path.exists(path):
        raise ConfigError(f"missing mask-estimator checkpoint: {path}")
    return mk.MaskEstimator.load(path)


def _load_model(path):
    if not os.path.exists(path):
        raise ConfigError(f"missing recognizer checkpoint: {path}")
    return asrmod.AcousticModel.load(path)


def _load_lm(path):
    if path is None:
        return None
    if not os.path.exists(path):
        raise ConfigError(f"missing language model: {path}")
    return asrmod.NgramLm.load(path)


def _clean_corpus(scene_cfg, seed, count):
    lex = scene_cfg.lexicon()
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        text = lex.sample_transcript(rng)
        out.append((sc.tone_lexicon_render(text, seed=seed + 1000 + i,
                                           lexicon=lex), text))
    return out


def _synthesize(scene_cfg, seed, count, field):
    return [sc.synthesize_scene(scene_cfg, s, field=field)
            for s in sc.scene_seeds(seed, count)]


# subcommands -----------------------------------------------------------

def cmd_simulate(args, sections):
    scene_cfg = _scene_config(sections)
    count = int(sections.get("run", {}).get("count", 8))
    os.makedirs(args.out, exist_ok=True)
    sc.generate_dataset(scene_cfg, args.seed, count, out_dir=args.out)
    print(f"wrote {count} scenes and manifest.jsonl to {args.out}")
    return 0


def cmd_train_mask(args, sections):
    scene_cfg = _scene_config(sections)
    count = int(sections.get("run", {}).get("count", 16))
    train_cfg = _apply(mk.MaskTrainConfig(), sections.get("mask", {}), "mask")
    field = scene_cfg.build_field()
    scenes = _synthesize(scene_cfg, args.seed, count, field)
    estimator, history = mk.train_mask(scenes, train_cfg, seed=args.seed,
                                       field=field)
    path = _out_path(args, "mask.ckpt")
    estimator.save(path)
    print(f"trained mask estimator on {count} scenes, "
          f"loss {history[0]:.3f} -> {history[-1]:.3f}, saved {path}")
    return 0


def cmd_train_asr(args, sections):
    scene_cfg = _scene_config(sections)
    count = int(sections.get("run", {}).get("count", 32))
    train_cfg = _apply(asrmod.AsrTrainConfig(), sections.get("asr", {}),
                       "asr")
    vocab = asrmod.Vocabulary(scene_cfg.characters)
    corpus = _clean_corpus(scene_cfg, args.seed, count)
    model, history = asrmod.train_asr(corpus, vocab, train_cfg,
                                      seed=args.seed)
    path = _out_path(args, "asr.ckpt")
    model.save(path)
    vocab.save(_out_path(args, "vocab.txt"))
    print(f"trained recognizer on {count} utterances, "
          f"loss {history[0]:.3f} -> {history[-1]:.3f}, saved {path}")
    return 0


def cmd_train_lm(args, sections):
    scene_cfg = _scene_config(sections)
    count = int(sections.get("run", {}).get("count", 200))
    vocab = asrmod.Vocabulary(scene_cfg.characters)
    lex = scene_cfg.lexicon()
    rng = np.random.default_rng(args.seed)
    transcripts = [lex.sample_transcript(rng) for _ in range(count)]
    lm = asrmod.lm_train(transcripts, vocab)
    path = _out_path(args, "lm.json")
    lm.save(path)
    print(f"trained bigram LM on {count} transcripts, saved {path}")
    return 0


def cmd_enhance(args, sections):
    scene_cfg = _scene_config(sections)
    count = int(sections.get("run", {}).get("count", 1))
    estimator = _load_estimator(args.mask)
    field = scene_cfg.build_field()
    for i, seed in enumerate(sc.scene_seeds(args.seed, count)):
        example = sc.synthesize_scene(scene_cfg, seed, field=field)
        wave, _ = bf.enhance(example.mixture, field, example.trace,
                             estimator)
        path = _out_path(args, f"enhanced_{i:05d}.wav")
        sig.write_wav(path, wave)
        print(f"{path}: {example.transcript!r}")
    return 0


def cmd_recognize(args, sections):
    model = _load_model(args.asr)
    vocab = asrmod.Vocabulary.load(args.vocab) if args.vocab \
        else asrmod.Vocabulary()
    lm = _load_lm(args.lm)
    for path in args.wav:
        if not os.path.exists(path):
            raise DataError(f"missing wav file: {path}")
        wave = sig.read_wav(path)
        result = asrmod.transcribe(wave, model, vocab, lm=lm)
        print(f"{path}\t{result.transcript}\t{result.log_p_asr:.4f}")
    return 0


def cmd_adapt(args, sections):
    scene_cfg = _scene_config(sections)
    run = sections.get("run", {})
    count = int(run.get("count", 8))
    clean_count = int(run.get("clean_count", 8))
    acfg = _apply(adp.AdaptationConfig(), sections.get("adapt", {}), "adapt")
    estimator = _load_estimator(args.mask)
    model = _load_model(args.asr)
    vocab = asrmod.Vocabulary(scene_cfg.characters)
    lm = _load_lm(args.lm)
    field = scene_cfg.build_field()
    scenes = _synthesize(scene_cfg, args.seed, count, field)
    clean = _clean_corpus(scene_cfg, args.seed + 1, clean_count)
    report = _out_path(args, "adapt_report.csv")
    adp.adapt(scenes, clean, field, estimator, model, vocab, lm=lm,
              config=acfg, report_path=report, seed=args.seed)
    estimator.save(_out_path(args, "mask_adapted.ckpt"))
    model.save(_out_path(args, "asr_adapted.ckpt"))
    print(f"adapted on {count} scenes, report {report}")
    return 0


def cmd_evaluate(args, sections):
    scene_cfg = _scene_config(sections)
    ecfg = hz.ExperimentConfig(scene=scene_cfg)
    _apply(ecfg, sections.get("eval", {}), "eval")
    ecfg.seed = args.seed
    estimator = _load_estimator(args.mask)
    model = _load_model(args.asr)
    vocab = asrmod.Vocabulary(scene_cfg.characters)
    lm = _load_lm(args.lm)
    csv_path = _out_path(args, "results.csv")
    rows = hz.run_ablation(ecfg, estimator, model, vocab, lm=lm,
                           out_csv=csv_path)
    table = hz.format_table(rows)
    with open(_out_path(args, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_report(args, sections):
    path = args.results or os.path.join(args.out, "results.csv")
    if not os.path.exists(path):
        raise DataError(f"missing results file: {path}")
    print(hz.format_table(hz.load_rows(path)))
    return 0


# entry point -----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="beamasr",
        description="Movement-aware beamforming, recognition, and "
                    "run-time adaptation on simulated scenes.")
    parser.add_argument("--config", default=None,
                        help="key-value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=".",
                        help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="synthesize a scene dataset")
    sub.add_parser("train-mask", help="train the mask estimator")
    sub.add_parser("train-asr", help="train the recognizer")
    sub.add_parser("train-lm", help="train the n-gram language model")

    p = sub.add_parser("enhance", help="enhance synthesized scenes")
    p.add_argument("--mask", required=True, help="mask-estimator checkpoint")

    p = sub.add_parser("recognize", help="transcribe wav files")
    p.add_argument("--asr", required=True, help="recognizer checkpoint")
    p.add_argument("--lm", default=None, help="language model file")
    p.add_argument("--vocab", default=None, help="vocabulary file")
    p.add_argument("wav", nargs="+", help="mono wav files")

    p = sub.add_parser("adapt", help="run-time joint adaptation")
    p.add_argument("--mask", required=True)
    p.add_argument("--asr", required=True)
    p.add_argument("--lm", default=None)

    p = sub.add_parser("evaluate", help="run the ablation table")
    p.add_argument("--mask", required=True)
    p.add_argument("--asr", required=True)
    p.add_argument("--lm", default=None)

    p = sub.add_parser("report", help="format a results CSV")
    p.add_argument("--results", default=None)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "train-mask": cmd_train_mask,
    "train-asr": cmd_train_asr,
    "train-lm": cmd_train_lm,
    "enhance": cmd_enhance,
    "recognize": cmd_recognize,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        flat = cfgmod.parse_kv_file(args.config) if args.config else {}
        sections = _split_config(flat)
        return _COMMANDS[args.command](args, sections)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, TrainingError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
