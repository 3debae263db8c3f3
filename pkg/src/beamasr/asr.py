"""Character-level CTC recognizer with an n-gram language model.

The acoustic model maps 80-band log-mel frames through two 2x2 stride-2
convolutions (so the output length is the input length floor-divided by
four), a unidirectional GRU, and an affine layer with log-softmax rows.
Decoding is greedy best-path or prefix beam search with shallow n-gram
fusion; the confidence score is the weighted sum of the CTC log
likelihood, the LM log probability, and the utterance length in seconds.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from . import signal as sig
from .errors import DataError, InvalidInputError, TrainingError

BLANK = 0
_FILE_TOKENS = {"<blank>": None, "<sp>": " "}


class Vocabulary:
    """Character tokens plus the blank symbol at index 0."""

    def __init__(self, characters="abcdefgh", space=" "):
        self.tokens = [None] + list(characters) + [space]
        self.space = space
        self._index = {}
        for i, tok in enumerate(self.tokens):
            if tok is not None:
                if tok in self._index:
                    raise InvalidInputError(f"duplicate token {tok!r}")
                self._index[tok] = i

    @property
    def size(self):
        return len(self.tokens)

    def encode(self, text):
        try:
            return [self._index[c] for c in text]
        except KeyError as exc:
            raise InvalidInputError(f"token not in vocabulary: {exc}") from exc

    def decode(self, indices):
        return "".join(self.tokens[i] for i in indices)

    def characters(self):
        return [t for t in self.tokens if t is not None and t != self.space]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                if tok is None:
                    fh.write("<blank>\n")
                elif tok == " ":
                    fh.write("<sp>\n")
                else:
                    fh.write(tok + "\n")

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
        if not lines or lines[0] != "<blank>":
            raise DataError(f"vocabulary file {path} must start with <blank>")
        chars = []
        space = " "
        for line in lines[1:]:
            if line == "<sp>":
                continue
            chars.append(line)
        return Vocabulary("".join(chars), space)


class AcousticModel:
    """Conv (2x, stride 2) + GRU + affine CTC acoustic model."""

    CONV_CHANNELS = (4, 8)
    MEL_BANDS = sig.MEL_BANDS

    def __init__(self, vocab_size, hidden=96, dropout=0.2, seed=0):
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.dropout = dropout
        c1, c2 = self.CONV_CHANNELS
        self.gru_input = (self.MEL_BANDS // 4) * c2
        rng = np.random.default_rng(seed)
        pv = nn.ParameterVector()
        nn.add_conv2x2(pv, rng, "conv1", 1, c1)
        nn.add_conv2x2(pv, rng, "conv2", c1, c2)
        nn.add_gru(pv, rng, "gru", self.gru_input, hidden)
        nn.add_affine(pv, rng, "out", hidden, vocab_size)
        self.params = pv

    def conv_param_names(self):
        return ["conv1.W", "conv1.b", "conv2.W", "conv2.b"]

    def forward(self, mel, tensors=None, train=False, rng=None):
        """mel: (T', 80) ndarray or Tensor -> (T'//4, |V|) log-posteriors."""
        t_len = mel.shape[0]
        if t_len < 4:
            raise InvalidInputError("need at least 4 mel frames (two stride-2 layers)")
        if mel.shape[1] != self.MEL_BANDS:
            raise InvalidInputError(f"expected {self.MEL_BANDS} mel bands")
        if tensors is None:
            tensors = self.params.tensors()
        x = mel if isinstance(mel, ad.Tensor) else ad.Tensor(mel)
        # per-utterance mean/variance normalization keeps the conv front-end
        # out of saturation regardless of the absolute signal level
        centered = x - ad.mean(x)
        x = centered / ad.sqrt(ad.mean(centered * centered) + ad.Tensor(1e-8))
        c1, c2 = self.CONV_CHANNELS
        h = x.reshape(t_len, self.MEL_BANDS, 1)
        h = ad.relu(nn.conv2x2(tensors, "conv1", h, 1, c1))
        h = ad.relu(nn.conv2x2(tensors, "conv2", h, c1, c2))
        t_out = h.shape[0]
        h = h.reshape(t_out, self.gru_input)
        h = nn.gru(tensors, "gru", h, self.hidden)
        if train:
            h = nn.dropout(h, self.dropout, rng)
        logits = nn.affine(tensors, "out", h)
        return ad.log_softmax(logits, axis=1)

    def metadata(self):
        return {"kind": "acoustic-model", "vocab_size": self.vocab_size,
                "hidden": self.hidden, "dropout": self.dropout}

    def save(self, path):
        self.params.save(path, self.metadata())

    @staticmethod
    def load(path):
        pv, meta = nn.ParameterVector.load(path)
        if meta.get("kind") != "acoustic-model":
            raise DataError(f"{path} is not an acoustic-model checkpoint")
        model = AcousticModel(meta["vocab_size"], hidden=meta["hidden"],
                              dropout=meta["dropout"])
        if model.params.values.size != pv.values.size:
            raise DataError(f"parameter count mismatch in {path}")
        model.params = pv
        return model


def acoustic_forward(mel, model):
    """Eval-mode log posteriors as a plain (T'//4, |V|) ndarray."""
    data = mel.data if isinstance(mel, sig.MelSpectrogram) else mel
    return model.forward(np.asarray(data)).data


ctc_loss = ad.ctc_loss
ctc_feasible = ad.ctc_feasible


def ctc_score(log_posteriors, target, blank=BLANK):
    """log p_ASR(y|x): total CTC log probability of ``target``."""
    loss = ad.ctc_loss(ad.Tensor(np.asarray(log_posteriors)), target, blank)
    return -loss.item()


# decoding --------------------------------------------------------------

@dataclass
class DecodeResult:
    transcript: str
    log_p_asr: float
    log_p_lm: float
    labels: tuple = ()


def greedy_decode(log_posteriors, vocab):
    """Best path: per-frame argmax, collapse repeats, drop blanks."""
    path = np.argmax(np.asarray(log_posteriors), axis=1)
    labels = []
    prev = -1
    for k in path:
        if k != prev and k != BLANK:
            labels.append(int(k))
        prev = k
    text = vocab.decode(labels)
    return DecodeResult(text, ctc_score(log_posteriors, labels), 0.0,
                        tuple(labels))


def beam_decode(log_posteriors, vocab, lm=None, beam=8, acoustic_weight=1.0,
                lm_weight=0.3, length_bonus=0.6):
    """Prefix beam search with shallow LM fusion.

    The beam score is acoustic_weight * log p_CTC + lm_weight * log p_LM
    + length_bonus * |prefix|; the bonus counteracts the deletion bias the
    per-character LM penalty would otherwise introduce.  Returns the best
    transcript with its full-forward CTC log probability and its LM log
    probability.  ``beam=1`` degenerates toward greedy decoding.
    """
    lp = np.asarray(log_posteriors)
    if beam < 1:
        raise InvalidInputError("beam width must be >= 1")
    if lp.ndim != 2 or lp.shape[0] == 0:
        raise InvalidInputError("log posteriors must be a nonempty (T, |V|) array")
    t_len, n_sym = lp.shape
    neg_inf = -np.inf
    # prefix -> [log p_blank, log p_nonblank, lm log prob]
    beams = {(): [0.0, neg_inf, 0.0]}
    for t in range(t_len):
        new = {}

        def entry(prefix, lm_score):
            e = new.get(prefix)
            if e is None:
                e = [neg_inf, neg_inf, lm_score]
                new[prefix] = e
            return e

        for prefix, (pb, pnb, lmsc) in beams.items():
            ptot = np.logaddexp(pb, pnb)
            e = entry(prefix, lmsc)
            e[0] = np.logaddexp(e[0], ptot + lp[t, BLANK])
            if prefix:
                e[1] = np.logaddexp(e[1], pnb + lp[t, prefix[-1]])
            for k in range(1, n_sym):
                cond = 0.0
                if lm is not None:
                    cond = lm.cond_logprob([vocab.tokens[i] for i in prefix],
                                           vocab.tokens[k])
                    if not np.isfinite(cond):
                        continue
                ext = prefix + (k,)
                base = pb + lp[t, k] if prefix and prefix[-1] == k \
                    else ptot + lp[t, k]
                e2 = entry(ext, lmsc + cond)
                e2[1] = np.logaddexp(e2[1], base)
        def score(kv):
            prefix, (pb, pnb, lmsc) = kv
            return (acoustic_weight * np.logaddexp(pb, pnb)
                    + lm_weight * lmsc + length_bonus * len(prefix))

        scored = sorted(new.items(), key=score, reverse=True)
        beams = dict(scored[:beam])
    best = max(beams.items(), key=score)
    labels = list(best[0])
    text = vocab.decode(labels)
    log_p_lm = best[1][2] if lm is None else lm.logprob(text)
    return DecodeResult(text, ctc_score(lp, labels), log_p_lm, tuple(labels))


def confidence(log_p_asr, log_p_lm, length_seconds, alpha=1.0, beta=50.0,
               gamma=1000.0):
    """Weighted confidence: alpha*log p_ASR + beta*log p_LM + gamma*length."""
    values = (log_p_asr, log_p_lm, length_seconds)
    if not all(np.isfinite(v) for v in values):
        raise InvalidInputError("confidence inputs must be finite")
    return alpha * log_p_asr + beta * log_p_lm + gamma * length_seconds


def wer(reference_words, hypothesis_words):
    """Word error rate in percent via Levenshtein alignment."""
    ref = list(reference_words)
    hyp = list(hypothesis_words)
    if not ref:
        raise InvalidInputError("empty reference")
    d = np.zeros((len(ref) + 1, len(hyp) + 1), dtype=np.int64)
    d[:, 0] = np.arange(len(ref) + 1)
    d[0, :] = np.arange(len(hyp) + 1)
    for i in range(1, len(ref) + 1):
        for j in range(1, len(hyp) + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    return 100.0 * d[-1, -1] / len(ref)


def wer_text(reference, hypothesis):
    return wer(reference.split(), hypothesis.split())


# language model --------------------------------------------------------

class NgramLm:
    """Character n-gram model with additive smoothing.

    Contexts are padded with a beginning-of-sequence marker; every
    conditional distribution sums to one over the token set.
    """

    BOS = "\x02"

    def __init__(self, tokens, order=2, smoothing=0.1):
        if order < 1:
            raise InvalidInputError("order must be >= 1")
        self.order = order
        self.smoothing = smoothing
        self.tokens = list(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        self.counts = {}

    def _context(self, history):
        ctx = [self.BOS] * (self.order - 1) + list(history)
        return tuple(ctx[len(ctx) - (self.order - 1):])

    def train(self, transcripts):
        for text in transcripts:
            history = []
            for ch in text:
                if ch not in self._index:
                    raise InvalidInputError(f"token not in LM vocabulary: {ch!r}")
                ctx = self._context(history)
                vec = self.counts.setdefault(ctx, np.zeros(len(self.tokens)))
                vec[self._index[ch]] += 1.0
                history.append(ch)
        return self

    def cond_logprob(self, history, token):
        if token not in self._index:
            raise InvalidInputError(f"token not in LM vocabulary: {token!r}")
        ctx = self._context(history)
        vec = self.counts.get(ctx)
        total = 0.0 if vec is None else vec.sum()
        count = 0.0 if vec is None else vec[self._index[token]]
        return float(np.log((count + self.smoothing)
                            / (total + self.smoothing * len(self.tokens))))

    def logprob(self, text):
        history = []
        total = 0.0
        for ch in text:
            total += self.cond_logprob(history, ch)
            history.append(ch)
        return total

    def save(self, path):
        payload = {
            "order": self.order,
            "smoothing": self.smoothing,
            "tokens": self.tokens,
            "counts": {"|".join(k): v.tolist() for k, v in self.counts.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)

    @staticmethod
    def load(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read LM {path}: {exc}") from exc
        lm = NgramLm(payload["tokens"], payload["order"], payload["smoothing"])
        for key, vec in payload["counts"].items():
            lm.counts[tuple(key.split("|"))] = np.asarray(vec, dtype=np.float64)
        return lm


def lm_train(transcripts, vocab, order=2, smoothing=0.1):
    tokens = [t for t in vocab.tokens if t is not None]
    return NgramLm(tokens, order, smoothing).train(transcripts)


# training --------------------------------------------------------------

@dataclass
class AsrTrainConfig:
    epochs: int = 30
    peak_lr: float = 3e-3
    lr_decay: float = 0.97
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8


def asr_lr(config, epoch, step, steps_per_epoch):
    """Linear warmup across the first epoch's minibatches, then exponential
    decay per epoch."""
    if epoch == 0:
        return config.peak_lr * (step + 1) / max(1, steps_per_epoch)
    return config.peak_lr * config.lr_decay ** epoch


def train_asr(corpus, vocab, config=None, seed=0, model=None):
    """Train on (WaveBuffer-or-mel, transcript) pairs; returns the model
    and per-epoch mean CTC losses."""
    config = config or AsrTrainConfig()
    if not corpus:
        raise InvalidInputError("empty training corpus")
    pairs = []
    for audio, text in corpus:
        mel = sig.log_mel(audio).data if isinstance(audio, sig.WaveBuffer) \
            else np.asarray(audio)
        pairs.append((mel, vocab.encode(text)))
    if model is None:
        model = AcousticModel(vocab.size, seed=seed)
    pv = model.params
    opt = nn.AdamW(pv.values.size, lr=config.peak_lr, beta1=config.beta1,
                   beta2=config.beta2, weight_decay=config.weight_decay)
    drop_rng = np.random.default_rng(seed + 1)
    steps_per_epoch = int(np.ceil(len(pairs) / config.batch_size))
    history = []
    for epoch in range(config.epochs):
        total = 0.0
        counted = 0
        for step, lo in enumerate(range(0, len(pairs), config.batch_size)):
            batch = pairs[lo:lo + config.batch_size]
            pv.zero_grad()
            used = 0
            for mel, target in batch:
                tensors = pv.tensors()
                post = model.forward(mel, tensors=tensors, train=True,
                                     rng=drop_rng)
                loss = ad.ctc_loss(post, target)
                if np.isinf(loss.data):
                    continue  # infeasible target at this frame rate
                if not np.isfinite(loss.data):
                    raise TrainingError("ASR training diverged", epoch=epoch)
                loss.backward()
                pv.collect(tensors)
                total += loss.item()
                counted += 1
                used += 1
            if used:
                pv.grads /= used
                opt.step(pv.values, pv.grads,
                         lr=asr_lr(config, epoch, step, steps_per_epoch))
        history.append(total / max(1, counted))
    return model, history


def transcribe(wave, model, vocab, lm=None, beam=8, lm_weight=0.3):
    """Enhanced-or-clean mono wave -> DecodeResult."""
    post = acoustic_forward(sig.log_mel(wave), model)
    if beam <= 1 and lm is None:
        return greedy_decode(post, vocab)
    return beam_decode(post, vocab, lm=lm, beam=beam, lm_weight=lm_weight)
