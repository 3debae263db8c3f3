"""Weighted-prediction-error dereverberation in the STFT domain.

Per frequency bin, a multichannel linear predictor over a delayed block of
past frames is fitted with iteratively reweighted least squares (weights
are the reciprocal per-frame output variances) and its prediction is
subtracted from the observation.  Frames with insufficient history pass
through unmodified.  Applied as fixed preprocessing; no gradients flow
through it.
"""

from dataclasses import dataclass

import numpy as np

from . import signal as sig
from .errors import InvalidInputError


@dataclass
class WpeConfig:
    taps: int = 16
    delay: int = 2
    iterations: int = 3
    loading: float = 1e-10
    variance_floor: float = 1e-10

    def __post_init__(self):
        if self.taps < 1 or self.delay < 1 or self.iterations < 1:
            raise InvalidInputError("taps, delay, iterations must be >= 1")
        if self.loading <= 0:
            raise InvalidInputError("loading must be positive")


def _dereverb_bin(x, cfg):
    """WPE for a single frequency: x is (M, T) complex."""
    m, t_len = x.shape
    k, delay = cfg.taps, cfg.delay
    start = k + delay  # first frame with a full delayed history
    # stacked delayed context: y[:, t] = vec(x[:, t-delay-k+1 .. t-delay])
    ctx = np.zeros((m * k, t_len), dtype=np.complex128)
    for j in range(k):
        shift = delay + j
        ctx[j * m:(j + 1) * m, shift:] = x[:, :t_len - shift]
    ctx_v = ctx[:, start:]
    x_v = x[:, start:]
    out = x.copy()
    for _ in range(cfg.iterations):
        lam = np.maximum(np.mean(np.abs(out[:, start:]) ** 2, axis=0),
                         cfg.variance_floor)
        ctx_w = ctx_v / lam[None, :]
        corr = ctx_w @ ctx_v.conj().T
        cross = ctx_w @ x_v.conj().T  # (MK, M)
        corr += cfg.loading * (np.trace(corr).real / corr.shape[0] + 1e-300) \
            * np.eye(corr.shape[0])
        try:
            filt = np.linalg.solve(corr, cross)  # (MK, M)
        except np.linalg.LinAlgError:
            break
        out = x.copy()
        out[:, start:] = x_v - filt.conj().T @ ctx_v
    return out


def wpe(spec, config=None):
    """Dereverberate a multichannel ComplexSpectrogram, shape-preserving."""
    config = config or WpeConfig()
    if spec.num_frames <= config.taps + config.delay:
        raise InvalidInputError("too few frames for the given taps and delay")
    out = np.empty_like(spec.data)
    for f in range(spec.num_bins):
        out[:, f, :] = _dereverb_bin(spec.data[:, f, :], config)
    return sig.ComplexSpectrogram(out, spec.window, spec.hop)
