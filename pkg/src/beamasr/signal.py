"""Time/frequency conversion, windows, log-mel features, and WAV I/O.

Framing policy (shared by STFT and log-mel): the signal is
reflection-padded by half a window on both ends and cut into
``T = ceil(length / hop)`` frames, so output shapes are deterministic
functions of the input length.  The STFT uses square-root Hann windows for
both analysis and synthesis; the overlap-add normalization is computed
numerically per sample, which makes the round trip exact (to float
precision) for any hop that divides the window.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.io.wavfile

from . import autodiff as ad
from .errors import DataError, InvalidInputError

SAMPLE_RATE = 16000

MEL_BANDS = 80
MEL_WINDOW = 400
MEL_HOP = 160
MEL_NFFT = 512
MEL_FLOOR = 1e-10


@dataclass
class WaveBuffer:
    """Multichannel time-domain audio, shape (channels, length)."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("wave contains non-finite samples")

    @property
    def num_channels(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.num_samples / self.sample_rate

    def channel(self, index):
        return self.samples[index]

    def mono(self):
        return WaveBuffer(self.samples[:1].copy(), self.sample_rate)


@dataclass
class ComplexSpectrogram:
    """STFT tensor of shape (channels, freq_bins, frames)."""

    data: np.ndarray
    window: int
    hop: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim == 2:
            self.data = self.data[None]
        if self.data.shape[1] != self.window // 2 + 1:
            raise InvalidInputError("freq bin count must equal window/2 + 1")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("spectrogram contains non-finite values")

    @property
    def num_channels(self):
        return self.data.shape[0]

    @property
    def num_bins(self):
        return self.data.shape[1]

    @property
    def num_frames(self):
        return self.data.shape[2]


@dataclass
class MelSpectrogram:
    """Log-mel energies of shape (frames, 80)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != MEL_BANDS:
            raise InvalidInputError(f"mel spectrogram must be (T, {MEL_BANDS})")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("mel spectrogram contains non-finite values")


# windows and framing ---------------------------------------------------

@lru_cache(maxsize=None)
def sqrt_hann(window):
    n = np.arange(window)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window)  # periodic
    return np.sqrt(hann)


@lru_cache(maxsize=None)
def hann(window):
    n = np.arange(window)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window)


def num_frames(length, hop):
    return int(np.ceil(length / hop))


def _check_frame_params(window, hop):
    if window < 2 or (window & (window - 1)) != 0:
        raise InvalidInputError("window must be a power of two")
    if hop < 1 or window % hop != 0:
        raise InvalidInputError("hop must divide the window")


def _framed(signal, window, hop, count):
    """Reflection-pad by window/2 and slice ``count`` frames."""
    pad = window // 2
    padded = np.pad(signal, (pad, pad), mode="reflect")
    needed = (count - 1) * hop + window
    idx = np.arange(window)[None, :] + hop * np.arange(count)[:, None]
    return padded[:needed][idx]


@lru_cache(maxsize=None)
def _ola_norm(window, hop, count, length):
    """Per-sample sum of analysis*synthesis windows over the frame layout."""
    w2 = sqrt_hann(window) ** 2
    norm = np.zeros(length)
    for k in range(count):
        norm[k * hop:k * hop + window] += w2
    return norm


# STFT / iSTFT ----------------------------------------------------------

def stft(wave, window=512, hop=128):
    """Multichannel STFT -> ComplexSpectrogram (M, window/2+1, T)."""
    _check_frame_params(window, hop)
    if wave.num_samples < window:
        raise InvalidInputError("wave shorter than one analysis window")
    count = num_frames(wave.num_samples, hop)
    win = sqrt_hann(window)
    specs = []
    for ch in range(wave.num_channels):
        frames = _framed(wave.samples[ch], window, hop, count) * win
        specs.append(np.fft.rfft(frames, axis=1).T)
    return ComplexSpectrogram(np.stack(specs), window, hop)


def istft(spec, window=512, hop=128, length=None):
    """Inverse STFT via COLA-normalized overlap-add.

    ``length`` trims the output to the original signal length; it defaults
    to ``T * hop``.
    """
    _check_frame_params(window, hop)
    if spec.window != window or spec.hop != hop:
        raise InvalidInputError("frame parameters do not match the spectrogram")
    count = spec.num_frames
    if length is None:
        length = count * hop
    pad = window // 2
    total = (count - 1) * hop + window
    win = sqrt_hann(window)
    norm = _ola_norm(window, hop, count, total)
    norm = np.where(norm > 1e-12, norm, 1.0)
    chans = []
    for ch in range(spec.num_channels):
        frames = np.fft.irfft(spec.data[ch].T, n=window, axis=1) * win
        out = np.zeros(total)
        for k in range(count):
            out[k * hop:k * hop + window] += frames[k]
        chans.append((out / norm)[pad:pad + length])
    return WaveBuffer(np.stack(chans), SAMPLE_RATE)


# differentiable single-channel transforms ------------------------------

@lru_cache(maxsize=None)
def _irfft_matrices(window):
    """(F, window) matrices such that x = Xr @ Cr + Xi @ Ci."""
    f_bins = window // 2 + 1
    n = np.arange(window)
    k = np.arange(f_bins)[:, None]
    weight = np.full(f_bins, 2.0)
    weight[0] = 1.0
    weight[-1] = 1.0
    ang = 2.0 * np.pi * k * n[None, :] / window
    cr = weight[:, None] * np.cos(ang) / window
    ci = -weight[:, None] * np.sin(ang) / window
    return cr, ci


@lru_cache(maxsize=None)
def _rfft_matrices(nfft):
    """(nfft, F) matrices such that Xr = x @ Cr and Xi = x @ Ci."""
    f_bins = nfft // 2 + 1
    n = np.arange(nfft)[:, None]
    k = np.arange(f_bins)[None, :]
    ang = 2.0 * np.pi * n * k / nfft
    return np.cos(ang), -np.sin(ang)


def istft_t(spec_ct, window, hop, length):
    """Differentiable iSTFT of a single-channel CTensor of shape (F, T)."""
    _check_frame_params(window, hop)
    count = spec_ct.shape[1]
    pad = window // 2
    total = (count - 1) * hop + window
    cr, ci = _irfft_matrices(window)
    frames = ad.einsum("ft,fn->tn", spec_ct.re, cr) \
        + ad.einsum("ft,fn->tn", spec_ct.im, ci)
    win = sqrt_hann(window)
    frames = frames * ad.Tensor(win[None, :])
    norm = _ola_norm(window, hop, count, total)
    norm = np.where(norm > 1e-12, norm, 1.0)
    out = ad.overlap_add(frames, hop, total) / ad.Tensor(norm)
    return out[pad:pad + length]


# log-mel ---------------------------------------------------------------

@lru_cache(maxsize=None)
def mel_filterbank(num_bands=MEL_BANDS, nfft=MEL_NFFT, sample_rate=SAMPLE_RATE,
                   f_min=0.0, f_max=8000.0):
    """(F_fft, num_bands) triangular filters on the HTK mel scale."""

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    edges = from_mel(np.linspace(to_mel(f_min), to_mel(f_max), num_bands + 2))
    bins = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((nfft // 2 + 1, num_bands))
    for b in range(num_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rise = (bins - lo) / max(mid - lo, 1e-12)
        fall = (hi - bins) / max(hi - mid, 1e-12)
        fb[:, b] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def log_mel(wave):
    """80-band log-mel spectrogram at 400/160 framing (reference channel)."""
    if wave.num_samples == 0:
        raise InvalidInputError("empty wave")
    if wave.sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"sample rate must be {SAMPLE_RATE}")
    if wave.num_samples <= MEL_WINDOW // 2:
        raise InvalidInputError("wave too short for log-mel framing")
    signal = wave.samples[0]
    count = num_frames(len(signal), MEL_HOP)
    frames = _framed(signal, MEL_WINDOW, MEL_HOP, count) * hann(MEL_WINDOW)
    spec = np.fft.rfft(frames, n=MEL_NFFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ mel_filterbank()
    return MelSpectrogram(np.log(np.maximum(mel, MEL_FLOOR)))


def log_mel_t(signal_t, window=MEL_WINDOW, hop=MEL_HOP, nfft=MEL_NFFT,
              bands=MEL_BANDS, f_max=8000.0):
    """Differentiable log-mel of a 1-D signal Tensor; matches log_mel at
    the default framing."""
    length = signal_t.shape[0]
    if length == 0:
        raise InvalidInputError("empty wave")
    if nfft < window:
        raise InvalidInputError("nfft must be at least the window length")
    count = num_frames(length, hop)
    pad = window // 2
    padded = ad.reflect_pad(signal_t, pad)
    needed = (count - 1) * hop + window
    frames = ad.frame(padded[:needed], window, hop)
    frames = frames * ad.Tensor(hann(window)[None, :])
    cr, ci = _rfft_matrices(nfft)
    # frames are zero-padded from window to nfft in the numpy path; the
    # matrix product only sees the first ``window`` rows, which is equivalent
    re = ad.einsum("tn,nf->tf", frames, cr[:window])
    im = ad.einsum("tn,nf->tf", frames, ci[:window])
    power = re * re + im * im
    mel = ad.einsum("tf,fb->tb", power, mel_filterbank(bands, nfft,
                                                       f_max=f_max))
    # floor realised as max(mel, FLOOR) with a constant switch mask
    mask = (mel.data >= MEL_FLOOR).astype(np.float64)
    floored = mel * ad.Tensor(mask) + ad.Tensor((1.0 - mask) * MEL_FLOOR)
    return ad.log(floored)


# WAV I/O ---------------------------------------------------------------

def read_wav(path):
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"unsupported WAV dtype {data.dtype} in {path}")
    return WaveBuffer(samples.T, rate)


def write_wav(path, wave, dtype="float32"):
    data = wave.samples.T
    if dtype == "float32":
        out = data.astype(np.float32)
    elif dtype == "int16":
        out = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise InvalidInputError(f"unsupported WAV dtype {dtype}")
    if out.shape[1] == 1:
        out = out[:, 0]
    scipy.io.wavfile.write(path, wave.sample_rate, out)
