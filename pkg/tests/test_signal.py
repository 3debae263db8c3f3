import numpy as np
import pytest

from beamasr import autodiff as ad
from beamasr import signal as sig
from beamasr.errors import DataError, InvalidInputError


def test_wave_buffer_shapes(rng):
    w = sig.WaveBuffer(rng.normal(size=1000))
    assert w.num_channels == 1
    assert w.num_samples == 1000
    assert w.duration == 1000 / sig.SAMPLE_RATE
    w4 = sig.WaveBuffer(rng.normal(size=(4, 640)))
    assert w4.num_channels == 4
    np.testing.assert_array_equal(w4.channel(2), w4.samples[2])


def test_wave_buffer_rejects_non_finite(rng):
    x = rng.normal(size=512)
    x[100] = np.nan
    with pytest.raises(InvalidInputError):
        sig.WaveBuffer(x)


def test_stft_round_trip_random_signals(rng):
    for _ in range(10):
        length = int(rng.integers(700, 4000))
        chans = int(rng.integers(1, 5))
        wave = sig.WaveBuffer(rng.normal(size=(chans, length)))
        spec = sig.stft(wave)
        back = sig.istft(spec, length=length)
        assert np.max(np.abs(back.samples - wave.samples)) < 1e-10


def test_stft_shapes(rng):
    wave = sig.WaveBuffer(rng.normal(size=(2, 2000)))
    spec = sig.stft(wave, window=512, hop=128)
    assert spec.data.shape == (2, 257, int(np.ceil(2000 / 128)))


def test_stft_rejects_bad_framing(rng):
    wave = sig.WaveBuffer(rng.normal(size=2000))
    with pytest.raises(InvalidInputError):
        sig.stft(wave, window=500, hop=100)  # not a power of two
    with pytest.raises(InvalidInputError):
        sig.stft(wave, window=512, hop=100)  # hop does not divide window
    with pytest.raises(InvalidInputError):
        sig.stft(sig.WaveBuffer(np.zeros(100)), window=512, hop=128)


def test_istft_t_matches_numpy_istft(rng):
    wave = sig.WaveBuffer(rng.normal(size=1500))
    spec = sig.stft(wave, window=64, hop=16)
    ct = ad.CTensor(ad.Tensor(spec.data[0].real.copy()),
                    ad.Tensor(spec.data[0].imag.copy()))
    out_t = sig.istft_t(ct, 64, 16, 1500)
    out_np = sig.istft(spec, 64, 16, length=1500)
    np.testing.assert_allclose(out_t.data, out_np.samples[0], atol=1e-10)


def test_log_mel_t_matches_log_mel(rng):
    wave = sig.WaveBuffer(rng.normal(size=3200))
    ref = sig.log_mel(wave).data
    got = sig.log_mel_t(ad.Tensor(wave.samples[0].copy())).data
    assert np.max(np.abs(got - ref)) < 1e-10


def test_log_mel_t_toy_framing_grad(rng):
    x = rng.normal(size=40)
    kw = dict(window=8, hop=4, nfft=8, bands=3)
    g = ad.Tensor(rng.normal(size=(10, 3)))
    t = ad.Tensor(x.copy(), requires_grad=True)
    ad.tsum(sig.log_mel_t(t, **kw) * g).backward()
    num = ad.numeric_gradient(
        lambda a: ad.tsum(sig.log_mel_t(ad.Tensor(a), **kw) * g).item(),
        x, h=1e-6)
    np.testing.assert_allclose(t.grad, num, atol=1e-5)


def test_log_mel_rejects_bad_input(rng):
    with pytest.raises(InvalidInputError):
        sig.log_mel(sig.WaveBuffer(np.zeros((1, 10))))
    with pytest.raises(InvalidInputError):
        sig.log_mel(sig.WaveBuffer(np.zeros((1, 2000)), sample_rate=8000))
    with pytest.raises(InvalidInputError):
        sig.log_mel_t(ad.Tensor(np.zeros(40)), window=8, hop=4, nfft=4)


def test_mel_filterbank_properties():
    fb = sig.mel_filterbank()
    assert fb.shape == (sig.MEL_NFFT // 2 + 1, sig.MEL_BANDS)
    assert np.all(fb >= 0.0)
    assert np.all(fb.max(axis=0) > 0.0)  # every band hits at least one bin


def test_wav_round_trip(tmp_path, rng):
    wave = sig.WaveBuffer(rng.uniform(-0.9, 0.9, size=(2, 1600)))
    path = str(tmp_path / "x.wav")
    sig.write_wav(path, wave)
    back = sig.read_wav(path)
    assert back.sample_rate == wave.sample_rate
    assert np.max(np.abs(back.samples - wave.samples)) < 1e-6
    sig.write_wav(path, wave, dtype="int16")
    back = sig.read_wav(path)
    assert np.max(np.abs(back.samples - wave.samples)) < 1e-3


def test_read_wav_missing_file(tmp_path):
    with pytest.raises(DataError):
        sig.read_wav(str(tmp_path / "nope.wav"))
