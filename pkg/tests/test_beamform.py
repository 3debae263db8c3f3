import numpy as np
import pytest

from beamasr import autodiff as ad
from beamasr import beamform as bf
from beamasr import masknet as mk
from beamasr import scene as sc
from beamasr import signal as sig
from beamasr.errors import DegenerateFilterError, InvalidInputError


def _mix(rng, m=2, f=9, t=12):
    return rng.normal(size=(m, f, t)) + 1j * rng.normal(size=(m, f, t))


def test_accumulate_scms_matches_manual(rng):
    x = _mix(rng)
    z = rng.uniform(0.1, 0.9, size=(9, 12))
    trace = sc.DirectionTrace(rng.integers(0, 3, size=12), 3)
    scms = bf.accumulate_scms(x, z, trace)
    gates = trace.gates()
    for d in range(3):
        v_manual = np.einsum("t,ft,mft,nft->fmn", gates[d], z, x, x.conj())
        r_manual = np.einsum("t,ft,mft,nft->fmn", gates[d], 1.0 - z, x,
                             x.conj())
        np.testing.assert_allclose(scms.speech[d], v_manual, atol=1e-12)
        np.testing.assert_allclose(scms.noise[d], r_manual, atol=1e-12)
    # SCMs are Hermitian by construction
    np.testing.assert_allclose(scms.speech, scms.speech.conj().swapaxes(-1, -2),
                               atol=1e-12)


def test_accumulate_scms_flags_empty_directions(rng):
    x = _mix(rng)
    z = rng.uniform(0.1, 0.9, size=(9, 12))
    trace = sc.DirectionTrace(np.zeros(12, dtype=np.int64), 4)
    scms = bf.accumulate_scms(x, z, trace)
    np.testing.assert_array_equal(scms.empty, [False, True, True, True])
    assert np.all(scms.speech[1:] == 0.0)


def test_mvdr_distortionless_for_rank_one_target(rng):
    for m in (2, 4):
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, size=m))
        a /= a[0]  # unit reference-channel response
        v = 3.0 * np.outer(a, a.conj())
        n = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        r = n @ n.conj().T + 0.5 * np.eye(m)
        u = bf.one_hot(m, 0)
        w = bf.mvdr(v, r, u)
        # unit gain toward the steering vector at the reference channel
        assert abs(np.vdot(w, a) - a[0]) < 1e-8


def test_mvdr_input_validation(rng):
    m = 2
    v = np.eye(m, dtype=complex)
    r = np.eye(m, dtype=complex)
    with pytest.raises(InvalidInputError):
        bf.mvdr(v, r, np.array([1.0, 1.0]))  # not one-hot
    with pytest.raises(InvalidInputError):
        bf.mvdr(v, r, bf.one_hot(m, 0), loading=0.0)
    with pytest.raises(InvalidInputError):
        bf.mvdr(np.array([[0.0, 1.0], [0.0, 0.0]]), r, bf.one_hot(m, 0))


def test_mvdr_degenerate_raises():
    m = 2
    r = np.eye(m, dtype=complex)
    with pytest.raises(DegenerateFilterError):
        bf.mvdr(np.zeros((m, m), dtype=complex), r, bf.one_hot(m, 0))


def test_mvdr_per_direction_fallback(rng):
    x = _mix(rng)
    z = rng.uniform(0.1, 0.9, size=(9, 12))
    trace = sc.DirectionTrace(np.zeros(12, dtype=np.int64), 2)
    scms = bf.accumulate_scms(x, z, trace)
    u = bf.one_hot(2, 0)
    w = bf.mvdr_per_direction(scms, u)
    assert w.shape == (2, 9, 2)
    # the empty direction falls back to the reference selector
    np.testing.assert_array_equal(w[1], np.tile(u.astype(complex), (9, 1)))


def test_apply_hma_matches_manual(rng):
    x = _mix(rng)
    trace = sc.DirectionTrace(rng.integers(0, 3, size=12), 3)
    w = rng.normal(size=(3, 9, 2)) + 1j * rng.normal(size=(3, 9, 2))
    out = bf.apply_hma(x, w, trace)
    manual = np.empty((9, 12), dtype=complex)
    for t in range(12):
        d = trace.indices[t]
        for f in range(9):
            manual[f, t] = np.vdot(w[d, f], x[:, f, t])
    np.testing.assert_allclose(out, manual, atol=1e-12)


def test_mvdr_suppresses_directional_interferer(rng, tiny_field):
    """Oracle-masked MVDR on target + interferer beats the raw mixture."""
    f_bins = tiny_field.num_bins
    t_len, d1, d2 = 40, 5, 1
    s = rng.normal(size=(f_bins, t_len)) + 1j * rng.normal(size=(f_bins, t_len))
    q = rng.normal(size=(f_bins, t_len)) + 1j * rng.normal(size=(f_bins, t_len))
    tgt = np.einsum("fm,ft->mft", tiny_field.vectors[d1], s)
    itf = np.einsum("fm,ft->mft", tiny_field.vectors[d2], q)
    x = tgt + itf + 1e-3 * (rng.normal(size=tgt.shape)
                            + 1j * rng.normal(size=tgt.shape))
    trace = sc.DirectionTrace(np.full(t_len, d1, dtype=np.int64),
                              tiny_field.num_directions)
    z = mk.oracle_mask(x[0], tgt[0])
    scms = bf.accumulate_scms(x, z, trace)
    w = bf.mvdr_per_direction(scms, bf.one_hot(2, 0))
    s_hat = bf.apply_hma(x, w, trace)
    sig_pow = np.mean(np.abs(s) ** 2)
    err_out = np.mean(np.abs(s_hat - s) ** 2) / sig_pow
    err_mix = np.mean(np.abs(x[0] - s) ** 2) / sig_pow
    assert err_mix > 0.9  # the interferer dominates the raw mixture
    assert err_out < 0.35 * err_mix


def test_enhance_graph_matches_numpy_enhance(rng, tiny_field, tiny_scenes):
    scene = tiny_scenes[0]
    est = mk.MaskEstimator(tiny_field.num_bins,
                           tiny_field.geometry.num_mics, hidden=4, seed=3)
    cfg = bf.EnhanceConfig()
    wave_np, mask_np = bf.enhance(scene.mixture, tiny_field, scene.trace, est,
                                  cfg, length=scene.clean_wave.num_samples)
    sig_t, mask_t = bf.enhance_graph(scene.mixture, tiny_field, scene.trace,
                                     est, est.params.tensors(), cfg,
                                     length=scene.clean_wave.num_samples)
    np.testing.assert_allclose(mask_t.data, mask_np, atol=1e-12)
    np.testing.assert_allclose(sig_t.data, wave_np.samples[0], atol=1e-8)


def test_enhance_graph_backpropagates_to_mask_params(tiny_field, tiny_scenes):
    scene = tiny_scenes[0]
    est = mk.MaskEstimator(tiny_field.num_bins,
                           tiny_field.geometry.num_mics, hidden=4, seed=3)
    pv = est.params
    tensors = pv.tensors()
    out, _ = bf.enhance_graph(scene.mixture, tiny_field, scene.trace, est,
                              tensors)
    ad.tsum(out * out).backward()
    pv.zero_grad()
    pv.collect(tensors)
    assert np.any(pv.grads != 0.0)
    assert np.all(np.isfinite(pv.grads))


def test_time_invariant_trace_uses_single_filter(rng, tiny_field, tiny_scenes):
    scene = tiny_scenes[0]
    mask = np.full((tiny_field.num_bins, scene.mixture.num_frames), 0.5)
    cfg = bf.EnhanceConfig(time_varying=False)
    wave, _ = bf.enhance(scene.mixture, tiny_field, scene.trace,
                         estimator=None, config=cfg, mask=mask)
    assert wave.num_samples == scene.mixture.num_frames * scene.mixture.hop


def test_scm_dump_round_trip(tmp_path, rng):
    x = _mix(rng)
    z = rng.uniform(0.1, 0.9, size=(9, 12))
    trace = sc.DirectionTrace(rng.integers(0, 3, size=12), 3)
    scms = bf.accumulate_scms(x, z, trace)
    w = bf.mvdr_per_direction(scms, bf.one_hot(2, 0))
    path = str(tmp_path / "scm.bin")
    bf.dump_scms(path, scms, w)
    back, w2 = bf.load_scms(path)
    np.testing.assert_array_equal(back.speech, scms.speech)
    np.testing.assert_array_equal(back.noise, scms.noise)
    np.testing.assert_array_equal(back.empty, scms.empty)
    np.testing.assert_array_equal(w2, w)
