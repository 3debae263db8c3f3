import numpy as np
import pytest

from beamasr import autodiff as ad
from beamasr import nn
from beamasr.errors import DataError, InvalidInputError


def _small_pv(rng):
    pv = nn.ParameterVector()
    pv.add("w", rng.normal(size=(3, 4)))
    pv.add("b", rng.normal(size=4))
    return pv


def test_parameter_vector_views(rng):
    pv = _small_pv(rng)
    assert pv.values.size == 16
    assert pv.names() == ["w", "b"]
    assert pv.view("w").shape == (3, 4)
    # views alias the flat store
    pv.view("w")[0, 0] = 5.0
    assert pv.values[0] == 5.0


def test_parameter_vector_copy_is_independent(rng):
    pv = _small_pv(rng)
    cp = pv.copy()
    np.testing.assert_array_equal(cp.values, pv.values)
    cp.values[:] = 0.0
    assert not np.array_equal(cp.values, pv.values)


def test_parameter_vector_mask(rng):
    pv = _small_pv(rng)
    mask = pv.mask_for(["b"])
    assert mask.sum() == 4
    lo, hi = pv.slice_of("b").start, pv.slice_of("b").stop
    assert np.all(mask[lo:hi])


def test_parameter_vector_collect_accumulates(rng):
    pv = _small_pv(rng)
    tensors = pv.tensors()
    loss = ad.tsum(tensors["w"] * tensors["w"]) + ad.tsum(tensors["b"])
    loss.backward()
    pv.zero_grad()
    pv.collect(tensors)
    np.testing.assert_allclose(pv.grads[:12], 2.0 * pv.values[:12])
    np.testing.assert_allclose(pv.grads[12:], 1.0)


def test_parameter_vector_checkpoint_round_trip(tmp_path, rng):
    pv = _small_pv(rng)
    path = str(tmp_path / "pv.ckpt")
    pv.save(path, {"kind": "test", "n": 3})
    back, meta = nn.ParameterVector.load(path)
    assert meta == {"kind": "test", "n": 3}
    assert back.names() == pv.names()
    np.testing.assert_array_equal(back.values, pv.values)
    with open(path, "r+b") as fh:
        fh.write(b"XXXX")
    with pytest.raises(DataError):
        nn.ParameterVector.load(path)


def test_adamw_mask_freezes_entries(rng):
    values = rng.normal(size=10)
    frozen = values.copy()
    opt = nn.AdamW(10, lr=1e-2)
    mask = np.zeros(10, dtype=bool)
    mask[:5] = True
    for _ in range(5):
        opt.step(values, rng.normal(size=10), mask=mask)
    assert np.array_equal(values[5:], frozen[5:])  # bit-identical
    assert not np.array_equal(values[:5], frozen[:5])


def test_adamw_descends_quadratic(rng):
    values = rng.normal(size=4) + 3.0
    opt = nn.AdamW(4, lr=5e-2, weight_decay=0.0)
    for _ in range(400):
        opt.step(values, 2.0 * values)
    assert np.max(np.abs(values)) < 1e-3


def test_affine_and_gru_grads(rng):
    pv = nn.ParameterVector()
    nn.add_affine(pv, rng, "aff", 3, 2)
    nn.add_gru(pv, rng, "g", 3, 4)
    x = rng.normal(size=(5, 3))
    tensors = pv.tensors()
    h = nn.gru(tensors, "g", ad.Tensor(x), 4)
    assert h.shape == (5, 4)
    y = nn.affine(tensors, "aff", ad.Tensor(x))
    assert y.shape == (5, 2)
    loss = ad.tsum(y * y) + ad.tsum(h * h)
    loss.backward()
    pv.zero_grad()
    pv.collect(tensors)

    def scalar(values):
        cp = pv.copy()
        cp.values[:] = values
        ts = cp.tensors()
        hh = nn.gru(ts, "g", ad.Tensor(x), 4)
        yy = nn.affine(ts, "aff", ad.Tensor(x))
        return (ad.tsum(yy * yy) + ad.tsum(hh * hh)).item()

    num = ad.numeric_gradient(scalar, pv.values.copy(), h=1e-6)
    np.testing.assert_allclose(pv.grads, num, atol=1e-6)


def test_conv2x2_downsamples_by_two(rng):
    pv = nn.ParameterVector()
    nn.add_conv2x2(pv, rng, "c", 1, 3)
    x = ad.Tensor(rng.normal(size=(9, 6, 1)))  # odd time axis gets cropped
    out = nn.conv2x2(pv.tensors(), "c", x, 1, 3)
    assert out.shape == (4, 3, 3)


def test_bigru_concatenates_directions(rng):
    pv = nn.ParameterVector()
    nn.add_bigru(pv, rng, "bg", 3, 5)
    out = nn.bigru(pv.tensors(), "bg", ad.Tensor(rng.normal(size=(7, 3))), 5)
    assert out.shape == (7, 10)


def test_dropout_eval_mode_identity(rng):
    x = ad.Tensor(rng.normal(size=(4, 4)))
    out = nn.dropout(x, 0.0, rng)
    np.testing.assert_array_equal(out.data, x.data)
