"""Mask- and direction-gated MVDR beamforming with head-movement-aware
application, plus a differentiable version of the whole enhancement chain.

Two layers of API:

* plain numpy operations (``accumulate_scms``, ``mvdr``, ``apply_hma``,
  ``enhance``) implementing the published formulas for inference;
* graph-building counterparts (``enhance_graph``) that route the mask
  estimator's output through SCM accumulation, the MVDR solve (complex
  matrix inverse via a real block embedding), per-frame filter gating, and
  the inverse STFT, so that a loss on the enhanced signal back-propagates
  into the mask-estimator parameters.
"""

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from . import features as feat
from . import signal as sig
from . import wpe as wpemod
from .errors import DataError, DegenerateFilterError, InvalidInputError

DEFAULT_LOADING = 1e-6
TRACE_FLOOR = 1e-6


@dataclass
class SCMSet:
    """Per-direction speech (V) and noise (R) SCMs, each (D, F, M, M)."""

    speech: np.ndarray
    noise: np.ndarray
    empty: np.ndarray  # (D,) True where no frame was assigned

    @property
    def num_directions(self):
        return self.speech.shape[0]


def accumulate_scms(x, z, trace):
    """V_fd = sum_t phi_dt z_ft x x^H and R_fd with (1 - z_ft).

    x: (M, F, T) complex, z: (F, T) mask values, trace: DirectionTrace.
    Only directions that actually occur in the trace are populated; the
    rest stay zero and are flagged empty.
    """
    x = np.asarray(x)
    z = np.asarray(z, dtype=np.float64)
    m, f_len, t_len = x.shape
    if z.shape != (f_len, t_len):
        raise InvalidInputError("mask shape does not match the spectrogram")
    if trace.num_frames != t_len:
        raise InvalidInputError("trace length does not match the spectrogram")
    gates = trace.gates()
    d = trace.num_directions
    speech = np.zeros((d, f_len, m, m), dtype=np.complex128)
    noise = np.zeros((d, f_len, m, m), dtype=np.complex128)
    counts = gates.sum(axis=1)
    outer = np.einsum("mft,nft->fmnt", x, x.conj())
    for di in np.flatnonzero(counts):
        speech[di] = np.einsum("t,ft,fmnt->fmn", gates[di], z, outer)
        noise[di] = np.einsum("t,ft,fmnt->fmn", gates[di], 1.0 - z, outer)
    return SCMSet(speech, noise, counts == 0)


def _check_hermitian(mat, tol=1e-8):
    if not np.allclose(mat, mat.conj().T, atol=tol * max(1.0, np.abs(mat).max())):
        raise InvalidInputError("SCM is not Hermitian")


def mvdr(v, r, u, loading=DEFAULT_LOADING):
    """MVDR filter w = R~^{-1} V [Tr(R~^{-1} V)]^{-1} u for one (f, d).

    R~ = R + loading * (tr R / M) * I.  Raises DegenerateFilterError when
    the trace denominator vanishes (no speech in this direction); callers
    fall back to the reference channel.
    """
    v = np.asarray(v, dtype=np.complex128)
    r = np.asarray(r, dtype=np.complex128)
    u = np.asarray(u, dtype=np.float64)
    m = v.shape[0]
    if v.shape != (m, m) or r.shape != (m, m) or u.shape != (m,):
        raise InvalidInputError("mvdr expects (M, M) SCMs and a length-M selector")
    if np.count_nonzero(u) != 1 or not np.all(np.isin(u, (0.0, 1.0))):
        raise InvalidInputError("u must be one-hot")
    if loading <= 0:
        raise InvalidInputError("loading must be positive")
    _check_hermitian(v)
    _check_hermitian(r)
    r_t = r + (loading * np.trace(r).real / m + 1e-300) * np.eye(m)
    num = np.linalg.solve(r_t, v)
    tr = np.trace(num)
    scale = max(np.abs(num).max(), 1.0)
    if np.abs(tr) <= TRACE_FLOOR * scale:
        raise DegenerateFilterError("vanishing Tr(R^-1 V); no speech in direction")
    w = num @ u.astype(np.complex128) / tr
    if not np.all(np.isfinite(w)):
        raise DegenerateFilterError("non-finite MVDR filter")
    return w


def mvdr_per_direction(scms, u, loading=DEFAULT_LOADING):
    """(D, F, M) filters; degenerate or empty cells fall back to u."""
    d, f_len, m, _ = scms.speech.shape
    w = np.tile(u.astype(np.complex128), (d, f_len, 1))
    for di in range(d):
        if scms.empty[di]:
            continue
        for fi in range(f_len):
            try:
                w[di, fi] = mvdr(scms.speech[di, fi], scms.noise[di, fi], u,
                                 loading)
            except DegenerateFilterError:
                pass
    return w


def apply_hma(x, filters, trace):
    """Head-movement-aware application: s_ft = sum_d phi_dt w_fd^H x_ft.

    x: (M, F, T), filters: (D, F, M); returns (F, T).
    """
    x = np.asarray(x)
    if trace.num_frames != x.shape[2]:
        raise InvalidInputError("trace length does not match the spectrogram")
    if filters.shape[0] != trace.num_directions:
        raise InvalidInputError("filter bank does not match the trace grid")
    w_t = filters[trace.indices]  # (T, F, M)
    return np.einsum("tfm,mft->ft", w_t.conj(), x)


def one_hot(m, index):
    u = np.zeros(m)
    u[index] = 1.0
    return u


@dataclass
class EnhanceConfig:
    # linear prediction cancels sustained tonal targets, so dereverberation
    # is opt-in for this stimulus family
    use_wpe: bool = False
    wpe: wpemod.WpeConfig = dc_field(default_factory=wpemod.WpeConfig)
    loading: float = DEFAULT_LOADING
    time_varying: bool = True  # False: single ungated MVDR filter


def _effective_trace(trace, time_varying):
    from .scene import DirectionTrace
    if time_varying:
        return trace
    # time-invariant baseline: one pseudo-direction covering every frame
    return DirectionTrace(np.zeros(trace.num_frames, dtype=np.int64), 1)


def enhance(spec, field, trace, estimator, config=None, mask=None, length=None):
    """Full pipeline: WPE -> features -> mask -> SCMs -> MVDR -> gated
    application -> iSTFT.  Returns (WaveBuffer, MaskMatrix-like ndarray).

    ``mask`` overrides the estimator output (e.g. an oracle mask).
    """
    config = config or EnhanceConfig()
    work = spec
    if config.use_wpe and spec.num_frames > config.wpe.taps + config.wpe.delay:
        work = wpemod.wpe(spec, config.wpe)
    if mask is None:
        fx = feat.assemble(work, field, trace, field.geometry.reference_index)
        mask = estimator.forward(fx).data
    mask = np.asarray(mask, dtype=np.float64)
    ref = field.geometry.reference_index
    u = one_hot(work.num_channels, ref)
    eff = _effective_trace(trace, config.time_varying)
    scms = accumulate_scms(work.data, mask, eff)
    filters = mvdr_per_direction(scms, u, config.loading)
    s_hat = apply_hma(work.data, filters, eff)
    out_spec = sig.ComplexSpectrogram(s_hat[None], work.window, work.hop)
    return sig.istft(out_spec, work.window, work.hop, length=length), mask


# differentiable chain --------------------------------------------------

def scms_graph(x, z, gates):
    """Differentiable SCM accumulation.

    x: (M, F, T) complex constant, z: (F, T) Tensor, gates: (D, T) const.
    Returns (V, R) CTensors of shape (D, F, M, M).
    """
    outer = np.einsum("mft,nft->fmnt", x, x.conj())
    o_re, o_im = outer.real.copy(), outer.imag.copy()
    v_re = ad.einsum("dt,ft,fmnt->dfmn", gates, z, o_re)
    v_im = ad.einsum("dt,ft,fmnt->dfmn", gates, z, o_im)
    zc = 1.0 - z
    r_re = ad.einsum("dt,ft,fmnt->dfmn", gates, zc, o_re)
    r_im = ad.einsum("dt,ft,fmnt->dfmn", gates, zc, o_im)
    return ad.CTensor(v_re, v_im), ad.CTensor(r_re, r_im)


def mvdr_graph(v, r, u, loading=DEFAULT_LOADING, abs_floor=0.0):
    """Differentiable batched MVDR over (D, F, M, M) CTensors.

    Cells with a vanishing trace denominator (including empty directions)
    are replaced by the constant selector u, matching the inference
    fallback.  ``abs_floor`` is an absolute diagonal stabilizer derived
    from the data scale by the caller.
    """
    m = v.shape[-1]
    eye = np.eye(m)
    tr_r = ad.einsum("dfmn,mn->df", r.re, eye)
    scale = tr_r * (loading / m) + abs_floor
    r_t = ad.CTensor(r.re + ad.einsum("df,mn->dfmn", scale, eye), r.im)
    r_inv = ad.cinverse(r_t)
    num = ad.ceinsum("dfmk,dfkn->dfmn", r_inv, v)
    tr = ad.ctrace(num)
    w_num = ad.CTensor(ad.einsum("dfmn,n->dfm", num.re, u),
                       ad.einsum("dfmn,n->dfm", num.im, u))
    tr_abs = np.sqrt(tr.re.data ** 2 + tr.im.data ** 2)
    peak = np.maximum(np.abs(num.re.data).max(axis=-1).max(axis=-1)
                      + np.abs(num.im.data).max(axis=-1).max(axis=-1), 1.0)
    good = (tr_abs > TRACE_FLOOR * peak).astype(np.float64)[:, :, None]
    d_len, f_len = tr.re.shape
    w = ad.cdiv(w_num, ad.CTensor(ad.reshape(tr.re, (d_len, f_len, 1)),
                                  ad.reshape(tr.im, (d_len, f_len, 1))),
                eps=1e-300)
    fallback = np.broadcast_to(u, w.shape).astype(np.float64)
    w_re = w.re * ad.Tensor(good) + ad.Tensor((1.0 - good) * fallback)
    w_im = w.im * ad.Tensor(good)
    return ad.CTensor(w_re, w_im)


def apply_graph(x, w, gates):
    """Differentiable gated application: s_ft = sum_d phi_dt w_fd^H x_ft."""
    x_re, x_im = x.real.copy(), x.imag.copy()
    re = ad.einsum("dt,dfm,mft->ft", gates, w.re, x_re) \
        + ad.einsum("dt,dfm,mft->ft", gates, w.im, x_im)
    im = ad.einsum("dt,dfm,mft->ft", gates, w.re, x_im) \
        - ad.einsum("dt,dfm,mft->ft", gates, w.im, x_re)
    return ad.CTensor(re, im)


def enhance_graph(spec, field, trace, estimator, tensors, config=None,
                  length=None):
    """Differentiable enhancement producing a time-domain Tensor.

    ``tensors`` are the mask-estimator parameter Tensors (from
    ``estimator.params.tensors()``); gradients of any scalar loss on the
    returned signal reach them through ``loss.backward()``.
    Returns (signal Tensor, mask Tensor).
    """
    config = config or EnhanceConfig()
    work = spec
    if config.use_wpe and spec.num_frames > config.wpe.taps + config.wpe.delay:
        work = wpemod.wpe(spec, config.wpe)  # fixed preprocessing, no grads
    ref = field.geometry.reference_index
    fx = feat.assemble(work, field, trace, ref)
    z = estimator.forward(fx, tensors=tensors)
    eff = _effective_trace(trace, config.time_varying)
    gates = eff.gates()
    # restrict to directions that occur; keeps the graph small
    active = eff.active_directions()
    gates = gates[active]
    x = work.data
    v, r = scms_graph(x, z, gates)
    u = one_hot(work.num_channels, ref)
    abs_floor = 1e-12 * float(np.mean(np.abs(x) ** 2)) + 1e-300
    w = mvdr_graph(v, r, u, config.loading, abs_floor)
    s_hat = apply_graph(x, w, gates)
    if length is None:
        length = work.num_frames * work.hop
    return sig.istft_t(s_hat, work.window, work.hop, length), z


# debug dump ------------------------------------------------------------

SCM_MAGIC = b"BMSC"


def dump_scms(path, scms, filters):
    """Binary dump: magic, D/F/M as uint32, then V, R, W as complex128."""
    d, f_len, m, _ = scms.speech.shape
    with open(path, "wb") as fh:
        fh.write(SCM_MAGIC)
        fh.write(struct.pack("<III", d, f_len, m))
        fh.write(scms.speech.astype("<c16").tobytes())
        fh.write(scms.noise.astype("<c16").tobytes())
        fh.write(np.asarray(filters).astype("<c16").tobytes())


def load_scms(path):
    with open(path, "rb") as fh:
        if fh.read(4) != SCM_MAGIC:
            raise DataError(f"not an SCM dump: {path}")
        d, f_len, m = struct.unpack("<III", fh.read(12))
        n_mat = d * f_len * m * m
        raw = np.frombuffer(fh.read(), dtype="<c16")
    v = raw[:n_mat].reshape(d, f_len, m, m).copy()
    r = raw[n_mat:2 * n_mat].reshape(d, f_len, m, m).copy()
    w = raw[2 * n_mat:].reshape(d, f_len, m).copy()
    empty = np.asarray([not np.any(v[di]) for di in range(d)])
    return SCMSet(v, r, empty), w
