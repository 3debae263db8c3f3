"""Input features for the mask estimator.

Per frame and frequency bin the feature vector stacks the log power
spectrum at the reference microphone, the sines and cosines of the
inter-channel phase differences (IPD) against the reference, and the sines
and cosines of the same phase pattern computed from the steering vector of
the per-frame target direction.  Channel order along the last axis:

    [log-power (1), sin IPD (M-1), cos IPD (M-1), sin DF (M-1), cos DF (M-1)]

giving C = 4 * (M - 1) + 1 channels on a (T, F, C) tensor.
"""

import numpy as np

from .errors import InvalidInputError

LOG_POWER_FLOOR = 1e-10


def feature_channels(num_mics):
    return 4 * (num_mics - 1) + 1


def log_power_ref(spec, reference_index=0):
    """(T, F) log power of the reference channel, floored before the log."""
    if not 0 <= reference_index < spec.num_channels:
        raise InvalidInputError("reference index out of range")
    x = spec.data[reference_index]
    return np.log(np.abs(x) ** 2 + LOG_POWER_FLOOR).T


def ipd(spec, reference_index=0):
    """(T, F, M-1) inter-channel phase differences in (-pi, pi].

    Computed as angle(x_m * conj(x_r)); bins where the reference (or the
    channel) is exactly zero yield 0 by convention.
    """
    if spec.num_channels < 2:
        raise InvalidInputError("IPD needs at least two channels")
    ref = spec.data[reference_index]
    others = [m for m in range(spec.num_channels) if m != reference_index]
    angles = np.stack([np.angle(spec.data[m] * ref.conj()) for m in others])
    return angles.transpose(2, 1, 0)


def directional(field, trace, reference_index=0):
    """(T, F, M-1) phase pattern of the active direction's steering vector."""
    if trace.num_frames == 0:
        raise InvalidInputError("empty direction trace")
    vecs = field.vectors[trace.indices]  # (T, F, M)
    ref = vecs[:, :, reference_index]
    others = [m for m in range(vecs.shape[2]) if m != reference_index]
    return np.stack([np.angle(vecs[:, :, m] * ref.conj()) for m in others],
                    axis=2)


def assemble(spec, field, trace, reference_index=0):
    """(T, F, 4(M-1)+1) feature tensor for the mask estimator."""
    if trace.num_frames != spec.num_frames:
        raise InvalidInputError("trace frame count does not match spectrogram")
    if field.num_bins != spec.num_bins:
        raise InvalidInputError("steering field bin count does not match")
    lp = log_power_ref(spec, reference_index)[:, :, None]
    p = ipd(spec, reference_index)
    d = directional(field, trace, reference_index)
    return np.concatenate(
        [lp, np.sin(p), np.cos(p), np.sin(d), np.cos(d)], axis=2)
