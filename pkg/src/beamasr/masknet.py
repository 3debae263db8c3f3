"""Direction-aware speech mask estimator.

A single bidirectional GRU over frame-stacked features followed by an
affine layer with a logistic output per frequency bin.  Trained with the
phase-sensitive magnitude spectral approximation loss using AdamW with an
exponentially decayed learning rate.  The forward pass builds an autodiff
graph, so the same code path serves supervised training and the run-time
adaptation chain.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import features as feat
from . import nn
from .errors import DataError, InvalidInputError, TrainingError


@dataclass
class MaskMatrix:
    """(F, T) speech masks in the open interval (0, 1)."""

    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2:
            raise InvalidInputError("mask must be (F, T)")
        if np.any(self.z <= 0.0) or np.any(self.z >= 1.0):
            raise InvalidInputError("mask values must lie strictly in (0, 1)")


class MaskEstimator:
    """BiGRU mask estimator; owns a flat ParameterVector."""

    def __init__(self, freq_bins, num_mics, hidden=64, dropout=0.2, seed=0):
        self.freq_bins = freq_bins
        self.num_mics = num_mics
        self.hidden = hidden
        self.dropout = dropout
        self.input_dim = freq_bins * feat.feature_channels(num_mics)
        rng = np.random.default_rng(seed)
        pv = nn.ParameterVector()
        nn.add_bigru(pv, rng, "gru", self.input_dim, hidden)
        nn.add_affine(pv, rng, "out", 2 * hidden, freq_bins)
        self.params = pv

    def forward(self, features, tensors=None, train=False, rng=None):
        """features: (T, F, C) ndarray -> mask Tensor of shape (F, T)."""
        t_len, f_len, c = features.shape
        if f_len != self.freq_bins or c != feat.feature_channels(self.num_mics):
            raise InvalidInputError("feature shape does not match the estimator")
        if tensors is None:
            tensors = self.params.tensors()
        x = ad.Tensor(features.reshape(t_len, f_len * c))
        h = nn.bigru(tensors, "gru", x, self.hidden)
        if train:
            h = nn.dropout(h, self.dropout, rng)
        logits = nn.affine(tensors, "out", h)  # (T, F)
        return ad.transpose(ad.sigmoid(logits), (1, 0))

    def estimate_mask(self, features):
        """Deterministic eval-mode mask as a MaskMatrix."""
        return MaskMatrix(self.forward(features).data)

    # persistence -------------------------------------------------------

    def metadata(self):
        return {"kind": "mask-estimator", "freq_bins": self.freq_bins,
                "num_mics": self.num_mics, "hidden": self.hidden,
                "dropout": self.dropout}

    def save(self, path):
        self.params.save(path, self.metadata())

    @staticmethod
    def load(path):
        pv, meta = nn.ParameterVector.load(path)
        if meta.get("kind") != "mask-estimator":
            raise DataError(f"{path} is not a mask-estimator checkpoint")
        est = MaskEstimator(meta["freq_bins"], meta["num_mics"],
                            hidden=meta["hidden"], dropout=meta["dropout"])
        if est.params.values.size != pv.values.size:
            raise DataError(f"parameter count mismatch in {path}")
        est.params = pv
        return est


def psm_loss(z, x_ref, s_ref):
    """Phase-sensitive magnitude approximation loss.

    sum_{f,t} (z |x| - |s| max(0, cos(angle x - angle s)))^2, where x and s
    are the mixture and clean reference-channel STFTs.
    """
    x_ref = np.asarray(x_ref)
    s_ref = np.asarray(s_ref)
    if x_ref.shape != s_ref.shape:
        raise InvalidInputError("mixture/clean shape mismatch")
    target = np.abs(s_ref) * np.maximum(0.0, np.cos(np.angle(x_ref)
                                                    - np.angle(s_ref)))
    mag = np.abs(x_ref)
    if isinstance(z, ad.Tensor):
        diff = z * ad.Tensor(mag) - ad.Tensor(target)
        return ad.tsum(diff * diff)
    diff = np.asarray(z) * mag - target
    return float(np.sum(diff * diff))


@dataclass
class MaskTrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    lr_decay: float = 0.96
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8


def mask_lr(config, epoch):
    return config.learning_rate * config.lr_decay ** epoch


def prepare_example(scene, field, reference_index=None):
    """(features, x_ref, s_ref) triple for mask training from a scene."""
    ref = field.geometry.reference_index if reference_index is None \
        else reference_index
    fx = feat.assemble(scene.mixture, field, scene.trace, ref)
    return fx, scene.mixture.data[ref], scene.clean_target.data[0]


def train_mask(dataset, config=None, seed=0, estimator=None, field=None):
    """Train a MaskEstimator on (features, x_ref, s_ref) triples.

    ``dataset`` may also contain SceneExamples if ``field`` is given.
    Returns the estimator and the per-epoch mean losses.
    """
    config = config or MaskTrainConfig()
    if not dataset:
        raise InvalidInputError("empty training dataset")
    triples = []
    for item in dataset:
        if isinstance(item, tuple):
            triples.append(item)
        else:
            if field is None:
                raise InvalidInputError("scene examples require a steering field")
            triples.append(prepare_example(item, field))
    if estimator is None:
        t0, _, _ = triples[0]
        estimator = MaskEstimator(t0.shape[1], _num_mics_from_channels(t0.shape[2]),
                                  seed=seed)
    pv = estimator.params
    opt = nn.AdamW(pv.values.size, lr=config.learning_rate,
                   beta1=config.beta1, beta2=config.beta2,
                   weight_decay=config.weight_decay)
    drop_rng = np.random.default_rng(seed + 1)
    history = []
    for epoch in range(config.epochs):
        lr = mask_lr(config, epoch)
        total = 0.0
        for lo in range(0, len(triples), config.batch_size):
            batch = triples[lo:lo + config.batch_size]
            pv.zero_grad()
            for fx, x_ref, s_ref in batch:
                tensors = pv.tensors()
                z = estimator.forward(fx, tensors=tensors, train=True,
                                      rng=drop_rng)
                loss = psm_loss(z, x_ref, s_ref)
                if not np.isfinite(loss.data):
                    raise TrainingError("mask training diverged", epoch=epoch)
                loss.backward()
                pv.collect(tensors, scale=1.0 / len(batch))
                total += loss.item()
            opt.step(pv.values, pv.grads, lr=lr)
        history.append(total / len(triples))
    return estimator, history


def _num_mics_from_channels(c):
    if (c - 1) % 4 != 0:
        raise InvalidInputError("feature channel count must be 4(M-1)+1")
    return (c - 1) // 4 + 1


def oracle_mask(x_ref, s_ref, floor=1e-6):
    """IRM-style reference mask |s| / (|s| + |x - s|), clipped into (0, 1)."""
    s_mag = np.abs(s_ref)
    n_mag = np.abs(x_ref - s_ref)
    z = s_mag / (s_mag + n_mag + 1e-300)
    return np.clip(z, floor, 1.0 - floor)
