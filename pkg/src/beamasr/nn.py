"""Flat parameter storage, recurrent/affine building blocks, optimizers,
and the shared binary checkpoint format.

All trainable models keep their weights in a single ``ParameterVector``:
a flat float64 array plus a same-shape gradient accumulator and a layout
descriptor mapping names to slices.  Each forward pass materializes the
named slices as autodiff Tensors; after ``loss.backward()`` the gradients
are gathered back into the flat accumulator with ``collect``.
"""

import json
import struct

import numpy as np

from . import autodiff as ad
from .errors import DataError, InvalidInputError

CHECKPOINT_MAGIC = b"BMA1"


class ParameterVector:
    """Flat trainable parameter store with a paired gradient store."""

    def __init__(self):
        self.layout = []  # list of (name, shape, offset)
        self.values = np.zeros(0)
        self.grads = np.zeros(0)
        self._index = {}

    def add(self, name, array):
        if name in self._index:
            raise InvalidInputError(f"duplicate parameter name: {name}")
        array = np.asarray(array, dtype=np.float64)
        offset = self.values.size
        self.layout.append((name, array.shape, offset))
        self._index[name] = (array.shape, offset)
        self.values = np.concatenate([self.values, array.ravel()])
        self.grads = np.zeros_like(self.values)
        return name

    def view(self, name):
        shape, offset = self._index[name]
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return self.values[offset:offset + size].reshape(shape)

    def slice_of(self, name):
        shape, offset = self._index[name]
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return slice(offset, offset + size)

    def names(self):
        return [name for name, _, _ in self.layout]

    def tensors(self):
        """Fresh requires-grad Tensors over copies of the current values."""
        return {name: ad.Tensor(self.view(name).copy(), requires_grad=True)
                for name, _, _ in self.layout}

    def collect(self, tensors, scale=1.0):
        """Accumulate Tensor gradients into the flat gradient store."""
        for name, t in tensors.items():
            if t.grad is not None:
                sl = self.slice_of(name)
                self.grads[sl] += scale * t.grad.ravel()

    def zero_grad(self):
        self.grads[:] = 0.0

    def copy(self):
        other = ParameterVector()
        other.layout = list(self.layout)
        other._index = dict(self._index)
        other.values = self.values.copy()
        other.grads = np.zeros_like(other.values)
        return other

    def mask_for(self, names):
        """Boolean mask over the flat vector selecting the given parameters."""
        mask = np.zeros(self.values.size, dtype=bool)
        for name in names:
            mask[self.slice_of(name)] = True
        return mask

    # checkpoint io -----------------------------------------------------

    def save(self, path, metadata=None):
        header = {
            "layout": [[name, list(shape)] for name, shape, _ in self.layout],
            "metadata": metadata or {},
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(self.values.astype("<f8").tobytes())

    @staticmethod
    def load(path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise DataError(f"not a checkpoint file: {path}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            raw = fh.read()
        pv = ParameterVector()
        offset = 0
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        for name, shape in header["layout"]:
            shape = tuple(shape)
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            pv.layout.append((name, shape, offset))
            pv._index[name] = (shape, offset)
            offset += size
        if offset != values.size:
            raise DataError(f"checkpoint size mismatch in {path}")
        pv.values = values
        pv.grads = np.zeros_like(values)
        return pv, header["metadata"]


def glorot(rng, fan_in, fan_out, shape=None):
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=shape or (fan_in, fan_out))


# layers ----------------------------------------------------------------

def add_affine(pv, rng, prefix, n_in, n_out):
    pv.add(prefix + ".W", glorot(rng, n_in, n_out))
    pv.add(prefix + ".b", np.zeros(n_out))


def affine(tensors, prefix, x):
    """x: (T, n_in) -> (T, n_out)."""
    return ad.einsum("ti,io->to", x, tensors[prefix + ".W"]) + tensors[prefix + ".b"]


def add_gru(pv, rng, prefix, n_in, n_hidden):
    # gate order along the last axis: [reset, update, candidate]
    pv.add(prefix + ".Wx", glorot(rng, n_in, 3 * n_hidden, (n_in, 3 * n_hidden)))
    pv.add(prefix + ".Wh", glorot(rng, n_hidden, 3 * n_hidden, (n_hidden, 3 * n_hidden)))
    pv.add(prefix + ".b", np.zeros(3 * n_hidden))


def gru(tensors, prefix, x, n_hidden, reverse=False):
    """Single-direction GRU over x: (T, n_in) -> (T, n_hidden).

    r = sigmoid(x Wr + h Ur + br); u = sigmoid(x Wu + h Uu + bu)
    n = tanh(x Wn + r * (h Un) + bn); h' = (1 - u) * h + u * n
    """
    wx = tensors[prefix + ".Wx"]
    wh = tensors[prefix + ".Wh"]
    b = tensors[prefix + ".b"]
    t_len = x.shape[0]
    h = ad.Tensor(np.zeros((1, n_hidden)))
    xw = ad.einsum("ti,ig->tg", x, wx) + b  # (T, 3H)
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    outs = [None] * t_len
    for t in order:
        gates_x = xw[t:t + 1]  # (1, 3H)
        gates_h = ad.einsum("bi,ig->bg", h, wh)
        r = ad.sigmoid(gates_x[:, :n_hidden] + gates_h[:, :n_hidden])
        u = ad.sigmoid(gates_x[:, n_hidden:2 * n_hidden]
                       + gates_h[:, n_hidden:2 * n_hidden])
        n = ad.tanh(gates_x[:, 2 * n_hidden:] + r * gates_h[:, 2 * n_hidden:])
        h = (1.0 - u) * h + u * n
        outs[t] = h
    return ad.concat(outs, axis=0)


def bigru(tensors, prefix, x, n_hidden):
    fwd = gru(tensors, prefix + ".fwd", x, n_hidden)
    bwd = gru(tensors, prefix + ".bwd", x, n_hidden, reverse=True)
    return ad.concat([fwd, bwd], axis=1)


def add_bigru(pv, rng, prefix, n_in, n_hidden):
    add_gru(pv, rng, prefix + ".fwd", n_in, n_hidden)
    add_gru(pv, rng, prefix + ".bwd", n_in, n_hidden)


def add_conv2x2(pv, rng, prefix, c_in, c_out):
    fan = 4 * c_in
    pv.add(prefix + ".W", glorot(rng, fan, c_out, (fan, c_out)))
    pv.add(prefix + ".b", np.zeros(c_out))


def conv2x2(tensors, prefix, x, c_in, c_out):
    """2x2 stride-2 convolution as space-to-depth + matmul.

    x: (T, F, c_in) -> (T // 2, F // 2, c_out), with odd trailing rows or
    columns cropped.
    """
    t_len, f_len, _ = x.shape
    x = x[:t_len - t_len % 2, :f_len - f_len % 2, :]
    t2, f2 = t_len // 2, f_len // 2
    x = x.reshape(t2, 2, f2, 2, c_in)
    x = ad.transpose(x, (0, 2, 1, 3, 4)).reshape(t2, f2, 4 * c_in)
    out = ad.einsum("tfk,ko->tfo", x, tensors[prefix + ".W"])
    return out + tensors[prefix + ".b"]


def dropout(x, rate, rng):
    """Inverted dropout with a seeded mask; identity when rng is None."""
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * ad.Tensor(mask)


# optimizers ------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values, grads, mask=None, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        update = lr * (mhat / (np.sqrt(vhat) + self.eps)
                       + self.weight_decay * values)
        if mask is None:
            values -= update
        else:
            values[mask] -= update[mask]


class Adam(AdamW):
    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(size, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                         weight_decay=0.0)
