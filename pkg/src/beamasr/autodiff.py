"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps a float64 ndarray and records the operations applied to
it.  Calling ``backward()`` on a scalar result walks the recorded graph in
reverse topological order and accumulates gradients into every tensor
created with ``requires_grad=True``.  Complex quantities are handled by
``CTensor``, a thin (real, imag) pair whose operations are composed from
real ones, so no special complex-gradient convention is needed: gradients
are plain partial derivatives w.r.t. the real and imaginary parts.

Only the primitives needed by the enhancement/recognition chain are
implemented: elementwise arithmetic and nonlinearities, einsum, reductions,
shape ops, batched real matrix inverse, signal framing / overlap-add,
reflection padding, and a CTC loss with an analytic backward pass.
"""

import numpy as np

from .errors import InvalidInputError, StateError


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) tensor w.r.t. all leaves."""
        if seed is None:
            if self.data.size != 1:
                raise InvalidInputError("backward() needs a scalar or explicit seed")
            seed = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=np.float64).reshape(self.data.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _node(data, parents, backward):
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


# elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(a.data / b.data, (a, b), back)


def power(a, p):
    a = as_tensor(a)
    p = float(p)

    def back(g):
        _accum(a, g * p * np.power(a.data, p - 1.0))

    return _node(np.power(a.data, p), (a,), back)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def back(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), back)


def log(a):
    a = as_tensor(a)

    def back(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), back)


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def back(g):
        _accum(a, g * 0.5 / out_data)

    return _node(out_data, (a,), back)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), back)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), back)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _node(a.data * mask, (a,), back)


# reductions ------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gx = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gx, a.data.shape).copy())

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = tsum(exp(a - Tensor(m)), axis=axis, keepdims=True)
    out = log(s) + Tensor(m)
    if not keepdims:
        out = squeeze(out, axis)
    return out


def log_softmax(a, axis=-1):
    return a - logsumexp(a, axis=axis, keepdims=True)


# shape ops -------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])

    def back(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), back)


def squeeze(a, axis):
    a = as_tensor(a)

    def back(g):
        _accum(a, np.expand_dims(g, axis))

    return _node(np.squeeze(a.data, axis=axis), (a,), back)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)

    def back(g):
        _accum(a, g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), back)


def getitem(a, key):
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accum(a, full)

    return _node(a.data[key], (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    tracked = tuple(t for t in tensors if t.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = back
    return out


def stack(tensors, axis=0):
    return concat([reshape(as_tensor(t), np.expand_dims(as_tensor(t).data, axis).shape)
                   for t in tensors], axis=axis)


# contractions ----------------------------------------------------------

def einsum(subscripts, *operands):
    """Differentiable einsum; operands may be Tensors or plain ndarrays
    (treated as constants).  The subscript must be explicit (contain '->')
    and must not repeat an index within a single operand."""
    if "->" not in subscripts:
        raise InvalidInputError("einsum subscript must be explicit (contain '->')")
    in_spec, out_spec = subscripts.split("->")
    in_specs = in_spec.split(",")
    for s in in_specs:
        if len(set(s)) != len(s):
            raise InvalidInputError(
                "repeated index within one einsum operand is not supported; "
                "contract against an identity matrix instead")
    tens = [as_tensor(op) for op in operands]
    arrays = [t.data for t in tens]
    out_data = np.einsum(subscripts, *arrays)

    def back(g):
        for i, t in enumerate(tens):
            if not t.requires_grad:
                continue
            others = [s for j, s in enumerate(in_specs) if j != i]
            other_arrays = [arrays[j] for j in range(len(tens)) if j != i]
            known = set(out_spec)
            for s in others:
                known.update(s)
            spec_i = in_specs[i]
            # indices private to operand i were summed over in the forward
            # pass; they reappear in the backward as broadcast axes
            reduced = "".join(c for c in spec_i if c in known)
            sub = ",".join([out_spec] + others) + "->" + reduced
            gi = np.einsum(sub, g, *other_arrays)
            if reduced != spec_i:
                for ax, c in enumerate(spec_i):
                    if c not in known:
                        gi = np.expand_dims(gi, ax)
                gi = np.broadcast_to(gi, t.data.shape).copy()
            _accum(t, gi)

    return _node(out_data, tuple(tens), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 2 and b.ndim == 2:
        return einsum("ij,jk->ik", a, b)
    raise InvalidInputError("matmul helper supports 2-D operands; use einsum")


# linear algebra --------------------------------------------------------

def inverse(a):
    """Batched real matrix inverse of shape (..., n, n).

    Backward uses d(A^{-1}) = -A^{-1} dA A^{-1}, i.e.
    grad_A = -inv^T @ grad_out @ inv^T.
    """
    a = as_tensor(a)
    inv_data = np.linalg.inv(a.data)
    inv_t = np.swapaxes(inv_data, -1, -2)

    def back(g):
        _accum(a, -inv_t @ g @ inv_t)

    return _node(inv_data, (a,), back)


# signal primitives -----------------------------------------------------

def reflect_pad(a, pad):
    """Reflection-pad the last axis by ``pad`` on both sides."""
    a = as_tensor(a)
    n = a.data.shape[-1]
    if pad >= n:
        raise InvalidInputError("reflection pad must be shorter than the signal")

    def back(g):
        core = g[..., pad:pad + n].copy()
        core[..., 1:pad + 1] += g[..., :pad][..., ::-1]
        core[..., n - pad - 1:n - 1] += g[..., pad + n:][..., ::-1]
        _accum(a, core)

    return _node(np.pad(a.data, [(0, 0)] * (a.ndim - 1) + [(pad, pad)], mode="reflect"),
                 (a,), back)


def frame(a, length, hop):
    """Slice a 1-D signal into overlapping frames of shape (T, length)."""
    a = as_tensor(a)
    n = a.data.shape[-1]
    if a.ndim != 1:
        raise InvalidInputError("frame expects a 1-D signal")
    if n < length:
        raise InvalidInputError("signal shorter than one frame")
    t = 1 + (n - length) // hop
    idx = np.arange(length)[None, :] + hop * np.arange(t)[:, None]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx.ravel(), g.ravel())
        _accum(a, full)

    return _node(a.data[idx], (a,), back)


def overlap_add(frames_t, hop, length):
    """Overlap-add frames of shape (T, N) into a signal of given length."""
    frames_t = as_tensor(frames_t)
    t, n = frames_t.data.shape
    idx = np.arange(n)[None, :] + hop * np.arange(t)[:, None]
    if idx.max() >= length:
        raise InvalidInputError("overlap_add output length too small")
    out_data = np.zeros(length)
    np.add.at(out_data, idx.ravel(), frames_t.data.ravel())

    def back(g):
        _accum(frames_t, g[idx])

    return _node(out_data, (frames_t,), back)


# CTC -------------------------------------------------------------------

def ctc_feasible(target, num_frames):
    """CTC needs one frame per label plus one per repeated adjacent label."""
    repeats = sum(1 for i in range(1, len(target)) if target[i] == target[i - 1])
    return num_frames >= len(target) + repeats


def ctc_loss(log_probs, target, blank=0):
    """Negative log total probability of all CTC alignments.

    ``log_probs``: Tensor (T, K) of per-frame log posteriors.
    ``target``: sequence of label indices (blank excluded).
    Infeasible targets yield an infinite constant (zero gradient), not an
    exception, so callers can skip such examples.
    """
    log_probs = as_tensor(log_probs)
    lp = log_probs.data
    t_len, n_sym = lp.shape
    target = list(target)
    if any(k == blank or k < 0 or k >= n_sym for k in target):
        raise InvalidInputError("CTC target contains blank or out-of-range labels")
    if not ctc_feasible(target, t_len):
        return Tensor(np.inf)

    ext = [blank]
    for k in target:
        ext.extend([k, blank])
    s_len = len(ext)
    ext = np.asarray(ext)
    neg_inf = -np.inf

    # alpha[t, s]: log prob of prefix alignments ending in state s at frame t
    # (emission at frame t included)
    alpha = np.full((t_len, s_len), neg_inf)
    alpha[0, 0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    skip_ok = np.zeros(s_len, dtype=bool)
    skip_ok[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    for t in range(1, t_len):
        stay = alpha[t - 1]
        prev = np.full(s_len, neg_inf)
        prev[1:] = alpha[t - 1, :-1]
        skip = np.full(s_len, neg_inf)
        skip[2:] = np.where(skip_ok[2:], alpha[t - 1, :-2], neg_inf)
        alpha[t] = np.logaddexp(np.logaddexp(stay, prev), skip) + lp[t, ext]

    # beta[t, s]: log prob of completing from state s after emitting frame t
    beta = np.full((t_len, s_len), neg_inf)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, ext]
        stay = nxt
        adv = np.full(s_len, neg_inf)
        adv[:-1] = nxt[1:]
        skip = np.full(s_len, neg_inf)
        skip[:-2] = np.where(skip_ok[2:], nxt[2:], neg_inf)
        beta[t] = np.logaddexp(np.logaddexp(stay, adv), skip)

    log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2] if s_len > 1 else neg_inf)
    if not np.isfinite(log_z):
        return Tensor(np.inf)

    # occupancy gamma[t, s] = exp(alpha + beta - log_z);
    # dL/dlog_probs[t, k] = -sum_{s: ext[s] == k} gamma[t, s]
    occ = np.exp(alpha + beta - log_z)
    grad_lp = np.zeros_like(lp)
    for s in range(s_len):
        grad_lp[:, ext[s]] -= occ[:, s]

    def back(g):
        _accum(log_probs, float(g) * grad_lp)

    return _node(np.float64(-log_z), (log_probs,), back)


# complex pairs ---------------------------------------------------------

class CTensor:
    """Complex tensor as a (real, imag) pair of real Tensors."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = as_tensor(re)
        self.im = as_tensor(im)

    @staticmethod
    def from_complex(z, requires_grad=False):
        z = np.asarray(z, dtype=np.complex128)
        return CTensor(Tensor(z.real.copy(), requires_grad),
                       Tensor(z.imag.copy(), requires_grad))

    @property
    def shape(self):
        return self.re.data.shape

    def numpy(self):
        return self.re.data + 1j * self.im.data

    def conj(self):
        return CTensor(self.re, -self.im)

    def __add__(self, other):
        return CTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return CTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        if isinstance(other, CTensor):
            return CTensor(self.re * other.re - self.im * other.im,
                           self.re * other.im + self.im * other.re)
        return CTensor(self.re * other, self.im * other)

    def abs2(self):
        return self.re * self.re + self.im * self.im

    def __getitem__(self, key):
        return CTensor(self.re[key], self.im[key])


def ceinsum(subscripts, a, b):
    """Complex einsum of two CTensors (or a CTensor and a constant pair)."""
    re = einsum(subscripts, a.re, b.re) - einsum(subscripts, a.im, b.im)
    im = einsum(subscripts, a.re, b.im) + einsum(subscripts, a.im, b.re)
    return CTensor(re, im)


def cdiv(a, b, eps=0.0):
    """Elementwise complex division a / b with an optional absolute floor on
    |b|^2 for numerical safety."""
    den = b.re * b.re + b.im * b.im + eps
    return CTensor((a.re * b.re + a.im * b.im) / den,
                   (a.im * b.re - a.re * b.im) / den)


def cinverse(a):
    """Batched complex matrix inverse via the real 2n x 2n block embedding
    [[Re, -Im], [Im, Re]]."""
    n = a.shape[-1]
    top = concat([a.re, -a.im], axis=-1)
    bot = concat([a.im, a.re], axis=-1)
    block = concat([top, bot], axis=-2)
    inv = inverse(block)
    sl = (slice(None),) * (inv.ndim - 2)
    return CTensor(inv[sl + (slice(0, n), slice(0, n))],
                   inv[sl + (slice(n, 2 * n), slice(0, n))])


def ctrace(a):
    """Trace over the last two axes of a complex batched matrix."""
    shape = a.shape
    m = shape[-1]
    batch = shape[:-2]
    size = int(np.prod(batch)) if batch else 1
    eye = np.eye(m)
    re = reshape(a.re, (size, m, m))
    im = reshape(a.im, (size, m, m))
    out = CTensor(einsum("bmn,mn->b", re, eye), einsum("bmn,mn->b", im, eye))
    return CTensor(reshape(out.re, batch), reshape(out.im, batch))


# utilities -------------------------------------------------------------

def collect_grad(t):
    if t.grad is None:
        return np.zeros_like(t.data)
    return t.grad


def numeric_gradient(fn, x, h=1e-6):
    """Central-difference gradient of scalar fn w.r.t. ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g
