"""Small dense-tensor engine with reverse-mode gradients and Adam.

Every value is a float64 numpy array wrapped in a :class:`Tensor` that
remembers its parents and a closure routing output gradients back to them.
The op set is exactly what the auto-encoder and the Q-network need: dense
layers, 3x3 same-padding cross-correlation, 2x2 average pooling with
truncated border windows, nearest-neighbour 2x upsampling, tanh, relu,
1-D concat, action gathering, and mean squared error.

Checkpoints are flat JSON documents mapping parameter names to shapes and
row-major value lists; floats are written with ``repr`` so a save/load
round trip is bit exact.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError, LoadError, NumericalError


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def backward(self):
        """Populate ``.grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss node")
        order = _topo_order(self)
        for t in order:
            t.grad = np.zeros_like(t.data)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)


def _topo_order(root):
    # Iterative post-order DFS; node list order is a topological order.
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def parameter(data):
    """Wrap an array as a trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64))


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for a vector or a batch of row vectors."""
    xd = x.data
    single = xd.ndim == 1
    x2 = xd[None, :] if single else xd
    if x2.shape[1] != weight.data.shape[0]:
        raise ValueError(
            f"dense: input width {x2.shape[1]} != weight rows {weight.data.shape[0]}"
        )
    y = x2 @ weight.data + bias.data
    out = Tensor(y[0] if single else y, parents=(x, weight, bias))

    def backward(dy):
        dy2 = dy[None, :] if single else dy
        dx = dy2 @ weight.data.T
        x.grad += dx[0] if single else dx
        weight.grad += x2.T @ dy2
        bias.grad += dy2.sum(axis=0)

    out._backward = backward
    return out


def _im2col3x3(x):
    # x: [C,H,W] -> [H*W, C*9] patches of the zero-padded image.
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * 9)


def _conv2d_same_raw(x, kmat, c_out):
    # kmat: [C_out, C_in*9]; returns [C_out, H, W].
    _, h, w = x.shape
    col = _im2col3x3(x)
    return (col @ kmat.T).T.reshape(c_out, h, w), col


def conv2d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation with zero padding 1; output keeps (H, W)."""
    if kernels.data.ndim != 4 or kernels.data.shape[2:] != (3, 3):
        raise ConfigError(f"conv2d_same: kernels must be [C_out,C_in,3,3], got {kernels.data.shape}")
    c_out, c_in = kernels.data.shape[:2]
    if x.data.ndim != 3 or x.data.shape[0] != c_in:
        raise ConfigError(
            f"conv2d_same: input channels {x.data.shape} incompatible with kernels {kernels.data.shape}"
        )
    if bias.data.shape != (c_out,):
        raise ConfigError(f"conv2d_same: bias shape {bias.data.shape} != ({c_out},)")
    _, h, w = x.data.shape
    kmat = kernels.data.reshape(c_out, c_in * 9)
    y, col = _conv2d_same_raw(x.data, kmat, c_out)
    out = Tensor(y + bias.data[:, None, None], parents=(x, kernels, bias))

    def backward(dy):
        dmat = dy.reshape(c_out, h * w).T            # [HW, C_out]
        kernels.grad += (dmat.T @ col).reshape(c_out, c_in, 3, 3)
        bias.grad += dmat.sum(axis=0)
        # dX is the same-padded correlation of dy with channel-swapped,
        # spatially flipped kernels.
        kflip = kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = _conv2d_same_raw(dy, kflip.reshape(c_in, c_out * 9), c_in)
        x.grad += dx

    out._backward = backward
    return out


def _pool_counts(h, w):
    # Window cell counts for truncated 2x2/stride-2 pooling.
    rh = np.where(np.arange((h + 1) // 2) * 2 + 1 < h, 2, 1)
    rw = np.where(np.arange((w + 1) // 2) * 2 + 1 < w, 2, 1)
    return rh[:, None] * rw[None, :]


def _sum_pool2x2(x):
    c, h, w = x.shape
    out = x[:, ::2, ::2].copy()
    if h > 1:
        out[:, : h // 2, :] += x[:, 1::2, ::2]
    if w > 1:
        out[:, :, : w // 2] += x[:, ::2, 1::2]
    if h > 1 and w > 1:
        out[:, : h // 2, : w // 2] += x[:, 1::2, 1::2]
    return out


def _repeat2_crop(x, th, tw):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)[:, :th, :tw]


def avg_pool2x2(x: Tensor) -> Tensor:
    """2x2 stride-2 mean pooling; border windows average the cells present."""
    if x.data.ndim != 3:
        raise ConfigError(f"avg_pool2x2: expected [C,H,W], got {x.data.shape}")
    _, h, w = x.data.shape
    counts = _pool_counts(h, w)
    out = Tensor(_sum_pool2x2(x.data) / counts, parents=(x,))

    def backward(dy):
        x.grad += _repeat2_crop(dy / counts, h, w)

    out._backward = backward
    return out


def upsample_nearest2x(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Nearest-neighbour 2x upsample: out(i,j) = in(i//2, j//2)."""
    if x.data.ndim != 3:
        raise ConfigError(f"upsample_nearest2x: expected [C,H,W], got {x.data.shape}")
    _, h, w = x.data.shape
    if target_h not in (2 * h - 1, 2 * h) or target_w not in (2 * w - 1, 2 * w):
        raise ConfigError(
            f"upsample_nearest2x: target ({target_h},{target_w}) not reachable from ({h},{w})"
        )
    out = Tensor(_repeat2_crop(x.data, target_h, target_w), parents=(x,))

    def backward(dy):
        x.grad += _sum_pool2x2(dy)

    out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, parents=(x,))

    def backward(dy):
        x.grad += (1.0 - y * y) * dy

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), parents=(x,))

    def backward(dy):
        x.grad += mask * dy

    out._backward = backward
    return out


def concat(tensors) -> Tensor:
    """Concatenate 1-D tensors."""
    tensors = list(tensors)
    for t in tensors:
        if t.data.ndim != 1:
            raise ValueError("concat: only 1-D tensors supported")
    out = Tensor(np.concatenate([t.data for t in tensors]), parents=tuple(tensors))
    offsets = np.cumsum([0] + [t.data.size for t in tensors])

    def backward(dy):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            t.grad += dy[a:b]

    out._backward = backward
    return out


def gather_actions(q: Tensor, actions) -> Tensor:
    """Pick out[b] = q[b, actions[b]]; untaken outputs get zero gradient."""
    actions = np.asarray(actions, dtype=np.intp)
    rows = np.arange(q.data.shape[0])
    out = Tensor(q.data[rows, actions], parents=(q,))

    def backward(dy):
        g = np.zeros_like(q.data)
        g[rows, actions] = dy
        q.grad += g

    out._backward = backward
    return out


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all entries; target may be a plain array."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != tgt.shape:
        raise ValueError(f"mse: shape mismatch {pred.data.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    out = Tensor(np.mean(diff * diff), parents=parents)
    scale = 2.0 / diff.size

    def backward(dy):
        g = scale * diff * dy
        pred.grad += g
        if isinstance(target, Tensor):
            target.grad -= g

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; the step counter increments once per step."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient; aborting optimizer step")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "scanfs-weights"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_arrays):
    """Write a name -> (shape, row-major values) JSON document."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(np.shape(arr)), "data": [float(x) for x in np.ravel(arr)]}
            for name, arr in named_arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Read a checkpoint back into a dict of float64 arrays."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LoadError(f"checkpoint {path}: invalid JSON ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise LoadError(f"checkpoint {path}: unknown format/version")
    out = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = arr
    return out
