"""Convolutional auto-encoder with pyramid pooling for state embeddings.

The encoder runs conv/tanh/pool twice, one more conv/tanh, then a pyramid
pooling layer that averages each feature map over proportional windows at
every pyramid level, so the latent length depends only on the filter count
and the levels, never on the input matrix size. The decoder mirrors it:
the latent is expanded back to maps (each pixel takes the mean of the bins
whose windows contain it, averaged across levels), then upsampled and
convolved back down to a single channel.

The full round trip is differentiable through the tape in
:mod:`scanfs.autodiff`; training minimises reconstruction MSE with Adam.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericalError

DEFAULT_FILTERS = (16, 32, 16, 32, 16, 1)
DEFAULT_LEVELS = (1, 2, 3, 4)


# ---------------------------------------------------------------------------
# pyramid pooling ops
# ---------------------------------------------------------------------------

@lru_cache(maxsize=512)
def _bin_bounds(h, w, levels):
    """Flat window bounds (level-major, row-major) plus per-level slices."""
    r0s, r1s, c0s, c1s = [], [], [], []
    level_slices = []
    start = 0
    for lv in levels:
        for i in range(lv):
            for j in range(lv):
                r0s.append((i * h) // lv)
                r1s.append(-((-(i + 1) * h) // lv))
                c0s.append((j * w) // lv)
                c1s.append(-((-(j + 1) * w) // lv))
        level_slices.append(slice(start, start + lv * lv))
        start += lv * lv
    bounds = tuple(np.array(v, dtype=np.intp) for v in (r0s, r1s, c0s, c1s))
    return bounds, tuple(level_slices)


@lru_cache(maxsize=512)
def _containment_counts(h, w, levels):
    """Per-level count of bins whose window contains each pixel."""
    (r0, r1, c0, c1), level_slices = _bin_bounds(h, w, levels)
    counts = []
    for sl in level_slices:
        cnt = np.zeros((h, w))
        for k in range(sl.start, sl.stop):
            cnt[r0[k]:r1[k], c0[k]:c1[k]] += 1.0
        counts.append(cnt)
    return tuple(counts)


def _window_sums(maps, r0, r1, c0, c1):
    # Integral-image window sums for all bins at once: [n_maps, n_bins].
    n_maps, h, w = maps.shape
    s = np.zeros((n_maps, h + 1, w + 1))
    np.cumsum(maps, axis=1, out=s[:, 1:, 1:])
    np.cumsum(s[:, 1:, 1:], axis=2, out=s[:, 1:, 1:])
    return s[:, r1, c1] - s[:, r0, c1] - s[:, r1, c0] + s[:, r0, c0]


def spp_bin_count(levels) -> int:
    return int(sum(lv * lv for lv in levels))


def spp_forward(maps: ad.Tensor, levels) -> ad.Tensor:
    """Pool each map over every pyramid window; output is map-major."""
    levels = tuple(int(v) for v in levels)
    n_maps, h, w = maps.data.shape
    (r0, r1, c0, c1), _ = _bin_bounds(h, w, levels)
    areas = ((r1 - r0) * (c1 - c0)).astype(np.float64)
    out_mat = _window_sums(maps.data, r0, r1, c0, c1) / areas
    out = ad.Tensor(out_mat.reshape(-1), parents=(maps,))
    n_bins = areas.size

    def backward(dy):
        d = dy.reshape(n_maps, n_bins) / areas
        g = maps.grad
        for k in range(n_bins):
            g[:, r0[k]:r1[k], c0[k]:c1[k]] += d[:, k, None, None]

    out._backward = backward
    return out


def spp_inverse(latent: ad.Tensor, levels, n_maps: int, h: int, w: int) -> ad.Tensor:
    """Expand a pooled vector back to [n_maps, h, w] maps."""
    levels = tuple(int(v) for v in levels)
    n_bins = spp_bin_count(levels)
    if latent.data.size != n_maps * n_bins:
        raise ValueError(
            f"spp_inverse: latent length {latent.data.size} != {n_maps}x{n_bins}"
        )
    (r0, r1, c0, c1), level_slices = _bin_bounds(h, w, levels)
    counts = _containment_counts(h, w, levels)
    lat = latent.data.reshape(n_maps, n_bins)

    acc = np.zeros((n_maps, h, w))
    for sl, cnt in zip(level_slices, counts):
        level_acc = np.zeros((n_maps, h, w))
        for k in range(sl.start, sl.stop):
            level_acc[:, r0[k]:r1[k], c0[k]:c1[k]] += lat[:, k, None, None]
        acc += level_acc / cnt
    out = ad.Tensor(acc / len(levels), parents=(latent,))

    def backward(dy):
        dlat = latent.grad.reshape(n_maps, n_bins)
        for sl, cnt in zip(level_slices, counts):
            g = dy / (len(levels) * cnt)
            dlat[:, sl] += _window_sums(g, r0[sl], r1[sl], c0[sl], c1[sl])

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# index encoding and state composition
# ---------------------------------------------------------------------------

INDEX_MODES = ("none", "integer", "one-hot")


def index_encoding(i: int, d: int, mode: str) -> np.ndarray:
    """Encode a feature index as the z2 part of the state vector."""
    if mode not in INDEX_MODES:
        raise ConfigError(f"index mode {mode!r} not one of {INDEX_MODES}")
    if not 0 <= i < d:
        raise ValueError(f"index {i} out of range for {d} features")
    if mode == "none":
        return np.zeros(0)
    if mode == "integer":
        return np.array([i / (d - 1) if d > 1 else 0.0])
    z = np.zeros(d)
    z[i] = 1.0
    return z


def index_encoding_length(d: int, mode: str) -> int:
    return {"none": 0, "integer": 1, "one-hot": d}[mode]


def compose_state(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    return np.concatenate([z1, z2])


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

class CaeModel:
    """Encoder/decoder weights plus the pyramid configuration."""

    def __init__(self, filters=DEFAULT_FILTERS, levels=DEFAULT_LEVELS, rng=None):
        filters = tuple(int(f) for f in filters)
        levels = tuple(int(v) for v in levels)
        if len(filters) != 6:
            raise ConfigError(f"filters must list 6 conv widths, got {filters}")
        if filters[-1] != 1:
            raise ConfigError("the last decoder conv must emit 1 channel")
        if not levels or any(v < 1 for v in levels):
            raise ConfigError(f"pyramid levels must be positive, got {levels}")
        self.filters = filters
        self.levels = levels
        self.maps = filters[2]  # channels entering the pyramid pool
        rng = rng or np.random.default_rng()

        def conv_init(c_out, c_in):
            k = rng.normal(0.0, 1.0 / np.sqrt(9 * c_in), size=(c_out, c_in, 3, 3))
            return ad.parameter(k), ad.parameter(np.zeros(c_out))

        self.enc = [conv_init(filters[0], 1), conv_init(filters[1], filters[0]),
                    conv_init(filters[2], filters[1])]
        self.dec = [conv_init(filters[3], filters[2]), conv_init(filters[4], filters[3]),
                    conv_init(filters[5], filters[4])]

    @property
    def latent_len(self) -> int:
        return self.maps * spp_bin_count(self.levels)

    def parameters(self):
        return [t for pair in self.enc + self.dec for t in pair]

    def named_parameters(self):
        names = {}
        for idx, (k, b) in enumerate(self.enc):
            names[f"enc{idx}.kernel"] = k
            names[f"enc{idx}.bias"] = b
        for idx, (k, b) in enumerate(self.dec):
            names[f"dec{idx}.kernel"] = k
            names[f"dec{idx}.bias"] = b
        return names

    def load_arrays(self, arrays):
        params = self.named_parameters()
        for name, tensor in params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != tensor.data.shape:
                raise ConfigError(
                    f"checkpoint parameter {name} has shape {arrays[name].shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data = arrays[name].astype(np.float64)

    def _encode_graph(self, image: ad.Tensor):
        shapes = [image.data.shape[1:]]
        h = ad.tanh(ad.conv2d_same(image, *self.enc[0]))
        p = ad.avg_pool2x2(h)
        shapes.append(p.data.shape[1:])
        h = ad.tanh(ad.conv2d_same(p, *self.enc[1]))
        p = ad.avg_pool2x2(h)
        shapes.append(p.data.shape[1:])
        h = ad.tanh(ad.conv2d_same(p, *self.enc[2]))
        latent = spp_forward(h, self.levels)
        return latent, shapes

    def _decode_graph(self, latent: ad.Tensor, shapes):
        (h0, w0), (h1, w1), (h2, w2) = shapes
        m = spp_inverse(latent, self.levels, self.maps, h2, w2)
        u = ad.upsample_nearest2x(m, h1, w1)
        d = ad.tanh(ad.conv2d_same(u, *self.dec[0]))
        u = ad.upsample_nearest2x(d, h0, w0)
        d = ad.tanh(ad.conv2d_same(u, *self.dec[1]))
        return ad.conv2d_same(d, *self.dec[2])

    def reconstruction_loss(self, matrix) -> ad.Tensor:
        """Forward the full auto-encoder; returns the scalar MSE node."""
        image = _as_image(matrix)
        x = ad.Tensor(image)
        latent, shapes = self._encode_graph(x)
        recon = self._decode_graph(latent, shapes)
        return ad.mse(recon, image)

    def encode(self, matrix) -> np.ndarray:
        """Deterministic latent vector for a scaled, row-capped matrix."""
        image = _as_image(matrix)
        latent, _ = self._encode_graph(ad.Tensor(image))
        return latent.data.copy()


def _as_image(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {matrix.shape}")
    return matrix[None, :, :]


def encode_state(matrix_selected, model: CaeModel) -> np.ndarray:
    """Latent z1 for the selected columns; the empty subset embeds as zeros."""
    matrix_selected = np.asarray(matrix_selected, dtype=np.float64)
    if matrix_selected.ndim != 2 or matrix_selected.shape[1] == 0:
        return np.zeros(model.latent_len)
    return model.encode(matrix_selected)


def train_cae(matrix, model: CaeModel, epochs: int, lr: float, optimizer=None):
    """Adam passes over the reconstruction loss.

    Returns the loss history: entry 0 is the initial MSE and the last entry
    is the MSE after the final step, so ``epochs=0`` reports the untouched
    reconstruction error.
    """
    opt = optimizer or ad.Adam(model.parameters(), lr=lr)
    history = []
    for _ in range(epochs):
        loss = model.reconstruction_loss(matrix)
        if not np.isfinite(loss.data):
            raise NumericalError("non-finite reconstruction loss")
        history.append(float(loss.data))
        loss.backward()
        opt.step(lr=lr)
    final = model.reconstruction_loss(matrix)
    if not np.isfinite(final.data):
        raise NumericalError("non-finite reconstruction loss")
    history.append(float(final.data))
    return history


class CaeTrainer:
    """Owns one model plus a persistent Adam state across refreshes."""

    def __init__(self, model: CaeModel, lr: float):
        self.model = model
        self.lr = lr
        self.optimizer = ad.Adam(model.parameters(), lr=lr)

    def train(self, matrix, epochs: int):
        return train_cae(matrix, self.model, epochs, self.lr, optimizer=self.optimizer)

    def refresh(self, matrix, steps: int):
        """Cheap per-step retraining: no trailing loss evaluation."""
        for _ in range(steps):
            loss = self.model.reconstruction_loss(matrix)
            if not np.isfinite(loss.data):
                raise NumericalError("non-finite reconstruction loss")
            loss.backward()
            self.optimizer.step(lr=self.lr)
